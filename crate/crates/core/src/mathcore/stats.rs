use statrs::function::beta::beta_reg;

use crate::error::{LabError, Result};

/// Rank correlation together with its two-sided p-value.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Linear-interpolated quantile, `q` in [0,1].
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// 1-based ranks; tied values share the average of their ranks.
pub fn rank_average(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation with the t-approximation p-value.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() {
        return Err(LabError::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(LabError::Domain("correlation needs at least 3 points".into()));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(LabError::UndefinedCorrelation("constant input".into()));
    }
    let rho = (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0);
    Ok(Correlation { rho, p_value: t_test_p(rho, a.len()) })
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() {
        return Err(LabError::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    pearson(&rank_average(a), &rank_average(b))
}

fn t_test_p(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let one_minus = 1.0 - rho * rho;
    if one_minus <= 0.0 {
        return 0.0;
    }
    if df == 0.0 {
        return 1.0;
    }
    let t2 = rho * rho * df / one_minus;
    // Two-sided tail of Student's t via the regularized incomplete beta.
    beta_reg(df / 2.0, 0.5, df / (df + t2))
}
