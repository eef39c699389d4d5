use super::{ensure_finite, Vector};
use crate::error::{check_label, LabError, Result};

/// Tolerance on the simplex sum.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vector);

impl ProbVector {
    /// Validates and wraps `entries`. Round-off below 1e-12 outside [0,1] is clamped.
    pub fn new(entries: Vector) -> Result<Self> {
        ensure_finite(entries.as_slice(), "probability vector")?;
        if entries.is_empty() {
            return Err(LabError::Domain("empty probability vector".into()));
        }
        if entries.iter().any(|&p| !(-1e-12..=1.0 + 1e-12).contains(&p)) {
            return Err(LabError::Domain("probability entry outside [0,1]".into()));
        }
        let sum: f64 = entries.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(LabError::Domain(format!("probabilities sum to {sum}")));
        }
        Ok(Self(entries.map(|p| p.clamp(0.0, 1.0))))
    }

    pub fn from_slice(entries: &[f64]) -> Result<Self> {
        Self::new(Vector::from_column_slice(entries))
    }

    pub fn one_hot(classes: usize, label: usize) -> Result<Self> {
        check_label(label, classes)?;
        Ok(Self(one_hot(classes, label)))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(Vector::from_element(classes, 1.0 / classes as f64))
    }

    /// Convex combination `(1-t)·self + t·other`.
    pub fn mix(&self, other: &ProbVector, t: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(LabError::Shape("mixing vectors of different length".into()));
        }
        Ok(Self(&self.0 * (1.0 - t) + &other.0 * t))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn as_vector(&self) -> &Vector {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_vector(self) -> Vector {
        self.0
    }

    /// First index of the largest entry.
    pub fn argmax(&self) -> usize {
        argmax_where(self.as_slice(), |_| true).unwrap_or(0)
    }

    /// Largest entry among indices other than `excluded`.
    pub fn argmax_excluding(&self, excluded: usize) -> Option<usize> {
        argmax_where(self.as_slice(), |i| i != excluded)
    }

    pub fn max_prob(&self) -> f64 {
        self.0.max()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }

    /// Squared L2 distance to the one-hot vector of `label`.
    pub fn sq_dist_to_label(&self, label: usize) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let t = if i == label { 1.0 } else { 0.0 };
                (p - t) * (p - t)
            })
            .sum()
    }

    pub fn dist(&self, other: &ProbVector) -> f64 {
        (&self.0 - &other.0).norm()
    }
}

fn argmax_where(v: &[f64], keep: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if keep(i) && best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

/// Dense one-hot vector. Panics if `label >= classes`.
pub fn one_hot(classes: usize, label: usize) -> Vector {
    let mut e = Vector::zeros(classes);
    e[label] = 1.0;
    e
}

/// Numerically stable softmax.
pub fn softmax(z: &Vector) -> Result<ProbVector> {
    ensure_finite(z.as_slice(), "logits")?;
    if z.is_empty() {
        return Err(LabError::Domain("empty logits".into()));
    }
    let m = z.max();
    let mut e = z.map(|v| (v - m).exp());
    let s = e.sum();
    e /= s;
    Ok(ProbVector(e))
}

/// Numerically stable log-softmax. The normalizer is `ln_1p` of the mass
/// outside the top class, so a nearly one-hot distribution keeps full
/// relative precision in its log-probabilities.
pub fn log_softmax(z: &Vector) -> Result<Vector> {
    ensure_finite(z.as_slice(), "logits")?;
    if z.is_empty() {
        return Err(LabError::Domain("empty logits".into()));
    }
    let (top, m) = z.argmax();
    let rest: f64 = z.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, v)| (v - m).exp()).sum();
    let lse = rest.ln_1p();
    Ok(z.map(|v| (v - m) - lse))
}
