use rand::Rng;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::mathcore::{normal_vector, softmax, LabRng, ProbVector, Vector};

/// A finite input distribution with targets, posteriors and a bounded loss
/// vector per input (`losses[x][k]` is the loss if the label is `k`).
#[derive(Clone, Debug, PartialEq)]
pub struct RiskInstance {
    pub px: Vec<f64>,
    pub q_tar: Vec<ProbVector>,
    pub q_star: Vec<ProbVector>,
    pub losses: Vec<Vector>,
}

impl RiskInstance {
    /// Random instance: `support` inputs, `classes` labels, losses in `[0, ell]`.
    pub fn random(classes: usize, support: usize, ell: f64, rng: &mut LabRng) -> Self {
        let w: Vec<f64> = (0..support).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = w.iter().sum();
        let px = w.iter().map(|v| v / s).collect();
        let mut draw = || softmax(&(normal_vector(classes, rng) * 1.5)).expect("finite logits");
        let q_tar = (0..support).map(|_| draw()).collect();
        let q_star = (0..support).map(|_| draw()).collect();
        let losses = (0..support).map(|_| Vector::from_fn(classes, |_, _| ell * rng.random::<f64>())).collect();
        Self { px, q_tar, q_star, losses }
    }

    fn validate(&self, ell: f64) -> Result<()> {
        let m = self.px.len();
        if m == 0 || self.q_tar.len() != m || self.q_star.len() != m || self.losses.len() != m {
            return Err(LabError::Shape("instance components must align".into()));
        }
        if self.losses.iter().flat_map(|l| l.iter()).any(|&v| v > ell || v.is_nan()) {
            return Err(LabError::Domain(format!("loss entries must not exceed {ell}")));
        }
        Ok(())
    }

    fn expect(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.px.iter().enumerate().map(|(i, p)| p * f(i)).sum()
    }
}

/// `KL(p‖q)`, `None` when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Option<f64> {
    let mut s = 0.0;
    for (&a, &b) in p.as_slice().iter().zip(q.as_slice()) {
        if a > 0.0 {
            if b <= 0.0 {
                return None;
            }
            s += a * (a / b).ln();
        }
    }
    Some(s.max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundForm {
    pub name: &'static str,
    /// `None` when a KL term is infinite.
    pub xi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiskBounds {
    /// `Var_x[q_tarᵀL] / n`.
    pub variance_term: f64,
    pub forms: Vec<BoundForm>,
    /// Monte-Carlo estimate of `E[(R_tar − R)²]`.
    pub mc_lhs: f64,
    /// Closed-form value of the same expectation (variance plus squared bias).
    pub exact_lhs: f64,
}

impl RiskBounds {
    /// Every defined bound dominates the Monte-Carlo estimate.
    pub fn all_hold(&self) -> bool {
        self.forms.iter().filter_map(|f| f.xi).all(|xi| self.mc_lhs <= self.variance_term + xi)
    }

    pub fn tightest(&self) -> Option<f64> {
        self.forms.iter().filter_map(|f| f.xi).reduce(f64::min).map(|xi| self.variance_term + xi)
    }
}

/// The seven upper bounds on the squared error of the target risk estimate,
/// plus a Monte-Carlo estimate of the left-hand side from `resamples` draws
/// of `n`-sample datasets.
pub fn risk_bound_terms(inst: &RiskInstance, ell: f64, n: usize, resamples: usize, rng: &mut LabRng) -> Result<RiskBounds> {
    inst.validate(ell)?;
    if n == 0 || resamples == 0 {
        return Err(LabError::Config("n and resamples must be positive".into()));
    }
    let k = inst.q_tar[0].len() as f64;
    let m = inst.px.len();
    let tar_loss: Vec<f64> = (0..m).map(|i| inst.q_tar[i].as_vector().dot(&inst.losses[i])).collect();
    let star_loss: Vec<f64> = (0..m).map(|i| inst.q_star[i].as_vector().dot(&inst.losses[i])).collect();
    let mean_tar = inst.expect(|i| tar_loss[i]);
    let risk = inst.expect(|i| star_loss[i]);
    let variance_term = inst.expect(|i| (tar_loss[i] - mean_tar).powi(2)) / n as f64;
    let bias = mean_tar - risk;

    let l2 = inst.expect(|i| inst.q_tar[i].dist(&inst.q_star[i]));
    let l1 = inst.expect(|i| (inst.q_tar[i].as_vector() - inst.q_star[i].as_vector()).lp_norm(1));
    let kl_fwd: Option<Vec<f64>> = (0..m).map(|i| kl_divergence(&inst.q_tar[i], &inst.q_star[i])).collect();
    let kl_rev: Option<Vec<f64>> = (0..m).map(|i| kl_divergence(&inst.q_star[i], &inst.q_tar[i])).collect();
    let e = |v: &Vec<f64>, f: fn(f64) -> f64| inst.expect(|i| f(v[i]));
    let l = ell * ell;
    let forms = vec![
        BoundForm { name: "l2", xi: Some(l * k * l2 * l2) },
        BoundForm { name: "l1", xi: Some(l * l1 * l1) },
        BoundForm { name: "sqrt_kl_tar_star", xi: kl_fwd.as_ref().map(|v| 2.0 * l * e(v, f64::sqrt).powi(2)) },
        BoundForm { name: "kl_tar_star", xi: kl_fwd.as_ref().map(|v| 2.0 * l * e(v, |x| x)) },
        BoundForm { name: "sqrt_kl_star_tar", xi: kl_rev.as_ref().map(|v| 2.0 * l * e(v, f64::sqrt).powi(2)) },
        BoundForm { name: "kl_star_tar", xi: kl_rev.as_ref().map(|v| 2.0 * l * e(v, |x| x)) },
        BoundForm {
            name: "jeffreys",
            xi: kl_fwd.as_ref().zip(kl_rev.as_ref()).map(|(a, b)| l * inst.expect(|i| a[i] + b[i])),
        },
    ];

    // cumulative distribution for sampling x
    let mut cdf = Vec::with_capacity(m);
    let mut acc = 0.0;
    for &p in &inst.px {
        acc += p;
        cdf.push(acc);
    }
    let mut sq = 0.0;
    for _ in 0..resamples {
        let mut r_tar = 0.0;
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let i = cdf.partition_point(|&c| c < u).min(m - 1);
            r_tar += tar_loss[i];
        }
        sq += (r_tar / n as f64 - risk).powi(2);
    }
    Ok(RiskBounds { variance_term, forms, mc_lhs: sq / resamples as f64, exact_lhs: variance_term + bias * bias })
}
