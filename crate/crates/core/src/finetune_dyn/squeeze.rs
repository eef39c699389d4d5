use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ufm::{TokenUpdate, UfmModel};
use crate::error::{check_label, LabError, Result};
use crate::mathcore::{log_softmax, one_hot, seeded, softmax, Matrix, ProbVector, Vector};
use crate::report::write_csv;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SqueezeOutcome {
    pub y_neg: usize,
    /// Most likely class before the update once `y_neg` is set aside.
    pub y_star: usize,
    pub p_before: Vec<f64>,
    pub p_after: Vec<f64>,
    /// `p_after / p_before` per class.
    pub ratios: Vec<f64>,
    pub neg_decreased: bool,
    pub star_increased: bool,
}

impl SqueezeOutcome {
    /// Directions are read off log-probabilities so that changes to a
    /// probability within rounding of 1 are still resolved.
    fn from_logits(before: &Vector, after: &Vector, y_neg: usize) -> Result<Self> {
        let (lb, la) = (log_softmax(before)?, log_softmax(after)?);
        let p_before = softmax(before)?;
        let y_star = p_before
            .argmax_excluding(y_neg)
            .ok_or_else(|| LabError::Domain("need at least two classes".into()))?;
        Ok(Self {
            y_neg,
            y_star,
            neg_decreased: la[y_neg] < lb[y_neg],
            star_increased: la[y_star] > lb[y_star],
            p_before: p_before.as_slice().to_vec(),
            p_after: softmax(after)?.as_slice().to_vec(),
            ratios: la.iter().zip(lb.iter()).map(|(a, b)| (a - b).exp()).collect(),
        })
    }

    pub fn guarantees_hold(&self) -> bool {
        self.neg_decreased && self.star_increased
    }

    /// Classes whose probability went down.
    pub fn squeezed_count(&self) -> usize {
        self.ratios.iter().filter(|&&r| r < 1.0).count()
    }
}

/// One gradient-ascent step on the cross-entropy of `y_neg` under `context`,
/// applied to the readout only.
pub fn squeeze_step(model: &UfmModel, context: usize, y_neg: usize, eta: f64) -> Result<SqueezeOutcome> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(LabError::Config(format!("learning rate {eta} must be positive")));
    }
    check_label(y_neg, model.vocab())?;
    let before = model.logits(context)?;
    let mut m = model.clone();
    m.train_features = false;
    m.train_readout = true;
    m.apply(&[TokenUpdate { context, token: y_neg, weight: -1.0 }], eta)?;
    SqueezeOutcome::from_logits(&before, &m.logits(context)?, y_neg)
}

/// The same ascent step expressed on logits: a readout-only update moves the
/// logits by `step·(p − e_neg)` with `step = η‖h‖²`.
pub fn logit_squeeze(logits: &Vector, y_neg: usize, step: f64) -> Result<SqueezeOutcome> {
    check_label(y_neg, logits.len())?;
    let p = softmax(logits)?;
    let moved = logits + (p.as_vector() - one_hot(logits.len(), y_neg)) * step;
    SqueezeOutcome::from_logits(logits, &moved, y_neg)
}

/// Number of squeezed classes when the pre-update logits are divided by each
/// temperature in turn.
pub fn squeeze_vs_temperature(logits: &Vector, y_neg: usize, step: f64, temperatures: &[f64]) -> Result<Vec<usize>> {
    temperatures
        .iter()
        .map(|&t| {
            if !(t > 0.0) {
                return Err(LabError::Config(format!("temperature {t} must be positive")));
            }
            Ok(logit_squeeze(&(logits / t), y_neg, step)?.squeezed_count())
        })
        .collect()
}

/// Readout change of a paired update on one shared context: descent on
/// `y_pos` with rate `eta_pos` plus ascent on `y_neg` with rate `eta_neg`.
/// With equal rates the `p` parts cancel and the change is `η(e_pos − e_neg)hᵀ`.
pub fn paired_direction(model: &UfmModel, context: usize, y_pos: usize, y_neg: usize, eta_pos: f64, eta_neg: f64) -> Result<Matrix> {
    let v = model.vocab();
    check_label(y_pos, v)?;
    check_label(y_neg, v)?;
    if y_pos == y_neg {
        return Err(LabError::Domain("paired update needs distinct tokens".into()));
    }
    let p = model.probs(context)?.into_vector();
    let h = model.feature(context);
    let pos = (one_hot(v, y_pos) - &p) * eta_pos;
    let neg = (one_hot(v, y_neg) - &p) * eta_neg;
    Ok((pos - neg) * h.transpose())
}

/// Applies the paired update in place and returns the new distribution.
pub fn paired_step(model: &mut UfmModel, context: usize, y_pos: usize, y_neg: usize, eta_pos: f64, eta_neg: f64) -> Result<ProbVector> {
    let dw = paired_direction(model, context, y_pos, y_neg, eta_pos, eta_neg)?;
    model.readout += dw;
    model.probs(context)
}

/// Random readout-only ascent steps: each trial draws a fresh readout with a
/// random scale and a random negative token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqueezeTrials {
    pub vocab: usize,
    pub dim: usize,
    pub trials: usize,
    pub eta: f64,
    /// Readout scales are drawn uniformly from this range.
    pub scale_range: (f64, f64),
    pub seed: u64,
}

impl Default for SqueezeTrials {
    fn default() -> Self {
        Self { vocab: 8, dim: 6, trials: 1000, eta: 0.05, scale_range: (0.1, 3.0), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SqueezeRow {
    pub trial: usize,
    pub y_neg: usize,
    pub y_star: usize,
    pub p_neg_before: f64,
    pub p_neg_after: f64,
    pub p_star_before: f64,
    pub p_star_after: f64,
    pub squeezed: usize,
    pub neg_decreased: bool,
    pub star_increased: bool,
}

pub fn run_squeeze_trials(spec: &SqueezeTrials) -> Result<Vec<SqueezeRow>> {
    let (lo, hi) = spec.scale_range;
    if spec.vocab < 2 || spec.dim == 0 || !(lo > 0.0 && hi > lo) {
        return Err(LabError::Config("squeeze trials need vocab ≥ 2, dim ≥ 1 and a positive scale range".into()));
    }
    let mut rng = seeded(spec.seed);
    (0..spec.trials)
        .map(|trial| {
            let model = UfmModel::random(spec.vocab, spec.dim, 1, rng.random_range(lo..hi), &mut rng)?;
            let y_neg = rng.random_range(0..spec.vocab);
            let out = squeeze_step(&model, 0, y_neg, spec.eta)?;
            Ok(SqueezeRow {
                trial,
                y_neg,
                y_star: out.y_star,
                p_neg_before: out.p_before[y_neg],
                p_neg_after: out.p_after[y_neg],
                p_star_before: out.p_before[out.y_star],
                p_star_after: out.p_after[out.y_star],
                squeezed: out.squeezed_count(),
                neg_decreased: out.neg_decreased,
                star_increased: out.star_increased,
            })
        })
        .collect()
}

pub fn write_squeeze_csv<W: Write>(out: W, rows: &[SqueezeRow]) -> Result<()> {
    write_csv(
        out,
        &["trial", "y_neg", "y_star", "p_neg_before", "p_neg_after", "p_star_before", "p_star_after", "squeezed", "neg_decreased", "star_increased"],
        rows,
    )
}
