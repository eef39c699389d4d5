use serde::Serialize;

use crate::error::{check_label, LabError, Result};
use crate::mathcore::{mean, one_hot, ProbVector, Vector};

/// Group-standardized rewards `(r − mean)/std` with the population std.
/// A group whose rewards are all equal carries no signal and gets all zeros.
pub fn grpo_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(LabError::Domain(format!("need at least 2 responses, got {}", rewards.len())));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(LabError::Numeric("non-finite reward".into()));
    }
    let m = mean(rewards);
    let var = rewards.iter().map(|r| (r - m).powi(2)).sum::<f64>() / rewards.len() as f64;
    if var <= 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    let sd = var.sqrt();
    Ok(rewards.iter().map(|r| (r - m) / sd).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioClip {
    pub gamma: f64,
    pub clipped: f64,
}

/// `γ = π_θ(token)/π_ref(token)` and its value clipped into `[lo, hi]`.
pub fn grpo_ratio_and_clip(pi_theta: &ProbVector, pi_ref: &ProbVector, token: usize, lo: f64, hi: f64) -> Result<RatioClip> {
    check_label(token, pi_theta.len())?;
    if pi_ref.len() != pi_theta.len() {
        return Err(LabError::Shape("policy and reference differ in vocabulary".into()));
    }
    if !(lo <= hi) {
        return Err(LabError::Config(format!("clip range [{lo}, {hi}] is empty")));
    }
    let r = pi_ref.get(token);
    if r <= 0.0 {
        return Err(LabError::Domain(format!("reference probability of token {token} is zero")));
    }
    let gamma = pi_theta.get(token) / r;
    Ok(RatioClip { gamma, clipped: gamma.clamp(lo, hi) })
}

/// Gradient of `γ` w.r.t. the policy logits: `γ·(e_token − π_θ)`.
pub fn ratio_logit_grad(pi_theta: &ProbVector, pi_ref: &ProbVector, token: usize) -> Result<Vector> {
    let rc = grpo_ratio_and_clip(pi_theta, pi_ref, token, f64::NEG_INFINITY, f64::INFINITY)?;
    Ok((one_hot(pi_theta.len(), token) - pi_theta.as_vector()) * rc.gamma)
}

/// Per-token clipped surrogate `min(A·γ, A·clip(γ))`.
pub fn clipped_objective(advantage: f64, rc: RatioClip) -> f64 {
    (advantage * rc.gamma).min(advantage * rc.clipped)
}
