use std::collections::HashSet;

use rand::seq::index::sample;
use serde::Serialize;

use super::grpo::grpo_advantages;
use super::ufm::{TokenUpdate, UfmModel};
use crate::error::{check_label, LabError, Result};
use crate::mathcore::{mean, one_hot, LabRng, Matrix, ProbVector, Vector};

/// What one token position contributes to the score: its target, the
/// predicted distribution at that position and the feature it was read from.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenState {
    pub token: usize,
    pub probs: ProbVector,
    pub feature: Vector,
}

impl TokenState {
    pub fn new(token: usize, probs: ProbVector, feature: Vector) -> Result<Self> {
        check_label(token, probs.len())?;
        Ok(Self { token, probs, feature })
    }

    /// `e_y − π`, the gradient of `log π(y)` w.r.t. the logits.
    pub fn gap(&self) -> Vector {
        one_hot(self.probs.len(), self.token) - self.probs.as_vector()
    }
}

/// `α = (e_o − π_o)ᵀ(e_u − π_u) · h_uᵀh_o`: the readout part of the
/// inner product between the two tokens' log-likelihood gradients.
pub fn nthr_alpha(observer: &TokenState, updater: &TokenState) -> f64 {
    observer.gap().dot(&updater.gap()) * updater.feature.dot(&observer.feature)
}

/// Score next to the full inner product that also counts the feature
/// gradients, `(e_o − π_o)ᵀ(h_uᵀh_o·I + WWᵀ)(e_u − π_u)`, treating the two
/// positions as sharing one trainable feature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlphaComparison {
    pub alpha: f64,
    pub full: f64,
}

impl AlphaComparison {
    pub fn gap(&self) -> f64 {
        self.full - self.alpha
    }
}

pub fn nthr_alpha_full(observer: &TokenState, updater: &TokenState, readout: &Matrix) -> Result<AlphaComparison> {
    if readout.nrows() != observer.probs.len() {
        return Err(LabError::Shape("readout rows must match the vocabulary".into()));
    }
    let alpha = nthr_alpha(observer, updater);
    let go = readout.transpose() * observer.gap();
    let gu = readout.transpose() * updater.gap();
    Ok(AlphaComparison { alpha, full: alpha + go.dot(&gu) })
}

/// One sampled response: the token at each position and the context it was
/// predicted from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Response {
    pub contexts: Vec<usize>,
    pub tokens: Vec<usize>,
}

impl Response {
    pub fn new(contexts: Vec<usize>, tokens: Vec<usize>) -> Result<Self> {
        if contexts.len() != tokens.len() || tokens.is_empty() {
            return Err(LabError::Shape("a response needs one context per token and at least one token".into()));
        }
        Ok(Self { contexts, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn log_prob(&self, model: &UfmModel) -> Result<f64> {
        model.sequence_log_prob(&self.contexts, &self.tokens)
    }

    pub fn token_states(&self, model: &UfmModel) -> Result<Vec<TokenState>> {
        self.contexts
            .iter()
            .zip(&self.tokens)
            .map(|(&c, &y)| TokenState::new(y, model.probs(c)?, model.feature(c)))
            .collect()
    }
}

/// `N` responses to one question with binary rewards and their advantages.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutGroup {
    pub responses: Vec<Response>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(responses: Vec<Response>, rewards: Vec<f64>) -> Result<Self> {
        if responses.len() != rewards.len() {
            return Err(LabError::Shape(format!("{} responses for {} rewards", responses.len(), rewards.len())));
        }
        if rewards.iter().any(|&r| r != 0.0 && r != 1.0) {
            return Err(LabError::Domain("rewards must be 0 or 1".into()));
        }
        let advantages = grpo_advantages(&rewards)?;
        Ok(Self { responses, rewards, advantages })
    }

    /// Indices of correct responses (`I⁺`).
    pub fn positives(&self) -> Vec<usize> {
        (0..self.rewards.len()).filter(|&n| self.rewards[n] == 1.0).collect()
    }

    /// Indices of incorrect responses (`I⁻`).
    pub fn negatives(&self) -> Vec<usize> {
        (0..self.rewards.len()).filter(|&n| self.rewards[n] == 0.0).collect()
    }

    pub fn token_count(&self) -> usize {
        self.responses.iter().map(Response::len).sum()
    }

    /// Every token carries its response's advantage.
    pub fn token_advantages(&self) -> Vec<Vec<f64>> {
        self.responses.iter().zip(&self.advantages).map(|(r, &a)| vec![a; r.len()]).collect()
    }
}

/// Per-token scores averaged over all positive observer tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct NthrScores {
    /// `alpha_hat[n][l]`.
    pub alpha_hat: Vec<Vec<f64>>,
    pub advantages: Vec<f64>,
}

impl NthrScores {
    /// Scores of tokens in responses with negative advantage.
    pub fn negative_scores(&self) -> Vec<f64> {
        self.alpha_hat
            .iter()
            .zip(&self.advantages)
            .filter(|(_, &a)| a < 0.0)
            .flat_map(|(s, _)| s.iter().copied())
            .collect()
    }

    /// Scores of tokens in responses with positive advantage.
    pub fn positive_scores(&self) -> Vec<f64> {
        self.alpha_hat
            .iter()
            .zip(&self.advantages)
            .filter(|(_, &a)| a > 0.0)
            .flat_map(|(s, _)| s.iter().copied())
            .collect()
    }

    /// Question-level risk indicator: mean score over negative tokens.
    pub fn mean_negative(&self) -> Result<f64> {
        let s = self.negative_scores();
        if s.is_empty() {
            return Err(LabError::Undefined("no negative tokens".into()));
        }
        Ok(mean(&s))
    }
}

pub fn nthr_scores(model: &UfmModel, group: &RolloutGroup) -> Result<NthrScores> {
    let pos = group.positives();
    if pos.is_empty() {
        return Err(LabError::Undefined("no positive responses to observe".into()));
    }
    let observers: Vec<TokenState> =
        pos.iter().map(|&o| group.responses[o].token_states(model)).collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    let mut alpha_hat = Vec::with_capacity(group.responses.len());
    for r in &group.responses {
        let states = r.token_states(model)?;
        alpha_hat.push(states.iter().map(|u| observers.iter().map(|o| nthr_alpha(o, u)).sum::<f64>() / observers.len() as f64).collect());
    }
    Ok(NthrScores { alpha_hat, advantages: group.advantages.clone() })
}

/// Token advantages after masking: negative-response tokens whose score
/// exceeds `tau` get `beta·A_n`, every other token keeps `A_n`.
pub fn nthr_mask(scores: &NthrScores, tau: f64, beta: f64) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(LabError::Config(format!("beta {beta} outside [0,1]")));
    }
    Ok(scores
        .alpha_hat
        .iter()
        .zip(&scores.advantages)
        .map(|(s, &a)| s.iter().map(|&x| if a < 0.0 && x > tau { beta * a } else { a }).collect())
        .collect())
}

/// Number of tokens whose advantage differs between two token-advantage tables.
pub fn masked_count(original: &[Vec<f64>], masked: &[Vec<f64>]) -> usize {
    original.iter().zip(masked).map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count()).sum()
}

/// Baseline: scale `count` uniformly chosen negative-response tokens by `beta`.
pub fn random_mask(scores: &NthrScores, count: usize, beta: f64, rng: &mut LabRng) -> Result<Vec<Vec<f64>>> {
    let slots: Vec<(usize, usize)> = scores
        .alpha_hat
        .iter()
        .enumerate()
        .filter(|(n, _)| scores.advantages[*n] < 0.0)
        .flat_map(|(n, s)| (0..s.len()).map(move |l| (n, l)))
        .collect();
    if count > slots.len() {
        return Err(LabError::Domain(format!("cannot mask {count} of {} negative tokens", slots.len())));
    }
    let mut out: Vec<Vec<f64>> = scores.alpha_hat.iter().zip(&scores.advantages).map(|(s, &a)| vec![a; s.len()]).collect();
    for i in sample(rng, slots.len(), count) {
        let (n, l) = slots[i];
        out[n][l] *= beta;
    }
    Ok(out)
}

/// One GRPO step from the sampling policy, where every ratio is 1 and the
/// clip is inactive: `θ ← θ + η/T Σ Â_{n,l} ∇log π(y_{n,l})`.
pub fn grpo_step(model: &UfmModel, group: &RolloutGroup, token_adv: &[Vec<f64>], eta: f64) -> Result<UfmModel> {
    if token_adv.len() != group.responses.len() || token_adv.iter().zip(&group.responses).any(|(a, r)| a.len() != r.len()) {
        return Err(LabError::Shape("token advantages do not match the responses".into()));
    }
    let total = group.token_count() as f64;
    let mut ups = Vec::with_capacity(group.token_count());
    for (r, adv) in group.responses.iter().zip(token_adv) {
        for ((&c, &y), &a) in r.contexts.iter().zip(&r.tokens).zip(adv) {
            if a != 0.0 {
                ups.push(TokenUpdate { context: c, token: y, weight: a / total });
            }
        }
    }
    let mut m = model.clone();
    m.apply(&ups, eta)?;
    Ok(m)
}

/// Mean change of `π(y⁺|x)` over the correct responses.
pub fn measure_gap(before: &UfmModel, after: &UfmModel, group: &RolloutGroup) -> Result<f64> {
    let pos = group.positives();
    if pos.is_empty() {
        return Err(LabError::Undefined("gap needs at least one correct response".into()));
    }
    let mut total = 0.0;
    for &o in &pos {
        let r = &group.responses[o];
        total += r.log_prob(after)?.exp() - r.log_prob(before)?.exp();
    }
    Ok(total / pos.len() as f64)
}

/// Item ids ordered by score, largest first; ties keep id order.
pub fn rank_order(scores: &[f64], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = scores[a].total_cmp(&scores[b]);
        if descending { o.reverse() } else { o }
    });
    idx
}

/// `|topK(a) ∩ topK(b)| / K` for two orderings of the same items.
pub fn topk_overlap(rank_a: &[usize], rank_b: &[usize], k: usize) -> Result<f64> {
    let ua: HashSet<_> = rank_a.iter().collect();
    let ub: HashSet<_> = rank_b.iter().collect();
    if ua.len() != rank_a.len() || ub.len() != rank_b.len() || ua != ub {
        return Err(LabError::Domain("rankings must be permutations of the same items".into()));
    }
    if k == 0 || k > rank_a.len() {
        return Err(LabError::Domain(format!("K = {k} outside 1..={}", rank_a.len())));
    }
    let top_a: HashSet<_> = rank_a[..k].iter().collect();
    Ok(rank_b[..k].iter().filter(|x| top_a.contains(x)).count() as f64 / k as f64)
}
