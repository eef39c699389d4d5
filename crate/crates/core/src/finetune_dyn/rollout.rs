use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::nthr::{grpo_step, masked_count, measure_gap, nthr_mask, nthr_scores, random_mask, rank_order, topk_overlap, Response, RolloutGroup};
use super::ufm::UfmModel;
use crate::error::{LabError, Result};
use crate::mathcore::{derive_seed, quantile, seeded, LabRng};
use crate::report::write_csv;

/// Synthetic questions answered by a 2-gram policy over a small vocabulary.
/// Question `q` starts from its own context; every later position is
/// conditioned on the previous token. A response is correct when its last
/// token equals the question's planted answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutSpec {
    pub vocab: usize,
    pub dim: usize,
    pub questions: usize,
    pub group_size: usize,
    pub length: usize,
    pub readout_scale: f64,
    /// Learning rate of the single measured update.
    pub eta: f64,
    /// Threshold `τ` as a quantile of each group's negative-token scores,
    /// floored at 0 because only positive scores mark harmful tokens.
    pub tau_quantile: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for RolloutSpec {
    fn default() -> Self {
        Self {
            vocab: 8,
            dim: 8,
            questions: 100,
            group_size: 8,
            length: 3,
            readout_scale: 2.0,
            eta: 0.3,
            tau_quantile: 0.5,
            beta: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Question {
    pub start_context: usize,
    pub answer: usize,
    pub group: RolloutGroup,
}

const MAX_RESAMPLES: usize = 200;
const MAX_ANSWERS: usize = 50;

fn sample_response(model: &UfmModel, start: usize, length: usize, rng: &mut LabRng) -> Result<Response> {
    let mut contexts = Vec::with_capacity(length);
    let mut tokens = Vec::with_capacity(length);
    let mut ctx = start;
    for _ in 0..length {
        let p = model.probs(ctx)?;
        let dist = WeightedIndex::new(p.as_slice()).map_err(|e| LabError::Numeric(e.to_string()))?;
        let y = dist.sample(rng);
        contexts.push(ctx);
        tokens.push(y);
        ctx = y;
    }
    Response::new(contexts, tokens)
}

/// Draws the policy and one rollout group per question. Groups are
/// resampled until they hold both correct and incorrect responses.
pub fn gen_rollouts(spec: &RolloutSpec) -> Result<(UfmModel, Vec<Question>)> {
    if spec.vocab < 2 || spec.group_size < 2 || spec.length == 0 || spec.questions == 0 {
        return Err(LabError::Config("rollouts need vocab ≥ 2, group size ≥ 2, length ≥ 1 and ≥ 1 question".into()));
    }
    let mut rng = seeded(derive_seed(spec.seed, 1));
    let model = UfmModel::random(spec.vocab, spec.dim, spec.vocab + spec.questions, spec.readout_scale, &mut rng)?;
    let mut questions = Vec::with_capacity(spec.questions);
    for q in 0..spec.questions {
        let start = spec.vocab + q;
        let mut found = None;
        // the answer is the last token of a pilot rollout, so it is reachable;
        // redraw it when it is too likely or too unlikely to give a mixed group
        for _ in 0..MAX_ANSWERS {
            let answer = *sample_response(&model, start, spec.length, &mut rng)?.tokens.last().unwrap();
            for _ in 0..MAX_RESAMPLES {
                let responses: Vec<Response> =
                    (0..spec.group_size).map(|_| sample_response(&model, start, spec.length, &mut rng)).collect::<Result<_>>()?;
                let rewards: Vec<f64> = responses.iter().map(|r| f64::from(u8::from(*r.tokens.last().unwrap() == answer))).collect();
                let hits = rewards.iter().filter(|&&r| r == 1.0).count();
                if hits > 0 && hits < rewards.len() {
                    found = Some((answer, RolloutGroup::new(responses, rewards)?));
                    break;
                }
            }
            if found.is_some() {
                break;
            }
        }
        let (answer, group) = found.ok_or_else(|| LabError::Undefined(format!("question {q}: no mixed group found")))?;
        questions.push(Question { start_context: start, answer, group });
    }
    Ok((model, questions))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuestionRow {
    pub seed: u64,
    pub question: usize,
    pub positives: usize,
    pub mean_alpha_neg: f64,
    pub tau: f64,
    pub masked_tokens: usize,
    pub gap_grpo: f64,
    pub gap_pos_only: f64,
    pub gap_nthr: f64,
    pub gap_random_mask: f64,
}

/// For each question, one update from the sampling policy under plain GRPO,
/// positive-only training, NTHR masking and an equal-count random mask.
pub fn run_nthr(spec: &RolloutSpec) -> Result<Vec<QuestionRow>> {
    let (model, questions) = gen_rollouts(spec)?;
    let mut mask_rng = seeded(derive_seed(spec.seed, 2));
    let mut rows = Vec::with_capacity(questions.len());
    for (q, question) in questions.iter().enumerate() {
        let group = &question.group;
        let scores = nthr_scores(&model, group)?;
        let tau = quantile(&scores.negative_scores(), spec.tau_quantile).max(0.0);
        let plain = group.token_advantages();
        let nthr = nthr_mask(&scores, tau, spec.beta)?;
        let count = masked_count(&plain, &nthr);
        let random = random_mask(&scores, count, spec.beta, &mut mask_rng)?;
        let pos_only = nthr_mask(&scores, f64::NEG_INFINITY, 0.0)?;
        let gap = |adv: &[Vec<f64>]| -> Result<f64> { measure_gap(&model, &grpo_step(&model, group, adv, spec.eta)?, group) };
        rows.push(QuestionRow {
            seed: spec.seed,
            question: q,
            positives: group.positives().len(),
            mean_alpha_neg: scores.mean_negative()?,
            tau,
            masked_tokens: count,
            gap_grpo: gap(&plain)?,
            gap_pos_only: gap(&pos_only)?,
            gap_nthr: gap(&nthr)?,
            gap_random_mask: gap(&random)?,
        });
    }
    Ok(rows)
}

/// Top-K overlap between "largest mean negative score" and "smallest GRPO gap".
pub fn score_gap_overlap(rows: &[QuestionRow], k: usize) -> Result<f64> {
    let score: Vec<f64> = rows.iter().map(|r| r.mean_alpha_neg).collect();
    let gap: Vec<f64> = rows.iter().map(|r| r.gap_grpo).collect();
    topk_overlap(&rank_order(&score, true), &rank_order(&gap, false), k)
}

/// Mean top-K overlap of a uniformly random ranking against a fixed one,
/// estimated from `draws` shuffles.
pub fn random_topk_baseline(n: usize, k: usize, draws: usize, seed: u64) -> Result<f64> {
    if draws == 0 {
        return Err(LabError::Config("baseline needs at least one draw".into()));
    }
    let fixed: Vec<usize> = (0..n).collect();
    let mut shuffled = fixed.clone();
    let mut rng = seeded(seed);
    let mut total = 0.0;
    for _ in 0..draws {
        shuffled.shuffle(&mut rng);
        total += topk_overlap(&fixed, &shuffled, k)?;
    }
    Ok(total / draws as f64)
}

pub fn write_nthr_csv<W: Write>(out: W, rows: &[QuestionRow]) -> Result<()> {
    write_csv(
        out,
        &["seed", "question", "positives", "mean_alpha_neg", "tau", "masked_tokens", "gap_grpo", "gap_pos_only", "gap_nthr", "gap_random_mask"],
        rows,
    )
}
