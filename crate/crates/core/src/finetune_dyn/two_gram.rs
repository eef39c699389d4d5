use std::io::Write;

use serde::{Deserialize, Serialize};

use super::gap::DpoState;
use super::ufm::{TokenUpdate, UfmModel};
use crate::datasets::{gen_two_gram, TwoGramSpec};
use crate::error::{LabError, Result};
use crate::mathcore::{derive_seed, normal_matrix, seeded, Matrix, ProbVector};
use crate::report::write_csv;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoGramMode {
    PosOnly,
    Paired,
    SftBothThenDpo,
    SftPosThenDpo,
}

impl TwoGramMode {
    pub fn name(self) -> &'static str {
        match self {
            TwoGramMode::PosOnly => "pos_only",
            TwoGramMode::Paired => "paired",
            TwoGramMode::SftBothThenDpo => "sft_both_then_dpo",
            TwoGramMode::SftPosThenDpo => "sft_pos_then_dpo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pos_only" | "pos-only" => Ok(TwoGramMode::PosOnly),
            "paired" => Ok(TwoGramMode::Paired),
            "sft_both_then_dpo" | "sft-both-then-dpo" => Ok(TwoGramMode::SftBothThenDpo),
            "sft_pos_then_dpo" | "sft-pos-then-dpo" => Ok(TwoGramMode::SftPosThenDpo),
            _ => Err(LabError::Config(format!("unknown two-gram mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoGramConfig {
    pub data: TwoGramSpec,
    /// Full-batch steps per stage.
    pub steps: usize,
    pub eta: f64,
    /// Standard deviation of the initial readout entries.
    pub readout_scale: f64,
    /// DPO temperature for the two `*_then_dpo` modes.
    pub beta: f64,
}

impl Default for TwoGramConfig {
    fn default() -> Self {
        Self { data: TwoGramSpec::default(), steps: 200, eta: 0.05, readout_scale: 0.3, beta: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DistSummary {
    pub mean_entropy: f64,
    pub mean_max_prob: f64,
}

/// Mean entropy and mean max-probability over the columns of `probs`.
pub fn summarize(probs: &Matrix) -> Result<DistSummary> {
    let n = probs.ncols() as f64;
    let mut ent = 0.0;
    let mut peak = 0.0;
    for c in probs.column_iter() {
        let p = ProbVector::new(c.into_owned())?;
        ent += p.entropy();
        peak += p.max_prob();
    }
    Ok(DistSummary { mean_entropy: ent / n, mean_max_prob: peak / n })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoGramReport {
    pub mode: TwoGramMode,
    /// `V × V`; column `c` is the next-token distribution after context `c`.
    pub before: Matrix,
    /// Distributions after the SFT stage of the `*_then_dpo` modes.
    pub after_sft: Option<Matrix>,
    pub after: Matrix,
    pub summary_before: DistSummary,
    pub summary_after: DistSummary,
}

fn transitions(seq: &[usize], weight: f64) -> Vec<TokenUpdate> {
    let n = seq.len().saturating_sub(1).max(1) as f64;
    seq.windows(2).map(|w| TokenUpdate { context: w[0], token: w[1], weight: weight / n }).collect()
}

fn seq_log_prob(model: &UfmModel, seq: &[usize]) -> Result<f64> {
    let ctx: Vec<usize> = seq[..seq.len() - 1].to_vec();
    model.sequence_log_prob(&ctx, &seq[1..])
}

/// Trains a readout over frozen per-token features on the generated
/// sequences and reports the 16 context-conditional distributions.
pub fn run_two_gram(config: &TwoGramConfig, mode: TwoGramMode) -> Result<TwoGramReport> {
    if !(config.eta > 0.0) || config.steps == 0 || config.data.length < 2 {
        return Err(LabError::Config("two-gram run needs eta > 0, steps ≥ 1 and length ≥ 2".into()));
    }
    let data = gen_two_gram(&config.data)?;
    let v = config.data.vocab;
    let w = normal_matrix(v, config.data.feature_dim, &mut seeded(derive_seed(config.data.seed, 1))) * config.readout_scale;
    let mut model = UfmModel::new(w, data.features.clone())?;
    let before = model.all_probs()?;

    let pos = transitions(&data.positive, 1.0);
    let neg_down = transitions(&data.negative, -1.0);
    let neg_up = transitions(&data.negative, 1.0);

    let mut after_sft = None;
    match mode {
        TwoGramMode::PosOnly => {
            for _ in 0..config.steps {
                model.apply(&pos, config.eta)?;
            }
        }
        TwoGramMode::Paired => {
            let both: Vec<_> = pos.iter().chain(&neg_down).copied().collect();
            for _ in 0..config.steps {
                model.apply(&both, config.eta)?;
            }
        }
        TwoGramMode::SftBothThenDpo | TwoGramMode::SftPosThenDpo => {
            let sft: Vec<_> = if mode == TwoGramMode::SftBothThenDpo { pos.iter().chain(&neg_up).copied().collect() } else { pos.clone() };
            for _ in 0..config.steps {
                model.apply(&sft, config.eta)?;
            }
            after_sft = Some(model.all_probs()?);
            let ref_pos = seq_log_prob(&model, &data.positive)?;
            let ref_neg = seq_log_prob(&model, &data.negative)?;
            for _ in 0..config.steps {
                let state = DpoState::new(config.beta, ref_pos, ref_neg, seq_log_prob(&model, &data.positive)?, seq_log_prob(&model, &data.negative)?)?;
                let scale = config.beta * (1.0 - state.gate());
                let ups: Vec<_> = pos
                    .iter()
                    .chain(&neg_down)
                    .map(|u| TokenUpdate { weight: u.weight * scale, ..*u })
                    .collect();
                model.apply(&ups, config.eta)?;
            }
        }
    }
    let after = model.all_probs()?;
    Ok(TwoGramReport {
        mode,
        summary_before: summarize(&before)?,
        summary_after: summarize(&after)?,
        before,
        after_sft,
        after,
    })
}

#[derive(Serialize)]
struct ContextRow<'a> {
    mode: &'a str,
    stage: &'a str,
    context: usize,
    entropy: f64,
    max_prob: f64,
}

/// One row per (stage, context) with that distribution's entropy and peak.
pub fn write_two_gram_csv<W: Write>(out: W, report: &TwoGramReport) -> Result<()> {
    let mut rows = Vec::new();
    let mut stages = vec![("before", &report.before)];
    if let Some(m) = &report.after_sft {
        stages.push(("after_sft", m));
    }
    stages.push(("after", &report.after));
    for (stage, m) in stages {
        for (c, col) in m.column_iter().enumerate() {
            let p = ProbVector::new(col.into_owned())?;
            rows.push(ContextRow { mode: report.mode.name(), stage, context: c, entropy: p.entropy(), max_prob: p.max_prob() });
        }
    }
    write_csv(out, &["mode", "stage", "context", "entropy", "max_prob"], &rows)
}
