//! Gap terms and one-step dynamics for SFT, DPO and GRPO on an
//! unconstrained-feature model: squeezing under negative gradients, the
//! 2-gram accumulation experiment, GRPO advantages and ratios, and the
//! token influence score used to mask harmful negative tokens.

mod gap;
mod grpo;
mod nthr;
mod rollout;
mod squeeze;
mod two_gram;
mod ufm;

pub use gap::{dpo_gate, g_sft, sigmoid, DpoGate, DpoState};
pub use grpo::{clipped_objective, grpo_advantages, grpo_ratio_and_clip, ratio_logit_grad, RatioClip};
pub use nthr::{
    grpo_step, masked_count, measure_gap, nthr_alpha, nthr_alpha_full, nthr_mask, nthr_scores, random_mask, rank_order, topk_overlap,
    AlphaComparison, NthrScores, Response, RolloutGroup, TokenState,
};
pub use rollout::{gen_rollouts, random_topk_baseline, run_nthr, score_gap_overlap, write_nthr_csv, Question, QuestionRow, RolloutSpec};
pub use squeeze::{
    logit_squeeze, paired_direction, paired_step, run_squeeze_trials, squeeze_step, squeeze_vs_temperature, write_squeeze_csv, SqueezeOutcome, SqueezeRow,
    SqueezeTrials,
};
pub use two_gram::{run_two_gram, summarize, write_two_gram_csv, DistSummary, TwoGramConfig, TwoGramMode, TwoGramReport};
pub use ufm::{TokenUpdate, UfmModel};
