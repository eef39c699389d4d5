//! One runner per subcommand. Each resolves its parameter struct, runs the
//! experiment and hands tables, summaries and plots to [`Output`].

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::svg::{DataRef, PlotKind, PlotSpec};
use super::Output;
use crate::akg::{first_order_slope, verify_first_order, write_force_csv, write_terms_csv, AkgTerms, ForceRow, LossKind, TermNorms};
use crate::datasets::{gen_toy_gaussian, Difficulty, ToyGaussianSpec};
use crate::error::{LabError, Result};
use crate::feature_adapt::{run_tau_sweep, sweep_grid, sweep_q0, write_sweep_csv, write_tau_csv, AdaptSpec, OpmInstance, OpmSpec};
use crate::filterkd::{run_filter_kd, write_kd_csv, FilterKdExperiment};
use crate::finetune_dyn::{
    random_topk_baseline, run_nthr, run_squeeze_trials, run_two_gram, score_gap_overlap, write_nthr_csv, write_squeeze_csv, write_two_gram_csv,
    RolloutSpec, SqueezeTrials, TwoGramConfig, TwoGramMode,
};
use crate::mathcore::{derive_seed, mean, seeded, Activation, MlpModel};
use crate::report::write_csv;
use crate::simplicity::{run_toy256, write_records_csv, write_summary_json, Toy256Config};
use crate::training::{
    entk_stability_after_plateau, run_paths, train, write_paths_csv, write_zigzag_csv, PathExperiment, TrainConfig, TrainObserver, TrainSet,
};
use rand::Rng;

fn plot(kind: PlotKind, file: &str, columns: &[&str], group_by: Option<&str>, title: &str, labels: &[&str]) -> PlotSpec {
    PlotSpec {
        kind,
        data: DataRef { file: file.into(), columns: columns.iter().map(|c| c.to_string()).collect(), group_by: group_by.map(String::from) },
        title: title.into(),
        labels: labels.iter().map(|l| l.to_string()).collect(),
    }
}

/// First-order checks on random MLP/example triples, plus per-epoch force
/// series for a few observers during ordinary training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AkgVerifyParams {
    pub data: ToyGaussianSpec,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub triples: usize,
    pub etas: Vec<f64>,
    pub observers: usize,
    pub train: TrainConfig,
}

impl Default for AkgVerifyParams {
    fn default() -> Self {
        Self {
            data: ToyGaussianSpec { n: 200, ..Default::default() },
            hidden: vec![32],
            activation: Activation::SmoothRelu,
            triples: 50,
            etas: vec![1e-2, 1e-3, 1e-4],
            observers: 4,
            train: TrainConfig { eta: 0.05, epochs: 30, batch_size: 8, ..Default::default() },
        }
    }
}

#[derive(Serialize)]
struct FirstOrderRow {
    triple: usize,
    observer: usize,
    updater: usize,
    eta: f64,
    residual: f64,
    relative_error: f64,
    slope: f64,
}

struct ForceTracker<'a> {
    dataset: &'a [(crate::Vector, usize)],
    observers: usize,
    eta: f64,
    rows: Vec<ForceRow>,
}

impl ForceTracker<'_> {
    fn record(&mut self, epoch: usize, model: &MlpModel) -> Result<()> {
        for o in 0..self.observers.min(self.dataset.len()) {
            let report = crate::akg::epoch_force(model, o, self.dataset, self.eta, LossKind::Ce)?;
            self.rows.push(ForceRow::from_report(epoch, o, self.dataset[o].1, &report));
        }
        Ok(())
    }
}

impl TrainObserver for ForceTracker<'_> {
    fn on_start(&mut self, model: &MlpModel, _data: &TrainSet) -> Result<()> {
        self.record(0, model)
    }
    fn on_epoch_end(&mut self, epoch: usize, model: &MlpModel, _improved: bool) -> Result<()> {
        self.record(epoch, model)
    }
}

pub fn akg_verify(p: &AkgVerifyParams, out: &mut Output) -> Result<()> {
    if p.triples == 0 || p.etas.len() < 2 {
        return Err(LabError::Config("akg-verify needs at least one triple and two learning rates".into()));
    }
    let data = gen_toy_gaussian(&p.data)?;
    let n = data.examples.len();
    let mut dims = vec![p.data.dim];
    dims.extend(&p.hidden);
    dims.push(p.data.classes);
    let mut rng = seeded(derive_seed(p.data.seed, 20));
    let mut rows = Vec::new();
    let mut terms = Vec::new();
    let mut slopes = Vec::new();
    for triple in 0..p.triples {
        let model = MlpModel::random(&dims, p.activation, &mut rng)?;
        let (o, u) = (rng.random_range(0..n), rng.random_range(0..n));
        let (xo, xu, yu) = (&data.examples[o].x, &data.examples[u].x, data.examples[u].y);
        let slope = first_order_slope(&model, xo, xu, yu, &p.etas)?;
        slopes.push(slope);
        for &eta in &p.etas {
            let c = verify_first_order(&model, xo, xu, yu, eta)?;
            rows.push(FirstOrderRow { triple, observer: o, updater: u, eta, residual: c.residual, relative_error: c.relative_error(), slope });
        }
        terms.push(TermNorms::new(o, u, &AkgTerms::for_pair(&model, xo, xu, yu, LossKind::Ce, p.etas[0])?));
    }
    out.table("first_order", |w| write_csv(w, &["triple", "observer", "updater", "eta", "residual", "relative_error", "slope"], &rows))?;
    out.table("terms", |w| write_terms_csv(w, &terms))?;

    let dataset: Vec<_> = data.examples.iter().map(|e| (e.x.clone(), e.y)).collect();
    let inputs: Vec<_> = dataset.iter().map(|d| d.0.clone()).collect();
    let labels: Vec<usize> = dataset.iter().map(|d| d.1).collect();
    let set = TrainSet::from_labels(&inputs, &labels, p.data.classes)?;
    let model = MlpModel::random(&dims, p.activation, &mut seeded(derive_seed(p.data.seed, 21)))?;
    let mut tracker = ForceTracker { dataset: &dataset, observers: p.observers, eta: p.train.eta, rows: Vec::new() };
    let cfg = TrainConfig { seed: derive_seed(p.data.seed, 22), ..p.train.clone() };
    train(model, &set, None, &cfg, &mut tracker)?;
    let forces = out.table("forces", |w| write_force_csv(w, &tracker.rows))?;
    out.plot("forces", plot(PlotKind::Line, &forces, &["epoch", "other_norm"], Some("example_id"), "Force from other examples", &["epoch", "norm"]))?;

    let lo = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let inside = slopes.iter().filter(|s| (1.8..=2.2).contains(*s)).count();
    out.json("summary", &json!({ "triples": p.triples, "slope_min": lo, "slope_max": hi, "slope_mean": mean(&slopes), "slopes_in_1.8_2.2": inside }))
}

pub fn toygauss_paths(p: &PathExperiment, out: &mut Output) -> Result<()> {
    let exp = PathExperiment { keep_snapshots: true, ..p.clone() };
    let run = run_paths(&exp)?;
    out.table("paths", |w| write_paths_csv(w, 0, &run.paths))?;
    out.table("zigzag", |w| write_zigzag_csv(w, &run.records))?;
    let loss: Vec<(usize, f64)> = run.loss_curve.iter().cloned().enumerate().collect();
    let loss_file = out.table("loss", |w| write_csv(w, &["epoch", "loss"], &loss))?;
    out.plot("loss", plot(PlotKind::Line, &loss_file, &["epoch", "loss"], None, "Training loss", &["epoch", "loss"]))?;
    let hard: Vec<_> = run.records.iter().filter(|r| r.group == Difficulty::Hard).take(12).map(|r| run.paths[r.example_id].clone()).collect();
    if !hard.is_empty() {
        let file = out.table("hard_paths", |w| write_paths_csv(w, 0, &hard))?;
        let corners = ["class 1", "class 2", "class 3"];
        let cols = ["smoothed_p_1", "smoothed_p_2", "smoothed_p_3"];
        if p.data.classes == 3 {
            out.plot("hard_paths", plot(PlotKind::PathTriangle, &file, &cols, Some("example_id"), "Smoothed paths of hard examples", &corners))?;
        }
    }
    let summary = run.zigzag_summary(exp.easy_tolerance);
    let (plateau, rhos, median) = entk_stability_after_plateau(&run, &exp, 0.1)?;
    out.json("summary", &json!({ "zigzag": summary, "plateau_epoch": plateau, "entk_median_rho": median, "entk_rhos": rhos }))
}

pub fn filter_kd(p: &FilterKdExperiment, out: &mut Output) -> Result<()> {
    let rows = run_filter_kd(p)?;
    out.table("kd", |w| write_kd_csv(w, &rows))?;
    #[derive(Serialize)]
    struct ModeMean<'a> {
        mode: &'a str,
        seeds: usize,
        mean_test_acc: f64,
        mean_ece: f64,
        mean_supervision_quality: f64,
    }
    let means: Vec<ModeMean> = p
        .modes
        .iter()
        .map(|m| {
            let rs: Vec<_> = rows.iter().filter(|r| r.mode == m.name()).collect();
            let avg = |f: fn(&crate::filterkd::KdRow) -> f64| mean(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            ModeMean { mode: m.name(), seeds: rs.len(), mean_test_acc: avg(|r| r.test_acc), mean_ece: avg(|r| r.ece), mean_supervision_quality: avg(|r| r.supervision_quality) }
        })
        .collect();
    let file = out.table("kd_means", |w| write_csv(w, &["mode", "seeds", "mean_test_acc", "mean_ece", "mean_supervision_quality"], &means))?;
    out.plot("accuracy", plot(PlotKind::Bar, &file, &["mode", "mean_test_acc"], None, "Student test accuracy", &["mode", "accuracy"]))
}

pub fn squeeze(p: &SqueezeTrials, out: &mut Output) -> Result<()> {
    let rows = run_squeeze_trials(p)?;
    let file = out.table("squeeze", |w| write_squeeze_csv(w, &rows))?;
    out.plot("squeeze", plot(PlotKind::Scatter, &file, &["p_neg_before", "p_star_after"], None, "Mass moved to the peak", &["p(y-) before", "p(y*) after"]))?;
    let neg = rows.iter().filter(|r| r.neg_decreased).count();
    let star = rows.iter().filter(|r| r.star_increased).count();
    out.json("summary", &json!({ "trials": rows.len(), "neg_decreased": neg, "star_increased": star, "all_hold": neg == rows.len() && star == rows.len() }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoGramParams {
    pub mode: TwoGramMode,
    #[serde(flatten)]
    pub config: TwoGramConfig,
}

impl Default for TwoGramParams {
    fn default() -> Self {
        Self { mode: TwoGramMode::PosOnly, config: TwoGramConfig::default() }
    }
}

pub fn two_gram(p: &TwoGramParams, out: &mut Output) -> Result<()> {
    let report = run_two_gram(&p.config, p.mode)?;
    let file = out.table("two_gram", |w| write_two_gram_csv(w, &report))?;
    out.plot("max_prob", plot(PlotKind::Line, &file, &["context", "max_prob"], Some("stage"), "Peak probability per context", &["context", "max prob"]))?;
    out.json("summary", &json!({ "mode": p.mode, "before": report.summary_before, "after": report.summary_after }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NthrParams {
    #[serde(flatten)]
    pub rollout: RolloutSpec,
    /// Cut-offs for the score-versus-gap ranking overlap.
    pub topk: Vec<usize>,
    /// Shuffles used for the random-ranking overlap baseline.
    pub baseline_draws: usize,
}

impl Default for NthrParams {
    fn default() -> Self {
        Self { rollout: RolloutSpec::default(), topk: vec![10, 15], baseline_draws: 2000 }
    }
}

pub fn nthr(p: &NthrParams, out: &mut Output) -> Result<()> {
    let rows = run_nthr(&p.rollout)?;
    let file = out.table("nthr", |w| write_nthr_csv(w, &rows))?;
    out.plot("score_vs_gap", plot(PlotKind::Scatter, &file, &["mean_alpha_neg", "gap_grpo"], None, "Negative-token score against gap", &["mean score", "gap (GRPO)"]))?;
    let n = rows.len() as f64;
    let overlaps = p
        .topk
        .iter()
        .map(|&k| {
            Ok(json!({
                "k": k,
                "overlap": score_gap_overlap(&rows, k)?,
                "random_baseline": random_topk_baseline(rows.len(), k, p.baseline_draws, derive_seed(p.rollout.seed, 99))?,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    out.json(
        "summary",
        &json!({
            "questions": rows.len(),
            "nthr_beats_grpo": rows.iter().filter(|r| r.gap_nthr > r.gap_grpo).count() as f64 / n,
            "nthr_beats_random_mask": rows.iter().filter(|r| r.gap_nthr > r.gap_random_mask).count() as f64 / n,
            "overlaps": overlaps,
        }),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatAdaptParams {
    /// Instance for the closed-form sweep over the probe's output.
    pub opm: OpmSpec,
    pub grid: usize,
    /// Problem for the head-probe-then-tune sweep over probe lengths.
    pub adapt: AdaptSpec,
    pub taus: Vec<usize>,
    pub eta_hp: f64,
}

impl Default for FeatAdaptParams {
    fn default() -> Self {
        Self { opm: OpmSpec::default(), grid: 21, adapt: AdaptSpec::default(), taus: vec![0, 2, 8, 32, 128, 512], eta_hp: 1.0 }
    }
}

pub fn feat_adapt(p: &FeatAdaptParams, out: &mut Output) -> Result<()> {
    let table = sweep_q0(&OpmInstance::random(&p.opm)?, &sweep_grid(p.grid)?)?;
    let file = out.table("sweep", |w| write_sweep_csv(w, &table.rows))?;
    out.plot("sweep", plot(PlotKind::Line, &file, &["s", "tr_bt_b0"], None, "Backbone alignment against probe output", &["s", "tr(BtB0)"]))?;
    let taus = run_tau_sweep(&p.adapt, &p.taus, p.eta_hp)?;
    out.table("tau", |w| write_tau_csv(w, &taus))?;
    out.json(
        "summary",
        &json!({
            "argmax_tr_bt_b0": table.argmax_tr_bt_b0,
            "argmax_tr_bt_bt": table.argmax_tr_bt_bt,
            "d_euc_rises_toward_zero": table.d_euc_rises_toward_zero,
        }),
    )
}

pub fn toy256(p: &Toy256Config, out: &mut Output) -> Result<()> {
    let report = run_toy256(p)?;
    let file = out.table("records", |w| write_records_csv(w, &report.records))?;
    out.plot("convergence", plot(PlotKind::Scatter, &file, &["coding_length_bits", "convergence_time"], Some("class"), "Convergence time against coding length", &["coding length (bits)", "convergence time"]))?;
    out.raw_json("correlations", |w| write_summary_json(w, &report))
}
