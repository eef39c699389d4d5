use std::io::Write;

use serde::{Deserialize, Serialize};

use super::analytics::{zigzag_stats, LearningPath};
use super::loop_::{train, RecordCadence, Recorder, StepInfo, TrainConfig, TrainObserver, TrainSet};
use crate::akg::{class_mean_probe_pairs, entk_stability};
use crate::datasets::{difficulty_group, gen_toy_gaussian, Difficulty, ToyGaussianSpec, DEFAULT_THRESHOLDS};
use crate::error::{LabError, Result};
use crate::mathcore::{derive_seed, quantile, seeded, Activation, MlpModel};
use crate::report::write_csv;

/// Plain training on Toy-Gaussian data with every example's prediction
/// recorded once per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathExperiment {
    pub data: ToyGaussianSpec,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    /// EMA coefficient applied to the recorded paths before measuring.
    pub ema_alpha: f64,
    /// A hard example's dip must undercut both ends by more than this.
    pub dip_margin: f64,
    /// An easy example shows no dip when its final distance is within this
    /// of its minimum.
    pub easy_tolerance: f64,
    pub thresholds: (f64, f64),
    /// Also keep a model snapshot per epoch for kernel-stability analysis.
    pub keep_snapshots: bool,
}

impl Default for PathExperiment {
    fn default() -> Self {
        Self {
            data: ToyGaussianSpec { n: 1500, sigma: 1.7, ..Default::default() },
            hidden: vec![128],
            activation: Activation::SmoothRelu,
            train: TrainConfig { eta: 0.05, epochs: 60, batch_size: 8, weight_decay: 0.003, ..Default::default() },
            ema_alpha: 0.3,
            dip_margin: 0.0,
            easy_tolerance: 0.05,
            thresholds: DEFAULT_THRESHOLDS,
            keep_snapshots: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathRecord {
    pub example_id: usize,
    pub label: usize,
    pub difficulty: f64,
    pub group: Difficulty,
    pub initial_dist: f64,
    pub min_dist: f64,
    pub epoch_of_min: usize,
    pub final_dist: f64,
    pub dip: bool,
}

#[derive(Clone, Debug)]
pub struct PathRun {
    pub records: Vec<PathRecord>,
    pub paths: Vec<LearningPath>,
    pub loss_curve: Vec<f64>,
    /// Initialization followed by one model per epoch (empty unless requested).
    pub snapshots: Vec<MlpModel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZigzagSummary {
    pub hard: usize,
    pub easy: usize,
    /// Fraction of hard examples whose smoothed path dips toward `q*`.
    pub hard_dip_fraction: f64,
    /// Fraction of easy examples ending within tolerance of their closest approach.
    pub easy_settled_fraction: f64,
}

impl PathRun {
    pub fn zigzag_summary(&self, easy_tolerance: f64) -> ZigzagSummary {
        let hard: Vec<&PathRecord> = self.records.iter().filter(|r| r.group == Difficulty::Hard).collect();
        let easy: Vec<&PathRecord> = self.records.iter().filter(|r| r.group == Difficulty::Easy).collect();
        let frac = |n: usize, d: usize| if d == 0 { f64::NAN } else { n as f64 / d as f64 };
        ZigzagSummary {
            hard: hard.len(),
            easy: easy.len(),
            hard_dip_fraction: frac(hard.iter().filter(|r| r.dip).count(), hard.len()),
            easy_settled_fraction: frac(easy.iter().filter(|r| r.final_dist <= r.min_dist + easy_tolerance).count(), easy.len()),
        }
    }

    /// First epoch whose training loss has covered `1 − fraction` of its
    /// total drop.
    pub fn plateau_epoch(&self, fraction: f64) -> usize {
        let c = &self.loss_curve;
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let bar = lo + fraction * (c[0] - lo);
        c.iter().position(|&l| l <= bar).unwrap_or(c.len() - 1)
    }
}

struct Snapshots(Vec<MlpModel>);

impl TrainObserver for Snapshots {
    fn on_start(&mut self, model: &MlpModel, _data: &TrainSet) -> Result<()> {
        self.0.push(model.clone());
        Ok(())
    }
    fn on_epoch_end(&mut self, _epoch: usize, model: &MlpModel, _improved: bool) -> Result<()> {
        self.0.push(model.clone());
        Ok(())
    }
}

struct Both<'a>(&'a mut Recorder, Option<&'a mut Snapshots>);

impl TrainObserver for Both<'_> {
    fn on_start(&mut self, model: &MlpModel, data: &TrainSet) -> Result<()> {
        self.0.on_start(model, data)?;
        self.1.as_mut().map_or(Ok(()), |s| s.on_start(model, data))
    }
    fn on_step(&mut self, info: &StepInfo<'_>) -> Result<()> {
        self.0.on_step(info)
    }
    fn on_epoch_end(&mut self, epoch: usize, model: &MlpModel, improved: bool) -> Result<()> {
        self.0.on_epoch_end(epoch, model, improved)?;
        self.1.as_mut().map_or(Ok(()), |s| s.on_epoch_end(epoch, model, improved))
    }
}

pub fn run_paths(exp: &PathExperiment) -> Result<PathRun> {
    if !(0.0..=1.0).contains(&exp.ema_alpha) {
        return Err(LabError::Config(format!("EMA coefficient {} outside [0, 1]", exp.ema_alpha)));
    }
    let data = gen_toy_gaussian(&exp.data)?;
    let inputs: Vec<_> = data.examples.iter().map(|e| e.x.clone()).collect();
    let labels: Vec<usize> = data.examples.iter().map(|e| e.y).collect();
    let set = TrainSet::from_labels(&inputs, &labels, exp.data.classes)?;
    let mut dims = vec![exp.data.dim];
    dims.extend(&exp.hidden);
    dims.push(exp.data.classes);
    let model = MlpModel::random(&dims, exp.activation, &mut seeded(derive_seed(exp.data.seed, 11)))?;
    let mut recorder = Recorder::new(RecordCadence::PerEpoch, inputs.iter().cloned().enumerate().collect());
    let mut snaps = Snapshots(Vec::new());
    let cfg = TrainConfig { seed: derive_seed(exp.data.seed, 12), ..exp.train.clone() };
    let out = train(model, &set, None, &cfg, &mut Both(&mut recorder, exp.keep_snapshots.then_some(&mut snaps)))?;
    let mut paths = Vec::with_capacity(inputs.len());
    let mut records = Vec::with_capacity(inputs.len());
    for (id, raw) in recorder.paths.into_iter().enumerate() {
        let path = LearningPath::new(id, raw, exp.ema_alpha)?;
        let e = &data.examples[id];
        let z = zigzag_stats(&path.smoothed, &e.q_star)?;
        records.push(PathRecord {
            example_id: id,
            label: e.y,
            difficulty: e.difficulty,
            group: difficulty_group(e, exp.thresholds),
            initial_dist: z.initial_dist,
            min_dist: z.min_dist,
            epoch_of_min: z.epoch_of_min,
            final_dist: z.final_dist,
            dip: z.has_dip(exp.dip_margin),
        });
        paths.push(path);
    }
    Ok(PathRun { records, paths, loss_curve: out.loss_curve, snapshots: snaps.0 })
}

/// Adjacent-epoch Spearman correlations of the class-pair kernel norms,
/// from the plateau epoch onward, and their median.
pub fn entk_stability_after_plateau(run: &PathRun, exp: &PathExperiment, plateau_fraction: f64) -> Result<(usize, Vec<f64>, f64)> {
    if run.snapshots.len() < 3 {
        return Err(LabError::Domain("kernel stability needs per-epoch snapshots".into()));
    }
    let data = gen_toy_gaussian(&exp.data)?;
    let inputs: Vec<_> = data.examples.iter().map(|e| e.x.clone()).collect();
    let labels: Vec<usize> = data.examples.iter().map(|e| e.y).collect();
    let pairs = class_mean_probe_pairs(&inputs, &labels, exp.data.classes)?;
    let start = run.plateau_epoch(plateau_fraction).min(run.snapshots.len() - 2);
    let rhos = entk_stability(&run.snapshots[start..], &pairs)?;
    let mid = quantile(&rhos, 0.5);
    Ok((start, rhos, mid))
}

pub fn write_zigzag_csv<W: Write>(out: W, records: &[PathRecord]) -> Result<()> {
    write_csv(
        out,
        &["example_id", "label", "difficulty", "group", "initial_dist", "min_dist", "epoch_of_min", "final_dist", "dip"],
        records,
    )
}
