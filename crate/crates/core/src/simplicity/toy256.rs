use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coding::describe_and_encode;
use super::measures::topsim;
use crate::akg::LossKind;
use crate::datasets::{code_bits, enumerate_mappings, object_attributes, Encoding, MappingClass, MappingSpec, Toy256Inputs, OBJECTS};
use crate::error::{LabError, Result};
use crate::mathcore::{derive_seed, mean, one_hot, seeded, spearman, Activation, Correlation, Matrix, MlpModel, Vector};
use crate::report::write_csv;
use crate::training::{convergence_time, train, NoObserver, OptimizerKind, TrainConfig, TrainSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toy256Config {
    pub encoding: Encoding,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub seeds: Vec<u64>,
    /// Width of the fixed random projection applied to the one-hot inputs.
    pub proj_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epoch_cap: usize,
    /// A run counts as converged once its training loss drops below this.
    pub loss_target: f64,
    pub batch_size: usize,
}

impl Default for Toy256Config {
    fn default() -> Self {
        Self {
            encoding: Encoding::Oht2,
            loss: LossKind::Ce,
            optimizer: OptimizerKind::Sgd,
            seeds: vec![0],
            proj_dim: 16,
            width: 128,
            depth: 3,
            lr: 1e-3,
            weight_decay: 5e-4,
            epoch_cap: 2000,
            loss_target: 1e-3,
            batch_size: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub mapping_id: usize,
    pub class: MappingClass,
    pub seed: u64,
    /// Area under the training-loss curve, integrated to the epoch cap.
    pub convergence_time: f64,
    pub coding_length_bits: f64,
    /// Undefined (`None`) when every object shares one code.
    pub topsim: Option<f64>,
    /// First epoch whose training loss fell below the target.
    pub converged_epoch: Option<usize>,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub mean_compositional: f64,
    pub mean_holistic: f64,
    pub mean_degenerate: f64,
    pub mean_other: f64,
    /// The degenerate mappings occupy the fastest slots of this seed.
    pub degenerate_fastest: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Toy256Report {
    pub records: Vec<ExperimentRecord>,
    pub coding_length_vs_time: Correlation,
    pub topsim_vs_time: Correlation,
    /// Runs dropped because training diverged.
    pub diverged: usize,
    /// Records left out of the topsim correlation.
    pub topsim_undefined: usize,
    pub seeds: Vec<SeedSummary>,
}

/// Factor and code bit vectors of the four objects under `mapping`.
pub fn mapping_points(mapping: &MappingSpec) -> (Vec<Vec<u8>>, Vec<Vec<u8>>) {
    (0..OBJECTS).map(|o| (object_attributes(o).to_vec(), code_bits(mapping.assignment[o]).to_vec())).unzip()
}

pub fn mapping_topsim(mapping: &MappingSpec) -> Option<f64> {
    let (g, z) = mapping_points(mapping);
    topsim(&g, &z).ok()
}

/// Two 2-way targets per object, one per output bit.
fn mapping_train_set(inputs: &Toy256Inputs, mapping: &MappingSpec) -> Result<TrainSet> {
    let targets: Vec<Vector> = (0..OBJECTS)
        .map(|o| {
            let [hi, lo] = code_bits(mapping.assignment[o]);
            Vector::from_iterator(4, one_hot(2, hi as usize).iter().chain(one_hot(2, lo as usize).iter()).copied())
        })
        .collect();
    TrainSet::new(Matrix::from_columns(&inputs.inputs), Matrix::from_columns(&targets), vec![2, 2])
}

fn validate(config: &Toy256Config) -> Result<()> {
    if config.seeds.is_empty() || config.proj_dim == 0 || config.width == 0 || config.depth == 0 {
        return Err(LabError::Config("toy256 needs seeds and nonzero projection, width and depth".into()));
    }
    if !(config.loss_target > 0.0) {
        return Err(LabError::Config("loss target must be positive".into()));
    }
    Ok(())
}

/// Trains one shared initialization on each of `mappings` for one seed.
/// Diverged runs come back as `None`.
pub fn run_seed(config: &Toy256Config, seed: u64, mappings: &[MappingSpec]) -> Result<Vec<Option<ExperimentRecord>>> {
    validate(config)?;
    let inputs = Toy256Inputs::new(config.encoding, config.proj_dim, &mut seeded(derive_seed(seed, 1)));
    let mut dims = vec![config.proj_dim];
    dims.extend(std::iter::repeat_n(config.width, config.depth));
    dims.push(4);
    let init = MlpModel::random(&dims, Activation::SmoothRelu, &mut seeded(derive_seed(seed, 2)))?;
    let train_cfg = TrainConfig {
        eta: config.lr,
        epochs: config.epoch_cap,
        batch_size: config.batch_size,
        optimizer: config.optimizer,
        weight_decay: config.weight_decay,
        seed: derive_seed(seed, 3),
        loss_target: Some(config.loss_target),
        loss: config.loss,
        ..Default::default()
    };
    mappings
        .par_iter()
        .map(|mapping| {
            let data = mapping_train_set(&inputs, mapping)?;
            let out = match train(init.clone(), &data, None, &train_cfg, &mut NoObserver) {
                Ok(out) => out,
                Err(e) if e.is_numeric() => return Ok(None),
                Err(e) => return Err(e),
            };
            let mut curve = out.loss_curve;
            let final_loss = *curve.last().expect("curve starts at initialization");
            let converged_epoch = curve.iter().position(|&l| l < config.loss_target);
            curve.resize(config.epoch_cap + 1, final_loss);
            Ok(Some(ExperimentRecord {
                mapping_id: mapping.id,
                class: mapping.class,
                seed,
                convergence_time: convergence_time(&curve)?,
                coding_length_bits: describe_and_encode(mapping).1,
                topsim: mapping_topsim(mapping),
                converged_epoch,
                final_loss,
            }))
        })
        .collect()
}

fn class_mean(records: &[&ExperimentRecord], class: MappingClass) -> f64 {
    let v: Vec<f64> = records.iter().filter(|r| r.class == class).map(|r| r.convergence_time).collect();
    if v.is_empty() { f64::NAN } else { mean(&v) }
}

/// Runs every mapping under every seed and correlates convergence time with
/// coding length and with topsim.
pub fn run_toy256(config: &Toy256Config) -> Result<Toy256Report> {
    let mappings = enumerate_mappings();
    let mut records = Vec::new();
    let mut diverged = 0;
    for &seed in &config.seeds {
        for r in run_seed(config, seed, &mappings)? {
            match r {
                Some(r) => records.push(r),
                None => diverged += 1,
            }
        }
    }
    if records.is_empty() && diverged > 0 {
        return Err(LabError::Divergence(format!("all {diverged} runs diverged")));
    }
    summarize(records, diverged)
}

pub fn summarize(records: Vec<ExperimentRecord>, diverged: usize) -> Result<Toy256Report> {
    let times: Vec<f64> = records.iter().map(|r| r.convergence_time).collect();
    let bits: Vec<f64> = records.iter().map(|r| r.coding_length_bits).collect();
    let (ts, tt): (Vec<f64>, Vec<f64>) = records.iter().filter_map(|r| r.topsim.map(|t| (t, r.convergence_time))).unzip();
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let summaries = seeds
        .iter()
        .map(|&seed| {
            let mut rs: Vec<&ExperimentRecord> = records.iter().filter(|r| r.seed == seed).collect();
            rs.sort_by(|a, b| a.convergence_time.total_cmp(&b.convergence_time));
            let n_degenerate = rs.iter().filter(|r| r.class == MappingClass::Degenerate).count();
            SeedSummary {
                seed,
                mean_compositional: class_mean(&rs, MappingClass::Compositional),
                mean_holistic: class_mean(&rs, MappingClass::Holistic),
                mean_degenerate: class_mean(&rs, MappingClass::Degenerate),
                mean_other: class_mean(&rs, MappingClass::Other),
                degenerate_fastest: n_degenerate > 0 && rs[..n_degenerate].iter().all(|r| r.class == MappingClass::Degenerate),
            }
        })
        .collect();
    Ok(Toy256Report {
        coding_length_vs_time: spearman(&bits, &times)?,
        topsim_vs_time: spearman(&ts, &tt)?,
        diverged,
        topsim_undefined: records.len() - ts.len(),
        seeds: summaries,
        records,
    })
}

pub fn write_records_csv<W: Write>(out: W, records: &[ExperimentRecord]) -> Result<()> {
    write_csv(
        out,
        &["mapping_id", "class", "seed", "convergence_time", "coding_length_bits", "topsim", "converged_epoch", "final_loss"],
        records,
    )
}

#[derive(Serialize)]
struct Summary<'a> {
    coding_length_vs_time: &'a Correlation,
    topsim_vs_time: &'a Correlation,
    diverged: usize,
    topsim_undefined: usize,
    seeds: &'a [SeedSummary],
    description_tokens: &'static str,
}

/// Correlations and per-seed class means as JSON.
pub fn write_summary_json<W: Write>(out: W, report: &Toy256Report) -> Result<()> {
    let summary = Summary {
        coding_length_vs_time: &report.coding_length_vs_time,
        topsim_vs_time: &report.topsim_vs_time,
        diverged: report.diverged,
        topsim_undefined: report.topsim_undefined,
        seeds: &report.seeds,
        description_tokens: "a<attr>=<value> attribute rule | b<bit> output bit | perm:keep/perm:swap position permutation | o<object> object | * all objects",
    };
    serde_json::to_writer_pretty(out, &summary)?;
    Ok(())
}
