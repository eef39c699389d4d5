use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{accuracy, ece, supervision_quality, train_student, train_teacher, EmaTable, KdConfig, KdMode};
use crate::akg::LossKind;
use crate::datasets::{flip_labels, gen_toy_gaussian, stratified_split, ToyGaussianSpec};
use crate::error::Result;
use crate::report::write_csv;
use crate::mathcore::{derive_seed, one_hot, seeded, Activation, Matrix, MlpModel, ProbVector};
use crate::training::{StopMetric, TrainConfig, TrainSet};

/// Paired teacher/student comparison on noisy Toy-Gaussian data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterKdExperiment {
    pub data: ToyGaussianSpec,
    pub noise_ratio: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub alpha: f64,
    pub restore_best: bool,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub test_n: usize,
    pub val_fraction: f64,
    pub seeds: Vec<u64>,
    pub modes: Vec<KdMode>,
}

impl Default for FilterKdExperiment {
    fn default() -> Self {
        Self {
            // a wider noise scale keeps the Bayes posterior away from one-hot
            data: ToyGaussianSpec { n: 1000, sigma: 3.0, ..Default::default() },
            noise_ratio: 0.2,
            hidden: vec![32],
            activation: Activation::SmoothRelu,
            alpha: 0.05,
            restore_best: false,
            teacher: TrainConfig {
                eta: 1e-3,
                epochs: 200,
                batch_size: 1,
                patience: Some(30),
                stop_metric: StopMetric::Error,
                ..Default::default()
            },
            student: TrainConfig { eta: 1e-3, epochs: 100, batch_size: 1, ..Default::default() },
            test_n: 2000,
            val_fraction: 0.1,
            seeds: (0..5).collect(),
            modes: vec![KdMode::FilterKd, KdMode::Eskd, KdMode::OneHot],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KdRow {
    pub mode: String,
    pub seed: u64,
    pub stop_epoch: usize,
    pub test_acc: f64,
    pub ece: f64,
    pub supervision_quality: f64,
}

/// Runs every mode for every seed. Within a seed all modes share the data,
/// the label noise, the teacher initialization and the student initialization.
pub fn run_filter_kd(exp: &FilterKdExperiment) -> Result<Vec<KdRow>> {
    let mut rows = Vec::new();
    for &seed in &exp.seeds {
        let spec = ToyGaussianSpec { seed: derive_seed(seed, 1), ..exp.data.clone() };
        let data = gen_toy_gaussian(&spec)?;
        let noisy = flip_labels(&data.examples, exp.noise_ratio, derive_seed(seed, 2))?;
        let test = data.sample(exp.test_n, &mut seeded(derive_seed(seed, 3)))?;
        let classes = spec.classes;

        let labels: Vec<usize> = noisy.iter().map(|e| e.y).collect();
        let (train_idx, val_idx) = stratified_split(&labels, exp.val_fraction, derive_seed(seed, 4));
        let inputs: Vec<_> = noisy.iter().map(|e| e.x.clone()).collect();
        let full = TrainSet::from_labels(&inputs, &labels, classes)?;
        let train_set = full.subset(&train_idx);
        let val_set = full.subset(&val_idx);
        let q_star: Vec<ProbVector> = train_idx.iter().map(|&i| noisy[i].q_star.clone()).collect();

        let mut dims = vec![spec.dim];
        dims.extend(&exp.hidden);
        dims.push(classes);
        let teacher_init = MlpModel::random(&dims, exp.activation, &mut seeded(derive_seed(seed, 5)))?;
        let student_init = MlpModel::random(&dims, exp.activation, &mut seeded(derive_seed(seed, 6)))?;
        let teacher_cfg = TrainConfig { seed: derive_seed(seed, 7), loss: LossKind::Ce, ..exp.teacher.clone() };
        let student_cfg = TrainConfig { seed: derive_seed(seed, 8), ..exp.student.clone() };

        for &mode in &exp.modes {
            let (table, stop_epoch) = match mode {
                KdMode::OneHot => {
                    let rows = Matrix::from_columns(&train_idx.iter().map(|&i| one_hot(classes, labels[i])).collect::<Vec<_>>());
                    (EmaTable::new(rows, 1.0), 0)
                }
                _ => {
                    let cfg = KdConfig { alpha: exp.alpha, teacher: teacher_cfg.clone(), student: student_cfg.clone(), mode, restore_best: exp.restore_best };
                    let out = train_teacher(teacher_init.clone(), &train_set, &val_set, &cfg)?;
                    (out.table, out.stop_epoch)
                }
            };
            let targets: Vec<ProbVector> = (0..table.len()).map(|i| table.row(i)).collect::<Result<_>>()?;
            let student = train_student(student_init.clone(), &train_set.inputs, &table, &student_cfg)?;
            let preds: Vec<ProbVector> = test.iter().map(|e| student.predict(&e.x)).collect::<Result<_>>()?;
            let test_labels: Vec<usize> = test.iter().map(|e| e.y).collect();
            let conf: Vec<f64> = preds.iter().map(|p| p.max_prob()).collect();
            let correct: Vec<bool> = preds.iter().zip(&test_labels).map(|(p, &y)| p.argmax() == y).collect();
            rows.push(KdRow {
                mode: mode.name().to_string(),
                seed,
                stop_epoch,
                test_acc: accuracy(&preds, &test_labels),
                ece: ece(&conf, &correct, 10)?,
                supervision_quality: supervision_quality(&targets, &q_star)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_kd_csv<W: Write>(out: W, rows: &[KdRow]) -> Result<()> {
    write_csv(out, &["mode", "seed", "stop_epoch", "test_acc", "ece", "supervision_quality"], rows)
}
