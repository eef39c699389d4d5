use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::mathcore::{Matrix, MlpModel, ProbVector, Vector};
use crate::training::{train, StepInfo, TrainConfig, TrainObserver, TrainSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdMode {
    #[serde(rename = "filterkd")]
    FilterKd,
    Eskd,
    #[serde(rename = "oht")]
    OneHot,
}

impl KdMode {
    pub fn name(self) -> &'static str {
        match self {
            KdMode::FilterKd => "filterkd",
            KdMode::Eskd => "eskd",
            KdMode::OneHot => "oht",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub alpha: f64,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub mode: KdMode,
    /// Use the table from the best validation epoch instead of the one at
    /// the epoch where training stopped.
    #[serde(default)]
    pub restore_best: bool,
}

impl KdConfig {
    /// Smoothing factor actually used: ESKD is the `α = 1` special case.
    pub fn effective_alpha(&self) -> f64 {
        match self.mode {
            KdMode::Eskd => 1.0,
            _ => self.alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(LabError::Config(format!("alpha {} outside (0,1]", self.alpha)));
        }
        self.teacher.validate()?;
        self.student.validate()
    }
}

/// Smoothed teacher predictions, one column per training example.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaTable {
    /// `V × N`.
    pub rows: Matrix,
    pub update_counts: Vec<usize>,
    pub alpha: f64,
}

impl EmaTable {
    pub fn new(initial: Matrix, alpha: f64) -> Self {
        let n = initial.ncols();
        Self { rows: initial, update_counts: vec![0; n], alpha }
    }

    pub fn len(&self) -> usize {
        self.rows.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.ncols() == 0
    }

    pub fn row(&self, i: usize) -> Result<ProbVector> {
        ProbVector::new(self.rows.column(i).into_owned())
    }

    pub fn targets(&self) -> Vec<Vector> {
        self.rows.column_iter().map(|c| c.into_owned()).collect()
    }

    /// `row ← (1−α)·row + α·p`.
    pub fn update(&mut self, i: usize, p: &Vector) {
        let a = self.alpha;
        self.rows.column_mut(i).zip_apply(p, |r, x| *r = (1.0 - a) * *r + a * x);
        self.update_counts[i] += 1;
    }
}

/// Observer that keeps the table in sync with training and snapshots it
/// whenever the validation loss improves.
struct TableFilter {
    table: EmaTable,
    best: Option<(usize, EmaTable)>,
}

impl TrainObserver for TableFilter {
    fn on_start(&mut self, model: &MlpModel, data: &TrainSet) -> Result<()> {
        let logits = model.forward_batch(&data.inputs)?;
        let mut probs = Matrix::zeros(logits.nrows(), logits.ncols());
        for (c, z) in logits.column_iter().enumerate() {
            let p = crate::mathcore::softmax(&z.into_owned())?;
            probs.set_column(c, p.as_vector());
        }
        self.table = EmaTable::new(probs, self.table.alpha);
        Ok(())
    }

    fn on_step(&mut self, info: &StepInfo<'_>) -> Result<()> {
        for (k, &i) in info.indices.iter().enumerate() {
            self.table.update(i, &info.probs_before.column(k).into_owned());
        }
        Ok(())
    }

    fn on_epoch_end(&mut self, epoch: usize, _model: &MlpModel, improved: bool) -> Result<()> {
        if improved {
            self.best = Some((epoch, self.table.clone()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TeacherOutcome {
    /// Table handed to the student: at the stop epoch, or at the best
    /// validation epoch when `restore_best` is set.
    pub table: EmaTable,
    pub stop_epoch: usize,
    /// Teacher parameters matching `table`.
    pub teacher: MlpModel,
    /// Table after the last epoch that was actually run.
    pub final_table: EmaTable,
}

/// Trains the teacher on `data` while filtering its predictions. Each row is
/// updated with the prediction made just before that example's parameter
/// update, once per epoch.
pub fn train_teacher(model: MlpModel, data: &TrainSet, validation: &TrainSet, config: &KdConfig) -> Result<TeacherOutcome> {
    config.validate()?;
    let mut filter = TableFilter { table: EmaTable::new(Matrix::zeros(0, 0), config.effective_alpha()), best: None };
    let out = train(model, data, Some(validation), &config.teacher, &mut filter)?;
    let (stop_epoch, table, teacher) = if config.restore_best {
        let (e, t) = filter.best.unwrap_or_else(|| (0, filter.table.clone()));
        (e, t, out.best_model.unwrap_or(out.model))
    } else {
        (out.epochs_run, filter.table.clone(), out.model)
    };
    Ok(TeacherOutcome { table, stop_epoch, teacher, final_table: filter.table })
}

/// Trains a student with soft cross-entropy against the table rows.
pub fn train_student(model: MlpModel, inputs: &Matrix, targets: &EmaTable, config: &TrainConfig) -> Result<MlpModel> {
    if targets.len() != inputs.ncols() {
        return Err(LabError::Shape(format!("{} table rows for {} examples", targets.len(), inputs.ncols())));
    }
    let data = TrainSet::new(inputs.clone(), targets.rows.clone(), vec![targets.rows.nrows()])?;
    let cfg = TrainConfig { loss: crate::akg::LossKind::Ce, ..config.clone() };
    Ok(train(model, &data, None, &cfg, &mut crate::training::NoObserver)?.model)
}
