use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::akg::LossKind;
use crate::error::{check_label, LabError, Result};
use crate::mathcore::{one_hot, seeded, Gradient, Matrix, MlpModel, ProbVector, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordCadence {
    PerBatch,
    PerEpoch,
}

/// Validation quantity watched for early stopping; lower is better for both.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopMetric {
    #[default]
    Loss,
    /// Fraction of examples whose argmax disagrees with the target argmax.
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop after this many validation evaluations without improvement.
    pub patience: Option<usize>,
    pub stop_metric: StopMetric,
    /// Stop once the training loss falls below this value.
    pub loss_target: Option<f64>,
    pub record: RecordCadence,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.0,
            seed: 0,
            patience: None,
            stop_metric: StopMetric::Loss,
            loss_target: None,
            record: RecordCadence::PerEpoch,
            loss: LossKind::Ce,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so that "no motion" runs can be expressed.
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(LabError::Config(format!("learning rate {} must be finite and nonnegative", self.eta)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(LabError::Config("epochs and batch size must be at least 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(LabError::Config("weight decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Inputs as columns plus target distributions, one softmax group per head.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSet {
    /// `dim × n`.
    pub inputs: Matrix,
    /// `Σ heads × n`; every head block of a column lies on the simplex.
    pub targets: Matrix,
    pub heads: Vec<usize>,
}

impl TrainSet {
    pub fn new(inputs: Matrix, targets: Matrix, heads: Vec<usize>) -> Result<Self> {
        if inputs.ncols() != targets.ncols() {
            return Err(LabError::Shape(format!("{} inputs vs {} targets", inputs.ncols(), targets.ncols())));
        }
        if heads.iter().sum::<usize>() != targets.nrows() || heads.contains(&0) {
            return Err(LabError::Shape("head sizes must partition the target rows".into()));
        }
        Ok(Self { inputs, targets, heads })
    }

    pub fn from_labels(inputs: &[Vector], labels: &[usize], classes: usize) -> Result<Self> {
        let targets: Vec<Vector> = labels
            .iter()
            .map(|&y| check_label(y, classes).map(|_| one_hot(classes, y)))
            .collect::<Result<_>>()?;
        Self::from_soft(inputs, &targets)
    }

    pub fn from_soft(inputs: &[Vector], targets: &[Vector]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(LabError::Domain("empty dataset".into()));
        }
        let v = targets.first().map(|t| t.len()).unwrap_or(0);
        Self::new(Matrix::from_columns(inputs), Matrix::from_columns(targets), vec![v])
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }

    pub fn input(&self, i: usize) -> Vector {
        self.inputs.column(i).into_owned()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_columns(idx),
            targets: self.targets.select_columns(idx),
            heads: self.heads.clone(),
        }
    }
}

/// Per-example losses and `∂L/∂z` for a batch of logits.
///
/// Cross-entropy gives `p − t` per head. MSE on probabilities gives the exact
/// `2(diag p − ppᵀ)(p − t)`.
pub fn logit_grad(logits: &Matrix, targets: &Matrix, heads: &[usize], loss: LossKind) -> (Vec<f64>, Matrix, Matrix) {
    let n = logits.ncols();
    let mut losses = vec![0.0; n];
    let mut dz = Matrix::zeros(logits.nrows(), n);
    let mut probs = Matrix::zeros(logits.nrows(), n);
    for c in 0..n {
        let mut start = 0;
        for &k in heads {
            let z = logits.view((start, c), (k, 1));
            let t = targets.view((start, c), (k, 1));
            let m = z.max();
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let p: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
            match loss {
                LossKind::Ce => {
                    let tsum: f64 = t.iter().sum();
                    for i in 0..k {
                        if t[i] > 0.0 {
                            losses[c] -= t[i] * (z[i] - lse);
                        }
                        dz[(start + i, c)] = p[i] * tsum - t[i];
                    }
                }
                LossKind::Mse => {
                    let r: Vec<f64> = (0..k).map(|i| p[i] - t[i]).collect();
                    let pr: f64 = (0..k).map(|i| p[i] * r[i]).sum();
                    for i in 0..k {
                        losses[c] += r[i] * r[i];
                        dz[(start + i, c)] = 2.0 * p[i] * (r[i] - pr);
                    }
                }
            }
            for i in 0..k {
                probs[(start + i, c)] = p[i];
            }
            start += k;
        }
    }
    (losses, dz, probs)
}

/// Mean loss of `model` on `data`.
pub fn evaluate_loss(model: &MlpModel, data: &TrainSet, loss: LossKind) -> Result<f64> {
    let logits = model.forward_batch(&data.inputs)?;
    let (losses, _, _) = logit_grad(&logits, &data.targets, &data.heads, loss);
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean argmax disagreement with the targets, averaged over heads.
pub fn evaluate_error(model: &MlpModel, data: &TrainSet) -> Result<f64> {
    let logits = model.forward_batch(&data.inputs)?;
    let mut wrong = 0usize;
    let mut total = 0usize;
    for (z, t) in logits.column_iter().zip(data.targets.column_iter()) {
        let mut off = 0;
        for &h in &data.heads {
            let zi = z.rows(off, h).argmax().0;
            let ti = t.rows(off, h).argmax().0;
            wrong += usize::from(zi != ti);
            total += 1;
            off += h;
        }
    }
    Ok(wrong as f64 / total.max(1) as f64)
}

/// What an observer sees after each parameter update.
pub struct StepInfo<'a> {
    pub epoch: usize,
    pub step: usize,
    /// Dataset indices of the batch.
    pub indices: &'a [usize],
    /// Predicted distributions of the batch before the update (columns).
    pub probs_before: &'a Matrix,
    /// Model after the update.
    pub model: &'a MlpModel,
}

/// Hooks into the training loop.
pub trait TrainObserver {
    fn on_start(&mut self, _model: &MlpModel, _data: &TrainSet) -> Result<()> {
        Ok(())
    }
    fn on_step(&mut self, _info: &StepInfo<'_>) -> Result<()> {
        Ok(())
    }
    /// `improved` is true when the validation loss reached a new minimum.
    fn on_epoch_end(&mut self, _epoch: usize, _model: &MlpModel, _improved: bool) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;
impl TrainObserver for NoObserver {}

/// Records predicted distributions of tracked inputs.
#[derive(Clone, Debug)]
pub struct Recorder {
    pub cadence: RecordCadence,
    pub tracked: Vec<(usize, Vector)>,
    /// One time series per tracked example, starting at initialization.
    pub paths: Vec<Vec<ProbVector>>,
}

impl Recorder {
    pub fn new(cadence: RecordCadence, tracked: Vec<(usize, Vector)>) -> Self {
        let paths = vec![Vec::new(); tracked.len()];
        Self { cadence, tracked, paths }
    }

    fn record(&mut self, model: &MlpModel) -> Result<()> {
        for (k, (_, x)) in self.tracked.iter().enumerate() {
            self.paths[k].push(model.predict(x)?);
        }
        Ok(())
    }
}

impl TrainObserver for Recorder {
    fn on_start(&mut self, model: &MlpModel, _data: &TrainSet) -> Result<()> {
        self.record(model)
    }
    fn on_step(&mut self, info: &StepInfo<'_>) -> Result<()> {
        if self.cadence == RecordCadence::PerBatch {
            self.record(info.model)?;
        }
        Ok(())
    }
    fn on_epoch_end(&mut self, _epoch: usize, model: &MlpModel, _improved: bool) -> Result<()> {
        if self.cadence == RecordCadence::PerEpoch {
            self.record(model)?;
        }
        Ok(())
    }
}

impl<A: TrainObserver, B: TrainObserver> TrainObserver for (A, B) {
    fn on_start(&mut self, model: &MlpModel, data: &TrainSet) -> Result<()> {
        self.0.on_start(model, data)?;
        self.1.on_start(model, data)
    }
    fn on_step(&mut self, info: &StepInfo<'_>) -> Result<()> {
        self.0.on_step(info)?;
        self.1.on_step(info)
    }
    fn on_epoch_end(&mut self, epoch: usize, model: &MlpModel, improved: bool) -> Result<()> {
        self.0.on_epoch_end(epoch, model, improved)?;
        self.1.on_epoch_end(epoch, model, improved)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Mean training loss at initialization, then after every epoch.
    pub loss_curve: Vec<f64>,
    /// Mean validation loss after every epoch (empty without validation data).
    pub val_curve: Vec<f64>,
    /// Epoch (1-based) with the lowest validation loss.
    pub best_epoch: Option<usize>,
    pub best_model: Option<MlpModel>,
    pub epochs_run: usize,
}

enum Optimizer {
    Sgd,
    Adam { m: Gradient, v: Gradient, t: i32 },
}

impl Optimizer {
    fn step(&mut self, model: &mut MlpModel, mut g: Gradient, eta: f64, weight_decay: f64) {
        if weight_decay > 0.0 {
            for ((gw, gb), l) in g.layers.iter_mut().zip(model.layers()) {
                gw.zip_apply(&l.weight, |g, w| *g += weight_decay * w);
                gb.zip_apply(&l.bias, |g, b| *g += weight_decay * b);
            }
        }
        match self {
            Optimizer::Sgd => model.apply_gradient(&g, -eta),
            Optimizer::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                let mut upd = g.clone();
                for (((gw, gb), (mw, mb)), ((vw, vb), (uw, ub))) in
                    g.layers.iter().zip(m.layers.iter_mut()).zip(v.layers.iter_mut().zip(upd.layers.iter_mut()))
                {
                    mw.zip_apply(gw, |a, b| *a = B1 * *a + (1.0 - B1) * b);
                    mb.zip_apply(gb, |a, b| *a = B1 * *a + (1.0 - B1) * b);
                    vw.zip_apply(gw, |a, b| *a = B2 * *a + (1.0 - B2) * b * b);
                    vb.zip_apply(gb, |a, b| *a = B2 * *a + (1.0 - B2) * b * b);
                    uw.zip_zip_apply(mw, vw, |u, mm, vv| *u = (mm / c1) / ((vv / c2).sqrt() + EPS));
                    ub.zip_zip_apply(mb, vb, |u, mm, vv| *u = (mm / c1) / ((vv / c2).sqrt() + EPS));
                }
                model.apply_gradient(&upd, -eta);
            }
        }
    }
}

/// Trains `model` with shuffled mini-batches; the shuffle order is drawn from
/// `config.seed`. Validation data enables early stopping when
/// `config.patience` is set.
pub fn train(
    model: MlpModel,
    data: &TrainSet,
    validation: Option<&TrainSet>,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(LabError::Domain("empty training set".into()));
    }
    if data.targets.nrows() != model.output_dim() {
        return Err(LabError::Shape(format!("targets have {} rows, model outputs {}", data.targets.nrows(), model.output_dim())));
    }
    let mut model = model;
    let mut rng = seeded(config.seed);
    let mut opt = match config.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd,
        OptimizerKind::Adam => Optimizer::Adam { m: Gradient::zeros_like(&model), v: Gradient::zeros_like(&model), t: 0 },
    };
    observer.on_start(&model, data)?;
    let mut loss_curve = vec![checked(evaluate_loss(&model, data, config.loss)?, 0)?];
    let mut val_curve = Vec::new();
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    let mut epochs_run = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xb = data.inputs.select_columns(batch);
            let tb = data.targets.select_columns(batch);
            let trace = model.forward_trace(&xb)?;
            let (losses, dz, probs) = logit_grad(trace.logits(), &tb, &data.heads, config.loss);
            if losses.iter().any(|l| !l.is_finite()) {
                return Err(LabError::Divergence(format!("non-finite loss at epoch {epoch}")));
            }
            let mut g = model.backward(&trace, &dz);
            g.scale(1.0 / batch.len() as f64);
            opt.step(&mut model, g, config.eta, config.weight_decay);
            step += 1;
            observer.on_step(&StepInfo { epoch, step, indices: batch, probs_before: &probs, model: &model })?;
        }
        epochs_run = epoch;
        let train_loss = checked(evaluate_loss(&model, data, config.loss)?, epoch)?;
        loss_curve.push(train_loss);
        let mut improved = false;
        if let Some(val) = validation {
            let vl = checked(evaluate_loss(&model, val, config.loss)?, epoch)?;
            val_curve.push(vl);
            let score = match config.stop_metric {
                StopMetric::Loss => vl,
                StopMetric::Error => evaluate_error(&model, val)?,
            };
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, epoch, model.clone()));
                since_best = 0;
                improved = true;
            } else {
                since_best += 1;
            }
        }
        observer.on_epoch_end(epoch, &model, improved)?;
        if config.patience.is_some_and(|p| validation.is_some() && since_best >= p) {
            break;
        }
        if config.loss_target.is_some_and(|t| train_loss < t) {
            break;
        }
    }
    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (Some(e), Some(m)),
        None => (None, None),
    };
    Ok(TrainOutcome { model, loss_curve, val_curve, best_epoch, best_model, epochs_run })
}

fn checked(loss: f64, epoch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(LabError::Divergence(format!("non-finite loss after epoch {epoch}")))
    }
}
