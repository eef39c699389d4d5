use serde::Serialize;

use crate::error::{check_label, LabError, Result};
use crate::mathcore::{normal_matrix, LabRng, Matrix, Vector};

/// Two-layer linear model `z = W·B·x`: a wide backbone `B` (`hidden × input`)
/// followed by a linear head `W` (`outputs × hidden`).
#[derive(Clone, Debug, PartialEq)]
pub struct OpmState {
    pub backbone: Matrix,
    pub head: Matrix,
}

impl OpmState {
    pub fn new(backbone: Matrix, head: Matrix) -> Result<Self> {
        if backbone.nrows() < backbone.ncols() {
            return Err(LabError::Shape(format!("backbone {}×{} is not wide (hidden < input)", backbone.nrows(), backbone.ncols())));
        }
        if head.ncols() != backbone.nrows() || head.nrows() == 0 {
            return Err(LabError::Shape("head columns must match the hidden width".into()));
        }
        Ok(Self { backbone, head })
    }

    /// Backbone entries `N(0, 1/hidden)` (so `‖Bx‖ ≈ ‖x‖`), head entries
    /// `N(0, head_scale²/hidden)`.
    pub fn random(input: usize, hidden: usize, outputs: usize, head_scale: f64, rng: &mut LabRng) -> Result<Self> {
        let b = normal_matrix(hidden, input, rng) / (hidden as f64).sqrt();
        let w = normal_matrix(outputs, hidden, rng) * (head_scale / (hidden as f64).sqrt());
        Self::new(b, w)
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.backbone.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.head.nrows()
    }

    /// Column-wise flattening `vec(B)`.
    pub fn flat_backbone(&self) -> Vector {
        Vector::from_column_slice(self.backbone.as_slice())
    }

    pub fn set_flat_backbone(&mut self, b: &Vector) -> Result<()> {
        if b.len() != self.backbone.len() {
            return Err(LabError::Shape(format!("flat backbone of length {} for {} entries", b.len(), self.backbone.len())));
        }
        self.backbone.as_mut_slice().copy_from_slice(b.as_slice());
        Ok(())
    }

    /// Row `n` is `h_n = B x_n` for row `n` of `x`.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.input_dim() {
            return Err(LabError::Shape(format!("inputs have {} columns, backbone expects {}", x.ncols(), self.input_dim())));
        }
        Ok(x * self.backbone.transpose())
    }

    /// Raw head outputs, one row per example.
    pub fn outputs_on(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.features(x)? * self.head.transpose())
    }
}

/// What the head is trained to predict.
#[derive(Clone, Debug, PartialEq)]
pub enum OpmTask {
    Classification { labels: Vec<usize>, classes: usize },
    /// Scalar targets; the model must have a single output.
    Regression { targets: Vector },
}

impl OpmTask {
    pub fn len(&self) -> usize {
        match self {
            OpmTask::Classification { labels, .. } => labels.len(),
            OpmTask::Regression { targets } => targets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn outputs(&self) -> usize {
        match self {
            OpmTask::Classification { classes, .. } => *classes,
            OpmTask::Regression { .. } => 1,
        }
    }

    fn check(&self, model: &OpmState, x: &Matrix) -> Result<()> {
        if self.is_empty() || x.nrows() != self.len() {
            return Err(LabError::Shape(format!("{} inputs for {} targets", x.nrows(), self.len())));
        }
        if model.outputs() != self.outputs() {
            return Err(LabError::Shape(format!("model has {} outputs, task needs {}", model.outputs(), self.outputs())));
        }
        if let OpmTask::Classification { labels, classes } = self {
            for &y in labels {
                check_label(y, *classes)?;
            }
        }
        Ok(())
    }

    /// Training targets, one row per example. Classification labels are
    /// smoothed to `s·e_y + (1−s)·u` with `u` uniform.
    pub fn targets(&self, smoothing: f64) -> Result<Matrix> {
        match self {
            OpmTask::Classification { labels, classes } => {
                if !(smoothing > 0.0 && smoothing <= 1.0) {
                    return Err(LabError::Config(format!("smoothing coefficient {smoothing} outside (0, 1]")));
                }
                let v = *classes;
                let mut t = Matrix::from_element(labels.len(), v, (1.0 - smoothing) / v as f64);
                for (n, &y) in labels.iter().enumerate() {
                    t[(n, y)] += smoothing;
                }
                Ok(t)
            }
            OpmTask::Regression { targets } => Ok(Matrix::from_column_slice(targets.len(), 1, targets.as_slice())),
        }
    }

    /// Predictions from raw outputs: row-wise softmax or the outputs themselves.
    pub fn predictions(&self, outputs: &Matrix) -> Matrix {
        match self {
            OpmTask::Classification { .. } => {
                let mut p = outputs.clone();
                for mut row in p.row_iter_mut() {
                    let m = row.max();
                    row.apply(|v| *v = (*v - m).exp());
                    let s = row.sum();
                    row /= s;
                }
                p
            }
            OpmTask::Regression { .. } => outputs.clone(),
        }
    }

    fn loss(&self, pred: &Matrix, targets: &Matrix) -> f64 {
        let n = pred.nrows() as f64;
        match self {
            OpmTask::Classification { .. } => -pred.zip_map(targets, |p, t| if t > 0.0 { t * p.max(f64::MIN_POSITIVE).ln() } else { 0.0 }).sum() / n,
            OpmTask::Regression { .. } => 0.5 * (pred - targets).norm_squared() / n,
        }
    }

    /// Fraction of examples whose argmax matches the label (classification
    /// only; regression returns `None`).
    pub fn accuracy(&self, pred: &Matrix) -> Option<f64> {
        match self {
            OpmTask::Classification { labels, .. } => {
                let hits = labels.iter().enumerate().filter(|&(n, &y)| pred.row(n).transpose().argmax().0 == y).count();
                Some(hits as f64 / labels.len() as f64)
            }
            OpmTask::Regression { .. } => None,
        }
    }
}

/// Head-probe settings: `tau` full-batch epochs on the head only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct HpConfig {
    pub tau: usize,
    /// Label-smoothing coefficient in `(0, 1]`; 1 means hard labels.
    pub eta_hp: f64,
    pub lr: f64,
}

impl Default for HpConfig {
    fn default() -> Self {
        Self { tau: 0, eta_hp: 1.0, lr: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadProbe {
    pub head: Matrix,
    /// Predictions at the end of head probing, one row per example.
    pub predictions: Matrix,
    pub train_accuracy: Option<f64>,
}

/// Gradients of the mean loss w.r.t. (head, backbone) at the current state,
/// plus the loss itself.
fn gradients(model: &OpmState, x: &Matrix, task: &OpmTask, targets: &Matrix) -> (Matrix, Matrix, f64) {
    let n = x.nrows() as f64;
    let h = x * model.backbone.transpose();
    let pred = task.predictions(&(&h * model.head.transpose()));
    let loss = task.loss(&pred, targets);
    // both losses have output gradient `pred − target`
    let g = pred - targets;
    let dw = g.transpose() * &h / n;
    let db = model.head.transpose() * g.transpose() * x / n;
    (dw, db, loss)
}

fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LabError::Divergence(format!("{what} became non-finite")))
    }
}

pub fn head_probe(model: &OpmState, x: &Matrix, task: &OpmTask, config: &HpConfig) -> Result<HeadProbe> {
    task.check(model, x)?;
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(LabError::Config(format!("head learning rate {} must be positive", config.lr)));
    }
    let targets = task.targets(config.eta_hp)?;
    let mut m = model.clone();
    for _ in 0..config.tau {
        let (dw, _, _) = gradients(&m, x, task, &targets);
        m.head -= dw * config.lr;
        ensure_finite(&m.head, "head")?;
    }
    let predictions = task.predictions(&m.outputs_on(x)?);
    Ok(HeadProbe { train_accuracy: task.accuracy(&predictions), head: m.head, predictions })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct FtConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Label smoothing during full tuning; 1 means hard labels.
    pub eta_ft: f64,
}

impl Default for FtConfig {
    fn default() -> Self {
        Self { epochs: 200, lr: 0.1, eta_ft: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FtOutcome {
    pub model: OpmState,
    /// Head before every step and after the last one (`epochs + 1` entries).
    pub heads: Vec<Matrix>,
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent on head and backbone together.
pub fn full_tune(model: &OpmState, x: &Matrix, task: &OpmTask, config: &FtConfig) -> Result<FtOutcome> {
    task.check(model, x)?;
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(LabError::Config(format!("full-tune learning rate {} must be positive", config.lr)));
    }
    let targets = task.targets(config.eta_ft)?;
    let mut m = model.clone();
    let mut heads = vec![m.head.clone()];
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (dw, db, loss) = gradients(&m, x, task, &targets);
        m.head -= dw * config.lr;
        m.backbone -= db * config.lr;
        ensure_finite(&m.backbone, "backbone")?;
        ensure_finite(&m.head, "head")?;
        heads.push(m.head.clone());
        losses.push(loss);
    }
    Ok(FtOutcome { model: m, heads, losses })
}

/// Average initial energy: `E‖p⁰ − e_y‖₂` for classification, `E|q₀ − Y|`
/// for regression. `predictions` has one row per example.
pub fn aie(predictions: &Matrix, task: &OpmTask) -> Result<f64> {
    if predictions.nrows() != task.len() || task.is_empty() {
        return Err(LabError::Shape(format!("{} predictions for {} targets", predictions.nrows(), task.len())));
    }
    let hard = task.targets(1.0)?;
    if hard.ncols() != predictions.ncols() {
        return Err(LabError::Shape("prediction width does not match the task".into()));
    }
    let total: f64 = (0..task.len()).map(|n| (predictions.row(n) - hard.row(n)).norm()).sum();
    Ok(total / task.len() as f64)
}

/// `‖w^{t+1} − w^t‖_F` between consecutive head snapshots.
pub fn direction_change(heads: &[Matrix]) -> Result<Vec<f64>> {
    if heads.len() < 2 {
        return Err(LabError::Domain("need at least two head snapshots".into()));
    }
    heads
        .windows(2)
        .map(|w| {
            if w[0].shape() != w[1].shape() {
                return Err(LabError::Shape("head snapshots differ in shape".into()));
            }
            Ok((&w[1] - &w[0]).norm())
        })
        .collect()
}

/// Similarity between features before (`h⁰`) and after (`hᵀ`) adaptation,
/// averaged over examples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdaptMetrics {
    /// `E‖hᵀ − h⁰‖²`
    pub d_euc: f64,
    /// `E⟨hᵀ, h⁰⟩`
    pub d_dot: f64,
    /// `E‖hᵀ‖²`
    pub norm_t: f64,
    /// `E‖h⁰‖²`
    pub norm_0: f64,
    /// `E cos(hᵀ, h⁰)` over examples where both features are nonzero.
    pub cosine: f64,
    /// Examples left out of the cosine average.
    pub cosine_skipped: usize,
    /// `E‖hᵀ − h⁰‖₂`
    pub mean_shift: f64,
}

/// Rows of `h0` and `ht` are the features of the same examples.
pub fn adapt_metrics(h0: &Matrix, ht: &Matrix) -> Result<AdaptMetrics> {
    if h0.shape() != ht.shape() || h0.nrows() == 0 {
        return Err(LabError::Shape("feature sets must be aligned and nonempty".into()));
    }
    let n = h0.nrows() as f64;
    let (mut d_euc, mut d_dot, mut norm_t, mut norm_0, mut shift) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut cos_sum, mut cos_n) = (0.0, 0usize);
    for (a, b) in h0.row_iter().zip(ht.row_iter()) {
        let diff = (b - a).norm_squared();
        let dot = a.dot(&b);
        let (na, nb) = (a.norm_squared(), b.norm_squared());
        d_euc += diff;
        shift += diff.sqrt();
        d_dot += dot;
        norm_t += nb;
        norm_0 += na;
        if na > 0.0 && nb > 0.0 {
            cos_sum += (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
            cos_n += 1;
        }
    }
    let m = AdaptMetrics {
        d_euc: d_euc / n,
        d_dot: d_dot / n,
        norm_t: norm_t / n,
        norm_0: norm_0 / n,
        cosine: if cos_n > 0 { cos_sum / cos_n as f64 } else { f64::NAN },
        cosine_skipped: h0.nrows() - cos_n,
        mean_shift: shift / n,
    };
    let rebuilt = m.norm_t - 2.0 * m.d_dot + m.norm_0;
    if (m.d_euc - rebuilt).abs() > 1e-10 * (1.0 + m.norm_t + m.norm_0) {
        return Err(LabError::Numeric(format!("metric identity off by {:e}", m.d_euc - rebuilt)));
    }
    Ok(m)
}
