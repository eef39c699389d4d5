//! One-step influence decomposition `Δ log p(x_o) ≈ −η·A·K·G` and the
//! epoch-level force analysis built on it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_label, LabError, Result};
use crate::report::write_csv;
use crate::mathcore::{log_softmax, per_example_jacobian, softmax, spearman, JacobianBlock, Matrix, MlpModel, ProbVector, Vector};

/// Loss whose logit gradient defines the gap term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Mse,
}

/// Centering term `I − 1·pᵀ`.
pub fn a_term(p_o: &ProbVector) -> Matrix {
    let v = p_o.len();
    let mut a = Matrix::identity(v, v);
    for i in 0..v {
        for j in 0..v {
            a[(i, j)] -= p_o.get(j);
        }
    }
    a
}

/// `A·b` without materializing `A`: `b − (pᵀb)·1`.
pub fn apply_a(p_o: &ProbVector, b: &Vector) -> Vector {
    let s = p_o.as_vector().dot(b);
    b.map(|x| x - s)
}

/// Empirical NTK block `J_o·J_uᵀ`.
pub fn k_term(j_o: &JacobianBlock, j_u: &JacobianBlock) -> Result<Matrix> {
    if j_o.matrix.ncols() != j_u.matrix.ncols() {
        return Err(LabError::Shape(format!(
            "jacobians over {} and {} parameters",
            j_o.matrix.ncols(),
            j_u.matrix.ncols()
        )));
    }
    Ok(&j_o.matrix * j_u.matrix.transpose())
}

/// Gap term of the updating example.
///
/// For MSE on probabilities this is `2c⊙(p − e_y)` with `c_i = p_i(1 − p_i)`,
/// i.e. the diagonal part of the exact softmax-Jacobian product. Training with
/// MSE uses the exact gradient instead (see `training::logit_grad`).
pub fn g_term(loss: LossKind, p_u: &ProbVector, y_u: usize) -> Result<Vector> {
    check_label(y_u, p_u.len())?;
    let mut g = p_u.as_vector().clone();
    g[y_u] -= 1.0;
    if loss == LossKind::Mse {
        for (i, gi) in g.iter_mut().enumerate() {
            let p = p_u.get(i);
            *gi *= 2.0 * p * (1.0 - p);
        }
    }
    Ok(g)
}

/// The three factors of one (observer, updater) interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct AkgTerms {
    pub a: Matrix,
    pub k: Matrix,
    pub g: Vector,
    pub eta: f64,
}

impl AkgTerms {
    pub fn new(a: Matrix, k: Matrix, g: Vector, eta: f64) -> Result<Self> {
        let v = g.len();
        if a.shape() != (v, v) || k.shape() != (v, v) {
            return Err(LabError::Shape(format!("A {:?}, K {:?}, G {v}", a.shape(), k.shape())));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(LabError::Domain(format!("learning rate must be positive, got {eta}")));
        }
        Ok(Self { a, k, g, eta })
    }

    /// Builds the terms for observer `x_o` and updater `(x_u, y_u)` at the
    /// model's current parameters.
    pub fn for_pair(model: &MlpModel, x_o: &Vector, x_u: &Vector, y_u: usize, loss: LossKind, eta: f64) -> Result<Self> {
        let p_o = model.predict(x_o)?;
        let p_u = model.predict(x_u)?;
        let j_o = per_example_jacobian(model, x_o)?;
        let j_u = per_example_jacobian(model, x_u)?;
        Self::new(a_term(&p_o), k_term(&j_o, &j_u)?, g_term(loss, &p_u, y_u)?, eta)
    }
}

/// Predicted change of `log p(·|x_o)`: `−η·A·K·G`.
pub fn one_step_influence(terms: &AkgTerms) -> Vector {
    -(&terms.a * (&terms.k * &terms.g)) * terms.eta
}

/// Result of comparing the linearized prediction against a real SGD step.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstOrderCheck {
    pub predicted: Vector,
    pub actual: Vector,
    /// `‖actual − predicted‖₂`.
    pub residual: f64,
}

impl FirstOrderCheck {
    pub fn relative_error(&self) -> f64 {
        self.residual / self.actual.norm()
    }
}

/// Takes one cross-entropy SGD step on `(x_u, y_u)` and compares the real
/// change of `log p(·|x_o)` with the first-order prediction.
pub fn verify_first_order(model: &MlpModel, x_o: &Vector, x_u: &Vector, y_u: usize, eta: f64) -> Result<FirstOrderCheck> {
    check_label(y_u, model.output_dim())?;
    if eta == 0.0 {
        let z = Vector::zeros(model.output_dim());
        return Ok(FirstOrderCheck { predicted: z.clone(), actual: z, residual: 0.0 });
    }
    let terms = AkgTerms::for_pair(model, x_o, x_u, y_u, LossKind::Ce, eta)?;
    let predicted = one_step_influence(&terms);

    let before = log_softmax(&model.forward(x_o)?)?;
    let grad = model.vjp(x_u, &terms.g)?;
    let mut stepped = model.clone();
    stepped.apply_gradient(&grad, -eta);
    let z_after = stepped.forward(x_o)?;
    if !z_after.iter().all(|v| v.is_finite()) {
        return Err(LabError::Numeric("logits became non-finite after the step".into()));
    }
    let actual = log_softmax(&z_after)? - before;
    let residual = (&actual - &predicted).norm();
    Ok(FirstOrderCheck { predicted, actual, residual })
}

/// Least-squares slope of `log residual` against `log η`.
pub fn first_order_slope(model: &MlpModel, x_o: &Vector, x_u: &Vector, y_u: usize, etas: &[f64]) -> Result<f64> {
    let mut pts = Vec::with_capacity(etas.len());
    for &eta in etas {
        let r = verify_first_order(model, x_o, x_u, y_u, eta)?.residual;
        if r <= 0.0 {
            return Err(LabError::Numeric(format!("zero residual at eta {eta}")));
        }
        pts.push((eta.ln(), r.ln()));
    }
    Ok(loglog_slope(&pts))
}

pub(crate) fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Epoch-accumulated force on one observer, split by source.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceReport {
    pub self_force: Vector,
    pub other_force: Vector,
    /// `(example index, −η·A·K(o,u)·G(u))` for every example in the dataset.
    pub contributions: Vec<(usize, Vector)>,
}

impl ForceReport {
    pub fn total(&self) -> Vector {
        &self.self_force + &self.other_force
    }
}

/// Force on `dataset[observer]` accumulated over one epoch, with `A` and `K`
/// frozen at the current parameters (an approximation, not an identity).
pub fn epoch_force(model: &MlpModel, observer: usize, dataset: &[(Vector, usize)], eta: f64, loss: LossKind) -> Result<ForceReport> {
    let (x_o, _) = dataset
        .get(observer)
        .ok_or_else(|| LabError::Domain(format!("observer index {observer} outside dataset of {}", dataset.len())))?;
    let p_o = model.predict(x_o)?;
    let j_o = per_example_jacobian(model, x_o)?;
    let v = model.output_dim();
    let mut self_force = Vector::zeros(v);
    let mut other_force = Vector::zeros(v);
    let mut contributions = Vec::with_capacity(dataset.len());
    for (u, (x_u, y_u)) in dataset.iter().enumerate() {
        let g = g_term(loss, &model.predict(x_u)?, *y_u)?;
        // K(o,u)·G = J_o·(J_uᵀ·G); the parenthesized part is a single backward pass.
        let jtg = model.vjp(x_u, &g)?.to_flat();
        let c = -apply_a(&p_o, &(&j_o.matrix * jtg)) * eta;
        if u == observer {
            self_force += &c;
        } else {
            other_force += &c;
        }
        contributions.push((u, c));
    }
    Ok(ForceReport { self_force, other_force, contributions })
}

/// Spearman correlation of `‖K‖_F` over probe pairs between consecutive snapshots.
pub fn entk_stability(snapshots: &[MlpModel], probe_pairs: &[(Vector, Vector)]) -> Result<Vec<f64>> {
    if snapshots.len() < 2 {
        return Err(LabError::Domain("need at least two snapshots".into()));
    }
    if probe_pairs.len() < 3 {
        return Err(LabError::Domain("need at least three probe pairs".into()));
    }
    let norms: Vec<Vec<f64>> = snapshots
        .iter()
        .map(|m| entk_norms(m, probe_pairs))
        .collect::<Result<_>>()?;
    norms.windows(2).map(|w| Ok(spearman(&w[0], &w[1])?.rho)).collect()
}

/// `‖K(a,b)‖_F` for each probe pair.
pub fn entk_norms(model: &MlpModel, probe_pairs: &[(Vector, Vector)]) -> Result<Vec<f64>> {
    probe_pairs
        .iter()
        .map(|(a, b)| {
            let ja = per_example_jacobian(model, a)?;
            let jb = per_example_jacobian(model, b)?;
            Ok(k_term(&ja, &jb)?.norm())
        })
        .collect()
}

/// Unordered pairs (including self-pairs) of per-class mean inputs.
pub fn class_mean_probe_pairs(inputs: &[Vector], labels: &[usize], classes: usize) -> Result<Vec<(Vector, Vector)>> {
    let dim = inputs.first().map(|x| x.len()).ok_or_else(|| LabError::Domain("empty dataset".into()))?;
    let mut sums = vec![Vector::zeros(dim); classes];
    let mut counts = vec![0usize; classes];
    for (x, &y) in inputs.iter().zip(labels) {
        check_label(y, classes)?;
        sums[y] += x;
        counts[y] += 1;
    }
    let means: Vec<Vector> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { s })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..classes {
        for j in i..classes {
            pairs.push((means[i].clone(), means[j].clone()));
        }
    }
    Ok(pairs)
}

/// One row of the force time-series export.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForceRow {
    pub epoch: usize,
    pub example_id: usize,
    pub self_norm: f64,
    pub other_norm: f64,
    /// Total predicted change on the observer's own label.
    pub delta_label_dim: f64,
}

impl ForceRow {
    pub fn from_report(epoch: usize, example_id: usize, label: usize, report: &ForceReport) -> Self {
        Self {
            epoch,
            example_id,
            self_norm: report.self_force.norm(),
            other_norm: report.other_force.norm(),
            delta_label_dim: report.total()[label],
        }
    }
}

pub fn write_force_csv<W: Write>(out: W, rows: &[ForceRow]) -> Result<()> {
    write_csv(out, &["epoch", "example_id", "self_norm", "other_norm", "delta_label_dim"], rows)
}

/// Norms of one decomposition, for tabular export.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermNorms {
    pub observer: usize,
    pub updater: usize,
    pub a_norm: f64,
    pub k_norm: f64,
    pub g_norm: f64,
    pub delta_norm: f64,
}

impl TermNorms {
    pub fn new(observer: usize, updater: usize, terms: &AkgTerms) -> Self {
        Self {
            observer,
            updater,
            a_norm: terms.a.norm(),
            k_norm: terms.k.norm(),
            g_norm: terms.g.norm(),
            delta_norm: one_step_influence(terms).norm(),
        }
    }
}

pub fn write_terms_csv<W: Write>(out: W, rows: &[TermNorms]) -> Result<()> {
    write_csv(out, &["observer", "updater", "a_norm", "k_norm", "g_norm", "delta_norm"], rows)
}

/// Softmax of a model's logits; small convenience used by the runners.
pub fn predict_all(model: &MlpModel, inputs: &[Vector]) -> Result<Vec<ProbVector>> {
    inputs.iter().map(|x| softmax(&model.forward(x)?)).collect()
}
