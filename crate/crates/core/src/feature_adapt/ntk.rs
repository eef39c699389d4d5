use rayon::prelude::*;
use serde::Serialize;

use super::opm::{adapt_metrics, aie, OpmTask};
use crate::error::{LabError, Result};
use crate::mathcore::{normal_matrix, normal_vector, seeded, Matrix, Vector};

/// Condition number above which the kernel is inverted through its
/// pseudo-inverse.
pub const PINV_CONDITION: f64 = 1e10;

/// Kernel of the scalar-output model `q = wᵀB x` over the rows of `x`,
/// counting both head and backbone gradients: `X(BᵀB + ‖w‖²I)Xᵀ`.
pub fn opm_kernel(backbone: &Matrix, x: &Matrix, head: &Vector) -> Result<Matrix> {
    if backbone.nrows() != head.len() || backbone.ncols() != x.ncols() {
        return Err(LabError::Shape("backbone, head and inputs disagree in shape".into()));
    }
    let d = x.ncols();
    let inner = backbone.transpose() * backbone + Matrix::identity(d, d) * head.norm_squared();
    Ok(x * inner * x.transpose())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NtkSolution {
    /// Converged backbone, flattened column-wise.
    pub backbone: Vector,
    /// `λ_max/λ_min` of the kernel (infinite when singular).
    pub condition: f64,
    /// The kernel was ill-conditioned and its pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

impl NtkSolution {
    pub fn warning(&self) -> Option<String> {
        self.pseudo_inverse.then(|| format!("kernel condition number {:.3e}: used the pseudo-inverse", self.condition))
    }
}

fn kernel_solve(kernel: &Matrix, rhs: &Vector) -> Result<(Vector, f64, bool)> {
    let eig = kernel.clone().symmetric_eigen();
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition <= PINV_CONDITION {
        if let Some(chol) = kernel.clone().cholesky() {
            return Ok((chol.solve(rhs), condition, false));
        }
    }
    let pinv = kernel.clone().pseudo_inverse(hi * 1e-12).map_err(|e| LabError::Numeric(e.to_string()))?;
    Ok((pinv * rhs, condition, true))
}

/// Converged backbone of gradient flow on the model linearized at
/// `(w₀, B⁰)`: `b∞ = b⁰ − (∇_b q₀)ᵀ κ₀⁻¹ (q₀ − Y)`. `b0` is `vec(B⁰)`, `x`
/// holds one input per row and `w0` is the head.
pub fn ntk_converged(b0: &Vector, x: &Matrix, y: &Vector, q0: &Vector, w0: &Vector) -> Result<NtkSolution> {
    let (h, d) = (w0.len(), x.ncols());
    if b0.len() != h * d {
        return Err(LabError::Shape(format!("flat backbone of length {} for a {h}×{d} backbone", b0.len())));
    }
    if y.len() != x.nrows() || q0.len() != x.nrows() || x.nrows() == 0 {
        return Err(LabError::Shape("inputs, targets and predictions must be aligned".into()));
    }
    let b = Matrix::from_column_slice(h, d, b0.as_slice());
    let kernel = opm_kernel(&b, x, w0)?;
    let (c, condition, pseudo_inverse) = kernel_solve(&kernel, &(q0 - y))?;
    // ∇_b q_n = vec(w xₙᵀ), so the correction is w (Xᵀc)ᵀ
    let moved = b - w0 * (x.transpose() * c).transpose();
    Ok(NtkSolution { backbone: Vector::from_column_slice(moved.as_slice()), condition, pseudo_inverse })
}

/// A scalar-regression instance for the closed-form sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct OpmInstance {
    pub backbone: Matrix,
    pub x: Matrix,
    pub y: Vector,
    /// Head component whose outputs on `x` vanish; keeps the head nonzero
    /// when the fitted part is scaled to 0.
    pub orth_head: Vector,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OpmSpec {
    pub input_dim: usize,
    pub hidden: usize,
    pub samples: usize,
    pub orth_scale: f64,
    pub seed: u64,
}

impl Default for OpmSpec {
    fn default() -> Self {
        Self { input_dim: 10, hidden: 32, samples: 6, orth_scale: 1.0, seed: 0 }
    }
}

impl OpmInstance {
    pub fn random(spec: &OpmSpec) -> Result<Self> {
        if spec.hidden < spec.input_dim || spec.samples == 0 || spec.input_dim == 0 {
            return Err(LabError::Config("need hidden ≥ input_dim ≥ 1 and at least one sample".into()));
        }
        let mut rng = seeded(spec.seed);
        let backbone = normal_matrix(spec.hidden, spec.input_dim, &mut rng) / (spec.input_dim as f64).sqrt();
        let x = normal_matrix(spec.samples, spec.input_dim, &mut rng);
        let y = normal_vector(spec.samples, &mut rng);
        let raw = normal_vector(spec.hidden, &mut rng);
        let fit = &x * backbone.transpose();
        let orth = project_out_rows(&fit, &raw)?;
        let norm = orth.norm();
        let orth_head = if norm > 0.0 { orth * (spec.orth_scale / norm) } else { orth };
        Ok(Self { backbone, x, y, orth_head })
    }

    /// Head with outputs `s·Y` on the inputs (up to the reachable part of `Y`).
    pub fn head_at(&self, fitted: &Vector, s: f64) -> Vector {
        &self.orth_head + fitted * s
    }

    /// Minimum-norm head that reproduces `Y` on the inputs.
    pub fn fitted_head(&self) -> Result<Vector> {
        let fit = &self.x * self.backbone.transpose();
        let pinv = fit.pseudo_inverse(1e-12).map_err(|e| LabError::Numeric(e.to_string()))?;
        Ok(pinv * &self.y)
    }
}

/// Removes from `v` its component in the row space of `a`.
fn project_out_rows(a: &Matrix, v: &Vector) -> Result<Vector> {
    let pinv = a.clone().pseudo_inverse(1e-12).map_err(|e| LabError::Numeric(e.to_string()))?;
    Ok(v - &pinv * (a * v))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub s: f64,
    pub aie: f64,
    pub d_euc: f64,
    pub d_dot: f64,
    pub norm_t: f64,
    pub cosine: f64,
    /// `tr(BᵗᵀB⁰) = bᵗ·b⁰`
    pub tr_bt_b0: f64,
    /// `tr(BᵗᵀBᵗ) = bᵗ·bᵗ`
    pub tr_bt_bt: f64,
    pub pseudo_inverse: bool,
}

/// A maximal run of grid points over which a column moves one way.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Segment {
    pub from: f64,
    pub to: f64,
    pub rising: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub argmax_tr_bt_b0: f64,
    pub argmax_tr_bt_bt: f64,
    /// `d_euc` grows strictly at every grid step towards `s = 0`.
    pub d_euc_rises_toward_zero: bool,
    pub tr_bt_b0_segments: Vec<Segment>,
    pub tr_bt_bt_segments: Vec<Segment>,
}

/// `points` evenly spaced values covering `[0, 1]`.
pub fn sweep_grid(points: usize) -> Result<Vec<f64>> {
    if points < 11 {
        return Err(LabError::Config(format!("a sweep needs at least 11 grid points, got {points}")));
    }
    Ok((0..points).map(|i| i as f64 / (points - 1) as f64).collect())
}

/// Segments of monotone movement of `ys` along increasing `xs`.
pub fn trend_segments(xs: &[f64], ys: &[f64]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for i in 1..xs.len().min(ys.len()) {
        let rising = ys[i] > ys[i - 1];
        match out.last_mut() {
            Some(seg) if seg.rising == rising => seg.to = xs[i],
            _ => out.push(Segment { from: xs[i - 1], to: xs[i], rising }),
        }
    }
    out
}

fn argmax_at(xs: &[f64], ys: &[f64]) -> f64 {
    let i = (0..ys.len()).max_by(|&a, &b| ys[a].total_cmp(&ys[b])).unwrap_or(0);
    xs[i]
}

/// For each `s` on the grid, sets the head so that `q₀ = s·Y` and reports
/// the closed-form converged backbone and its adaptation metrics.
pub fn sweep_q0(instance: &OpmInstance, grid: &[f64]) -> Result<SweepTable> {
    if grid.len() < 11 {
        return Err(LabError::Config(format!("a sweep needs at least 11 grid points, got {}", grid.len())));
    }
    let fitted = instance.fitted_head()?;
    let b0 = Vector::from_column_slice(instance.backbone.as_slice());
    let (h, d) = instance.backbone.shape();
    let h0 = &instance.x * instance.backbone.transpose();
    let task = OpmTask::Regression { targets: instance.y.clone() };
    let rows: Vec<SweepRow> = grid
        .par_iter()
        .map(|&s| {
            let w0 = instance.head_at(&fitted, s);
            let q0 = &h0 * &w0;
            let sol = ntk_converged(&b0, &instance.x, &instance.y, &q0, &w0)?;
            let bt = Matrix::from_column_slice(h, d, sol.backbone.as_slice());
            let m = adapt_metrics(&h0, &(&instance.x * bt.transpose()))?;
            Ok(SweepRow {
                s,
                aie: aie(&Matrix::from_column_slice(q0.len(), 1, q0.as_slice()), &task)?,
                d_euc: m.d_euc,
                d_dot: m.d_dot,
                norm_t: m.norm_t,
                cosine: m.cosine,
                tr_bt_b0: sol.backbone.dot(&b0),
                tr_bt_bt: sol.backbone.norm_squared(),
                pseudo_inverse: sol.pseudo_inverse,
            })
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.s).collect();
    let dot: Vec<f64> = rows.iter().map(|r| r.tr_bt_b0).collect();
    let norm: Vec<f64> = rows.iter().map(|r| r.tr_bt_bt).collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let d_euc_rises_toward_zero = order.windows(2).all(|w| rows[w[0]].d_euc > rows[w[1]].d_euc);
    let sorted = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let sx = sorted(&xs);
    Ok(SweepTable {
        argmax_tr_bt_b0: argmax_at(&xs, &dot),
        argmax_tr_bt_bt: argmax_at(&xs, &norm),
        d_euc_rises_toward_zero,
        tr_bt_b0_segments: trend_segments(&sx, &sorted(&dot)),
        tr_bt_bt_segments: trend_segments(&sx, &sorted(&norm)),
        rows,
    })
}
