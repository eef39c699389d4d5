use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ntk::SweepRow;
use super::opm::{adapt_metrics, aie, direction_change, full_tune, head_probe, FtConfig, HpConfig, OpmState, OpmTask};
use crate::datasets::{gen_toy_gaussian, ToyGaussianSpec};
use crate::error::Result;
use crate::mathcore::{derive_seed, mean, seeded, Matrix};
use crate::report::write_csv;

/// Head probing for `τ` epochs then full tuning, on Toy-Gaussian inputs
/// through a random wide backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptSpec {
    pub data: ToyGaussianSpec,
    pub hidden: usize,
    pub head_scale: f64,
    pub hp_lr: f64,
    pub ft: FtConfig,
}

impl Default for AdaptSpec {
    fn default() -> Self {
        Self {
            data: ToyGaussianSpec { classes: 3, dim: 8, n: 120, sigma: 1.0, ..Default::default() },
            hidden: 64,
            head_scale: 1.0,
            hp_lr: 0.1,
            ft: FtConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TauRow {
    pub tau: usize,
    pub aie: f64,
    pub hp_train_accuracy: f64,
    pub d_euc: f64,
    pub d_dot: f64,
    pub norm_t: f64,
    pub cosine: f64,
    pub tr_bt_b0: f64,
    /// `E‖hᵀ − h⁰‖₂`
    pub mean_shift: f64,
    /// Mean head change over the first and last tenth of full tuning.
    pub direction_early: f64,
    pub direction_late: f64,
}

/// Shared draw for one seed: inputs (one per row), labels and the initial model.
pub fn adapt_problem(spec: &AdaptSpec) -> Result<(Matrix, OpmTask, OpmState)> {
    let data = gen_toy_gaussian(&spec.data)?;
    let pairs = data.pairs();
    let rows: Vec<_> = pairs.iter().map(|(x, _)| x.transpose()).collect();
    let x = Matrix::from_rows(&rows);
    let task = OpmTask::Classification { labels: pairs.iter().map(|p| p.1).collect(), classes: spec.data.classes };
    let model = OpmState::random(spec.data.dim, spec.hidden, spec.data.classes, spec.head_scale, &mut seeded(derive_seed(spec.data.seed, 7)))?;
    Ok((x, task, model))
}

fn tenth_mean(series: &[f64], late: bool) -> f64 {
    let k = (series.len() / 10).max(1);
    if late { mean(&series[series.len() - k..]) } else { mean(&series[..k]) }
}

pub fn run_tau_sweep(spec: &AdaptSpec, taus: &[usize], eta_hp: f64) -> Result<Vec<TauRow>> {
    let (x, task, model) = adapt_problem(spec)?;
    let h0 = model.features(&x)?;
    let b0 = model.flat_backbone();
    taus.par_iter()
        .map(|&tau| {
            let hp = head_probe(&model, &x, &task, &HpConfig { tau, eta_hp, lr: spec.hp_lr })?;
            let start = OpmState { head: hp.head.clone(), ..model.clone() };
            let ft = full_tune(&start, &x, &task, &spec.ft)?;
            let m = adapt_metrics(&h0, &ft.model.features(&x)?)?;
            let dirs = direction_change(&ft.heads)?;
            Ok(TauRow {
                tau,
                aie: aie(&hp.predictions, &task)?,
                hp_train_accuracy: hp.train_accuracy.unwrap_or(f64::NAN),
                d_euc: m.d_euc,
                d_dot: m.d_dot,
                norm_t: m.norm_t,
                cosine: m.cosine,
                tr_bt_b0: ft.model.flat_backbone().dot(&b0),
                mean_shift: m.mean_shift,
                direction_early: tenth_mean(&dirs, false),
                direction_late: tenth_mean(&dirs, true),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    write_csv(out, &["s", "aie", "d_euc", "d_dot", "norm_t", "cosine", "tr_bt_b0", "tr_bt_bt", "pseudo_inverse"], rows)
}

pub fn write_tau_csv<W: Write>(out: W, rows: &[TauRow]) -> Result<()> {
    write_csv(
        out,
        &["tau", "aie", "hp_train_accuracy", "d_euc", "d_dot", "norm_t", "cosine", "tr_bt_b0", "mean_shift", "direction_early", "direction_late"],
        rows,
    )
}
