use std::io::Write;

use serde::Serialize;

use crate::error::{check_label, LabError, Result};
use crate::mathcore::ProbVector;

/// Exponential moving average `s_{t+1} = (1−α)s_t + α·p_t`, started at `p_0`.
pub fn ema(path: &[ProbVector], alpha: f64) -> Result<Vec<ProbVector>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LabError::Domain(format!("alpha {alpha} outside [0,1]")));
    }
    let mut out: Vec<ProbVector> = Vec::with_capacity(path.len());
    for p in path {
        let next = match out.last() {
            None => p.clone(),
            Some(prev) => prev.mix(p, alpha)?,
        };
        out.push(next);
    }
    Ok(out)
}

/// Scalar version of [`ema`].
pub fn ema_scalar(series: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    for &x in series {
        let next = out.last().map_or(x, |&s: &f64| (1.0 - alpha) * s + alpha * x);
        out.push(next);
    }
    out
}

/// Raw and smoothed prediction history of one example.
#[derive(Clone, Debug, PartialEq)]
pub struct LearningPath {
    pub example_id: usize,
    pub raw: Vec<ProbVector>,
    pub smoothed: Vec<ProbVector>,
}

impl LearningPath {
    pub fn new(example_id: usize, raw: Vec<ProbVector>, alpha: f64) -> Result<Self> {
        let smoothed = ema(&raw, alpha)?;
        Ok(Self { example_id, raw, smoothed })
    }
}

/// Triangle corners for the (correct, runner-up, rest) coordinates.
pub const TRIANGLE_CORNERS: [(f64, f64); 3] = [(0.0, 0.0), (1.0, 0.0), (0.5, 0.866_025_403_784_438_6)];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BarycentricPoint {
    pub x: f64,
    pub y: f64,
}

/// Three-way summary of `p`: the distribution itself when `V = 3`, otherwise
/// `(p_y, largest wrong entry, remaining mass)`.
pub fn collapse_for_triangle(p: &ProbVector, y: usize) -> Result<[f64; 3]> {
    let v = p.len();
    if v < 3 {
        return Err(LabError::Domain(format!("barycentric projection needs V ≥ 3, got {v}")));
    }
    check_label(y, v)?;
    if v == 3 {
        return Ok([p.get(0), p.get(1), p.get(2)]);
    }
    let runner = p.argmax_excluding(y).expect("V ≥ 3");
    let py = p.get(y);
    let pr = p.get(runner);
    Ok([py, pr, (1.0 - py - pr).max(0.0)])
}

pub fn project_barycentric(p: &ProbVector, y: usize) -> Result<BarycentricPoint> {
    let w = collapse_for_triangle(p, y)?;
    let (mut x, mut yy) = (0.0, 0.0);
    for (wi, c) in w.iter().zip(TRIANGLE_CORNERS) {
        x += wi * c.0;
        yy += wi * c.1;
    }
    Ok(BarycentricPoint { x, y: yy })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZigzagStats {
    pub initial_dist: f64,
    pub min_dist: f64,
    /// First index attaining the minimum.
    pub epoch_of_min: usize,
    pub final_dist: f64,
}

impl ZigzagStats {
    /// The path dips toward `q*` and then moves away again.
    pub fn has_dip(&self, margin: f64) -> bool {
        self.min_dist + margin < self.initial_dist && self.min_dist + margin < self.final_dist
    }
}

/// L2 distances of a (smoothed) path to the Bayes posterior.
pub fn zigzag_stats(path: &[ProbVector], q_star: &ProbVector) -> Result<ZigzagStats> {
    if path.is_empty() {
        return Err(LabError::Domain("empty path".into()));
    }
    let d: Vec<f64> = path.iter().map(|p| p.dist(q_star)).collect();
    let mut epoch_of_min = 0;
    for (t, &x) in d.iter().enumerate() {
        if x < d[epoch_of_min] {
            epoch_of_min = t;
        }
    }
    Ok(ZigzagStats { initial_dist: d[0], min_dist: d[epoch_of_min], epoch_of_min, final_dist: d[d.len() - 1] })
}

/// Trapezoidal area under a loss curve indexed by epoch.
pub fn convergence_time(loss_curve: &[f64]) -> Result<f64> {
    if loss_curve.is_empty() {
        return Err(LabError::Domain("empty loss curve".into()));
    }
    Ok(loss_curve.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum())
}

/// See [`inflection_epoch_with_window`]; window 3.
pub fn inflection_epoch(curve: &[f64]) -> Result<Option<usize>> {
    inflection_epoch_with_window(curve, 3)
}

/// First index `t` at or after the (first) global maximum such that the
/// curve strictly decreases over the next `window` steps.
pub fn inflection_epoch_with_window(curve: &[f64], window: usize) -> Result<Option<usize>> {
    if curve.len() < 5 {
        return Err(LabError::Domain("inflection search needs at least 5 points".into()));
    }
    let mut peak = 0;
    for (t, &x) in curve.iter().enumerate() {
        if x > curve[peak] {
            peak = t;
        }
    }
    Ok((peak..curve.len().saturating_sub(window)).find(|&t| (0..window).all(|k| curve[t + k + 1] < curve[t + k])))
}

/// Rows `run_id, example_id, epoch, p_1..p_V, smoothed_p_1..p_V`.
pub fn write_paths_csv<W: Write>(out: W, run_id: usize, paths: &[LearningPath]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let v = paths.iter().find_map(|p| p.raw.first()).map_or(0, |p| p.len());
    let mut header = vec!["run_id".to_string(), "example_id".into(), "epoch".into()];
    header.extend((1..=v).map(|i| format!("p_{i}")));
    header.extend((1..=v).map(|i| format!("smoothed_p_{i}")));
    w.write_record(&header)?;
    for path in paths {
        for (t, (r, s)) in path.raw.iter().zip(&path.smoothed).enumerate() {
            let mut row = vec![run_id.to_string(), path.example_id.to_string(), t.to_string()];
            row.extend(r.as_slice().iter().map(|x| x.to_string()));
            row.extend(s.as_slice().iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

