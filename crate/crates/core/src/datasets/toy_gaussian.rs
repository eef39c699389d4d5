use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_label, LabError, Result};
use crate::mathcore::{seeded, softmax, LabRng, ProbVector, Vector};

/// Mixture of isotropic Gaussians with ternary means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyGaussianSpec {
    pub classes: usize,
    pub dim: usize,
    pub delta_mu: f64,
    pub sigma: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for ToyGaussianSpec {
    fn default() -> Self {
        Self { classes: 3, dim: 30, delta_mu: 1.0, sigma: 1.5, n: 1000, seed: 0 }
    }
}

impl ToyGaussianSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(LabError::Config("need at least two classes".into()));
        }
        if !(self.sigma > 0.0) || self.dim == 0 || !self.delta_mu.is_finite() {
            return Err(LabError::Config("sigma must be positive and dim nonzero".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub x: Vector,
    pub y: usize,
    /// Exact Bayes posterior under the generating mixture.
    pub q_star: ProbVector,
    /// `‖q_star − e_y‖²`.
    pub difficulty: f64,
}

impl LabeledExample {
    pub fn new(x: Vector, y: usize, q_star: ProbVector) -> Result<Self> {
        check_label(y, q_star.len())?;
        let difficulty = q_star.sq_dist_to_label(y);
        Ok(Self { x, y, q_star, difficulty })
    }
}

/// A generated dataset together with the means that define its posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyGaussian {
    pub spec: ToyGaussianSpec,
    pub means: Vec<Vector>,
    pub examples: Vec<LabeledExample>,
}

impl ToyGaussian {
    pub fn posterior(&self, x: &Vector) -> Result<ProbVector> {
        bayes_posterior(&self.means, self.spec.sigma, x)
    }

    /// Fresh samples from the same mixture (e.g. a test set).
    pub fn sample(&self, n: usize, rng: &mut LabRng) -> Result<Vec<LabeledExample>> {
        sample_examples(&self.means, self.spec.sigma, n, rng)
    }

    pub fn pairs(&self) -> Vec<(Vector, usize)> {
        self.examples.iter().map(|e| (e.x.clone(), e.y)).collect()
    }
}

/// `q*(v|x) ∝ exp(−‖x − μ_v‖² / 2σ²)` under a uniform class prior.
pub fn bayes_posterior(means: &[Vector], sigma: f64, x: &Vector) -> Result<ProbVector> {
    let s = Vector::from_iterator(means.len(), means.iter().map(|m| -(x - m).norm_squared() / (2.0 * sigma * sigma)));
    softmax(&s)
}

fn sample_examples(means: &[Vector], sigma: f64, n: usize, rng: &mut LabRng) -> Result<Vec<LabeledExample>> {
    let noise = Normal::new(0.0, sigma).map_err(|e| LabError::Config(e.to_string()))?;
    (0..n)
        .map(|_| {
            let y = rng.random_range(0..means.len());
            let x = means[y].map(|m| m + noise.sample(rng));
            let q = bayes_posterior(means, sigma, &x)?;
            LabeledExample::new(x, y, q)
        })
        .collect()
}

pub fn gen_toy_gaussian(spec: &ToyGaussianSpec) -> Result<ToyGaussian> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let levels = [-spec.delta_mu, 0.0, spec.delta_mu];
    let means: Vec<Vector> = (0..spec.classes)
        .map(|_| Vector::from_fn(spec.dim, |_, _| levels[rng.random_range(0..3)]))
        .collect();
    let examples = sample_examples(&means, spec.sigma, spec.n, &mut rng)?;
    Ok(ToyGaussian { spec: spec.clone(), means, examples })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

/// Default cutoffs on `‖q* − e_y‖²`.
pub const DEFAULT_THRESHOLDS: (f64, f64) = (0.2, 1.0);

/// Easy below the first cutoff, hard at or above the second.
pub fn difficulty_group(example: &LabeledExample, thresholds: (f64, f64)) -> Difficulty {
    let d = example.difficulty;
    if d < thresholds.0 {
        Difficulty::Easy
    } else if d < thresholds.1 {
        Difficulty::Medium
    } else {
        Difficulty::Hard
    }
}

/// Replaces the labels of exactly `⌊ratio·n⌋` examples with a uniformly drawn
/// different class. Returns the new dataset and the flipped indices.
pub fn flip_labels_indexed(examples: &[LabeledExample], ratio: f64, seed: u64) -> Result<(Vec<LabeledExample>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(LabError::Config(format!("noise ratio {ratio} outside [0,1]")));
    }
    let mut rng = seeded(seed);
    let n = examples.len();
    let count = (ratio * n as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut flipped = idx[..count].to_vec();
    flipped.sort_unstable();
    let mut out = examples.to_vec();
    for &i in &flipped {
        let v = out[i].q_star.len();
        let shift = rng.random_range(1..v);
        let y = (out[i].y + shift) % v;
        out[i] = LabeledExample::new(out[i].x.clone(), y, out[i].q_star.clone())?;
    }
    Ok((out, flipped))
}

pub fn flip_labels(examples: &[LabeledExample], ratio: f64, seed: u64) -> Result<Vec<LabeledExample>> {
    Ok(flip_labels_indexed(examples, ratio, seed)?.0)
}

/// Splits indices so that each class contributes `⌊fraction·count⌉` examples
/// to the held-out part. Returns `(kept, held_out)`, both sorted.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seeded(seed);
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let k = (fraction * members.len() as f64).round() as usize;
        held.extend_from_slice(&members[..k]);
        kept.extend_from_slice(&members[k..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    (kept, held)
}

/// CSV with columns `x_0.., y, q_0.., difficulty`.
pub fn write_examples_csv<W: Write>(out: W, examples: &[LabeledExample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = examples.first() else {
        w.flush()?;
        return Ok(());
    };
    let mut header: Vec<String> = (0..first.x.len()).map(|i| format!("x_{i}")).collect();
    header.push("y".into());
    header.extend((0..first.q_star.len()).map(|i| format!("q_{i}")));
    header.push("difficulty".into());
    w.write_record(&header)?;
    for e in examples {
        let mut row: Vec<String> = e.x.iter().map(|v| v.to_string()).collect();
        row.push(e.y.to_string());
        row.extend(e.q_star.as_slice().iter().map(|v| v.to_string()));
        row.push(e.difficulty.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
