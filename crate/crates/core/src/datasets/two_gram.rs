use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::mathcore::{normal_matrix, seeded, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoGramSpec {
    pub vocab: usize,
    pub feature_dim: usize,
    pub length: usize,
    pub seed: u64,
}

impl Default for TwoGramSpec {
    fn default() -> Self {
        Self { vocab: 16, feature_dim: 32, length: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoGramData {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    /// `feature_dim × vocab`; column `c` is the feature of context token `c`.
    pub features: Matrix,
}

/// Two independent uniform token sequences and a standard-normal feature table.
pub fn gen_two_gram(spec: &TwoGramSpec) -> Result<TwoGramData> {
    if spec.vocab < 2 || spec.feature_dim == 0 || spec.length == 0 {
        return Err(LabError::Config("vocab ≥ 2, feature_dim ≥ 1 and length ≥ 1 required".into()));
    }
    let mut rng = seeded(spec.seed);
    let features = normal_matrix(spec.feature_dim, spec.vocab, &mut rng);
    let positive = (0..spec.length).map(|_| rng.random_range(0..spec.vocab)).collect();
    let negative = (0..spec.length).map(|_| rng.random_range(0..spec.vocab)).collect();
    Ok(TwoGramData { positive, negative, features })
}
