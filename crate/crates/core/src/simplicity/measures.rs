use serde::Serialize;

use crate::error::{LabError, Result};
use crate::mathcore::spearman;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KcBounds {
    /// Bits to enumerate an arbitrary bijection: `v^m·m·log₂v`.
    pub bijection: f64,
    /// Bits for a compositional mapping: `v·log₂v + m·log₂m`.
    pub compositional: f64,
    pub gamma: f64,
}

/// Kolmogorov-complexity upper bounds for `m` attributes with `v` values each.
pub fn kc_bounds(m: usize, v: usize) -> Result<KcBounds> {
    if m < 2 || v < 2 {
        return Err(LabError::Domain(format!("need m, v ≥ 2, got m={m}, v={v}")));
    }
    let (mf, vf) = (m as f64, v as f64);
    let bijection = vf.powi(m as i32) * mf * vf.log2();
    let compositional = vf * vf.log2() + mf * mf.log2();
    Ok(KcBounds { bijection, compositional, gamma: bijection / compositional })
}

pub fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Spearman correlation between pairwise Hamming distances in the factor
/// space and in the code space, over all unordered pairs.
pub fn topsim(factors: &[Vec<u8>], codes: &[Vec<u8>]) -> Result<f64> {
    if factors.len() != codes.len() {
        return Err(LabError::Shape(format!("{} factor points vs {} codes", factors.len(), codes.len())));
    }
    if factors.len() < 3 {
        return Err(LabError::Domain("topsim needs at least 3 points".into()));
    }
    let mut dg = Vec::new();
    let mut dz = Vec::new();
    for i in 0..factors.len() {
        for j in i + 1..factors.len() {
            dg.push(hamming(&factors[i], &factors[j]) as f64);
            dz.push(hamming(&codes[i], &codes[j]) as f64);
        }
    }
    Ok(spearman(&dg, &dz)?.rho)
}
