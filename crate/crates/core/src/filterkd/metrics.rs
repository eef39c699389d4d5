use crate::error::{LabError, Result};
use crate::mathcore::ProbVector;

/// Mean L2 distance between supervision targets and the Bayes posterior.
pub fn supervision_quality(q_tar: &[ProbVector], q_star: &[ProbVector]) -> Result<f64> {
    if q_tar.len() != q_star.len() || q_tar.is_empty() {
        return Err(LabError::Shape(format!("{} targets vs {} posteriors", q_tar.len(), q_star.len())));
    }
    Ok(q_tar.iter().zip(q_star).map(|(a, b)| a.dist(b)).sum::<f64>() / q_tar.len() as f64)
}

/// Expected calibration error over `bins` equal-width bins. Bin `m` covers
/// `((m−1)/M, m/M]`; a confidence of exactly 0 falls in the first bin.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() || confidences.is_empty() {
        return Err(LabError::Shape("confidences and correctness must align and be nonempty".into()));
    }
    if bins == 0 {
        return Err(LabError::Config("need at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut hits = vec![0.0; bins];
    let mut conf = vec![0.0; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(LabError::Domain(format!("confidence {c} outside [0,1]")));
        }
        let m = ((c * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        count[m] += 1;
        conf[m] += c;
        if ok {
            hits[m] += 1.0;
        }
    }
    let n = confidences.len() as f64;
    Ok((0..bins)
        .filter(|&m| count[m] > 0)
        .map(|m| {
            let k = count[m] as f64;
            (k / n) * (hits[m] / k - conf[m] / k).abs()
        })
        .sum())
}

/// Fraction of predictions whose argmax equals the label.
pub fn accuracy(preds: &[ProbVector], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, &y)| p.argmax() == y).count();
    hits as f64 / labels.len() as f64
}
