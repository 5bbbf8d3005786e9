//! Gaussian product-kernel density over flattened joint samples.

use super::EvalError;
use crate::model::JointSample;

/// Smallest per-coordinate bandwidth, in meters.
pub const BANDWIDTH_FLOOR_M: f64 = 1e-3;

/// Flattens `n_A x n_O x 2` into one vector, agent-major.
pub fn flatten(joint: &[Vec<[f64; 2]>]) -> Vec<f64> {
    joint.iter().flat_map(|t| t.iter().flat_map(|p| *p)).collect()
}

/// Per-coordinate rule-of-thumb bandwidth `sigma * m^(-1/(d+4))`, floored.
///
/// `sigma` is the sample standard deviation (`m - 1` denominator).
pub fn bandwidths(points: &[Vec<f64>]) -> Vec<f64> {
    let m = points.len();
    let d = points[0].len();
    let factor = (m as f64).powf(-1.0 / (d as f64 + 4.0));
    (0..d)
        .map(|k| {
            let sigma = if m < 2 {
                0.0
            } else {
                let mean = points.iter().map(|p| p[k]).sum::<f64>() / m as f64;
                let var = points.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
                var.sqrt()
            };
            (sigma * factor).max(BANDWIDTH_FLOOR_M)
        })
        .collect()
}

/// `log` of the kernel density estimate at `x` with the given bandwidths.
pub fn kde_log_density(points: &[Vec<f64>], bandwidth: &[f64], x: &[f64]) -> f64 {
    let norm: f64 = bandwidth.iter().map(|h| h.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln()).sum();
    let terms: Vec<f64> = points
        .iter()
        .map(|p| {
            let q: f64 = p.iter().zip(x).zip(bandwidth).map(|((a, b), h)| ((b - a) / h).powi(2)).sum();
            -0.5 * q - norm
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln() - (points.len() as f64).ln()
}

/// Negative log density of the ground-truth joint future under a KDE fitted to `samples`.
pub fn kde_nll(samples: &[JointSample], truth: &[Vec<[f64; 2]>]) -> Result<f64, EvalError> {
    if samples.len() < 2 {
        return Err(EvalError::Config(format!("density estimate needs at least 2 samples, got {}", samples.len())));
    }
    let points: Vec<Vec<f64>> = samples.iter().map(|s| flatten(s)).collect();
    let x = flatten(truth);
    if points.iter().any(|p| p.len() != x.len()) {
        return Err(EvalError::Shape("samples and ground truth differ in size".into()));
    }
    let h = bandwidths(&points);
    Ok(-kde_log_density(&points, &h, &x))
}
