use super::EvalError;
use crate::model::JointSample;

fn check_shapes(samples: &[JointSample], truth: &[Vec<[f64; 2]>]) -> Result<(), EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Shape("no samples".into()));
    }
    if truth.is_empty() || truth[0].is_empty() {
        return Err(EvalError::Shape("empty ground truth".into()));
    }
    let steps = truth[0].len();
    if truth.iter().any(|t| t.len() != steps) {
        return Err(EvalError::Shape("ground-truth agents differ in length".into()));
    }
    for (s, joint) in samples.iter().enumerate() {
        if joint.len() != truth.len() {
            return Err(EvalError::Shape(format!("sample {s} has {} agents, expected {}", joint.len(), truth.len())));
        }
        if joint.iter().any(|t| t.len() != steps) {
            return Err(EvalError::Shape(format!("sample {s} does not have {steps} steps")));
        }
    }
    Ok(())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Best scene-level sample by mean L2 error over all agents and steps.
pub fn joint_min_ade(samples: &[JointSample], truth: &[Vec<[f64; 2]>]) -> Result<f64, EvalError> {
    check_shapes(samples, truth)?;
    let count = (truth.len() * truth[0].len()) as f64;
    Ok(samples
        .iter()
        .map(|joint| {
            let total: f64 = joint.iter().zip(truth).flat_map(|(p, t)| p.iter().zip(t).map(|(&a, &b)| dist(a, b))).sum();
            total / count
        })
        .fold(f64::INFINITY, f64::min))
}

/// Best scene-level sample by mean final-step L2 error over agents.
pub fn joint_min_fde(samples: &[JointSample], truth: &[Vec<[f64; 2]>]) -> Result<f64, EvalError> {
    check_shapes(samples, truth)?;
    Ok(samples
        .iter()
        .map(|joint| {
            let total: f64 = joint.iter().zip(truth).map(|(p, t)| dist(*p.last().unwrap(), *t.last().unwrap())).sum();
            total / truth.len() as f64
        })
        .fold(f64::INFINITY, f64::min))
}
