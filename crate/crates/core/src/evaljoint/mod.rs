//! Scene-level metrics (joint minADE/minFDE, KDE joint NLL) and aggregation
//! over variants and seeds.

mod kde;
mod metrics;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kde::{bandwidths, flatten, kde_log_density, kde_nll, BANDWIDTH_FLOOR_M};
pub use metrics::{joint_min_ade, joint_min_fde};

use crate::graphs::{crossing_labels, HeuristicConfig};
use crate::model::{predict_scene, JointSample, ModelBundle, ModelError};
use crate::scene::{ObservedScene, Scene};

/// Name recorded for the density estimator behind `joint_nll`.
pub const NLL_ESTIMATOR: &str = "gaussian-kde";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no scenes to evaluate")]
    NoScenes,
    #[error("invalid evaluation setting: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Joint samples per scene for minADE/minFDE.
    pub samples: usize,
    /// Joint samples per scene for the density estimate.
    pub max_samples: usize,
    pub eval_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 6,
            max_samples: 100,
            eval_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.samples == 0 {
            return Err(EvalError::Config("samples must be at least 1".into()));
        }
        if self.max_samples < 2 {
            return Err(EvalError::Config("max_samples must be at least 2".into()));
        }
        Ok(())
    }
}

/// One evaluated (variant, seed) run; also the row layout of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub seed: u64,
    pub joint_min_ade: f64,
    pub joint_min_fde: f64,
    /// Mean per scene, nats.
    pub joint_nll: f64,
    pub classifier_accuracy: Option<f64>,
    pub n_scenes: usize,
    pub samples: usize,
    pub max_samples: usize,
    pub eval_seed: u64,
    pub nll_estimator: String,
}

/// Seed for the samples of the `index`-th scene.
pub fn scene_seed(eval_seed: u64, index: usize) -> u64 {
    eval_seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn truth(scene: &Scene) -> Vec<Vec<[f64; 2]>> {
    scene.agents.iter().map(|a| a.future.positions.iter().map(|p| p.to_array()).collect()).collect()
}

/// Mean KDE joint NLL over `scenes`, with `sampler(index, scene, count)` providing joint samples.
pub fn joint_nll_metric<F>(mut sampler: F, scenes: &[Scene], max_samples: usize) -> Result<f64, EvalError>
where
    F: FnMut(usize, &ObservedScene, usize) -> Result<Vec<JointSample>, EvalError>,
{
    if max_samples < 2 {
        return Err(EvalError::Config("max_samples must be at least 2".into()));
    }
    if scenes.is_empty() {
        return Err(EvalError::NoScenes);
    }
    let mut total = 0.0;
    for (i, s) in scenes.iter().enumerate() {
        let samples = sampler(i, &s.observed(), max_samples)?;
        total += kde_nll(&samples, &truth(s))?;
    }
    Ok(total / scenes.len() as f64)
}

/// Pair accuracy of the bundled classifier against its heuristic labels.
fn classifier_accuracy(bundle: &ModelBundle, scenes: &[Scene]) -> Result<Option<f64>, EvalError> {
    let (Some(clf), Some((hyp, flip))) = (&bundle.classifier, bundle.model.strategy().crossing_flags()) else {
        return Ok(None);
    };
    let cfg = HeuristicConfig::default();
    let (mut right, mut total) = (0usize, 0usize);
    for s in scenes.iter().filter(|s| s.n_agents() > 1) {
        let labels = crossing_labels(s, hyp, flip, &cfg).map_err(ModelError::from)?;
        let probs = clf.scene_probs(&s.observed());
        for (l, p) in labels.iter().zip(&probs) {
            let pred = (0..3).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))).unwrap();
            right += usize::from(pred == l.class.index());
            total += 1;
        }
    }
    Ok((total > 0).then(|| right as f64 / total as f64))
}

/// Joint minADE/minFDE over the first `samples` draws and KDE NLL over
/// `max_samples` draws per scene, all from one seeded sample set.
pub fn evaluate_variant(bundle: &ModelBundle, scenes: &[Scene], config: &EvalConfig) -> Result<MetricsReport, EvalError> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(EvalError::NoScenes);
    }
    let draws = config.samples.max(config.max_samples);
    let (mut ade, mut fde, mut nll) = (0.0, 0.0, 0.0);
    for (i, s) in scenes.iter().enumerate() {
        let samples = predict_scene(&s.observed(), bundle, draws, scene_seed(config.eval_seed, i))?;
        let gt = truth(s);
        ade += joint_min_ade(&samples[..config.samples], &gt)?;
        fde += joint_min_fde(&samples[..config.samples], &gt)?;
        nll += kde_nll(&samples[..config.max_samples], &gt)?;
    }
    let n = scenes.len() as f64;
    Ok(MetricsReport {
        variant: bundle.manifest.variant.name().to_string(),
        seed: bundle.manifest.variant.config.seed,
        joint_min_ade: ade / n,
        joint_min_fde: fde / n,
        joint_nll: nll / n,
        classifier_accuracy: classifier_accuracy(bundle, scenes)?,
        n_scenes: scenes.len(),
        samples: config.samples,
        max_samples: config.max_samples,
        eval_seed: config.eval_seed,
        nll_estimator: NLL_ESTIMATOR.to_string(),
    })
}

/// Mean and sample standard deviation per variant; `best_*` marks the best
/// mean of each metric (lowest, or highest for accuracy), ties all marked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub runs: usize,
    pub joint_min_ade_mean: f64,
    pub joint_min_ade_std: f64,
    pub joint_min_fde_mean: f64,
    pub joint_min_fde_std: f64,
    pub joint_nll_mean: f64,
    pub joint_nll_std: f64,
    pub classifier_accuracy_mean: Option<f64>,
    pub classifier_accuracy_std: Option<f64>,
    pub best_ade: bool,
    pub best_fde: bool,
    pub best_nll: bool,
    pub best_accuracy: bool,
}

/// `(mean, std)` with an `n - 1` denominator; std is 0 for one value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups reports by variant in order of first appearance.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Vec<SummaryRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        if !names.contains(&r.variant.as_str()) {
            names.push(&r.variant);
        }
    }
    let mut rows: Vec<SummaryRow> = names
        .iter()
        .map(|&name| {
            let runs: Vec<&MetricsReport> = reports.iter().filter(|r| r.variant == name).collect();
            let col = |f: fn(&MetricsReport) -> f64| mean_std(&runs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (ade_m, ade_s) = col(|r| r.joint_min_ade);
            let (fde_m, fde_s) = col(|r| r.joint_min_fde);
            let (nll_m, nll_s) = col(|r| r.joint_nll);
            let acc: Vec<f64> = runs.iter().filter_map(|r| r.classifier_accuracy).collect();
            let (acc_m, acc_s) = if acc.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&acc);
                (Some(m), Some(s))
            };
            SummaryRow {
                variant: name.to_string(),
                runs: runs.len(),
                joint_min_ade_mean: ade_m,
                joint_min_ade_std: ade_s,
                joint_min_fde_mean: fde_m,
                joint_min_fde_std: fde_s,
                joint_nll_mean: nll_m,
                joint_nll_std: nll_s,
                classifier_accuracy_mean: acc_m,
                classifier_accuracy_std: acc_s,
                best_ade: false,
                best_fde: false,
                best_nll: false,
                best_accuracy: false,
            }
        })
        .collect();
    let min_of = |rows: &[SummaryRow], f: fn(&SummaryRow) -> f64| rows.iter().map(f).fold(f64::INFINITY, f64::min);
    let (ade, fde, nll) = (
        min_of(&rows, |r| r.joint_min_ade_mean),
        min_of(&rows, |r| r.joint_min_fde_mean),
        min_of(&rows, |r| r.joint_nll_mean),
    );
    let acc = rows.iter().filter_map(|r| r.classifier_accuracy_mean).fold(f64::NEG_INFINITY, f64::max);
    for r in &mut rows {
        r.best_ade = r.joint_min_ade_mean == ade;
        r.best_fde = r.joint_min_fde_mean == fde;
        r.best_nll = r.joint_nll_mean == nll;
        r.best_accuracy = r.classifier_accuracy_mean == Some(acc);
    }
    rows
}

/// Whether `better` has a mean joint NLL no larger than `worse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub better: String,
    pub worse: String,
    pub better_nll: f64,
    pub worse_nll: f64,
    pub holds: bool,
}

impl TrendCheck {
    pub fn line(&self) -> String {
        format!(
            "trend {} <= {} on mean joint NLL: {} ({:.4} vs {:.4})",
            self.better,
            self.worse,
            if self.holds { "holds" } else { "violated" },
            self.better_nll,
            self.worse_nll
        )
    }
}

/// `None` when either variant is missing from `rows`.
pub fn trend_check(rows: &[SummaryRow], better: &str, worse: &str) -> Option<TrendCheck> {
    let find = |name: &str| rows.iter().find(|r| r.variant == name).map(|r| r.joint_nll_mean);
    let (b, w) = (find(better)?, find(worse)?);
    Some(TrendCheck {
        better: better.to_string(),
        worse: worse.to_string(),
        better_nll: b,
        worse_nll: w,
        holds: b <= w,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(EvalError::from)).collect()
}

pub fn write_reports(path: &Path, reports: &[MetricsReport]) -> Result<(), EvalError> {
    write_rows(path, reports)
}

pub fn read_reports(path: &Path) -> Result<Vec<MetricsReport>, EvalError> {
    read_rows(path)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), EvalError> {
    write_rows(path, rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, EvalError> {
    read_rows(path)
}
