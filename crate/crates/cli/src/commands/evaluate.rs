use std::path::{Path, PathBuf};

use clap::Args;
use gmop::evaljoint::{evaluate_variant, write_reports, EvalConfig};
use gmop::model::ModelBundle;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ensure_distinct, read_scene_file, required, write_manifest};
use crate::config::ConfigFile;
use crate::error::CliError;

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Bundle directory written by `train`
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Metrics CSV path
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Samples for joint minADE/minFDE
    #[arg(long)]
    #[serde(rename = "eval.samples")]
    pub samples: Option<usize>,
    /// Samples for the density estimate
    #[arg(long)]
    #[serde(rename = "eval.max_samples")]
    pub max_samples: Option<usize>,
    #[arg(long)]
    #[serde(rename = "eval.eval_seed")]
    pub eval_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    pub bundle: Option<PathBuf>,
    pub scenes: Option<PathBuf>,
    pub out: PathBuf,
    pub eval: EvalConfig,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        Self {
            bundle: None,
            scenes: None,
            out: PathBuf::from("metrics.csv"),
            eval: EvalConfig::default(),
        }
    }
}

/// `metrics.csv` -> `metrics.manifest.json`.
pub fn sidecar(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "metrics".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.manifest.json"))
}

pub fn run(args: &EvaluateArgs, file: &ConfigFile) -> Result<(), CliError> {
    let settings: EvaluateSettings = file.resolve("evaluate", args)?;
    let bundle_dir = required(&settings.bundle, "bundle")?;
    if !bundle_dir.join(ModelBundle::MANIFEST).is_file() {
        return Err(CliError::Usage(format!("no model bundle in {}", bundle_dir.display())));
    }
    let scenes_path = required(&settings.scenes, "scenes")?;
    ensure_distinct(&settings.out, &[&scenes_path])?;
    let scenes = read_scene_file(&scenes_path)?;
    settings.eval.validate()?;
    let bundle = ModelBundle::load(&bundle_dir)?;
    let report = evaluate_variant(&bundle, &scenes, &settings.eval)?;
    if let Some(parent) = settings.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_reports(&settings.out, std::slice::from_ref(&report))?;
    write_manifest(
        &sidecar(&settings.out),
        "evaluate",
        &settings,
        json!({
            "variant": report.variant,
            "model_seed": report.seed,
            "bundle_train_fingerprint": bundle.manifest.train_fingerprint,
            "n_scenes": scenes.len(),
        }),
    )?;
    let acc = report.classifier_accuracy.map_or_else(String::new, |a| format!(", classifier accuracy {a:.4}"));
    println!(
        "{} (seed {}): joint minADE {:.4} m, joint minFDE {:.4} m, joint NLL {:.4}{acc} over {} scenes (S={}, {} density samples)",
        report.variant,
        report.seed,
        report.joint_min_ade,
        report.joint_min_fde,
        report.joint_nll,
        report.n_scenes,
        report.samples,
        report.max_samples
    );
    Ok(())
}
