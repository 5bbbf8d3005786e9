use std::path::{Path, PathBuf};

use clap::Args;
use gmop::graphs::GraphStrategy;
use gmop::model::{train, GmopVariant, ModelBundle, ModelConfig, ModelError};
use gmop::scene::split_dataset;
use serde::{Deserialize, Serialize};

use super::pretrain::{load_autoencoder, load_classifier};
use super::{read_json, read_scene_file, required};
use crate::config::ConfigFile;
use crate::error::CliError;
use crate::lock::DirLock;

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Separate validation scenes; otherwise a split of --scenes is used
    #[arg(long)]
    pub val_scenes: Option<PathBuf>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Directory written by `pretrain autoencoder`
    #[arg(long)]
    pub autoencoder: Option<PathBuf>,
    /// Directory written by `pretrain classifier`
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<GraphStrategy>,
    /// Bundle directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(rename = "model.epochs")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(rename = "model.seed")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(rename = "model.lr")]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub scenes: Option<PathBuf>,
    pub val_scenes: Option<PathBuf>,
    pub val_fraction: f64,
    pub split_seed: u64,
    pub autoencoder: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    pub variant: GraphStrategy,
    pub out: PathBuf,
    pub model: ModelConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            scenes: None,
            val_scenes: None,
            val_fraction: 0.2,
            split_seed: 0,
            autoencoder: None,
            classifier: None,
            variant: GraphStrategy::Independence,
            out: PathBuf::from("bundle"),
            model: ModelConfig::default(),
        }
    }
}

/// Records the effective config in the bundle manifest already on disk.
fn stamp_manifest(dir: &Path, settings: &TrainSettings) -> Result<(), CliError> {
    let path = dir.join(ModelBundle::MANIFEST);
    if !path.is_file() {
        return Ok(());
    }
    let mut doc = read_json(&path)?;
    doc["extra"] = serde_json::json!({ "command": "train", "config": settings });
    std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

pub fn run(args: &TrainArgs, file: &ConfigFile) -> Result<(), CliError> {
    let settings: TrainSettings = file.resolve("train", args)?;
    settings.model.validate()?;
    let strategy = settings.variant;
    let ae_dir = settings.autoencoder.clone().ok_or_else(|| {
        CliError::Dependency("pretrained autoencoder (pass --autoencoder DIR written by `gmop pretrain autoencoder`)".into())
    })?;
    let classifier = if strategy.needs_pretrained_classifier() {
        let dir = settings.classifier.clone().ok_or_else(|| {
            CliError::Dependency(format!(
                "pretrained interaction classifier for variant {strategy} (pass --classifier DIR written by `gmop pretrain classifier --strategy {strategy}`)"
            ))
        })?;
        let (clf, trained_for) = load_classifier(&dir)?;
        if trained_for != strategy {
            return Err(CliError::Validation(format!(
                "classifier in {} was trained for {trained_for}, variant is {strategy}",
                dir.display()
            )));
        }
        Some(clf)
    } else {
        if settings.classifier.is_some() {
            log::warn!("variant {strategy} does not use a pretrained classifier; ignoring it");
        }
        None
    };
    let autoencoder = load_autoencoder(&ae_dir)?;

    let scenes = read_scene_file(&required(&settings.scenes, "scenes")?)?;
    let (train_set, val_set) = match &settings.val_scenes {
        Some(p) => (scenes, read_scene_file(p)?),
        None => {
            if !(settings.val_fraction > 0.0 && settings.val_fraction < 1.0) {
                return Err(CliError::Validation(format!("val_fraction {} outside (0, 1)", settings.val_fraction)));
            }
            split_dataset(&scenes, 1.0 - settings.val_fraction, settings.split_seed)?
        }
    };

    let _lock = DirLock::acquire(&settings.out)?;
    let variant = GmopVariant::new(strategy, settings.model.clone());
    let result = train(variant, &train_set, &val_set, autoencoder, classifier, Some(&settings.out));
    stamp_manifest(&settings.out, &settings)?;
    match result {
        Ok(outcome) => {
            let best = outcome.log[outcome.best_epoch].val_nll;
            let first = outcome.log[0].val_nll;
            println!(
                "trained {strategy}: best epoch {} of {}, validation NLL {first:.4} -> {best:.4}; bundle in {}",
                outcome.best_epoch,
                outcome.log.len() - 1,
                settings.out.display()
            );
            Ok(())
        }
        Err(e @ ModelError::Divergence { .. }) => {
            eprintln!("best checkpoint so far kept in {}", settings.out.display());
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}
