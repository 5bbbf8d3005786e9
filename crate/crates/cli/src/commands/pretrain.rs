use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use gmop::graphs::{GraphStrategy, InteractionClassifier};
use gmop::model::{pretrain_autoencoder, pretrain_classifier, Autoencoder, AutoencoderConfig, ClassifierTrainConfig, ModelError};
use gmop::neural::{load_into, save_params};
use gmop::scene::{split_dataset, Scene};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{read_json, read_scene_file, required, write_manifest, MANIFEST};
use crate::config::ConfigFile;
use crate::error::CliError;

pub const AUTOENCODER_DIR: &str = "autoencoder";
pub const CLASSIFIER_DIR: &str = "classifier";
pub const AUTOENCODER_CKPT: &str = "autoencoder.ckpt";
pub const CLASSIFIER_CKPT: &str = "classifier.ckpt";
pub const CURVE: &str = "curve.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Autoencoder,
    Classifier,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct PretrainArgs {
    /// Which network to pretrain
    #[serde(skip)]
    #[arg(value_enum)]
    pub stage: Stage,
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Output root; checkpoints go to <out>/autoencoder and <out>/classifier
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fraction of scenes held out for evaluation
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Crossing strategy whose labels the classifier learns
    #[arg(long)]
    pub strategy: Option<GraphStrategy>,
    #[arg(long)]
    #[serde(rename = "autoencoder.seed")]
    pub ae_seed: Option<u64>,
    #[arg(long)]
    #[serde(rename = "autoencoder.steps")]
    pub ae_steps: Option<usize>,
    #[arg(long)]
    #[serde(rename = "autoencoder.latent_dim")]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    #[serde(rename = "classifier.seed")]
    pub clf_seed: Option<u64>,
    #[arg(long)]
    #[serde(rename = "classifier.epochs")]
    pub clf_epochs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSettings {
    pub scenes: Option<PathBuf>,
    pub out: PathBuf,
    pub val_fraction: f64,
    pub split_seed: u64,
    pub strategy: GraphStrategy,
    pub autoencoder: AutoencoderConfig,
    pub classifier: ClassifierTrainConfig,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        Self {
            scenes: None,
            out: PathBuf::from("pretrained"),
            val_fraction: 0.2,
            split_seed: 0,
            strategy: GraphStrategy::Crossing,
            autoencoder: AutoencoderConfig::default(),
            classifier: ClassifierTrainConfig::default(),
        }
    }
}

fn split(scenes: &[Scene], val_fraction: f64, seed: u64) -> Result<(Vec<Scene>, Vec<Scene>), CliError> {
    if val_fraction == 0.0 {
        return Ok((scenes.to_vec(), Vec::new()));
    }
    Ok(split_dataset(scenes, 1.0 - val_fraction, seed)?)
}

fn write_curve<I: IntoIterator<Item = (usize, f64)>>(path: &Path, header: [&str; 2], rows: I) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for (k, v) in rows {
        w.write_record([k.to_string(), format!("{v:.9}")]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &PretrainArgs, file: &ConfigFile) -> Result<(), CliError> {
    let settings: PretrainSettings = file.resolve("pretrain", args)?;
    if !(0.0..1.0).contains(&settings.val_fraction) {
        return Err(CliError::Validation(format!("val_fraction {} outside [0, 1)", settings.val_fraction)));
    }
    let run_clf = matches!(args.stage, Stage::Classifier | Stage::Both);
    if run_clf && settings.strategy.crossing_flags().is_none() {
        return Err(CliError::Usage(format!("classifier pretraining needs a crossing strategy, got {}", settings.strategy)));
    }
    let scenes = read_scene_file(&required(&settings.scenes, "scenes")?)?;
    let (train, heldout) = split(&scenes, settings.val_fraction, settings.split_seed)?;

    if matches!(args.stage, Stage::Autoencoder | Stage::Both) {
        let dir = settings.out.join(AUTOENCODER_DIR);
        std::fs::create_dir_all(&dir)?;
        let (ae, report) = pretrain_autoencoder(&train, &heldout, &settings.autoencoder)?;
        save_params(&ae.store, &dir.join(AUTOENCODER_CKPT)).map_err(ModelError::from)?;
        write_curve(&dir.join(CURVE), ["step", "loss"], report.curve.iter().copied())?;
        write_manifest(
            &dir.join(MANIFEST),
            "pretrain",
            &settings,
            json!({
                "stage": "autoencoder",
                "autoencoder": settings.autoencoder,
                "checkpoint": AUTOENCODER_CKPT,
                "n_train": train.len(),
                "n_heldout": heldout.len(),
                "reconstruction_error_m": report.reconstruction_error_m,
            }),
        )?;
        println!(
            "autoencoder: held-out reconstruction error {:.4} m ({} train, {} held-out scenes)",
            report.reconstruction_error_m,
            train.len(),
            heldout.len()
        );
    }
    if run_clf {
        let dir = settings.out.join(CLASSIFIER_DIR);
        std::fs::create_dir_all(&dir)?;
        let (clf, report) = pretrain_classifier(&train, &heldout, settings.strategy, &settings.classifier)?;
        clf.save(&dir.join(CLASSIFIER_CKPT)).map_err(ModelError::from)?;
        write_curve(&dir.join(CURVE), ["epoch", "loss"], report.curve.iter().enumerate().map(|(e, v)| (e + 1, *v)))?;
        write_manifest(
            &dir.join(MANIFEST),
            "pretrain",
            &settings,
            json!({
                "stage": "classifier",
                "strategy": settings.strategy,
                "enc_dim": settings.classifier.enc_dim,
                "embed_dim": settings.classifier.embed_dim,
                "checkpoint": CLASSIFIER_CKPT,
                "n_train": train.len(),
                "n_heldout": heldout.len(),
                "report": report,
            }),
        )?;
        if report.degenerate {
            log::warn!("classifier training labels contain a single class");
        }
        println!("classifier ({}): held-out accuracy {:.4}", settings.strategy, report.accuracy);
        print!("{}", report.confusion_table());
    }
    Ok(())
}

/// Reads an autoencoder written by `pretrain autoencoder`.
pub fn load_autoencoder(dir: &Path) -> Result<Autoencoder, CliError> {
    let manifest_path = dir.join(MANIFEST);
    let ckpt = dir.join(AUTOENCODER_CKPT);
    if !manifest_path.is_file() || !ckpt.is_file() {
        return Err(CliError::Dependency(format!(
            "pretrained autoencoder not found in {} (run `gmop pretrain autoencoder`)",
            dir.display()
        )));
    }
    let manifest = read_json(&manifest_path)?;
    let config: AutoencoderConfig = serde_json::from_value(manifest["autoencoder"].clone())
        .map_err(|e| CliError::Validation(format!("{}: {e}", manifest_path.display())))?;
    let mut ae = Autoencoder::new(config);
    load_into(&mut ae.store, &ckpt).map_err(ModelError::from)?;
    Ok(ae)
}

/// Reads a classifier written by `pretrain classifier` and the strategy it was trained for.
pub fn load_classifier(dir: &Path) -> Result<(InteractionClassifier, GraphStrategy), CliError> {
    let manifest_path = dir.join(MANIFEST);
    let ckpt = dir.join(CLASSIFIER_CKPT);
    if !manifest_path.is_file() || !ckpt.is_file() {
        return Err(CliError::Dependency(format!(
            "pretrained interaction classifier not found in {} (run `gmop pretrain classifier`)",
            dir.display()
        )));
    }
    let manifest = read_json(&manifest_path)?;
    let bad = |what: &str| CliError::Validation(format!("{}: missing {what}", manifest_path.display()));
    let strategy: GraphStrategy = serde_json::from_value(manifest["strategy"].clone()).map_err(|_| bad("strategy"))?;
    let enc = manifest["enc_dim"].as_u64().ok_or_else(|| bad("enc_dim"))? as usize;
    let embed = manifest["embed_dim"].as_u64().ok_or_else(|| bad("embed_dim"))? as usize;
    let clf = InteractionClassifier::load(&ckpt, enc, embed).map_err(ModelError::from)?;
    Ok((clf, strategy))
}
