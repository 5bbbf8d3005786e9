use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::autoencoder::Autoencoder;
use super::batch::SceneBatch;
use super::bundle::{BundleManifest, ModelBundle};
use super::joint::GmopModel;
use super::{GmopVariant, ModelError};
use crate::graphs::{GraphStrategy, InteractionClassifier, InteractionGraph};
use crate::neural::{ParamStore, Tape, Tensor};
use crate::scene::{ObservedScene, Scene};

pub const EPOCH_LOG_HEADER: [&str; 4] = ["epoch", "train_nll", "val_nll", "best_val_nll"];

/// One row of the epoch log; epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean joint NLL per training scene.
    pub train_nll: f64,
    /// Mean joint NLL per validation scene.
    pub val_nll: f64,
    /// Running minimum of `val_nll`.
    pub best_val_nll: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Bundle holding the best-on-validation parameters.
    pub bundle: ModelBundle,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

struct Prepared {
    observed: ObservedScene,
    latents: Tensor,
    /// Fixed graph; `None` when it depends on trainable parameters.
    graph: Option<InteractionGraph>,
}

fn prepare(scenes: &[Scene], model: &GmopModel, ae: &Autoencoder, clf: Option<&InteractionClassifier>) -> Result<Vec<Prepared>, ModelError> {
    scenes
        .iter()
        .map(|s| {
            let observed = s.observed();
            let graph = if model.strategy() == GraphStrategy::NoHeuristic {
                None
            } else {
                Some(model.graph_for(&observed, clf)?)
            };
            Ok(Prepared {
                latents: ae.scene_latents(s),
                observed,
                graph,
            })
        })
        .collect()
}

fn batch_of(model: &GmopModel, items: &[&Prepared]) -> Result<(SceneBatch, Tensor), ModelError> {
    let graphs: Vec<InteractionGraph> = items
        .iter()
        .map(|p| match &p.graph {
            Some(g) => Ok(g.clone()),
            None => model.graph_for(&p.observed, None),
        })
        .collect::<Result<_, _>>()?;
    let pairs: Vec<(&ObservedScene, &InteractionGraph)> = items.iter().map(|p| &p.observed).zip(&graphs).collect();
    let batch = SceneBatch::new(&pairs)?;
    let l = items[0].latents.cols();
    let data: Vec<f64> = items.iter().flat_map(|p| p.latents.data().iter().copied()).collect();
    let latents = Tensor::from_vec(batch.n, l, data);
    Ok((batch, latents))
}

/// Mean joint NLL per scene.
fn mean_nll(model: &GmopModel, data: &[Prepared]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for chunk in data.chunks(64) {
        let items: Vec<&Prepared> = chunk.iter().collect();
        let (batch, latents) = batch_of(model, &items)?;
        let mut tape = Tape::new();
        let nll = model.batch_nll_tape(&mut tape, &model.store, &batch, &latents);
        total += tape.scalar(nll);
    }
    Ok(total / data.len() as f64)
}

fn write_epoch_log(path: &Path, log: &[EpochRecord]) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| std::io::Error::other(e.to_string()))?;
    let io = |e: csv::Error| std::io::Error::other(e.to_string());
    w.write_record(EPOCH_LOG_HEADER).map_err(io)?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.9}", r.train_nll),
            format!("{:.9}", r.val_nll),
            format!("{:.9}", r.best_val_nll),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Fits the joint model on `train`, keeping the parameters with the lowest
/// validation NLL.
///
/// The classifier is required by the crossing strategies and ignored
/// otherwise. With `out_dir`, the bundle and `epochs.csv` are written there,
/// also when training aborts on divergence.
pub fn train(
    variant: GmopVariant,
    train: &[Scene],
    val: &[Scene],
    autoencoder: Autoencoder,
    classifier: Option<InteractionClassifier>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyData("training set"));
    }
    if val.is_empty() {
        return Err(ModelError::EmptyData("validation set"));
    }
    let strategy = variant.strategy;
    let classifier = if strategy.needs_pretrained_classifier() {
        Some(classifier.ok_or_else(|| ModelError::MissingArtifact(format!("pretrained interaction classifier for {strategy}")))?)
    } else {
        None
    };
    if autoencoder.latent_dim() != variant.config.latent_dim {
        return Err(ModelError::Config(format!(
            "autoencoder latent size {} differs from configured latent_dim {}",
            autoencoder.latent_dim(),
            variant.config.latent_dim
        )));
    }
    let cfg = variant.config.clone();
    let mut model = GmopModel::new(variant)?;
    if let Some(net) = model.classifier.clone() {
        let observed: Vec<ObservedScene> = train.iter().map(|s| s.observed()).collect();
        net.fit_standardization(&mut model.store, &observed);
    }
    let train_data = prepare(train, &model, &autoencoder, classifier.as_ref())?;
    let val_data = prepare(val, &model, &autoencoder, classifier.as_ref())?;

    let init_val = mean_nll(&model, &val_data)?;
    let mut log = vec![EpochRecord {
        epoch: 0,
        train_nll: mean_nll(&model, &train_data)?,
        val_nll: init_val,
        best_val_nll: init_val,
    }];
    let mut best_store = model.store.clone();
    let mut best_epoch = 0;
    let mut best_val = init_val;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11);
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    let finish = |model: &mut GmopModel, store: &ParamStore, log: &[EpochRecord], best_epoch: usize, best_val: f64| -> Result<ModelBundle, ModelError> {
        model.store = store.clone();
        let manifest = BundleManifest::new(&model.variant, &autoencoder, classifier.as_ref(), train, val, best_epoch, best_val);
        let bundle = ModelBundle {
            manifest,
            model: model.clone(),
            autoencoder: autoencoder.clone(),
            classifier: classifier.clone(),
        };
        if let Some(dir) = out_dir {
            bundle.save(dir)?;
            write_epoch_log(&dir.join(ModelBundle::EPOCH_LOG), log)?;
        }
        Ok(bundle)
    };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&Prepared> = chunk.iter().map(|&i| &train_data[i]).collect();
            let (batch, latents) = batch_of(&model, &items)?;
            let mut tape = Tape::new();
            let nll = model.batch_nll_tape(&mut tape, &model.store, &batch, &latents);
            let value = tape.scalar(nll);
            let mut ok = value.is_finite();
            if ok {
                total += value;
                let loss = tape.scale(nll, 1.0 / items.len() as f64);
                tape.backward(loss);
                model.store.accumulate(&tape);
                model.store.clip_grad_norm(cfg.grad_clip);
                ok = model.store.adam_like_step(cfg.lr, (0.9, 0.999), 1e-8).is_ok();
            }
            if !ok {
                log::error!("joint training diverged at epoch {epoch}, step {step}");
                finish(&mut model, &best_store, &log, best_epoch, best_val)?;
                return Err(ModelError::Divergence {
                    stage: "joint training",
                    epoch,
                    step,
                    checkpoint: Some(Box::new(best_store)),
                });
            }
        }
        let val_nll = mean_nll(&model, &val_data)?;
        if !val_nll.is_finite() {
            finish(&mut model, &best_store, &log, best_epoch, best_val)?;
            return Err(ModelError::Divergence {
                stage: "joint training",
                epoch,
                step: 0,
                checkpoint: Some(Box::new(best_store)),
            });
        }
        if val_nll < best_val {
            best_val = val_nll;
            best_epoch = epoch;
            best_store = model.store.clone();
        }
        let rec = EpochRecord {
            epoch,
            train_nll: total / train_data.len() as f64,
            val_nll,
            best_val_nll: best_val,
        };
        log::info!("epoch {epoch}: train {:.4} val {:.4} best {:.4}", rec.train_nll, rec.val_nll, best_val);
        log.push(rec);
    }
    let bundle = finish(&mut model, &best_store, &log, best_epoch, best_val)?;
    Ok(TrainOutcome { bundle, log, best_epoch })
}
