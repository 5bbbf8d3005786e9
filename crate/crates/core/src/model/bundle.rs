use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::autoencoder::{Autoencoder, AutoencoderConfig};
use super::batch::SceneBatch;
use super::joint::{joint_scene_nll, GmopModel};
use super::{fingerprint, GmopVariant, ModelError};
use crate::graphs::{topological_order, InteractionClassifier, InteractionGraph};
use crate::neural::{load_into, save_params, Tape, Tensor};
use crate::scene::{write_scenes, ObservedScene, Scene, Vec2, VELOCITY_SCALE_MPS};

/// One joint sample: `n_A x n_O` positions.
pub type JointSample = Vec<Vec<[f64; 2]>>;

pub const BUNDLE_FORMAT: &str = "gmop-bundle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    pub variant: GmopVariant,
    pub autoencoder: AutoencoderConfig,
    /// `(enc_dim, embed_dim)` of the pretrained classifier, when one is bundled.
    pub classifier: Option<(usize, usize)>,
    pub trained: bool,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub n_train: usize,
    pub n_val: usize,
    /// FNV-1a of the serialized training and validation scenes.
    pub train_fingerprint: String,
    pub val_fingerprint: String,
    /// Free-form settings recorded by the caller (for example the effective CLI config).
    #[serde(default)]
    pub extra: serde_json::Value,
}

fn scenes_fingerprint(scenes: &[Scene]) -> String {
    let mut bytes = Vec::new();
    write_scenes(scenes, &mut bytes).expect("writing to memory succeeds");
    format!("{:016x}", fingerprint(&bytes))
}

impl BundleManifest {
    pub fn new(
        variant: &GmopVariant,
        autoencoder: &Autoencoder,
        classifier: Option<&InteractionClassifier>,
        train: &[Scene],
        val: &[Scene],
        best_epoch: usize,
        best_val_nll: f64,
    ) -> Self {
        Self {
            format: BUNDLE_FORMAT.to_string(),
            version: 1,
            variant: variant.clone(),
            autoencoder: autoencoder.config.clone(),
            classifier: classifier.map(|c| (c.net.enc_dim(), c.net.em.out_dim())),
            trained: true,
            best_epoch,
            best_val_nll,
            n_train: train.len(),
            n_val: val.len(),
            train_fingerprint: scenes_fingerprint(train),
            val_fingerprint: scenes_fingerprint(val),
            extra: serde_json::Value::Null,
        }
    }
}

/// Everything needed for inference: joint model, frozen autoencoder and,
/// for crossing strategies, the frozen classifier.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub manifest: BundleManifest,
    pub model: GmopModel,
    pub autoencoder: Autoencoder,
    pub classifier: Option<InteractionClassifier>,
}

impl ModelBundle {
    pub const MANIFEST: &'static str = "manifest.json";
    pub const MODEL: &'static str = "model.ckpt";
    pub const AUTOENCODER: &'static str = "autoencoder.ckpt";
    pub const CLASSIFIER: &'static str = "classifier.ckpt";
    pub const EPOCH_LOG: &'static str = "epochs.csv";

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir)?;
        save_params(&self.model.store, &dir.join(Self::MODEL))?;
        save_params(&self.autoencoder.store, &dir.join(Self::AUTOENCODER))?;
        if let Some(c) = &self.classifier {
            save_params(&c.store, &dir.join(Self::CLASSIFIER))?;
        }
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| ModelError::Manifest(e.to_string()))?;
        fs::write(dir.join(Self::MANIFEST), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(dir.join(Self::MANIFEST))?;
        let manifest: BundleManifest = serde_json::from_str(&text).map_err(|e| ModelError::Manifest(e.to_string()))?;
        if manifest.format != BUNDLE_FORMAT || manifest.version != 1 {
            return Err(ModelError::Manifest(format!("unsupported bundle {} v{}", manifest.format, manifest.version)));
        }
        let mut model = GmopModel::new(manifest.variant.clone())?;
        load_into(&mut model.store, &dir.join(Self::MODEL))?;
        let mut autoencoder = Autoencoder::new(manifest.autoencoder.clone());
        load_into(&mut autoencoder.store, &dir.join(Self::AUTOENCODER))?;
        let classifier = match manifest.classifier {
            Some((enc, embed)) => Some(InteractionClassifier::load(&dir.join(Self::CLASSIFIER), enc, embed)?),
            None => None,
        };
        Ok(Self {
            manifest,
            model,
            autoencoder,
            classifier,
        })
    }

    /// A bundle around freshly initialized parameters; prediction refuses it.
    pub fn untrained(variant: GmopVariant, autoencoder: Autoencoder, classifier: Option<InteractionClassifier>) -> Result<Self, ModelError> {
        let model = GmopModel::new(variant)?;
        let mut manifest = BundleManifest::new(&model.variant, &autoencoder, classifier.as_ref(), &[], &[], 0, f64::NAN);
        manifest.trained = false;
        Ok(Self {
            manifest,
            model,
            autoencoder,
            classifier,
        })
    }

    /// Inference graph for a future-stripped scene.
    pub fn graph_for(&self, scene: &ObservedScene) -> Result<InteractionGraph, ModelError> {
        self.model.graph_for(scene, self.classifier.as_ref())
    }
}

/// Draws `n_samples` joint futures by ancestral sampling along the inference graph.
///
/// Agents are visited in topological order; each draws a latent conditioned
/// on its context and the sum of its parents' sampled latents, which is then
/// decoded and integrated from the last observed position.
pub fn predict_scene(scene: &ObservedScene, bundle: &ModelBundle, n_samples: usize, seed: u64) -> Result<Vec<JointSample>, ModelError> {
    if !bundle.manifest.trained {
        return Err(ModelError::Untrained);
    }
    if n_samples == 0 {
        return Err(ModelError::Config("n_samples must be at least 1".into()));
    }
    let model = &bundle.model;
    let graph = bundle.graph_for(scene)?;
    let order = topological_order(&graph)?;
    let batch = SceneBatch::new(&[(scene, &graph)])?;
    let mut tape = Tape::new();
    let weights = model.edge_weights(&mut tape, &model.store, &batch);
    let c = model.context.forward(&mut tape, &model.store, &batch, weights);
    let context = tape.value(c).clone();

    let (n_a, l) = (scene.n_agents(), model.latent_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latents: Vec<Option<Tensor>> = vec![None; n_a];
    for id in order {
        let a = scene.index_of(id).expect("graph nodes are scene agents");
        let mut pooled = Tensor::zeros(n_samples, l);
        for (parent, w) in graph.parents(id) {
            let p = scene.index_of(parent).expect("graph nodes are scene agents");
            let sampled = latents[p].as_ref();
            assert!(sampled.is_some(), "agent {id} visited before its parent {parent}");
            let w = model.pool_weight(w);
            pooled = pooled.zip_map(sampled.unwrap(), |acc, y| acc + w * y);
        }
        let mut cond = Tensor::zeros(n_samples, context.cols() + l);
        for s in 0..n_samples {
            let row = cond.row_mut(s);
            row[..context.cols()].copy_from_slice(context.row(a));
            row[context.cols()..].copy_from_slice(pooled.row(s));
        }
        let z = Tensor::from_vec(n_samples, l, (0..n_samples * l).map(|_| StandardNormal.sample(&mut rng)).collect());
        latents[a] = Some(model.flow.inverse_batch(&model.store, &z, &cond)?);
    }

    let mut all = Tensor::zeros(n_a * n_samples, l);
    for (a, lat) in latents.iter().enumerate() {
        let lat = lat.as_ref().expect("every agent sampled");
        for s in 0..n_samples {
            all.row_mut(a * n_samples + s).copy_from_slice(lat.row(s));
        }
    }
    let velocities = bundle.autoencoder.decode(&all, scene.horizon);
    let step = VELOCITY_SCALE_MPS * scene.dt;
    let mut out = vec![Vec::with_capacity(n_a); n_samples];
    for (a, agent) in scene.agents.iter().enumerate() {
        for (s, sample) in out.iter_mut().enumerate() {
            let mut p: Vec2 = agent.last_position();
            let traj = velocities[a * n_samples + s]
                .iter()
                .map(|v| {
                    p = p + Vec2::new(v[0] * step, v[1] * step);
                    p.to_array()
                })
                .collect();
            sample.push(traj);
        }
    }
    Ok(out)
}

/// Log-likelihood of the scene's ground-truth futures under the bundle.
pub fn scene_log_likelihood(scene: &Scene, bundle: &ModelBundle) -> Result<f64, ModelError> {
    if !bundle.manifest.trained {
        return Err(ModelError::Untrained);
    }
    let graph = bundle.graph_for(&scene.observed())?;
    Ok(-joint_scene_nll(scene, &graph, &bundle.model, &bundle.autoencoder)?)
}
