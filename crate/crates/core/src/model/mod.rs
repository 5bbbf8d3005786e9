//! GMoP assembly: pretrained trajectory autoencoder and interaction
//! classifier, a message-passing context encoder, and a conditional flow
//! over abstracted futures factorized along an interaction DAG.

mod autoencoder;
mod batch;
mod bundle;
mod context;
mod joint;
mod pretrain;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use autoencoder::{future_velocities, pretrain_autoencoder, AutoencoderConfig, AutoencoderReport, Autoencoder};
pub use bundle::{predict_scene, scene_log_likelihood, BundleManifest, JointSample, ModelBundle};
pub use context::{encode_context, ContextEncoder};
pub use joint::{joint_scene_nll, GmopModel};
pub use pretrain::{pretrain_classifier, ClassifierReport, ClassifierTrainConfig};
pub use train::{train, EpochRecord, TrainOutcome, EPOCH_LOG_HEADER};

use crate::flow::FlowError;
use crate::graphs::{GraphError, GraphStrategy};
use crate::neural::{NeuralError, ParamStore};
use crate::scene::SceneError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0} is empty")]
    EmptyData(&'static str),
    #[error("graph nodes do not match the scene agents")]
    NodeMismatch,
    #[error("{stage} diverged at epoch {epoch}, step {step}")]
    Divergence {
        stage: &'static str,
        epoch: usize,
        step: usize,
        /// Last good parameters, if any were recorded.
        checkpoint: Option<Box<ParamStore>>,
    },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("model bundle has not been trained")]
    Untrained,
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("bad bundle manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hyperparameters of the joint model and its training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Flow dimension; must equal the autoencoder latent size.
    pub latent_dim: usize,
    pub past_hidden: usize,
    pub context_dim: usize,
    /// Message-passing rounds.
    pub rounds: usize,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub log_scale_clamp: f64,
    /// Radius of the Euclidean heuristic in meters.
    pub euclidean_eps_m: f64,
    /// Sizes of the end-to-end classifier of the no-heuristic variant.
    pub classifier_enc_dim: usize,
    pub classifier_embed_dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            past_hidden: 32,
            context_dim: 32,
            rounds: 1,
            flow_layers: 8,
            flow_hidden: 64,
            log_scale_clamp: 5.0,
            euclidean_eps_m: 20.0,
            classifier_enc_dim: 16,
            classifier_embed_dim: 32,
            lr: 1e-3,
            epochs: 20,
            batch_size: 16,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.latent_dim < 2 {
            return bad("latent_dim must be at least 2");
        }
        if self.past_hidden == 0 || self.context_dim == 0 || self.flow_hidden == 0 || self.flow_layers == 0 {
            return bad("layer sizes must be positive");
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.classifier_enc_dim == 0 || self.classifier_embed_dim == 0 {
            return bad("classifier sizes must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if !(self.euclidean_eps_m > 0.0) {
            return bad("euclidean_eps_m must be positive");
        }
        if !(self.log_scale_clamp > 0.0) {
            return bad("log_scale_clamp must be positive");
        }
        Ok(())
    }
}

/// One of the seven model versions plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmopVariant {
    pub strategy: GraphStrategy,
    pub config: ModelConfig,
}

impl GmopVariant {
    pub fn new(strategy: GraphStrategy, config: ModelConfig) -> Self {
        Self { strategy, config }
    }

    pub fn name(&self) -> &'static str {
        self.strategy.name()
    }
}

/// 64-bit FNV-1a, used for data fingerprints in manifests.
pub fn fingerprint(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
