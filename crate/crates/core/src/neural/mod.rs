//! Minimal differentiable-computation substrate.
//!
//! Everything the models need and nothing more: matrix values on a
//! reverse-mode [`Tape`], named parameters in a [`ParamStore`], dense and
//! gated recurrent layers, softmax and weighted cross-entropy, an Adam-style
//! update, a finite-difference gradient checker, and checkpoint files.

mod checkpoint;
mod gradcheck;
mod gru;
mod layers;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_into, load_params, read_params, save_params, write_params, Manifest, ShapeEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{analytic_gradients, compare_gradients, grad_check, GradCheckReport, FD_STEP};
pub use gru::{gru_decode, gru_encode, GruCell, GruDecoder};
pub use layers::{dense_forward, softmax, weighted_cross_entropy, weighted_cross_entropy_tape, Activation, Dense, Mlp, PROB_FLOOR};
pub use params::{glorot_uniform, orthogonal, ParamId, ParamStore};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Applies one Adam-style update to every trainable parameter of `store`.
pub fn adam_like_step(store: &mut ParamStore, lr: f64, betas: (f64, f64), eps: f64) -> Result<(), NeuralError> {
    store.adam_like_step(lr, betas, eps)
}

impl AdamConfig {
    pub fn step(&self, store: &mut ParamStore) -> Result<(), NeuralError> {
        store.adam_like_step(self.lr, (self.beta1, self.beta2), self.eps)
    }
}
