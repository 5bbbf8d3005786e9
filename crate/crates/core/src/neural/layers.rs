use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{glorot_uniform, ParamId, ParamStore};
use super::tape::{softmax_in_place, Tape, Var};
use super::tensor::Tensor;
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

/// Fully connected layer `y = act(x W + b)` with `W` stored `in x out`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
    in_dim: usize,
    out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), glorot_uniform(rng, in_dim, out_dim));
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, out_dim));
        Self {
            w,
            b,
            activation,
            in_dim,
            out_dim,
        }
    }

    /// Same layer with weights scaled by `k` (used for near-identity initial flows).
    pub fn scaled<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        k: f64,
        rng: &mut R,
    ) -> Self {
        let layer = Self::new(store, name, in_dim, out_dim, activation, rng);
        store.value_mut(layer.w).data_mut().iter_mut().for_each(|v| *v *= k);
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Panics if the input width differs from `in_dim`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        assert_eq!(
            tape.shape(x).1,
            self.in_dim,
            "dense layer expects {} inputs",
            self.in_dim
        );
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w);
        let pre = tape.add_row(xw, b);
        match self.activation {
            Activation::Identity => pre,
            Activation::Tanh => tape.tanh(pre),
            Activation::Relu => tape.relu(pre),
        }
    }
}

/// Evaluates one dense layer on a single input vector.
pub fn dense_forward(x: &[f64], layer: &Dense, store: &ParamStore) -> Result<Vec<f64>, NeuralError> {
    if x.len() != layer.in_dim {
        return Err(NeuralError::Shape {
            expected: layer.in_dim,
            found: x.len(),
        });
    }
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::row_vector(x.to_vec()));
    let y = layer.forward(&mut tape, store, xv);
    Ok(tape.value(y).data().to_vec())
}

/// Two dense layers with a hidden activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Var {
        for l in &self.layers {
            x = l.forward(tape, store, x);
        }
        x
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Clamp applied to predicted probabilities before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-w[true] * ln(p[true])`.
pub fn weighted_cross_entropy(probs: &[f64], true_class: usize, class_weights: &[f64]) -> f64 {
    -class_weights[true_class] * probs[true_class].max(PROB_FLOOR).ln()
}

/// Summed weighted cross-entropy over the rows of `probs` (`n x C`).
pub fn weighted_cross_entropy_tape(tape: &mut Tape, probs: Var, targets: &[usize], class_weights: &[f64]) -> Var {
    let (n, c) = tape.shape(probs);
    assert_eq!(n, targets.len(), "one target per row");
    assert_eq!(c, class_weights.len(), "one weight per class");
    let mut mask = Tensor::zeros(n, c);
    for (r, &t) in targets.iter().enumerate() {
        mask.set(r, t, -class_weights[t]);
    }
    let logp = tape.log_clamped(probs, PROB_FLOOR);
    let m = tape.constant(mask);
    let weighted = tape.mul(logp, m);
    tape.sum_all(weighted)
}
