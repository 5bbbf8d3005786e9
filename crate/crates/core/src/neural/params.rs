use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::tape::Tape;
use super::tensor::Tensor;
use super::NeuralError;

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Slot {
    name: String,
    value: Tensor,
    grad: Tensor,
    first_moment: Tensor,
    second_moment: Tensor,
    trainable: bool,
}

/// Named parameter arrays with gradient accumulators and optimizer moments.
///
/// Clones share the tag of the original, so a tape recorded against one can
/// be accumulated into a snapshot of it.
#[derive(Debug, Clone)]
pub struct ParamStore {
    tag: u64,
    slots: Vec<Slot>,
    index: BTreeMap<String, ParamId>,
    step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            tag: NEXT_TAG.fetch_add(1, Ordering::Relaxed),
            slots: Vec::new(),
            index: BTreeMap::new(),
            step: 0,
        }
    }

    pub(crate) fn tag(&self) -> u64 {
        self.tag
    }

    /// Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    /// A non-trainable array (normalization constants and the like).
    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let (r, c) = value.shape();
        let id = ParamId(self.slots.len());
        self.index.insert(name.clone(), id);
        self.slots.push(Slot {
            name,
            value,
            grad: Tensor::zeros(r, c),
            first_moment: Tensor::zeros(r, c),
            second_moment: Tensor::zeros(r, c),
            trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.slots[id.0].trainable
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
        }
    }

    /// Adds the gradients recorded on `tape` for this store's parameters.
    pub fn accumulate(&mut self, tape: &Tape) {
        let tag = self.tag;
        for (id, g) in tape.param_nodes(tag) {
            if let Some(g) = g {
                self.slots[id.0].grad.add_assign(g);
            }
        }
    }

    pub fn scale_grads(&mut self, k: f64) {
        for s in &mut self.slots {
            s.grad.data_mut().iter_mut().for_each(|g| *g *= k);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.slots
            .iter()
            .filter(|s| s.trainable)
            .flat_map(|s| s.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale_grads(max_norm / norm);
        }
        norm
    }

    /// Copies parameter values (not gradients or moments) from a store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), NeuralError> {
        if other.slots.len() != self.slots.len() {
            return Err(NeuralError::Layout(format!(
                "expected {} parameters, found {}",
                self.slots.len(),
                other.slots.len()
            )));
        }
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(NeuralError::Layout(format!("parameter {} does not match {}", dst.name, src.name)));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    /// Bias-corrected first/second moment update, then zeroes gradients.
    ///
    /// The whole update is rejected if any trainable gradient is non-finite.
    pub fn adam_like_step(&mut self, lr: f64, betas: (f64, f64), eps: f64) -> Result<(), NeuralError> {
        if let Some(bad) = self
            .slots
            .iter()
            .find(|s| s.trainable && !s.grad.is_finite())
        {
            return Err(NeuralError::NonFiniteGradient(bad.name.clone()));
        }
        self.step += 1;
        let (b1, b2) = betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for s in self.slots.iter_mut().filter(|s| s.trainable) {
            let grads = s.grad.data();
            let m = s.first_moment.data_mut();
            for (mi, &g) in m.iter_mut().zip(grads) {
                *mi = b1 * *mi + (1.0 - b1) * g;
            }
            let v = s.second_moment.data_mut();
            for (vi, &g) in v.iter_mut().zip(grads) {
                *vi = b2 * *vi + (1.0 - b2) * g * g;
            }
            let (m, v) = (s.first_moment.data(), s.second_moment.data());
            for ((p, &mi), &vi) in s.value.data_mut().iter_mut().zip(m).zip(v) {
                *p -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
        }
        self.zero_grads();
        Ok(())
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(fan_in, fan_out, data)
}

/// A random `n x n` orthogonal matrix (modified Gram-Schmidt on Gaussian-ish columns).
pub fn orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for c in &cols {
            let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    let mut t = Tensor::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            t.set(i, j, x);
        }
    }
    t
}
