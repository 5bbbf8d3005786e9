//! Conditional normalizing flow built from affine coupling layers.
//!
//! Each layer reverses the coordinate order, keeps the first `d/2`
//! coordinates, and scales and shifts the rest with values produced by a
//! conditioner network that sees the kept coordinates and the conditioning
//! vector. Log-scales pass through `c * tanh(s / c)`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{Activation, Dense, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("expected dimension {expected}, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("non-finite value after coupling layer {layer} ({direction})")]
    NonFinite { layer: usize, direction: &'static str },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid flow config: {0}")]
    Config(String),
}

/// How the last conditioner layer starts out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FlowInit {
    /// Zero output weights: every layer starts as the identity.
    Identity,
    /// Glorot weights scaled by the factor.
    Random(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dim: usize,
    pub cond_dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub log_scale_clamp: f64,
    pub init: FlowInit,
}

impl FlowConfig {
    pub fn new(dim: usize, cond_dim: usize) -> Self {
        Self {
            dim,
            cond_dim,
            layers: 8,
            hidden: 64,
            log_scale_clamp: 5.0,
            init: FlowInit::Identity,
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.dim < 2 {
            return Err(FlowError::Config(format!("dim must be at least 2, got {}", self.dim)));
        }
        if self.layers == 0 || self.hidden == 0 {
            return Err(FlowError::Config("need at least one layer and a nonzero hidden width".into()));
        }
        if !(self.log_scale_clamp > 0.0) {
            return Err(FlowError::Config("log-scale clamp must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Coupling {
    hidden: Dense,
    out: Dense,
}

#[derive(Debug, Clone)]
pub struct FlowStack {
    cfg: FlowConfig,
    layers: Vec<Coupling>,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
}

impl FlowStack {
    pub fn new<R: rand::Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: FlowConfig, rng: &mut R) -> Result<Self, FlowError> {
        cfg.validate()?;
        let h = cfg.dim / 2;
        let rest = cfg.dim - h;
        let layers = (0..cfg.layers)
            .map(|k| {
                let name = format!("{prefix}.{k}");
                let hidden = Dense::new(store, &format!("{name}.hidden"), h + cfg.cond_dim, cfg.hidden, Activation::Tanh, rng);
                let scale = match cfg.init {
                    FlowInit::Identity => 0.0,
                    FlowInit::Random(s) => s,
                };
                let out = Dense::scaled(store, &format!("{name}.out"), cfg.hidden, 2 * rest, Activation::Identity, scale, rng);
                Coupling { hidden, out }
            })
            .collect();
        let perm: Vec<usize> = (0..cfg.dim).rev().collect();
        let mut inv_perm = vec![0; cfg.dim];
        for (k, &p) in perm.iter().enumerate() {
            inv_perm[p] = k;
        }
        Ok(Self { cfg, layers, perm, inv_perm })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cfg.cond_dim
    }

    fn split(&self) -> usize {
        self.cfg.dim / 2
    }

    /// Clamped log-scale and shift for the transformed block.
    fn conditioner(&self, tape: &mut Tape, store: &ParamStore, layer: &Coupling, kept: Var, cond: Option<Var>) -> (Var, Var) {
        let rest = self.cfg.dim - self.split();
        let input = match cond {
            Some(c) => tape.concat_cols(&[kept, c]),
            None => kept,
        };
        let hid = layer.hidden.forward(tape, store, input);
        let o = layer.out.forward(tape, store, hid);
        let raw = tape.slice_cols(o, 0, rest);
        let shift = tape.slice_cols(o, rest, 2 * rest);
        let c = self.cfg.log_scale_clamp;
        let s = tape.scale(raw, 1.0 / c);
        let s = tape.tanh(s);
        (tape.scale(s, c), shift)
    }

    fn cond_var(&self, cond: Var, tape: &Tape) -> Option<Var> {
        (tape.shape(cond).1 > 0).then_some(cond)
    }

    /// Data to base direction for a batch: `y` is `B x d`, `cond` is `B x c`.
    ///
    /// Returns `z` and the per-row log-determinant (`B x 1`).
    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, y: Var, cond: Var) -> (Var, Var) {
        let h = self.split();
        let d = self.cfg.dim;
        let cond = self.cond_var(cond, tape);
        let mut x = y;
        let mut logdet: Option<Var> = None;
        for layer in &self.layers {
            x = tape.gather_cols(x, &self.perm);
            let kept = tape.slice_cols(x, 0, h);
            let moved = tape.slice_cols(x, h, d);
            let (s, t) = self.conditioner(tape, store, layer, kept, cond);
            let es = tape.exp(s);
            let scaled = tape.mul(moved, es);
            let out = tape.add(scaled, t);
            x = tape.concat_cols(&[kept, out]);
            let ld = tape.row_sums(s);
            logdet = Some(match logdet {
                Some(l) => tape.add(l, ld),
                None => ld,
            });
        }
        (x, logdet.expect("at least one layer"))
    }

    /// Base to data direction for a batch.
    pub fn inverse_tape(&self, tape: &mut Tape, store: &ParamStore, z: Var, cond: Var) -> Var {
        let h = self.split();
        let d = self.cfg.dim;
        let cond = self.cond_var(cond, tape);
        let mut x = z;
        for layer in self.layers.iter().rev() {
            let kept = tape.slice_cols(x, 0, h);
            let out = tape.slice_cols(x, h, d);
            let (s, t) = self.conditioner(tape, store, layer, kept, cond);
            let diff = tape.sub(out, t);
            let neg = tape.scale(s, -1.0);
            let ens = tape.exp(neg);
            let moved = tape.mul(diff, ens);
            let joined = tape.concat_cols(&[kept, moved]);
            x = tape.gather_cols(joined, &self.inv_perm);
        }
        x
    }

    /// Per-row log density, `B x 1`.
    pub fn log_prob_tape(&self, tape: &mut Tape, store: &ParamStore, y: Var, cond: Var) -> Var {
        let (z, logdet) = self.forward_tape(tape, store, y, cond);
        let sq = tape.square(z);
        let sq = tape.row_sums(sq);
        let base = tape.scale(sq, -0.5);
        let base = tape.add_scalar(base, -0.5 * self.cfg.dim as f64 * (2.0 * PI).ln());
        tape.add(base, logdet)
    }

    fn check_batch(&self, y: &Tensor, cond: &Tensor) -> Result<(), FlowError> {
        if y.cols() != self.cfg.dim {
            return Err(FlowError::Shape { expected: self.cfg.dim, found: y.cols() });
        }
        if cond.cols() != self.cfg.cond_dim {
            return Err(FlowError::Shape { expected: self.cfg.cond_dim, found: cond.cols() });
        }
        if cond.rows() != y.rows() {
            return Err(FlowError::Shape { expected: y.rows(), found: cond.rows() });
        }
        Ok(())
    }

    /// Checked batch forward pass: `(z, logdet per row)`.
    pub fn forward_batch(&self, store: &ParamStore, y: &Tensor, cond: &Tensor) -> Result<(Tensor, Vec<f64>), FlowError> {
        self.check_batch(y, cond)?;
        let mut tape = Tape::new();
        let yv = tape.constant(y.clone());
        let cv = tape.constant(cond.clone());
        let (z, ld) = self.forward_tape(&mut tape, store, yv, cv);
        if !(tape.value(z).is_finite() && tape.value(ld).is_finite()) {
            return Err(self.locate_non_finite_forward(store, y, cond));
        }
        Ok((tape.value(z).clone(), tape.value(ld).data().to_vec()))
    }

    pub fn inverse_batch(&self, store: &ParamStore, z: &Tensor, cond: &Tensor) -> Result<Tensor, FlowError> {
        self.check_batch(z, cond)?;
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let cv = tape.constant(cond.clone());
        let y = self.inverse_tape(&mut tape, store, zv, cv);
        let out = tape.value(y).clone();
        if !out.is_finite() {
            return Err(self.locate_non_finite_inverse(store, z, cond));
        }
        Ok(out)
    }

    /// Reruns growing prefixes of the stack to name the first layer producing a non-finite value.
    fn locate_non_finite_forward(&self, store: &ParamStore, y: &Tensor, cond: &Tensor) -> FlowError {
        let n = self.layers.len();
        let mut partial = self.clone();
        for k in 1..=n {
            partial.layers = self.layers[..k].to_vec();
            let mut tape = Tape::new();
            let yv = tape.constant(y.clone());
            let cv = tape.constant(cond.clone());
            let (z, ld) = partial.forward_tape(&mut tape, store, yv, cv);
            if !(tape.value(z).is_finite() && tape.value(ld).is_finite()) {
                return FlowError::NonFinite { layer: k - 1, direction: "normalizing" };
            }
        }
        FlowError::NonFinite { layer: n - 1, direction: "normalizing" }
    }

    fn locate_non_finite_inverse(&self, store: &ParamStore, z: &Tensor, cond: &Tensor) -> FlowError {
        let n = self.layers.len();
        let mut partial = self.clone();
        for k in 1..=n {
            // The inverse visits layers from last to first.
            partial.layers = self.layers[n - k..].to_vec();
            let mut tape = Tape::new();
            let zv = tape.constant(z.clone());
            let cv = tape.constant(cond.clone());
            let y = partial.inverse_tape(&mut tape, store, zv, cv);
            if !tape.value(y).is_finite() {
                return FlowError::NonFinite { layer: n - k, direction: "generative" };
            }
        }
        FlowError::NonFinite { layer: 0, direction: "generative" }
    }
}

fn row(v: &[f64]) -> Tensor {
    Tensor::row_vector(v.to_vec())
}

/// `z = F(y)` and `log|det dF/dy|`.
pub fn forward_normalize(y: &[f64], cond: &[f64], flow: &FlowStack, store: &ParamStore) -> Result<(Vec<f64>, f64), FlowError> {
    let (z, ld) = flow.forward_batch(store, &row(y), &row(cond))?;
    Ok((z.into_vec(), ld[0]))
}

pub fn inverse_generate(z: &[f64], cond: &[f64], flow: &FlowStack, store: &ParamStore) -> Result<Vec<f64>, FlowError> {
    Ok(flow.inverse_batch(store, &row(z), &row(cond))?.into_vec())
}

/// Standard normal log density.
pub fn base_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

pub fn log_prob(y: &[f64], cond: &[f64], flow: &FlowStack, store: &ParamStore) -> Result<f64, FlowError> {
    let (z, ld) = forward_normalize(y, cond, flow, store)?;
    Ok(base_log_density(&z) + ld)
}

/// Mean negative log-likelihood over `(y, cond)` pairs.
pub fn nll_loss(batch: &[(Vec<f64>, Vec<f64>)], flow: &FlowStack, store: &ParamStore) -> Result<f64, FlowError> {
    if batch.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    let ys: Vec<Vec<f64>> = batch.iter().map(|b| b.0.clone()).collect();
    let cs: Vec<Vec<f64>> = batch.iter().map(|b| b.1.clone()).collect();
    let (y, c) = (stack_rows(&ys, flow.dim())?, stack_rows(&cs, flow.cond_dim())?);
    let (z, ld) = flow.forward_batch(store, &y, &c)?;
    let total: f64 = (0..z.rows()).map(|r| base_log_density(z.row(r)) + ld[r]).sum();
    Ok(-total / batch.len() as f64)
}

/// Tape version of [`nll_loss`] for training; `y` is `B x d`, `cond` is `B x c`.
pub fn nll_loss_tape(tape: &mut Tape, flow: &FlowStack, store: &ParamStore, y: Var, cond: Var) -> Var {
    let n = tape.shape(y).0;
    let lp = flow.log_prob_tape(tape, store, y, cond);
    let s = tape.sum_all(lp);
    tape.scale(s, -1.0 / n as f64)
}

fn stack_rows(rows: &[Vec<f64>], cols: usize) -> Result<Tensor, FlowError> {
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        if r.len() != cols {
            return Err(FlowError::Shape { expected: cols, found: r.len() });
        }
        data.extend_from_slice(r);
    }
    Ok(Tensor::from_vec(rows.len(), cols, data))
}

/// Draws `count` standard-normal rows from a seeded generator.
pub fn standard_normal(count: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..count * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::from_vec(count, dim, data)
}

/// `count` samples `F^-1(z)` with `z` drawn under `seed`.
pub fn sample(cond: &[f64], flow: &FlowStack, store: &ParamStore, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, FlowError> {
    if count == 0 {
        return Err(FlowError::EmptyBatch);
    }
    if cond.len() != flow.cond_dim() {
        return Err(FlowError::Shape { expected: flow.cond_dim(), found: cond.len() });
    }
    let z = standard_normal(count, flow.dim(), seed);
    let c = Tensor::from_vec(count, cond.len(), cond.iter().copied().cycle().take(count * cond.len()).collect());
    Ok(flow.inverse_batch(store, &z, &c)?.to_rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::grad_check;

    fn build(dim: usize, cond: usize, layers: usize, init: FlowInit, seed: u64) -> (FlowStack, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = FlowConfig {
            layers,
            hidden: 16,
            init,
            ..FlowConfig::new(dim, cond)
        };
        (FlowStack::new(&mut store, "flow", cfg, &mut rng).unwrap(), store)
    }

    #[test]
    fn identity_stack_permutes_and_has_zero_logdet() {
        let (flow, store) = build(3, 2, 3, FlowInit::Identity, 0);
        let (z, ld) = forward_normalize(&[1.0, 2.0, 3.0], &[0.5, -0.5], &flow, &store).unwrap();
        assert_eq!(z, vec![3.0, 2.0, 1.0]);
        assert_eq!(ld, 0.0);
        let y = inverse_generate(&[3.0, 2.0, 1.0], &[0.5, -0.5], &flow, &store).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
        let (flow, store) = build(2, 0, 2, FlowInit::Identity, 0);
        let lp = log_prob(&[0.0, 0.0], &[], &flow, &store).unwrap();
        assert!((lp + (2.0 * PI).ln()).abs() < 1e-15);
        assert_eq!(log_prob(&[0.3, -1.2], &[], &flow, &store).unwrap(), base_log_density(&[0.3, -1.2]));
    }

    #[test]
    fn round_trip_and_logdet_consistency() {
        let (flow, store) = build(5, 3, 4, FlowInit::Random(0.5), 3);
        let y = [0.3, -1.0, 2.0, 0.1, -0.4];
        let c = [1.0, 0.0, -2.0];
        let (z, ld) = forward_normalize(&y, &c, &flow, &store).unwrap();
        assert!(ld != 0.0);
        let back = inverse_generate(&z, &c, &flow, &store).unwrap();
        assert!(y.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
        let (_, ld_inv) = forward_normalize(&back, &c, &flow, &store).unwrap();
        assert!((ld - ld_inv).abs() < 1e-8);
        let (z2, _) = forward_normalize(&y, &[0.0, 1.0, 1.0], &flow, &store).unwrap();
        assert_ne!(z, z2);
    }

    #[test]
    fn errors() {
        let (flow, store) = build(2, 1, 2, FlowInit::Identity, 0);
        assert_eq!(forward_normalize(&[1.0], &[0.0], &flow, &store), Err(FlowError::Shape { expected: 2, found: 1 }));
        assert_eq!(nll_loss(&[], &flow, &store), Err(FlowError::EmptyBatch));
        assert!(FlowConfig::new(1, 0).validate().is_err());
        let mut bad = store.clone();
        let id = bad.id("flow.1.out.b").unwrap();
        bad.value_mut(id).fill(f64::NAN);
        assert_eq!(
            forward_normalize(&[1.0, 1.0], &[0.0], &flow, &bad),
            Err(FlowError::NonFinite { layer: 1, direction: "normalizing" })
        );
        assert_eq!(
            inverse_generate(&[1.0, 1.0], &[0.0], &flow, &bad),
            Err(FlowError::NonFinite { layer: 1, direction: "generative" })
        );
    }

    #[test]
    fn nll_is_mean_of_negative_log_prob() {
        let (flow, store) = build(2, 1, 2, FlowInit::Random(0.3), 9);
        let a = (vec![0.1, 0.2], vec![1.0]);
        let b = (vec![-1.0, 0.5], vec![-1.0]);
        let one = nll_loss(&[a.clone()], &flow, &store).unwrap();
        assert!((one + log_prob(&a.0, &a.1, &flow, &store).unwrap()).abs() < 1e-12);
        let two = nll_loss(&[a.clone(), b.clone()], &flow, &store).unwrap();
        let four = nll_loss(&[a.clone(), b.clone(), a, b], &flow, &store).unwrap();
        assert!((two - four).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_seeded() {
        let (flow, store) = build(3, 1, 2, FlowInit::Random(0.3), 2);
        let a = sample(&[0.5], &flow, &store, 6, 11).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, sample(&[0.5], &flow, &store, 6, 11).unwrap());
        assert_ne!(a, sample(&[0.5], &flow, &store, 6, 12).unwrap());
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        let (flow, mut store) = build(4, 2, 3, FlowInit::Random(0.5), 5);
        let y = Tensor::from_vec(3, 4, vec![0.1, -0.3, 0.8, 1.2, -1.0, 0.4, 0.0, 0.3, 0.5, 0.5, -0.7, -0.2]);
        let c = Tensor::from_vec(3, 2, vec![0.2, -0.1, 1.0, 0.3, -0.5, 0.9]);
        let report = grad_check(&mut store, 1e-4, |tape, store| {
            let yv = tape.constant(y.clone());
            let cv = tape.constant(c.clone());
            nll_loss_tape(tape, &flow, store, yv, cv)
        });
        assert!(report.pass, "{report:?}");
    }
}
