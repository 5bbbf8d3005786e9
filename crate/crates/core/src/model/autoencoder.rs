use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::neural::{Activation, Dense, GruCell, GruDecoder, ParamId, ParamStore, Tape, Tensor, Var};
use crate::scene::{normalized_velocities, Agent, Scene, VELOCITY_SCALE_MPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub hidden: usize,
    pub latent_dim: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            latent_dim: 16,
            steps: 2000,
            batch_size: 32,
            lr: 3e-3,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.latent_dim < 2 || self.batch_size == 0 {
            return Err(ModelError::Config("autoencoder sizes must be positive, latent_dim at least 2".into()));
        }
        if !(self.lr > 0.0 && self.grad_clip > 0.0) {
            return Err(ModelError::Config("autoencoder lr and grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// GRU sequence autoencoder over normalized future velocities.
///
/// Latents handed to the flow are standardized with training-set statistics
/// kept as buffers.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub store: ParamStore,
    pub config: AutoencoderConfig,
    encoder: GruCell,
    to_latent: Dense,
    from_latent: Dense,
    decoder: GruDecoder,
    lat_mean: ParamId,
    lat_std: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderReport {
    /// `(step, minibatch loss)` every 50 steps and at the last step.
    pub curve: Vec<(usize, f64)>,
    /// Mean per-step displacement error in meters on the evaluation scenes.
    pub reconstruction_error_m: f64,
}

/// Normalized velocities of an agent's future, starting from its last observed point.
pub fn future_velocities(agent: &Agent, dt: f64) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(agent.future.len() + 1);
    pts.push(agent.past.last().expect("validated past"));
    pts.extend_from_slice(&agent.future.positions);
    normalized_velocities(&pts, dt)
}

fn step_inputs(tape: &mut Tape, seqs: &[&[[f64; 2]]]) -> Vec<Var> {
    let steps = seqs[0].len();
    (0..steps)
        .map(|t| tape.constant(Tensor::from_vec(seqs.len(), 2, seqs.iter().flat_map(|s| s[t]).collect())))
        .collect()
}

impl Autoencoder {
    pub const PREFIX: &'static str = "ae";

    pub fn new(config: AutoencoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let p = Self::PREFIX;
        let (h, l) = (config.hidden, config.latent_dim);
        let encoder = GruCell::new(&mut store, &format!("{p}.enc"), 2, h, &mut rng);
        let to_latent = Dense::new(&mut store, &format!("{p}.to_latent"), h, l, Activation::Identity, &mut rng);
        let from_latent = Dense::new(&mut store, &format!("{p}.from_latent"), l, h, Activation::Tanh, &mut rng);
        let decoder = GruDecoder::new(&mut store, &format!("{p}.dec"), h, &mut rng);
        let lat_mean = store.add_buffer(format!("{p}.lat_mean"), Tensor::zeros(1, l));
        let lat_std = store.add_buffer(format!("{p}.lat_std"), Tensor::filled(1, l, 1.0));
        Self {
            store,
            config,
            encoder,
            to_latent,
            from_latent,
            decoder,
            lat_mean,
            lat_std,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Unstandardized latents, `B x L`.
    fn encode_raw(&self, tape: &mut Tape, seqs: &[&[[f64; 2]]]) -> Var {
        let steps = step_inputs(tape, seqs);
        let h = self.encoder.encode(tape, &self.store, &steps);
        self.to_latent.forward(tape, &self.store, h)
    }

    fn decode_raw(&self, tape: &mut Tape, latents: Var, steps: usize) -> Vec<Var> {
        let h0 = self.from_latent.forward(tape, &self.store, latents);
        self.decoder.decode(tape, &self.store, h0, steps)
    }

    /// Standardized latents of normalized velocity sequences, `B x L`.
    pub fn latents(&self, seqs: &[Vec<[f64; 2]>]) -> Tensor {
        let refs: Vec<&[[f64; 2]]> = seqs.iter().map(|s| s.as_slice()).collect();
        let mut tape = Tape::new();
        let raw = self.encode_raw(&mut tape, &refs);
        let mean = self.store.value(self.lat_mean);
        let std = self.store.value(self.lat_std);
        let mut out = tape.value(raw).clone();
        for r in 0..out.rows() {
            for (k, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean.get(0, k)) / std.get(0, k);
            }
        }
        out
    }

    /// Standardized latents of every agent future in `scene`, `n_A x L`.
    pub fn scene_latents(&self, scene: &Scene) -> Tensor {
        let dt = scene.dt();
        let seqs: Vec<Vec<[f64; 2]>> = scene.agents.iter().map(|a| future_velocities(a, dt)).collect();
        self.latents(&seqs)
    }

    /// Decodes standardized latents (`B x L`) into `steps` normalized velocities each.
    pub fn decode(&self, latents: &Tensor, steps: usize) -> Vec<Vec<[f64; 2]>> {
        let mean = self.store.value(self.lat_mean);
        let std = self.store.value(self.lat_std);
        let mut raw = latents.clone();
        for r in 0..raw.rows() {
            for (k, v) in raw.row_mut(r).iter_mut().enumerate() {
                *v = *v * std.get(0, k) + mean.get(0, k);
            }
        }
        let mut tape = Tape::new();
        let z = tape.constant(raw);
        let outs = self.decode_raw(&mut tape, z, steps);
        (0..latents.rows())
            .map(|r| {
                outs.iter()
                    .map(|&o| {
                        let row = tape.value(o).row(r);
                        [row[0], row[1]]
                    })
                    .collect()
            })
            .collect()
    }

    /// Encode then decode, preserving length.
    pub fn reconstruct(&self, seqs: &[Vec<[f64; 2]>]) -> Vec<Vec<[f64; 2]>> {
        if seqs.is_empty() {
            return Vec::new();
        }
        self.decode(&self.latents(seqs), seqs[0].len())
    }

    /// Mean squared error over a batch, on the tape.
    fn loss_tape(&self, tape: &mut Tape, seqs: &[&[[f64; 2]]]) -> Var {
        let z = self.encode_raw(tape, seqs);
        let outs = self.decode_raw(tape, z, seqs[0].len());
        let targets = step_inputs(tape, seqs);
        let mut terms = Vec::with_capacity(outs.len());
        for (o, t) in outs.into_iter().zip(targets) {
            let d = tape.sub(o, t);
            let sq = tape.square(d);
            terms.push(tape.sum_all(sq));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t);
        }
        tape.scale(total, 1.0 / (seqs.len() * seqs[0].len() * 2) as f64)
    }

    fn fit_latent_stats(&mut self, seqs: &[Vec<[f64; 2]>]) {
        let l = self.latent_dim();
        let mut sum = vec![0.0; l];
        let mut sq = vec![0.0; l];
        for chunk in seqs.chunks(256) {
            let refs: Vec<&[[f64; 2]]> = chunk.iter().map(|s| s.as_slice()).collect();
            let mut tape = Tape::new();
            let raw = self.encode_raw(&mut tape, &refs);
            let t = tape.value(raw);
            for r in 0..t.rows() {
                for (k, v) in t.row(r).iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
        }
        let n = seqs.len() as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / n - m * m).max(0.0).sqrt();
                if s > 1e-6 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        *self.store.value_mut(self.lat_mean) = Tensor::row_vector(mean);
        *self.store.value_mut(self.lat_std) = Tensor::row_vector(std);
    }

    /// Mean per-step displacement error in meters over the agent futures of `scenes`.
    pub fn reconstruction_error_m(&self, scenes: &[Scene]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in scenes {
            let dt = s.dt();
            let seqs: Vec<Vec<[f64; 2]>> = s.agents.iter().map(|a| future_velocities(a, dt)).collect();
            for (orig, rec) in seqs.iter().zip(self.reconstruct(&seqs)) {
                for (a, b) in orig.iter().zip(&rec) {
                    total += ((a[0] - b[0]).hypot(a[1] - b[1])) * VELOCITY_SCALE_MPS * dt;
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
}

/// Trains the autoencoder on every agent future of `train`.
///
/// The reconstruction error is measured on `heldout`, or on `train` when
/// `heldout` is empty.
pub fn pretrain_autoencoder(
    train: &[Scene],
    heldout: &[Scene],
    config: &AutoencoderConfig,
) -> Result<(Autoencoder, AutoencoderReport), ModelError> {
    config.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyData("autoencoder training set"));
    }
    let seqs: Vec<Vec<[f64; 2]>> = train
        .iter()
        .flat_map(|s| {
            let dt = s.dt();
            s.agents.iter().map(move |a| future_velocities(a, dt))
        })
        .collect();
    let horizon = seqs[0].len();
    if seqs.iter().any(|s| s.len() != horizon) {
        return Err(ModelError::Config("all training scenes must share the future horizon".into()));
    }
    let mut ae = Autoencoder::new(config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut curve = Vec::new();
    let mut last_good = ae.store.clone();
    for step in 0..config.steps {
        let batch: Vec<&[[f64; 2]]> = (0..config.batch_size.min(seqs.len()))
            .map(|_| seqs[rng.random_range(0..seqs.len())].as_slice())
            .collect();
        let mut tape = Tape::new();
        let loss = ae.loss_tape(&mut tape, &batch);
        let value = tape.scalar(loss);
        let diverged = |store: ParamStore| ModelError::Divergence {
            stage: "autoencoder pretraining",
            epoch: 0,
            step,
            checkpoint: Some(Box::new(store)),
        };
        if !value.is_finite() {
            return Err(diverged(last_good));
        }
        tape.backward(loss);
        ae.store.accumulate(&tape);
        ae.store.clip_grad_norm(config.grad_clip);
        if ae
            .store
            .adam_like_step(config.lr, (0.9, 0.999), 1e-8)
            .is_err()
        {
            return Err(diverged(last_good));
        }
        if step % 50 == 0 || step + 1 == config.steps {
            curve.push((step, value));
            log::debug!("autoencoder step {step}: loss {value:.6}");
            last_good = ae.store.clone();
        }
    }
    ae.fit_latent_stats(&seqs);
    let eval = if heldout.is_empty() { train } else { heldout };
    let reconstruction_error_m = ae.reconstruction_error_m(eval);
    log::info!("autoencoder reconstruction error {reconstruction_error_m:.4} m");
    Ok((
        ae,
        AutoencoderReport {
            curve,
            reconstruction_error_m,
        },
    ))
}
