use rand::Rng;

use super::batch::SceneBatch;
use super::joint::GmopModel;
use super::{ModelConfig, ModelError};
use crate::graphs::InteractionGraph;
use crate::neural::{Activation, Dense, GruCell, ParamStore, Tape, Tensor, Var};
use crate::scene::{ObservedScene, VELOCITY_SCALE_MPS};

/// Past encoder followed by weighted message passing over graph edges.
///
/// `s = tanh(W [h; kind])`; per round, an edge `u -> v` with weight `w`
/// sends `w * tanh(M [s_u; (x_u - x_v) / 10])` and each agent updates with
/// `s = tanh(U [s; sum of incoming])`.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    past: GruCell,
    self_layer: Dense,
    messages: Vec<Dense>,
    updates: Vec<Dense>,
    dim: usize,
}

impl ContextEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let (h, c) = (cfg.past_hidden, cfg.context_dim);
        let past = GruCell::new(store, &format!("{prefix}.past"), 2, h, rng);
        let self_layer = Dense::new(store, &format!("{prefix}.self"), h + 4, c, Activation::Tanh, rng);
        let mut messages = Vec::new();
        let mut updates = Vec::new();
        for r in 0..cfg.rounds {
            messages.push(Dense::new(store, &format!("{prefix}.msg{r}"), c + 2, c, Activation::Tanh, rng));
            updates.push(Dense::new(store, &format!("{prefix}.upd{r}"), 2 * c, c, Activation::Tanh, rng));
        }
        Self {
            past,
            self_layer,
            messages,
            updates,
            dim: c,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Context vectors for every batch agent, `N x C`; `weights` is `E x 1` in edge order.
    pub(crate) fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &SceneBatch, weights: Option<Var>) -> Var {
        let steps: Vec<Var> = batch.past_steps.iter().map(|t| tape.constant(t.clone())).collect();
        let h = self.past.encode(tape, store, &steps);
        let kinds = tape.constant(batch.kinds.clone());
        let x = tape.concat_cols(&[h, kinds]);
        let mut s = self.self_layer.forward(tape, store, x);
        let srcs: Vec<usize> = batch.edges.iter().map(|e| e.src).collect();
        let dsts: Vec<usize> = batch.edges.iter().map(|e| e.dst).collect();
        let rel = (!batch.edges.is_empty()).then(|| {
            let data = batch
                .edges
                .iter()
                .flat_map(|e| {
                    let (a, b) = (batch.positions.row(e.src), batch.positions.row(e.dst));
                    [(a[0] - b[0]) / VELOCITY_SCALE_MPS, (a[1] - b[1]) / VELOCITY_SCALE_MPS]
                })
                .collect();
            Tensor::from_vec(batch.edges.len(), 2, data)
        });
        let weights = weights.or_else(|| {
            (!batch.edges.is_empty()).then(|| tape.constant(Tensor::from_vec(batch.edges.len(), 1, batch.edges.iter().map(|e| e.weight).collect())))
        });
        for (msg, upd) in self.messages.iter().zip(&self.updates) {
            let agg = match (&rel, weights) {
                (Some(rel), Some(w)) => {
                    let from = tape.gather_rows(s, &srcs);
                    let rel = tape.constant(rel.clone());
                    let input = tape.concat_cols(&[from, rel]);
                    let m = msg.forward(tape, store, input);
                    let m = tape.scale_rows(m, w);
                    tape.scatter_add_rows(m, &dsts, batch.n)
                }
                _ => tape.constant(Tensor::zeros(batch.n, self.dim)),
            };
            let input = tape.concat_cols(&[s, agg]);
            s = upd.forward(tape, store, input);
        }
        s
    }
}

/// Context vector of every agent of `scene` under `graph`, one row per agent in scene order.
pub fn encode_context(scene: &ObservedScene, graph: &InteractionGraph, model: &GmopModel) -> Result<Vec<Vec<f64>>, ModelError> {
    let batch = SceneBatch::new(&[(scene, graph)])?;
    let mut tape = Tape::new();
    let weights = model.edge_weights(&mut tape, &model.store, &batch);
    let c = model.context.forward(&mut tape, &model.store, &batch, weights);
    Ok(tape.value(c).to_rows())
}
