use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::autoencoder::Autoencoder;
use super::batch::SceneBatch;
use super::context::ContextEncoder;
use super::{GmopVariant, ModelError};
use crate::flow::{FlowConfig, FlowInit, FlowStack};
use crate::graphs::{
    euclidean_graph, graph_from_pair_probs, independence_graph, predicted_graph, topological_order, ClassifierNet, GraphStrategy,
    InteractionClassifier, InteractionGraph,
};
use crate::neural::{ParamStore, Tape, Tensor, Var};
use crate::scene::{ObservedScene, Scene};

/// Trainable part of GMoP: context encoder, conditional flow and, for the
/// no-heuristic variant, an end-to-end pair classifier.
#[derive(Debug, Clone)]
pub struct GmopModel {
    pub variant: GmopVariant,
    pub store: ParamStore,
    pub context: ContextEncoder,
    pub flow: FlowStack,
    pub classifier: Option<ClassifierNet>,
}

impl GmopModel {
    pub const PREFIX: &'static str = "gmop";

    pub fn new(variant: GmopVariant) -> Result<Self, ModelError> {
        let cfg = &variant.config;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let p = Self::PREFIX;
        let context = ContextEncoder::new(&mut store, &format!("{p}.ctx"), cfg, &mut rng);
        let flow_cfg = FlowConfig {
            layers: cfg.flow_layers,
            hidden: cfg.flow_hidden,
            log_scale_clamp: cfg.log_scale_clamp,
            init: FlowInit::Identity,
            ..FlowConfig::new(cfg.latent_dim, cfg.context_dim + cfg.latent_dim)
        };
        let flow = FlowStack::new(&mut store, &format!("{p}.flow"), flow_cfg, &mut rng)?;
        let classifier = (variant.strategy == GraphStrategy::NoHeuristic)
            .then(|| ClassifierNet::new(&mut store, &format!("{p}.inter"), cfg.classifier_enc_dim, cfg.classifier_embed_dim, &mut rng));
        Ok(Self {
            variant,
            store,
            context,
            flow,
            classifier,
        })
    }

    pub fn strategy(&self) -> GraphStrategy {
        self.variant.strategy
    }

    pub fn latent_dim(&self) -> usize {
        self.flow.dim()
    }

    /// Whether parent latents are pooled with edge weights rather than plainly summed.
    pub fn weighted_pooling(&self) -> bool {
        self.classifier.is_some()
    }

    /// Interaction graph from observed pasts only.
    pub fn graph_for(&self, scene: &ObservedScene, pretrained: Option<&InteractionClassifier>) -> Result<InteractionGraph, ModelError> {
        Ok(match self.strategy() {
            GraphStrategy::Independence => independence_graph(scene.ids()),
            GraphStrategy::Euclidean => euclidean_graph(scene, self.variant.config.euclidean_eps_m)?,
            GraphStrategy::NoHeuristic => {
                let net = self.classifier.as_ref().expect("no-heuristic model owns a classifier");
                let probs = if scene.n_agents() < 2 {
                    Vec::new()
                } else {
                    let pairs = crate::graphs::all_pairs(scene.n_agents());
                    let mut tape = Tape::new();
                    let p = net.pair_probs(&mut tape, &self.store, scene, &pairs);
                    let t = tape.value(p);
                    (0..t.rows()).map(|r| [t.get(r, 0), t.get(r, 1), t.get(r, 2)]).collect()
                };
                graph_from_pair_probs(scene.ids(), &probs)
            }
            s => {
                let clf = pretrained.ok_or_else(|| ModelError::MissingArtifact(format!("pretrained interaction classifier for {s}")))?;
                predicted_graph(scene, clf)
            }
        })
    }

    /// Edge weights on the tape, `E x 1`: class probabilities of the
    /// end-to-end classifier, or `None` to use the stored graph weights.
    pub(crate) fn edge_weights(&self, tape: &mut Tape, store: &ParamStore, batch: &SceneBatch) -> Option<Var> {
        let net = self.classifier.as_ref()?;
        if batch.edges.is_empty() {
            return None;
        }
        let probs = net.pair_probs(tape, store, &batch.merged, &batch.pairs);
        let rows: Vec<usize> = batch.edges.iter().map(|e| e.pair_row).collect();
        let picked = tape.gather_rows(probs, &rows);
        let mut mask = Tensor::zeros(batch.edges.len(), 3);
        for (r, e) in batch.edges.iter().enumerate() {
            mask.set(r, e.class, 1.0);
        }
        let mask = tape.constant(mask);
        let sel = tape.mul(picked, mask);
        Some(tape.row_sums(sel))
    }

    /// Per-agent log-likelihood of `latents` (`N x L`) under teacher forcing, `N x 1`.
    pub(crate) fn log_prob_tape(&self, tape: &mut Tape, store: &ParamStore, batch: &SceneBatch, latents: &Tensor) -> Var {
        let weights = self.edge_weights(tape, store, batch);
        let c = self.context.forward(tape, store, batch, weights);
        let y = tape.constant(latents.clone());
        let pooled = self.pool(tape, batch, y, weights);
        let cond = tape.concat_cols(&[c, pooled]);
        self.flow.log_prob_tape(tape, store, y, cond)
    }

    /// Sum of parent rows of `y` per agent, `N x L`.
    fn pool(&self, tape: &mut Tape, batch: &SceneBatch, y: Var, weights: Option<Var>) -> Var {
        if batch.edges.is_empty() {
            return tape.constant(Tensor::zeros(batch.n, self.latent_dim()));
        }
        let srcs: Vec<usize> = batch.edges.iter().map(|e| e.src).collect();
        let dsts: Vec<usize> = batch.edges.iter().map(|e| e.dst).collect();
        let rows = tape.gather_rows(y, &srcs);
        let rows = match (self.weighted_pooling(), weights) {
            (true, Some(w)) => tape.scale_rows(rows, w),
            (true, None) => {
                let w = tape.constant(Tensor::from_vec(batch.edges.len(), 1, batch.edges.iter().map(|e| e.weight).collect()));
                tape.scale_rows(rows, w)
            }
            (false, _) => rows,
        };
        tape.scatter_add_rows(rows, &dsts, batch.n)
    }

    /// Factor applied to a parent latent with graph weight `graph_weight` when pooling.
    pub fn pool_weight(&self, graph_weight: f64) -> f64 {
        if self.weighted_pooling() {
            graph_weight
        } else {
            1.0
        }
    }

    /// Summed negative log-likelihood over every agent of a batch, `1 x 1`.
    pub(crate) fn batch_nll_tape(&self, tape: &mut Tape, store: &ParamStore, batch: &SceneBatch, latents: &Tensor) -> Var {
        let lp = self.log_prob_tape(tape, store, batch, latents);
        let total = tape.sum_all(lp);
        tape.scale(total, -1.0)
    }

    /// [`joint_scene_nll`] recorded on `tape` against `store`, which must share
    /// this model's layout (for gradient checks).
    pub fn joint_nll_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        scene: &Scene,
        graph: &InteractionGraph,
        autoencoder: &Autoencoder,
    ) -> Result<Var, ModelError> {
        topological_order(graph)?;
        if autoencoder.latent_dim() != self.latent_dim() {
            return Err(ModelError::Config(format!(
                "autoencoder latent size {} differs from flow size {}",
                autoencoder.latent_dim(),
                self.latent_dim()
            )));
        }
        let observed = scene.observed();
        let batch = SceneBatch::new(&[(&observed, graph)])?;
        let latents = autoencoder.scene_latents(scene);
        Ok(self.batch_nll_tape(tape, store, &batch, &latents))
    }
}

/// `-log p(Y | C)` of the scene's ground-truth futures, factorized along `graph`.
///
/// Each agent is conditioned on its context vector and the sum of its
/// parents' abstracted futures.
pub fn joint_scene_nll(scene: &Scene, graph: &InteractionGraph, model: &GmopModel, autoencoder: &Autoencoder) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let nll = model.joint_nll_tape(&mut tape, &model.store, scene, graph, autoencoder)?;
    Ok(tape.scalar(nll))
}
