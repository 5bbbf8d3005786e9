//! Learned pair classifier: a GRU over each past, pair features, an
//! embedding layer and a three-way softmax.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{dagify, Edge, GraphError, InteractionClass, InteractionGraph, InteractionLabel};
use crate::geom::approach_angle;
use crate::neural::{load_into, save_params, Activation, Dense, GruCell, ParamId, ParamStore, Tape, Tensor, Var};
use crate::scene::{normalized_velocities, AgentId, ObservedScene};

pub const PAIR_ENC_DIM: usize = 32;
pub const EMBED_DIM: usize = 64;
const STATIC_DIM: usize = 2 * 4 + 2 + 1;

pub fn feature_dim(enc_dim: usize) -> usize {
    2 * enc_dim + STATIC_DIM
}

/// Unordered index pairs `(i, j)` with `i < j`.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Parameter handles of the classifier inside some [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ClassifierNet {
    pub encoder: GruCell,
    pub em: Dense,
    pub cl: Dense,
    /// Per-feature standardization, `1 x f` each (buffers).
    pub feat_mean: ParamId,
    pub feat_std: ParamId,
    enc_dim: usize,
}

impl ClassifierNet {
    pub fn new<R: rand::Rng + ?Sized>(store: &mut ParamStore, prefix: &str, enc_dim: usize, embed_dim: usize, rng: &mut R) -> Self {
        let f = feature_dim(enc_dim);
        Self {
            encoder: GruCell::new(store, &format!("{prefix}.enc"), 2, enc_dim, rng),
            em: Dense::new(store, &format!("{prefix}.em"), f, embed_dim, Activation::Tanh, rng),
            cl: Dense::new(store, &format!("{prefix}.cl"), embed_dim, 3, Activation::Identity, rng),
            feat_mean: store.add_buffer(format!("{prefix}.feat_mean"), Tensor::zeros(1, f)),
            feat_std: store.add_buffer(format!("{prefix}.feat_std"), Tensor::filled(1, f, 1.0)),
            enc_dim,
        }
    }

    pub fn enc_dim(&self) -> usize {
        self.enc_dim
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.enc_dim)
    }

    /// Final GRU state for every agent's past, `n_A x enc_dim`.
    pub fn encode_pasts(&self, tape: &mut Tape, store: &ParamStore, scene: &ObservedScene) -> Var {
        let vels: Vec<Vec<[f64; 2]>> = scene.agents.iter().map(|a| normalized_velocities(&a.past.positions, scene.dt)).collect();
        let steps: Vec<Var> = (0..vels[0].len())
            .map(|t| {
                let data = vels.iter().flat_map(|v| v[t]).collect();
                tape.constant(Tensor::from_vec(vels.len(), 2, data))
            })
            .collect();
        self.encoder.encode(tape, store, &steps)
    }

    /// Unstandardized features for ordered pairs `(m, n)` of scene indices, `P x f`.
    pub fn pair_features_tape(&self, tape: &mut Tape, scene: &ObservedScene, enc: Var, pairs: &[(usize, usize)]) -> Var {
        let ms: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let ns: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let em = tape.gather_rows(enc, &ms);
        let en = tape.gather_rows(enc, &ns);
        let stat = tape.constant(static_features(scene, pairs));
        tape.concat_cols(&[em, en, stat])
    }

    /// Class probabilities for raw features, `P x 3`.
    pub fn probs_from_features(&self, tape: &mut Tape, store: &ParamStore, feats: Var) -> Var {
        let rows = tape.shape(feats).0;
        let mean = store.value(self.feat_mean);
        let inv_std = store.value(self.feat_std).map(|s| 1.0 / s);
        let neg_mean = tape.constant(mean.map(|m| -m));
        let centered = tape.add_row(feats, neg_mean);
        let scale = tape.constant(inv_std);
        let scale = tape.broadcast_rows(scale, rows);
        let x = tape.mul(centered, scale);
        let h = self.em.forward(tape, store, x);
        let logits = self.cl.forward(tape, store, h);
        tape.softmax_rows(logits)
    }

    pub fn pair_probs(&self, tape: &mut Tape, store: &ParamStore, scene: &ObservedScene, pairs: &[(usize, usize)]) -> Var {
        let enc = self.encode_pasts(tape, store, scene);
        let feats = self.pair_features_tape(tape, scene, enc, pairs);
        self.probs_from_features(tape, store, feats)
    }

    /// Sets standardization from the static features of all ordered pairs in `scenes`.
    ///
    /// Encoder outputs are already bounded and keep mean 0, std 1.
    pub fn fit_standardization(&self, store: &mut ParamStore, scenes: &[ObservedScene]) {
        let f = self.feature_dim();
        let off = 2 * self.enc_dim;
        let mut sum = vec![0.0; STATIC_DIM];
        let mut sq = vec![0.0; STATIC_DIM];
        let mut count = 0usize;
        for s in scenes {
            let pairs = ordered_pairs(s.n_agents());
            if pairs.is_empty() {
                continue;
            }
            let t = static_features(s, &pairs);
            for r in 0..t.rows() {
                for (k, v) in t.row(r).iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            count += t.rows();
        }
        let mut mean = Tensor::zeros(1, f);
        let mut std = Tensor::filled(1, f, 1.0);
        if count > 0 {
            for k in 0..STATIC_DIM {
                let m = sum[k] / count as f64;
                let var = (sq[k] / count as f64 - m * m).max(0.0);
                mean.set(0, off + k, m);
                std.set(0, off + k, if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 });
            }
        }
        *store.value_mut(self.feat_mean) = mean;
        *store.value_mut(self.feat_std) = std;
    }
}

/// Both orderings of every unordered pair.
pub(crate) fn ordered_pairs(n: usize) -> Vec<(usize, usize)> {
    all_pairs(n).into_iter().flat_map(|(i, j)| [(i, j), (j, i)]).collect()
}

/// One-hot kinds of m and n, the distance vector `x_m - x_n`, and the approach angle.
fn static_features(scene: &ObservedScene, pairs: &[(usize, usize)]) -> Tensor {
    let mut out = Tensor::zeros(pairs.len(), STATIC_DIM);
    for (r, &(m, n)) in pairs.iter().enumerate() {
        let (a, b) = (&scene.agents[m], &scene.agents[n]);
        let d = a.last_position() - b.last_position();
        let alpha = approach_angle(d, a.last_displacement()).value;
        let row = out.row_mut(r);
        row[..4].copy_from_slice(&a.kind.one_hot());
        row[4..8].copy_from_slice(&b.kind.one_hot());
        row[8] = d.x;
        row[9] = d.y;
        row[10] = alpha;
    }
    out
}

/// A classifier together with its own parameters.
#[derive(Debug, Clone)]
pub struct InteractionClassifier {
    pub store: ParamStore,
    pub net: ClassifierNet,
}

impl InteractionClassifier {
    pub const PREFIX: &'static str = "inter";

    pub fn new(enc_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = ClassifierNet::new(&mut store, Self::PREFIX, enc_dim, embed_dim, &mut rng);
        Self { store, net }
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        Ok(save_params(&self.store, path)?)
    }

    pub fn load(path: &Path, enc_dim: usize, embed_dim: usize) -> Result<Self, GraphError> {
        let mut clf = Self::new(enc_dim, embed_dim, 0);
        load_into(&mut clf.store, path)?;
        Ok(clf)
    }

    /// Class probabilities for the unordered pairs of `scene`, in [`all_pairs`] order.
    pub fn scene_probs(&self, scene: &ObservedScene) -> Vec<[f64; 3]> {
        let pairs = all_pairs(scene.n_agents());
        if pairs.is_empty() {
            return Vec::new();
        }
        let mut tape = Tape::new();
        let p = self.net.pair_probs(&mut tape, &self.store, scene, &pairs);
        let t = tape.value(p);
        (0..t.rows()).map(|r| [t.get(r, 0), t.get(r, 1), t.get(r, 2)]).collect()
    }
}

pub fn pair_features(scene: &ObservedScene, m: AgentId, n: AgentId, clf: &InteractionClassifier) -> Result<Vec<f64>, GraphError> {
    if m == n {
        return Err(GraphError::SameAgent(m));
    }
    let im = scene.index_of(m).ok_or(GraphError::UnknownAgent(m))?;
    let in_ = scene.index_of(n).ok_or(GraphError::UnknownAgent(n))?;
    let mut tape = Tape::new();
    let enc = clf.net.encode_pasts(&mut tape, &clf.store, scene);
    let f = clf.net.pair_features_tape(&mut tape, scene, enc, &[(im, in_)]);
    Ok(tape.value(f).data().to_vec())
}

pub fn classify_pair(features: &[f64], clf: &InteractionClassifier) -> Result<InteractionLabel, GraphError> {
    let f = clf.net.feature_dim();
    if features.len() != f {
        return Err(GraphError::Shape {
            expected: f,
            found: features.len(),
        });
    }
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row_vector(features.to_vec()));
    let p = clf.net.probs_from_features(&mut tape, &clf.store, x);
    let d = tape.value(p).data();
    Ok(InteractionLabel::from_probs([d[0], d[1], d[2]]))
}

/// Argmax-directed edges weighted by the winning probability, made acyclic.
pub fn predicted_graph(scene: &ObservedScene, clf: &InteractionClassifier) -> InteractionGraph {
    graph_from_pair_probs(scene.ids(), &clf.scene_probs(scene))
}

/// Graph from class probabilities of the unordered pairs of `ids`, in [`all_pairs`] order.
///
/// Panics if `probs` does not have one entry per pair.
pub fn graph_from_pair_probs(ids: Vec<AgentId>, probs: &[[f64; 3]]) -> InteractionGraph {
    let pairs = all_pairs(ids.len());
    assert_eq!(pairs.len(), probs.len(), "one probability triple per pair");
    let edges = pairs
        .into_iter()
        .zip(probs)
        .filter_map(|((i, j), &p)| {
            let label = InteractionLabel::from_probs(p);
            let weight = label.probs[label.class.index()];
            match label.class {
                InteractionClass::NoInteraction => None,
                InteractionClass::MInfluencesN => Some(Edge { src: ids[i], dst: ids[j], weight }),
                InteractionClass::NInfluencesM => Some(Edge { src: ids[j], dst: ids[i], weight }),
            }
        })
        .collect();
    dagify(&InteractionGraph::from_edges(ids, edges).expect("one edge per unordered pair"))
}
