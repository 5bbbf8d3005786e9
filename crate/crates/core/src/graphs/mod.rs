//! Interaction labels and graphs: heuristics, the learned pair classifier,
//! cycle removal and topological ordering.

pub(crate) mod classifier;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{extrapolate_hypothetical, first_crossing, heading, pairwise_distance_matrix, viewing_angle, GeomError, Heading};
use crate::neural::NeuralError;
use crate::scene::{AgentId, ObservedScene, Scene, TypeTable, Vec2};

pub use classifier::{
    all_pairs, classify_pair, feature_dim, graph_from_pair_probs, pair_features, predicted_graph, ClassifierNet, InteractionClassifier, EMBED_DIM, PAIR_ENC_DIM,
};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph has a directed cycle")]
    Cyclic,
    #[error("agent {0} is not in the scene")]
    UnknownAgent(AgentId),
    #[error("a pair needs two distinct agents, got {0} twice")]
    SameAgent(AgentId),
    #[error("edge {0}->{1} is a self-loop or duplicate")]
    BadEdge(AgentId, AgentId),
    #[error("feature length {found}, expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("unknown graph strategy {0:?}")]
    UnknownStrategy(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InteractionClass {
    NoInteraction = 0,
    MInfluencesN = 1,
    NInfluencesM = 2,
}

impl InteractionClass {
    pub const ALL: [InteractionClass; 3] = [InteractionClass::NoInteraction, InteractionClass::MInfluencesN, InteractionClass::NInfluencesM];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Swaps the two influence directions.
    pub fn flipped(self) -> Self {
        match self {
            InteractionClass::NoInteraction => InteractionClass::NoInteraction,
            InteractionClass::MInfluencesN => InteractionClass::NInfluencesM,
            InteractionClass::NInfluencesM => InteractionClass::MInfluencesN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionLabel {
    pub class: InteractionClass,
    pub probs: [f64; 3],
}

impl InteractionLabel {
    /// Argmax with ties going to the lowest class index.
    pub fn from_probs(probs: [f64; 3]) -> Self {
        let mut best = 0;
        for k in 1..3 {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        Self {
            class: InteractionClass::from_index(best).unwrap(),
            probs,
        }
    }

    pub fn certain(class: InteractionClass) -> Self {
        let mut probs = [0.0; 3];
        probs[class.index()] = 1.0;
        Self { class, probs }
    }
}

/// Label of an unordered pair; `m` precedes `n` in scene order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLabel {
    pub m: AgentId,
    pub n: AgentId,
    pub class: InteractionClass,
}

impl PairLabel {
    /// Directed `(influencer, influencee)` if any.
    pub fn direction(&self) -> Option<(AgentId, AgentId)> {
        match self.class {
            InteractionClass::NoInteraction => None,
            InteractionClass::MInfluencesN => Some((self.m, self.n)),
            InteractionClass::NInfluencesM => Some((self.n, self.m)),
        }
    }
}

pub fn flip_labels(labels: &[PairLabel]) -> Vec<PairLabel> {
    labels
        .iter()
        .map(|l| PairLabel {
            class: l.class.flipped(),
            ..*l
        })
        .collect()
}

/// Fraction of pairs with the same class in both label sets (pairs matched by position).
pub fn label_agreement(a: &[PairLabel], b: &[PairLabel]) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let same = a.iter().zip(b).filter(|(x, y)| x.class == y.class).count();
    same as f64 / a.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: AgentId,
    pub dst: AgentId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionGraph {
    pub nodes: Vec<AgentId>,
    pub edges: Vec<Edge>,
    pub is_dag: bool,
}

impl InteractionGraph {
    pub fn empty(nodes: Vec<AgentId>) -> Self {
        Self {
            nodes,
            edges: Vec::new(),
            is_dag: true,
        }
    }

    /// Builds a graph and records whether it is acyclic.
    pub fn from_edges(nodes: Vec<AgentId>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let mut g = Self::empty(nodes);
        for e in edges {
            g.add_edge(e)?;
        }
        g.is_dag = !has_cycle(&g);
        Ok(g)
    }

    fn add_edge(&mut self, e: Edge) -> Result<(), GraphError> {
        for id in [e.src, e.dst] {
            if !self.nodes.contains(&id) {
                return Err(GraphError::UnknownAgent(id));
            }
        }
        if e.src == e.dst || self.edges.iter().any(|f| f.src == e.src && f.dst == e.dst) {
            return Err(GraphError::BadEdge(e.src, e.dst));
        }
        self.edges.push(e);
        Ok(())
    }

    pub fn edge(&self, src: AgentId, dst: AgentId) -> Option<&Edge> {
        self.edges.iter().find(|e| e.src == src && e.dst == dst)
    }

    /// Incoming edges of `id` as `(parent, weight)`, sorted by parent id.
    pub fn parents(&self, id: AgentId) -> Vec<(AgentId, f64)> {
        let mut p: Vec<_> = self.edges.iter().filter(|e| e.dst == id).map(|e| (e.src, e.weight)).collect();
        p.sort_by_key(|(a, _)| *a);
        p
    }

    fn index(&self, id: AgentId) -> usize {
        self.nodes.iter().position(|&n| n == id).expect("edge endpoints are graph nodes")
    }

    /// `reach[u][v]`: a directed path of length ≥ 1 leads from node u to node v.
    fn reachability(&self) -> Vec<Vec<bool>> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[self.index(e.src)].push(self.index(e.dst));
        }
        (0..n)
            .map(|s| {
                let mut seen = vec![false; n];
                let mut stack: Vec<usize> = adj[s].clone();
                while let Some(u) = stack.pop() {
                    if !seen[u] {
                        seen[u] = true;
                        stack.extend(&adj[u]);
                    }
                }
                seen
            })
            .collect()
    }
}

fn has_cycle(g: &InteractionGraph) -> bool {
    let reach = g.reachability();
    (0..g.nodes.len()).any(|u| reach[u][u])
}

/// Repeatedly deletes the lightest edge lying on a cycle, ties by `(src, dst)`.
///
/// Returns the acyclic graph and the removed edges in removal order.
pub fn dagify_with_log(graph: &InteractionGraph) -> (InteractionGraph, Vec<Edge>) {
    let mut g = graph.clone();
    let mut removed = Vec::new();
    loop {
        let reach = g.reachability();
        let victim = g
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| reach[g.index(e.dst)][g.index(e.src)])
            .min_by(|(_, a), (_, b)| a.weight.total_cmp(&b.weight).then((a.src, a.dst).cmp(&(b.src, b.dst))))
            .map(|(k, _)| k);
        match victim {
            Some(k) => removed.push(g.edges.remove(k)),
            None => break,
        }
    }
    g.is_dag = true;
    (g, removed)
}

pub fn dagify(graph: &InteractionGraph) -> InteractionGraph {
    dagify_with_log(graph).0
}

/// Kahn's algorithm, always taking the smallest ready agent id.
pub fn topological_order(graph: &InteractionGraph) -> Result<Vec<AgentId>, GraphError> {
    let mut indeg: Vec<usize> = graph.nodes.iter().map(|&id| graph.edges.iter().filter(|e| e.dst == id).count()).collect();
    let mut ready: BinaryHeap<Reverse<(AgentId, usize)>> = indeg
        .iter()
        .enumerate()
        .filter(|(_, d)| **d == 0)
        .map(|(k, _)| Reverse((graph.nodes[k], k)))
        .collect();
    let mut order = Vec::with_capacity(graph.nodes.len());
    while let Some(Reverse((id, _))) = ready.pop() {
        order.push(id);
        for e in graph.edges.iter().filter(|e| e.src == id) {
            let k = graph.index(e.dst);
            indeg[k] -= 1;
            if indeg[k] == 0 {
                ready.push(Reverse((e.dst, k)));
            }
        }
    }
    if order.len() != graph.nodes.len() {
        return Err(GraphError::Cyclic);
    }
    Ok(order)
}

pub fn independence_graph(nodes: Vec<AgentId>) -> InteractionGraph {
    InteractionGraph::empty(nodes)
}

/// Viewing-angle proximity graph over the last observed positions.
///
/// Within distance `eps`, the agent that the other looks at more directly
/// (smaller viewing angle) is the influencer; weight is `(eps - d) / eps`.
/// Stationary agents only receive edges.
pub fn euclidean_graph(scene: &ObservedScene, eps: f64) -> Result<InteractionGraph, GraphError> {
    let agents = &scene.agents;
    let headings: Vec<Heading> = agents.iter().map(|a| heading(&a.past)).collect::<Result<_, _>>()?;
    let mut edges = Vec::new();
    for (i, j) in all_pairs(agents.len()) {
        let (a, b) = (&agents[i], &agents[j]);
        let (sa, sb) = (a.last_position(), b.last_position());
        let d = sa.distance(sb);
        if !(d < eps) {
            continue;
        }
        let weight = (eps - d) / eps;
        let by_id = || if a.id < b.id { (a.id, b.id) } else { (b.id, a.id) };
        let dir = match (headings[i], headings[j]) {
            (Heading::Stationary, Heading::Stationary) => None,
            (Heading::Stationary, _) => Some((b.id, a.id)),
            (_, Heading::Stationary) => Some((a.id, b.id)),
            _ if d == 0.0 => Some(by_id()),
            (Heading::Angle(ga), Heading::Angle(gb)) => {
                let phi_ab = viewing_angle(sa, ga, sb)?;
                let phi_ba = viewing_angle(sb, gb, sa)?;
                if phi_ba < phi_ab {
                    Some((a.id, b.id))
                } else if phi_ab < phi_ba {
                    Some((b.id, a.id))
                } else {
                    Some(by_id())
                }
            }
        };
        if let Some((src, dst)) = dir {
            edges.push(Edge { src, dst, weight });
        }
    }
    Ok(dagify(&InteractionGraph::from_edges(scene.ids(), edges)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    /// Radius of the Euclidean heuristic in meters.
    pub euclidean_eps_m: f64,
    /// Use the mean width of both agents as crossing threshold instead of agent m's width.
    pub symmetric_eps: bool,
    pub types: TypeTable,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            euclidean_eps_m: 20.0,
            symmetric_eps: false,
            types: TypeTable::default(),
        }
    }
}

fn with_origin(origin: Vec2, rest: &[Vec2]) -> Vec<Vec2> {
    std::iter::once(origin).chain(rest.iter().copied()).collect()
}

fn class_from_times(t_m: Option<usize>, t_n: Option<usize>) -> InteractionClass {
    match (t_m, t_n) {
        (Some(a), Some(b)) if a < b => InteractionClass::MInfluencesN,
        (Some(a), Some(b)) if a > b => InteractionClass::NInfluencesM,
        (Some(_), None) => InteractionClass::MInfluencesN,
        (None, Some(_)) => InteractionClass::NInfluencesM,
        _ => InteractionClass::NoInteraction,
    }
}

/// Crossing-order labels for every unordered pair, computed from ground-truth futures.
///
/// Each trajectory starts at the last observed position. With
/// `use_hypothetical`, crossings are searched on futures sped up to the
/// agent's floor speed, and the direction is decided by which real future
/// first comes within the threshold of the hypothetical crossing point.
pub fn crossing_labels(scene: &Scene, use_hypothetical: bool, flipped: bool, cfg: &HeuristicConfig) -> Result<Vec<PairLabel>, GraphError> {
    let agents = &scene.agents;
    let real: Vec<Vec<Vec2>> = agents
        .iter()
        .map(|a| with_origin(a.past.last().expect("validated past"), &a.future.positions))
        .collect();
    let hypo: Vec<Vec<Vec2>> = if use_hypothetical {
        agents
            .iter()
            .zip(&real)
            .map(|(a, r)| {
                let e = extrapolate_hypothetical(&a.past, &a.future, &cfg.types.get(a.kind))?;
                Ok(with_origin(r[0], &e.trajectory.positions))
            })
            .collect::<Result<_, GeomError>>()?
    } else {
        Vec::new()
    };
    let mut labels = Vec::new();
    for (i, j) in all_pairs(agents.len()) {
        let (wi, wj) = (cfg.types.get(agents[i].kind).avg_width_m, cfg.types.get(agents[j].kind).avg_width_m);
        let eps = if cfg.symmetric_eps { 0.5 * (wi + wj) } else { wi };
        let class = if use_hypothetical {
            let d = pairwise_distance_matrix(&hypo[i], &hypo[j])?;
            match first_crossing(&d, eps) {
                None => InteractionClass::NoInteraction,
                Some(c) => {
                    let point = (hypo[i][c.t_m] + hypo[j][c.t_n]) * 0.5;
                    let reach = |t: &[Vec2]| t.iter().position(|p| p.distance(point) <= eps);
                    class_from_times(reach(&real[i]), reach(&real[j]))
                }
            }
        } else {
            let d = pairwise_distance_matrix(&real[i], &real[j])?;
            first_crossing(&d, eps).map_or(InteractionClass::NoInteraction, |c| class_from_times(Some(c.t_m), Some(c.t_n)))
        };
        labels.push(PairLabel {
            m: agents[i].id,
            n: agents[j].id,
            class: if flipped { class.flipped() } else { class },
        });
    }
    Ok(labels)
}

/// Generator ground truth expressed as pair labels, if the scene carries annotations.
pub fn ground_truth_labels(scene: &Scene) -> Option<Vec<PairLabel>> {
    let ann = scene.annotations.as_ref()?;
    let ids = scene.ids();
    Some(
        all_pairs(ids.len())
            .into_iter()
            .map(|(i, j)| {
                let (m, n) = (ids[i], ids[j]);
                let class = ann
                    .interactions
                    .iter()
                    .find_map(|g| match (g.influencer, g.influencee) {
                        (a, b) if (a, b) == (m, n) => Some(InteractionClass::MInfluencesN),
                        (a, b) if (a, b) == (n, m) => Some(InteractionClass::NInfluencesM),
                        _ => None,
                    })
                    .unwrap_or(InteractionClass::NoInteraction);
                PairLabel { m, n, class }
            })
            .collect(),
    )
}

/// Unit-weight graph from pair labels, made acyclic.
pub fn graph_from_labels(nodes: Vec<AgentId>, labels: &[PairLabel]) -> Result<InteractionGraph, GraphError> {
    let edges = labels
        .iter()
        .filter_map(|l| l.direction())
        .map(|(src, dst)| Edge { src, dst, weight: 1.0 })
        .collect();
    Ok(dagify(&InteractionGraph::from_edges(nodes, edges)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphStrategy {
    Independence,
    NoHeuristic,
    Euclidean,
    Crossing,
    HypotheticalCrossing,
    FlippedCrossing,
    FlippedHypotheticalCrossing,
}

impl GraphStrategy {
    pub const ALL: [GraphStrategy; 7] = [
        GraphStrategy::Independence,
        GraphStrategy::NoHeuristic,
        GraphStrategy::Euclidean,
        GraphStrategy::Crossing,
        GraphStrategy::HypotheticalCrossing,
        GraphStrategy::FlippedCrossing,
        GraphStrategy::FlippedHypotheticalCrossing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GraphStrategy::Independence => "independence",
            GraphStrategy::NoHeuristic => "no-heuristic",
            GraphStrategy::Euclidean => "euclidean",
            GraphStrategy::Crossing => "crossing",
            GraphStrategy::HypotheticalCrossing => "hypothetical-crossing",
            GraphStrategy::FlippedCrossing => "flipped-crossing",
            GraphStrategy::FlippedHypotheticalCrossing => "flipped-hypothetical-crossing",
        }
    }

    /// `(use_hypothetical, flipped)` for the crossing family.
    pub fn crossing_flags(self) -> Option<(bool, bool)> {
        match self {
            GraphStrategy::Crossing => Some((false, false)),
            GraphStrategy::HypotheticalCrossing => Some((true, false)),
            GraphStrategy::FlippedCrossing => Some((false, true)),
            GraphStrategy::FlippedHypotheticalCrossing => Some((true, true)),
            _ => None,
        }
    }

    /// Whether inference needs a pretrained classifier.
    pub fn needs_pretrained_classifier(self) -> bool {
        self.crossing_flags().is_some()
    }
}

impl fmt::Display for GraphStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraphStrategy {
    type Err = GraphError;
    fn from_str(s: &str) -> Result<Self, GraphError> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| GraphError::UnknownStrategy(s.to_string()))
    }
}

/// Graph built from a heuristic that needs no learned parameters.
///
/// Crossing strategies read ground-truth futures here; they are meant for
/// label inspection, not for inference. Returns `None` for `NoHeuristic`.
pub fn heuristic_graph(scene: &Scene, strategy: GraphStrategy, cfg: &HeuristicConfig) -> Result<Option<InteractionGraph>, GraphError> {
    Ok(match strategy {
        GraphStrategy::Independence => Some(independence_graph(scene.ids())),
        GraphStrategy::NoHeuristic => None,
        GraphStrategy::Euclidean => Some(euclidean_graph(&scene.observed(), cfg.euclidean_eps_m)?),
        s => {
            let (hyp, flip) = s.crossing_flags().unwrap();
            Some(graph_from_labels(scene.ids(), &crossing_labels(scene, hyp, flip, cfg)?)?)
        }
    })
}

/// JSON form of one scene graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub scene_id: String,
    pub strategy: GraphStrategy,
    pub nodes: Vec<AgentId>,
    pub edges: Vec<Edge>,
}

impl GraphDump {
    pub fn new(scene_id: &str, strategy: GraphStrategy, graph: &InteractionGraph) -> Self {
        Self {
            scene_id: scene_id.to_string(),
            strategy,
            nodes: graph.nodes.clone(),
            edges: graph.edges.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph dump serializes")
    }
}
