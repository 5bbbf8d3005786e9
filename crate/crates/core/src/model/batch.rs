//! Several scenes flattened into one agent axis.

use super::ModelError;
use crate::graphs::{all_pairs, InteractionGraph};
use crate::neural::Tensor;
use crate::scene::{normalized_velocities, ObservedScene};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BatchEdge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
    /// Row of the unordered pair in the batch pair list.
    pub pair_row: usize,
    /// Class index of this direction for that pair.
    pub class: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct SceneBatch {
    pub n: usize,
    /// Normalized past velocities per step, each `N x 2`.
    pub past_steps: Vec<Tensor>,
    pub kinds: Tensor,
    /// Last observed positions, `N x 2`.
    pub positions: Tensor,
    pub edges: Vec<BatchEdge>,
    /// Global unordered pairs `(i, j)`, `i < j`, scene by scene.
    pub pairs: Vec<(usize, usize)>,
    /// All agents concatenated, for pair classifiers.
    pub merged: ObservedScene,
}

impl SceneBatch {
    pub fn new(items: &[(&ObservedScene, &InteractionGraph)]) -> Result<Self, ModelError> {
        if items.is_empty() {
            return Err(ModelError::EmptyData("scene batch"));
        }
        let n_past = items[0].0.agents[0].past.len();
        let mut agents = Vec::new();
        let mut edges = Vec::new();
        let mut pairs = Vec::new();
        for (scene, graph) in items {
            if scene.agents.iter().any(|a| a.past.len() != n_past) {
                return Err(ModelError::Config("scenes in one batch must share n_past".into()));
            }
            check_nodes(scene, graph)?;
            let base = agents.len();
            let first_pair = pairs.len();
            let local_pairs = all_pairs(scene.n_agents());
            pairs.extend(local_pairs.iter().map(|&(i, j)| (base + i, base + j)));
            for e in &graph.edges {
                let (i, j) = (scene.index_of(e.src).unwrap(), scene.index_of(e.dst).unwrap());
                let (lo, hi, class) = if i < j { (i, j, 1) } else { (j, i, 2) };
                let k = local_pairs.iter().position(|&p| p == (lo, hi)).unwrap();
                edges.push(BatchEdge {
                    src: base + i,
                    dst: base + j,
                    weight: e.weight,
                    pair_row: first_pair + k,
                    class,
                });
            }
            agents.extend(scene.agents.iter().cloned());
        }
        let n = agents.len();
        let dt = items[0].0.dt;
        let vels: Vec<Vec<[f64; 2]>> = agents.iter().map(|a| normalized_velocities(&a.past.positions, dt)).collect();
        let past_steps = (0..n_past - 1)
            .map(|t| Tensor::from_vec(n, 2, vels.iter().flat_map(|v| v[t]).collect()))
            .collect();
        let kinds = Tensor::from_vec(n, 4, agents.iter().flat_map(|a| a.kind.one_hot()).collect());
        let positions = Tensor::from_vec(n, 2, agents.iter().flat_map(|a| a.last_position().to_array()).collect());
        let merged = ObservedScene {
            scene_id: String::from("batch"),
            dt,
            horizon: items[0].0.horizon,
            agents,
        };
        Ok(Self {
            n,
            past_steps,
            kinds,
            positions,
            edges,
            pairs,
            merged,
        })
    }
}

/// Graph nodes must be exactly the scene's agents.
pub(crate) fn check_nodes(scene: &ObservedScene, graph: &InteractionGraph) -> Result<(), ModelError> {
    let mut a = scene.ids();
    let mut b = graph.nodes.clone();
    a.sort();
    b.sort();
    if a != b {
        return Err(ModelError::NodeMismatch);
    }
    Ok(())
}
