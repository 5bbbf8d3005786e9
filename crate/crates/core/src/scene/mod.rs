//! Scene data model, JSON-lines I/O, the displacement transform, dataset
//! splitting, and the synthetic scene generator.

mod generator;
mod io;

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generator::{generate_synthetic, GeneratorConfig, Preset, Template};
pub use io::{load_scenes, read_scenes, save_scenes, write_scenes, SCENE_FORMAT, SCENE_FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("{context}: invalid scene: {message}")]
    Validation { context: String, message: String },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("cannot split: {0}")]
    Split(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A 2D point or vector in meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn rotate(self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_zero(self) -> bool {
        self.x == 0.0 && self.y == 0.0
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Vehicle,
    Motorcycle,
    Bicycle,
    Pedestrian,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [
        AgentKind::Vehicle,
        AgentKind::Motorcycle,
        AgentKind::Bicycle,
        AgentKind::Pedestrian,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Vehicle => "vehicle",
            AgentKind::Motorcycle => "motorcycle",
            AgentKind::Bicycle => "bicycle",
            AgentKind::Pedestrian => "pedestrian",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-kind physical constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentType {
    pub kind: AgentKind,
    pub avg_width_m: f64,
    pub avg_speed_mps: f64,
}

/// Width and average speed for each agent kind, indexed by [`AgentKind::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TypeTable {
    pub widths: [f64; 4],
    pub speeds: [f64; 4],
}

impl Default for TypeTable {
    fn default() -> Self {
        Self {
            widths: [2.0, 1.0, 0.8, 0.5],
            speeds: [7.0, 7.0, 3.5, 1.4],
        }
    }
}

impl TypeTable {
    pub fn get(&self, kind: AgentKind) -> AgentType {
        AgentType {
            kind,
            avg_width_m: self.widths[kind.index()],
            avg_speed_mps: self.speeds[kind.index()],
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for k in AgentKind::ALL {
            let t = self.get(k);
            if !(t.avg_width_m > 0.0 && t.avg_speed_mps > 0.0) {
                return Err(SceneError::Config(format!("{k}: width and speed must be positive")));
            }
        }
        Ok(())
    }
}

/// Positions sampled every `dt` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Vec2>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(positions: Vec<Vec2>, dt: f64) -> Self {
        Self { positions, dt }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn last(&self) -> Option<Vec2> {
        self.positions.last().copied()
    }
}

/// Step vectors `p[t] - p[t-1]` plus the starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementSeq {
    pub deltas: Vec<Vec2>,
    pub origin: Vec2,
}

/// A delta `d` with `a + d == b` in floating point whenever one exists near `b - a`.
fn exact_delta(a: f64, b: f64) -> f64 {
    let d = b - a;
    if a + d == b {
        return d;
    }
    let (mut up, mut down) = (d, d);
    for _ in 0..8 {
        up = up.next_up();
        if a + up == b {
            return up;
        }
        down = down.next_down();
        if a + down == b {
            return down;
        }
    }
    d
}

/// Converts positions into per-step displacements.
///
/// Deltas are chosen so that cumulative summation from the origin
/// reproduces every position bit for bit.
pub fn to_displacements(traj: &Trajectory) -> DisplacementSeq {
    displacements_from(traj.positions[0], &traj.positions[1..])
}

/// Displacements of `points` measured from `origin` (the first delta is `points[0] - origin`).
pub fn displacements_from(origin: Vec2, points: &[Vec2]) -> DisplacementSeq {
    let mut prev = origin;
    let deltas = points
        .iter()
        .map(|&p| {
            let d = Vec2::new(exact_delta(prev.x, p.x), exact_delta(prev.y, p.y));
            prev = p;
            d
        })
        .collect();
    DisplacementSeq { deltas, origin }
}

/// Cumulative sum of the deltas starting at the origin (origin included).
pub fn from_displacements(seq: &DisplacementSeq, dt: f64) -> Trajectory {
    let mut positions = Vec::with_capacity(seq.deltas.len() + 1);
    let mut p = seq.origin;
    positions.push(p);
    for &d in &seq.deltas {
        p += d;
        positions.push(p);
    }
    Trajectory::new(positions, dt)
}

/// Integrates deltas from `origin` without including the origin itself.
pub fn integrate(origin: Vec2, deltas: &[Vec2]) -> Vec<Vec2> {
    let mut p = origin;
    deltas
        .iter()
        .map(|&d| {
            p += d;
            p
        })
        .collect()
}

/// Speed that maps to 1.0 in normalized network inputs.
pub const VELOCITY_SCALE_MPS: f64 = 10.0;

/// Per-step velocities of `points` divided by [`VELOCITY_SCALE_MPS`].
pub fn normalized_velocities(points: &[Vec2], dt: f64) -> Vec<[f64; 2]> {
    let k = 1.0 / (dt * VELOCITY_SCALE_MPS);
    points.windows(2).map(|w| ((w[1] - w[0]) * k).to_array()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: AgentId,
    pub kind: AgentKind,
    pub past: Trajectory,
    pub future: Trajectory,
}

/// Ground-truth influence of one agent on another, as produced by the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInteraction {
    pub influencer: AgentId,
    pub influencee: AgentId,
    pub conflict_point: Vec2,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Annotations {
    pub template: String,
    /// Agent ids in the order they pass their shared conflict points.
    #[serde(default)]
    pub priority: Vec<AgentId>,
    /// Every interacting pair; pairs not listed do not interact.
    #[serde(default)]
    pub interactions: Vec<GroundTruthInteraction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub sampling_hz: f64,
    pub agents: Vec<Agent>,
    pub annotations: Option<Annotations>,
}

impl Scene {
    /// Builds a scene and checks every invariant.
    pub fn new(
        scene_id: impl Into<String>,
        sampling_hz: f64,
        agents: Vec<Agent>,
        annotations: Option<Annotations>,
    ) -> Result<Self, SceneError> {
        let s = Self {
            scene_id: scene_id.into(),
            sampling_hz,
            agents,
            annotations,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sampling_hz
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_past(&self) -> usize {
        self.agents.first().map_or(0, |a| a.past.len())
    }

    pub fn n_future(&self) -> usize {
        self.agents.first().map_or(0, |a| a.future.len())
    }

    pub fn agent(&self, id: AgentId) -> Option<&Agent> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn index_of(&self, id: AgentId) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    pub fn ids(&self) -> Vec<AgentId> {
        self.agents.iter().map(|a| a.id).collect()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let fail = |message: String| SceneError::Validation {
            context: format!("scene {}", self.scene_id),
            message,
        };
        if !(self.sampling_hz > 0.0 && self.sampling_hz.is_finite()) {
            return Err(fail(format!("sampling_hz must be positive, got {}", self.sampling_hz)));
        }
        if self.agents.is_empty() {
            return Err(fail("scene has no agents".into()));
        }
        let (n_past, n_future) = (self.n_past(), self.n_future());
        if n_past < 2 {
            return Err(fail(format!("past needs at least 2 points, got {n_past}")));
        }
        if n_future < 1 {
            return Err(fail("future needs at least 1 point".into()));
        }
        let dt = self.dt();
        let mut seen = BTreeSet::new();
        for a in &self.agents {
            if !seen.insert(a.id) {
                return Err(fail(format!("duplicate agent id {}", a.id)));
            }
            if a.past.len() != n_past {
                return Err(fail(format!("agent {} has n_I={} but the scene uses {n_past}", a.id, a.past.len())));
            }
            if a.future.len() != n_future {
                return Err(fail(format!(
                    "agent {} has n_O={} but the scene uses {n_future}",
                    a.id,
                    a.future.len()
                )));
            }
            if a.past.dt != dt || a.future.dt != dt {
                return Err(fail(format!("agent {} does not share the scene timestep", a.id)));
            }
            if !a.past.positions.iter().chain(&a.future.positions).all(|p| p.is_finite()) {
                return Err(fail(format!("agent {} has non-finite coordinates", a.id)));
            }
        }
        Ok(())
    }

    /// The scene with futures removed, for inference-time consumers.
    pub fn observed(&self) -> ObservedScene {
        ObservedScene {
            scene_id: self.scene_id.clone(),
            dt: self.dt(),
            horizon: self.n_future(),
            agents: self
                .agents
                .iter()
                .map(|a| ObservedAgent {
                    id: a.id,
                    kind: a.kind,
                    past: a.past.clone(),
                })
                .collect(),
        }
    }

    /// Ground-truth futures as `n_A x n_O` points.
    pub fn future_positions(&self) -> Vec<Vec<Vec2>> {
        self.agents.iter().map(|a| a.future.positions.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedAgent {
    pub id: AgentId,
    pub kind: AgentKind,
    pub past: Trajectory,
}

impl ObservedAgent {
    /// Position at the last observed step.
    pub fn last_position(&self) -> Vec2 {
        *self.past.positions.last().expect("validated past is nonempty")
    }

    /// Displacement over the last observed step.
    pub fn last_displacement(&self) -> Vec2 {
        let n = self.past.len();
        self.past.positions[n - 1] - self.past.positions[n - 2]
    }
}

/// A scene view carrying only what is observable at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedScene {
    pub scene_id: String,
    pub dt: f64,
    /// Number of future steps to predict.
    pub horizon: usize,
    pub agents: Vec<ObservedAgent>,
}

impl ObservedScene {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn ids(&self) -> Vec<AgentId> {
        self.agents.iter().map(|a| a.id).collect()
    }

    pub fn index_of(&self, id: AgentId) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }
}

/// Deterministic disjoint partition with `round(n * train_fraction)` training scenes.
///
/// Both halves keep the input order.
pub fn split_dataset(scenes: &[Scene], train_fraction: f64, seed: u64) -> Result<(Vec<Scene>, Vec<Scene>), SceneError> {
    if scenes.len() < 2 {
        return Err(SceneError::Split(format!("need at least 2 scenes, got {}", scenes.len())));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SceneError::Split(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let n = scenes.len();
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (s, t) in scenes.iter().zip(is_train) {
        if t {
            train.push(s.clone());
        } else {
            val.push(s.clone());
        }
    }
    Ok((train, val))
}
