//! Synthetic interactive scenes with known interaction semantics.
//!
//! Each template lays out reference paths (polylines). Agents move along
//! their path at a constant observed speed, then follow a future speed
//! profile that ramps linearly over [`TRANSITION_S`] to a target speed. Agents
//! are processed in order of free-flow arrival at their conflict points;
//! each later agent scales its target speed down until it reaches every
//! shared conflict point at least `headway_s` after the agents processed
//! before it. That processing order is the ground-truth priority.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Agent, AgentId, AgentKind, Annotations, GroundTruthInteraction, Scene, SceneError, Trajectory, TypeTable, Vec2};

/// Duration of the speed ramp at the start of the future.
pub const TRANSITION_S: f64 = 1.0;
const LANE_OFFSET: f64 = 1.75;
const ROUNDABOUT_RADIUS: f64 = 12.0;
const PATH_SAMPLE_M: f64 = 0.25;
const TOUCH_M: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    CrossingIntersection,
    Merge,
    RoundaboutEntry,
    IndependentLanes,
    /// Two agents reach a crossing at nearly the same time; who goes first is a coin flip.
    YieldOrGo,
}

impl Template {
    pub const ALL: [Template; 5] = [
        Template::CrossingIntersection,
        Template::Merge,
        Template::RoundaboutEntry,
        Template::IndependentLanes,
        Template::YieldOrGo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::CrossingIntersection => "crossing-intersection",
            Template::Merge => "merge",
            Template::RoundaboutEntry => "roundabout-entry",
            Template::IndependentLanes => "independent-lanes",
            Template::YieldOrGo => "yield-or-go",
        }
    }

    /// Inclusive range of agent counts the template can lay out.
    pub fn capacity(self) -> (usize, usize) {
        match self {
            Template::CrossingIntersection => (2, 4),
            Template::Merge => (2, 3),
            Template::RoundaboutEntry => (2, 3),
            Template::IndependentLanes => (1, 6),
            Template::YieldOrGo => (2, 2),
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = SceneError;
    fn from_str(s: &str) -> Result<Self, SceneError> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| SceneError::Config(format!("unknown template {s:?}")))
    }
}

/// Horizon presets: `(n_past, n_future, sampling_hz)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    ArgoverseLike,
    InteractionLike,
    NuscenesLike,
    RoundLike,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::ArgoverseLike, Preset::InteractionLike, Preset::NuscenesLike, Preset::RoundLike];

    pub fn horizons(self) -> (usize, usize, f64) {
        match self {
            Preset::ArgoverseLike => (50, 60, 10.0),
            Preset::InteractionLike => (10, 30, 10.0),
            Preset::NuscenesLike => (4, 12, 2.0),
            Preset::RoundLike => (15, 25, 5.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::ArgoverseLike => "argoverse-like",
            Preset::InteractionLike => "interaction-like",
            Preset::NuscenesLike => "nuscenes-like",
            Preset::RoundLike => "round-like",
        }
    }
}

impl FromStr for Preset {
    type Err = SceneError;
    fn from_str(s: &str) -> Result<Self, SceneError> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SceneError::Config(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Template mix with relative weights.
    pub templates: Vec<(Template, f64)>,
    pub min_agents: usize,
    pub max_agents: usize,
    pub n_past: usize,
    pub n_future: usize,
    pub sampling_hz: f64,
    /// Standard deviation of isotropic positional noise (meters).
    pub noise_std: f64,
    pub types: TypeTable,
    /// Relative frequency of each agent kind; road templates ignore pedestrians.
    pub kind_mix: [f64; 4],
    /// Minimum time gap between agents passing a shared conflict point.
    pub headway_s: f64,
    /// Observed speed is the kind's average times `U(1 - j, 1 + j)`.
    pub speed_jitter: f64,
    /// Free-flow future speed is the observed speed times `U(1 - c, 1 + c)`.
    pub future_speed_change: f64,
    /// Apply a random rotation and translation to every scene.
    pub random_pose: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let (n_past, n_future, hz) = Preset::InteractionLike.horizons();
        Self {
            templates: vec![(Template::CrossingIntersection, 1.0)],
            min_agents: 2,
            max_agents: 4,
            n_past,
            n_future,
            sampling_hz: hz,
            noise_std: 0.05,
            types: TypeTable::default(),
            kind_mix: [0.7, 0.1, 0.15, 0.05],
            headway_s: 1.0,
            speed_jitter: 0.2,
            future_speed_change: 0.15,
            random_pose: false,
        }
    }
}

impl GeneratorConfig {
    pub fn single(template: Template, preset: Preset, min_agents: usize, max_agents: usize) -> Self {
        Self {
            templates: vec![(template, 1.0)],
            min_agents,
            max_agents,
            ..Self::default()
        }
        .with_preset(preset)
    }

    /// Equal mix of the four road templates.
    pub fn balanced(preset: Preset) -> Self {
        Self {
            templates: vec![
                (Template::CrossingIntersection, 1.0),
                (Template::Merge, 1.0),
                (Template::RoundaboutEntry, 1.0),
                (Template::IndependentLanes, 1.0),
            ],
            min_agents: 2,
            max_agents: 4,
            ..Self::default()
        }
        .with_preset(preset)
    }

    pub fn with_preset(mut self, preset: Preset) -> Self {
        let (p, f, hz) = preset.horizons();
        self.n_past = p;
        self.n_future = f;
        self.sampling_hz = hz;
        self
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let fail = |m: String| Err(SceneError::Config(m));
        if self.min_agents == 0 || self.min_agents > self.max_agents {
            return fail(format!("empty agent-count range {}..={}", self.min_agents, self.max_agents));
        }
        if self.templates.is_empty() || self.templates.iter().any(|(_, w)| !(*w >= 0.0)) {
            return fail("template mix must be nonempty with nonnegative weights".into());
        }
        if self.templates.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
            return fail("template weights sum to zero".into());
        }
        for (t, _) in &self.templates {
            let (lo, hi) = t.capacity();
            if self.max_agents < lo || self.min_agents > hi {
                return fail(format!(
                    "agent-count range {}..={} does not overlap {t} capacity {lo}..={hi}",
                    self.min_agents, self.max_agents
                ));
            }
        }
        if self.n_past < 2 || self.n_future < 1 {
            return fail("need n_past >= 2 and n_future >= 1".into());
        }
        if !(self.sampling_hz > 0.0) || !(self.noise_std >= 0.0) || !(self.headway_s >= 0.0) {
            return fail("sampling_hz must be positive; noise and headway nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.speed_jitter) || !(0.0..1.0).contains(&self.future_speed_change) {
            return fail("speed jitter and change must lie in [0, 1)".into());
        }
        if self.kind_mix.iter().any(|w| !(*w >= 0.0)) || self.kind_mix[..3].iter().sum::<f64>() <= 0.0 {
            return fail("kind mix needs positive weight on some road kind".into());
        }
        self.types.validate()
    }

    fn horizon_s(&self) -> f64 {
        self.n_future as f64 / self.sampling_hz
    }
}

/// Polyline parameterized by arc length, extended linearly past both ends.
#[derive(Debug, Clone)]
struct Path {
    pts: Vec<Vec2>,
    cum: Vec<f64>,
}

impl Path {
    fn new(pts: Vec<Vec2>) -> Self {
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            cum.push(cum.last().unwrap() + w[0].distance(w[1]));
        }
        Self { pts, cum }
    }

    fn line(from: Vec2, to: Vec2) -> Self {
        Self::new(vec![from, to])
    }

    fn arc(center: Vec2, radius: f64, from: f64, to: f64) -> Vec<Vec2> {
        let n = ((to - from).abs() * radius / 0.5).ceil().max(2.0) as usize;
        (0..=n)
            .map(|i| center + Vec2::from_angle(from + (to - from) * i as f64 / n as f64) * radius)
            .collect()
    }

    fn point_at(&self, s: f64) -> Vec2 {
        let n = self.pts.len();
        let seg = if s <= 0.0 {
            0
        } else if s >= self.cum[n - 1] {
            n - 2
        } else {
            self.cum.partition_point(|&c| c <= s).saturating_sub(1).min(n - 2)
        };
        let (a, b) = (self.pts[seg], self.pts[seg + 1]);
        let len = self.cum[seg + 1] - self.cum[seg];
        a + (b - a) * ((s - self.cum[seg]) / len)
    }

    /// Arc length of the sample closest to `p`.
    fn project(&self, p: Vec2) -> f64 {
        let total = *self.cum.last().unwrap();
        let n = (total / PATH_SAMPLE_M).ceil() as usize;
        (0..=n)
            .map(|i| i as f64 * PATH_SAMPLE_M)
            .min_by(|a, b| {
                self.point_at(*a)
                    .distance(p)
                    .total_cmp(&self.point_at(*b).distance(p))
            })
            .unwrap()
    }
}

#[derive(Debug, Clone)]
struct Plan {
    kind: AgentKind,
    path: Path,
    /// Arc length at the last observed step.
    s_h: f64,
    v0: f64,
    v_free: f64,
    /// Fraction of the free-flow target speed actually used.
    lambda: f64,
}

impl Plan {
    fn target(&self) -> f64 {
        self.lambda * self.v_free
    }

    fn accel(&self) -> f64 {
        (self.target() - self.v0) / TRANSITION_S
    }

    fn s_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.s_h + self.v0 * t;
        }
        let a = self.accel();
        if t <= TRANSITION_S {
            self.s_h + self.v0 * t + 0.5 * a * t * t
        } else {
            let ramp = self.v0 * TRANSITION_S + 0.5 * a * TRANSITION_S * TRANSITION_S;
            self.s_h + ramp + self.target() * (t - TRANSITION_S)
        }
    }

    /// First time the agent reaches arc length `s` (infinite if never).
    fn arrival(&self, s: f64) -> f64 {
        let d = s - self.s_h;
        if d <= 0.0 {
            return 0.0;
        }
        let a = self.accel();
        let disc = self.v0 * self.v0 + 2.0 * a * d;
        if disc >= 0.0 {
            let t = 2.0 * d / (self.v0 + disc.sqrt());
            if t <= TRANSITION_S {
                return t;
            }
        }
        let ramp = self.v0 * TRANSITION_S + 0.5 * a * TRANSITION_S * TRANSITION_S;
        if self.target() <= 1e-9 {
            return f64::INFINITY;
        }
        TRANSITION_S + (d - ramp) / self.target()
    }

    fn reach(&self, horizon_s: f64) -> f64 {
        self.v0.max(self.v_free) * horizon_s * 1.5 + 10.0
    }
}

#[derive(Debug, Clone, Copy)]
struct Conflict {
    i: usize,
    j: usize,
    s_i: f64,
    s_j: f64,
    point: Vec2,
}

/// Earliest pair of near-touching samples between the reachable parts of two paths.
fn find_conflict(a: &Plan, b: &Plan, horizon_s: f64) -> Option<(f64, f64, Vec2)> {
    let sample = |p: &Plan| -> Vec<(f64, Vec2)> {
        let n = (p.reach(horizon_s) / PATH_SAMPLE_M).ceil() as usize;
        (0..=n)
            .map(|k| {
                let s = p.s_h + k as f64 * PATH_SAMPLE_M;
                (s, p.path.point_at(s))
            })
            .collect()
    };
    let (sa, sb) = (sample(a), sample(b));
    let mut best: Option<(f64, f64, Vec2)> = None;
    for &(s_i, p) in &sa {
        if best.is_some_and(|(bi, bj, _)| s_i - a.s_h > (bi - a.s_h) + (bj - b.s_h)) {
            break;
        }
        for &(s_j, q) in &sb {
            if p.distance(q) <= TOUCH_M {
                let key = (s_i - a.s_h) + (s_j - b.s_h);
                if best.is_none_or(|(bi, bj, _)| key < (bi - a.s_h) + (bj - b.s_h)) {
                    best = Some((s_i, s_j, (p + q) * 0.5));
                }
                break;
            }
        }
    }
    best
}

fn sample_kind<R: Rng>(rng: &mut R, mix: &[f64; 4], road_only: bool) -> AgentKind {
    let n = if road_only { 3 } else { 4 };
    let total: f64 = mix[..n].iter().sum();
    let mut u = rng.random_range(0.0..total);
    for k in 0..n {
        if u < mix[k] {
            return AgentKind::ALL[k];
        }
        u -= mix[k];
    }
    AgentKind::ALL[n - 1]
}

struct Layout {
    plans: Vec<Plan>,
    /// Forced first agent (yield-or-go coin flip).
    forced_first: Option<usize>,
}

fn speeds<R: Rng>(rng: &mut R, cfg: &GeneratorConfig, kind: AgentKind, change: f64) -> (f64, f64) {
    let base = cfg.types.get(kind).avg_speed_mps;
    let j = cfg.speed_jitter;
    let v0 = base * rng.random_range(1.0 - j..=1.0 + j);
    let v_free = v0 * rng.random_range(1.0 - change..=1.0 + change);
    (v0, v_free)
}

/// Distance before a reference point at which an agent is placed.
fn approach_distance<R: Rng>(rng: &mut R, v0: f64, horizon_s: f64) -> f64 {
    let lo = v0 * TRANSITION_S * 0.5 + 4.0;
    lo + rng.random_range(0.0..=v0 * horizon_s * 0.5)
}

fn layout_crossing<R: Rng>(rng: &mut R, cfg: &GeneratorConfig, n: usize) -> Layout {
    // Arms: approach heading east, north, west, south; right-hand lanes.
    let arms: Vec<(Vec2, Vec2)> = [0.0, 0.5, 1.0, 1.5]
        .iter()
        .map(|k: &f64| {
            let dir = Vec2::from_angle(k * std::f64::consts::PI);
            let right = dir.rotate(-std::f64::consts::FRAC_PI_2);
            (dir, right * LANE_OFFSET)
        })
        .collect();
    let mut order: Vec<usize> = (0..4).collect();
    for i in (1..4).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let horizon = cfg.horizon_s();
    let plans = order[..n]
        .iter()
        .map(|&arm| {
            let (dir, offset) = arms[arm];
            let path = Path::line(offset - dir * 300.0, offset + dir * 300.0);
            let kind = sample_kind(rng, &cfg.kind_mix, true);
            let (v0, v_free) = speeds(rng, cfg, kind, cfg.future_speed_change);
            let s_center = 300.0;
            let s_h = s_center - LANE_OFFSET - approach_distance(rng, v0, horizon);
            Plan { kind, path, s_h, v0, v_free, lambda: 1.0 }
        })
        .collect();
    Layout { plans, forced_first: None }
}

fn layout_yield_or_go<R: Rng>(rng: &mut R, cfg: &GeneratorConfig) -> Layout {
    let east = Path::line(Vec2::new(-300.0, -LANE_OFFSET), Vec2::new(300.0, -LANE_OFFSET));
    let north = Path::line(Vec2::new(LANE_OFFSET, -300.0), Vec2::new(LANE_OFFSET, 300.0));
    // Conflict at (LANE_OFFSET, -LANE_OFFSET).
    let s_conf = [300.0 + LANE_OFFSET, 300.0 - LANE_OFFSET];
    let t_arrive = rng.random_range(0.8..1.2);
    let plans = [east, north]
        .into_iter()
        .zip(s_conf)
        .map(|(path, s_c)| {
            let kind = AgentKind::Vehicle;
            let (v0, _) = speeds(rng, cfg, kind, 0.0);
            let t = t_arrive + rng.random_range(-0.1..0.1);
            Plan { kind, path, s_h: s_c - v0 * t, v0, v_free: v0, lambda: 1.0 }
        })
        .collect();
    Layout {
        plans,
        forced_first: Some(rng.random_range(0..2)),
    }
}

fn layout_merge<R: Rng>(rng: &mut R, cfg: &GeneratorConfig, n: usize) -> Layout {
    let horizon = cfg.horizon_s();
    let ramp_angle = 30f64.to_radians();
    let ramp_start = Vec2::from_angle(std::f64::consts::PI + ramp_angle) * 300.0;
    let main = Path::line(Vec2::new(-300.0, 0.0), Vec2::new(300.0, 0.0));
    let ramp = Path::new(vec![ramp_start, Vec2::ZERO, Vec2::new(300.0, 0.0)]);
    let mut plans = Vec::with_capacity(n);
    for (k, path) in [main, ramp].into_iter().enumerate() {
        let kind = sample_kind(rng, &cfg.kind_mix, true);
        let (v0, v_free) = speeds(rng, cfg, kind, cfg.future_speed_change);
        let s_merge = if k == 0 { 300.0 } else { path.cum[1] };
        let s_h = s_merge - approach_distance(rng, v0, horizon);
        plans.push(Plan { kind, path, s_h, v0, v_free, lambda: 1.0 });
    }
    if n == 3 {
        // Oncoming lane beside the main road, never touched by the ramp.
        let path = Path::line(Vec2::new(300.0, 2.0 * LANE_OFFSET), Vec2::new(-300.0, 2.0 * LANE_OFFSET));
        let kind = sample_kind(rng, &cfg.kind_mix, true);
        let (v0, v_free) = speeds(rng, cfg, kind, cfg.future_speed_change);
        let s_h = 300.0 + rng.random_range(-30.0..30.0);
        plans.push(Plan { kind, path, s_h, v0, v_free, lambda: 1.0 });
    }
    shuffle_plans(rng, &mut plans);
    Layout { plans, forced_first: None }
}

fn layout_roundabout<R: Rng>(rng: &mut R, cfg: &GeneratorConfig, n: usize) -> Layout {
    use std::f64::consts::{FRAC_PI_2, PI};
    let horizon = cfg.horizon_s();
    let r = ROUNDABOUT_RADIUS;
    let bottom = -FRAC_PI_2;
    // Counterclockwise circulation; entries at the bottom and the east side.
    let circ_pts = Path::arc(Vec2::ZERO, r, bottom - PI, bottom + 1.5 * PI);
    let circ = Path::new(circ_pts);
    let entry = |angle: f64| -> Path {
        let join = Vec2::from_angle(angle) * r;
        let outward = Vec2::from_angle(angle);
        let back = outward.rotate(-0.35);
        let mut pts = vec![join + back * 300.0, join];
        pts.extend(Path::arc(Vec2::ZERO, r, angle, angle + PI).into_iter().skip(1));
        Path::new(pts)
    };
    let mut plans = Vec::with_capacity(n);
    {
        let kind = sample_kind(rng, &cfg.kind_mix, true);
        let (v0, v_free) = speeds(rng, cfg, kind, cfg.future_speed_change);
        let s_entry = circ.project(Vec2::from_angle(bottom) * r);
        let s_h = s_entry - approach_distance(rng, v0, horizon);
        plans.push(Plan { kind, path: circ, s_h, v0, v_free, lambda: 1.0 });
    }
    for &angle in [bottom, 0.0].iter().take(n - 1) {
        let path = entry(angle);
        let kind = sample_kind(rng, &cfg.kind_mix, true);
        let (v0, v_free) = speeds(rng, cfg, kind, cfg.future_speed_change);
        let s_h = path.cum[1] - approach_distance(rng, v0, horizon);
        plans.push(Plan { kind, path, s_h, v0, v_free, lambda: 1.0 });
    }
    shuffle_plans(rng, &mut plans);
    Layout { plans, forced_first: None }
}

fn layout_lanes<R: Rng>(rng: &mut R, cfg: &GeneratorConfig, n: usize) -> Layout {
    let mut lanes: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        lanes.swap(i, rng.random_range(0..=i));
    }
    let plans = lanes
        .into_iter()
        .map(|lane| {
            let y = lane as f64 * 4.0;
            let forward = rng.random_bool(0.5);
            let (a, b) = (Vec2::new(-300.0, y), Vec2::new(300.0, y));
            let path = if forward { Path::line(a, b) } else { Path::line(b, a) };
            let kind = sample_kind(rng, &cfg.kind_mix, false);
            let (v0, v_free) = speeds(rng, cfg, kind, cfg.future_speed_change);
            let s_h = 300.0 + rng.random_range(-30.0..30.0);
            Plan { kind, path, s_h, v0, v_free, lambda: 1.0 }
        })
        .collect();
    Layout { plans, forced_first: None }
}

fn shuffle_plans<R: Rng>(rng: &mut R, plans: &mut [Plan]) {
    for i in (1..plans.len()).rev() {
        plans.swap(i, rng.random_range(0..=i));
    }
}

/// Orders agents by free-flow arrival and slows later agents to respect the headway.
fn resolve_priorities(plans: &mut [Plan], conflicts: &[Conflict], headway: f64, forced_first: Option<usize>) -> Vec<usize> {
    let n = plans.len();
    let key = |k: usize| -> f64 {
        conflicts
            .iter()
            .filter_map(|c| {
                if c.i == k {
                    Some(plans[k].arrival(c.s_i))
                } else if c.j == k {
                    Some(plans[k].arrival(c.s_j))
                } else {
                    None
                }
            })
            .fold(f64::INFINITY, f64::min)
    };
    let keys: Vec<f64> = (0..n).map(key).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    if let Some(f) = forced_first {
        order.retain(|&k| k != f);
        order.insert(0, f);
    }
    for (pos, &k) in order.iter().enumerate() {
        let earlier = &order[..pos];
        let constraints: Vec<(f64, f64)> = conflicts
            .iter()
            .filter_map(|c| {
                if c.j == k && earlier.contains(&c.i) {
                    Some((c.s_j, plans[c.i].arrival(c.s_i) + headway))
                } else if c.i == k && earlier.contains(&c.j) {
                    Some((c.s_i, plans[c.j].arrival(c.s_j) + headway))
                } else {
                    None
                }
            })
            .collect();
        let feasible = |p: &Plan| constraints.iter().all(|&(s, t)| p.arrival(s) >= t);
        let mut plan = plans[k].clone();
        if !feasible(&plan) {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                plan.lambda = mid;
                if feasible(&plan) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            plan.lambda = lo;
        }
        plans[k] = plan;
    }
    order
}

fn generate_one<R: Rng>(rng: &mut R, cfg: &GeneratorConfig, template: Template, scene_id: String) -> Result<Scene, SceneError> {
    let (lo, hi) = template.capacity();
    let n = rng.random_range(cfg.min_agents.max(lo)..=cfg.max_agents.min(hi));
    let mut layout = match template {
        Template::CrossingIntersection => layout_crossing(rng, cfg, n),
        Template::Merge => layout_merge(rng, cfg, n),
        Template::RoundaboutEntry => layout_roundabout(rng, cfg, n),
        Template::IndependentLanes => layout_lanes(rng, cfg, n),
        Template::YieldOrGo => layout_yield_or_go(rng, cfg),
    };
    let horizon = cfg.horizon_s();
    let plans = &mut layout.plans;
    let mut conflicts = Vec::new();
    if template != Template::IndependentLanes {
        for i in 0..plans.len() {
            for j in i + 1..plans.len() {
                if let Some((s_i, s_j, point)) = find_conflict(&plans[i], &plans[j], horizon) {
                    conflicts.push(Conflict { i, j, s_i, s_j, point });
                }
            }
        }
    }
    let order = resolve_priorities(plans, &conflicts, cfg.headway_s, layout.forced_first);
    let rank = |k: usize| order.iter().position(|&o| o == k).unwrap();

    let dt = 1.0 / cfg.sampling_hz;
    let pose_angle = if cfg.random_pose { rng.random_range(0.0..std::f64::consts::TAU) } else { 0.0 };
    let pose_shift = if cfg.random_pose {
        Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0))
    } else {
        Vec2::ZERO
    };
    let pose = |p: Vec2| p.rotate(pose_angle) + pose_shift;
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("valid noise std");
    let jitter = |p: Vec2, rng: &mut R| {
        if cfg.noise_std > 0.0 {
            Vec2::new(p.x + noise.sample(rng), p.y + noise.sample(rng))
        } else {
            p
        }
    };

    let mut agents = Vec::with_capacity(plans.len());
    for (k, plan) in plans.iter().enumerate() {
        let past: Vec<Vec2> = (0..cfg.n_past)
            .map(|i| {
                let t = -((cfg.n_past - 1 - i) as f64) * dt;
                jitter(pose(plan.path.point_at(plan.s_at(t))), rng)
            })
            .collect();
        let future: Vec<Vec2> = (0..cfg.n_future)
            .map(|i| {
                let t = (i + 1) as f64 * dt;
                jitter(pose(plan.path.point_at(plan.s_at(t))), rng)
            })
            .collect();
        agents.push(Agent {
            id: AgentId(k as u32),
            kind: plan.kind,
            past: Trajectory::new(past, dt),
            future: Trajectory::new(future, dt),
        });
    }

    let mut interactions = Vec::new();
    for c in &conflicts {
        let (t_i, t_j) = (plans[c.i].arrival(c.s_i), plans[c.j].arrival(c.s_j));
        if t_i <= horizon && t_j <= horizon {
            let (first, second) = if rank(c.i) < rank(c.j) { (c.i, c.j) } else { (c.j, c.i) };
            interactions.push(GroundTruthInteraction {
                influencer: AgentId(first as u32),
                influencee: AgentId(second as u32),
                conflict_point: pose(c.point),
            });
        }
    }
    let annotations = Annotations {
        template: template.name().to_string(),
        priority: order.iter().map(|&k| AgentId(k as u32)).collect(),
        interactions,
    };
    Scene::new(scene_id, cfg.sampling_hz, agents, Some(annotations))
}

/// Generates `count` scenes; equal `(config, count, seed)` give identical output.
pub fn generate_synthetic(config: &GeneratorConfig, count: usize, seed: u64) -> Result<Vec<Scene>, SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = config.templates.iter().map(|(_, w)| w).sum();
    (0..count)
        .map(|i| {
            let mut u = rng.random_range(0.0..total);
            let mut template = config.templates[config.templates.len() - 1].0;
            for &(t, w) in &config.templates {
                if u < w {
                    template = t;
                    break;
                }
                u -= w;
            }
            generate_one(&mut rng, config, template, format!("{}-{seed}-{i:05}", template.name()))
        })
        .collect()
}
