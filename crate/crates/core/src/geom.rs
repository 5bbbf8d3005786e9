//! Trajectory geometry: headings, viewing and approach angles, distance
//! matrices, crossing detection and hypothetical-future extrapolation.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use thiserror::Error;

use crate::scene::{AgentType, Trajectory, Vec2};

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("trajectory needs at least {needed} points, got {found}")]
    TooShort { needed: usize, found: usize },
    #[error("coincident points have no bearing")]
    Coincident,
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("time steps differ: {0} vs {1}")]
    DtMismatch(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Heading {
    /// Radians in (−π, π].
    Angle(f64),
    /// Every displacement is zero.
    Stationary,
}

impl Heading {
    pub fn angle(self) -> Option<f64> {
        match self {
            Heading::Angle(a) => Some(a),
            Heading::Stationary => None,
        }
    }

    pub fn is_stationary(self) -> bool {
        matches!(self, Heading::Stationary)
    }
}

/// Direction of the last nonzero displacement of `points`.
pub fn heading_of(points: &[Vec2]) -> Result<Heading, GeomError> {
    if points.len() < 2 {
        return Err(GeomError::TooShort { needed: 2, found: points.len() });
    }
    Ok(points
        .windows(2)
        .rev()
        .map(|w| w[1] - w[0])
        .find(|d| !d.is_zero())
        .map_or(Heading::Stationary, |d| Heading::Angle(normalize_angle(d.angle()))))
}

pub fn heading(traj: &Trajectory) -> Result<Heading, GeomError> {
    heading_of(&traj.positions)
}

/// Maps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Absolute angle difference reduced into [0, π].
pub fn wrap_abs(diff: f64) -> f64 {
    let r = diff.abs().rem_euclid(TAU);
    if r > PI {
        TAU - r
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproachAngle {
    pub value: f64,
    /// Set when either input had zero length; `value` is then π/2.
    pub degenerate: bool,
}

/// Angle between the distance vector `d` and the displacement `x`.
pub fn approach_angle(d: Vec2, x: Vec2) -> ApproachAngle {
    let (nd, nx) = (d.norm(), x.norm());
    if !(nd > 0.0) || !(nx > 0.0) {
        return ApproachAngle { value: FRAC_PI_2, degenerate: true };
    }
    // Normalizing first keeps the result invariant to rescaling.
    let (ud, ux) = (d * (1.0 / nd), x * (1.0 / nx));
    let cross = ud.x * ux.y - ud.y * ux.x;
    ApproachAngle {
        value: cross.abs().atan2(ud.dot(ux)),
        degenerate: false,
    }
}

/// Angle at which an agent at `s_m` heading `gamma_m` sees the point `s_n`.
pub fn viewing_angle(s_m: Vec2, gamma_m: f64, s_n: Vec2) -> Result<f64, GeomError> {
    let d = s_n - s_m;
    if d.is_zero() {
        return Err(GeomError::Coincident);
    }
    Ok(wrap_abs(d.angle() - gamma_m))
}

/// Row-major matrix of point-to-point distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }
}

pub fn pairwise_distance_matrix(y_m: &[Vec2], y_n: &[Vec2]) -> Result<DistanceMatrix, GeomError> {
    if y_m.len() != y_n.len() {
        return Err(GeomError::LengthMismatch(y_m.len(), y_n.len()));
    }
    Ok(DistanceMatrix::from_fn(y_m.len(), y_n.len(), |i, j| y_m[i].distance(y_n[j])))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingCell {
    pub t_m: usize,
    pub t_n: usize,
    pub distance: f64,
}

/// Earliest cell with `D[i][j] <= eps`, ordered by `min(i,j)`, then `max(i,j)`, then `i`.
pub fn first_crossing(d: &DistanceMatrix, eps: f64) -> Option<CrossingCell> {
    let hit = |i: usize, j: usize| {
        (i < d.rows && j < d.cols && d.get(i, j) <= eps).then(|| CrossingCell {
            t_m: i,
            t_n: j,
            distance: d.get(i, j),
        })
    };
    let n = d.rows.max(d.cols);
    for lo in 0..n {
        if let Some(c) = hit(lo, lo) {
            return Some(c);
        }
        for hi in lo + 1..n {
            if let Some(c) = hit(lo, hi).or_else(|| hit(hi, lo)) {
                return Some(c);
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extrapolation {
    pub trajectory: Trajectory,
    /// Past and future were both entirely stationary; the future is returned as is.
    pub degenerate: bool,
    pub floor_mps: f64,
}

/// Raises every future step to at least the applicable speed floor, keeping directions.
///
/// The floor is the type's average speed when the last observed speed is
/// below it, otherwise the last observed speed.
pub fn extrapolate_hypothetical(past: &Trajectory, future: &Trajectory, agent_type: &AgentType) -> Result<Extrapolation, GeomError> {
    if past.len() < 2 {
        return Err(GeomError::TooShort { needed: 2, found: past.len() });
    }
    if future.is_empty() {
        return Err(GeomError::TooShort { needed: 1, found: 0 });
    }
    if past.dt != future.dt {
        return Err(GeomError::DtMismatch(past.dt, future.dt));
    }
    let dt = past.dt;
    let p = &past.positions;
    let last = p[p.len() - 1];
    let v_h = last.distance(p[p.len() - 2]) / dt;
    let floor = if v_h < agent_type.avg_speed_mps { agent_type.avg_speed_mps } else { v_h };

    let mut prev = last;
    let deltas: Vec<Vec2> = future
        .positions
        .iter()
        .map(|&y| {
            let d = y - prev;
            prev = y;
            d
        })
        .collect();
    let past_dir = heading_of(p)?.angle().map(Vec2::from_angle);
    let first_future_dir = deltas.iter().find(|d| !d.is_zero()).map(|d| *d * (1.0 / d.norm()));
    let Some(mut dir) = past_dir.or(first_future_dir) else {
        return Ok(Extrapolation {
            trajectory: future.clone(),
            degenerate: true,
            floor_mps: floor,
        });
    };

    let step = floor * dt;
    let mut offset = Vec2::ZERO;
    let mut out = Vec::with_capacity(deltas.len());
    for (y, d) in future.positions.iter().zip(&deltas) {
        let len = d.norm();
        if !d.is_zero() {
            dir = *d * (1.0 / len);
        }
        if len / dt < floor {
            offset += dir * step - *d;
        }
        out.push(*y + offset);
    }
    Ok(Extrapolation {
        trajectory: Trajectory::new(out, dt),
        degenerate: false,
        floor_mps: floor,
    })
}
