//! Soft-constraint cost of a timed elastic band.
//!
//! The band is flattened to `z = [x0, y0, θ0, ΔT0, x1, y1, θ1, ΔT1, …, xn, yn, θn]`
//! so that every residual block reads a contiguous window of at most 11
//! variables. Every term except time is a sum of squared residuals; time is
//! the linear `w_time · Σ ΔT`, which the solver sees as the squared residual
//! `√(w_time · ΔT)`.

use serde::{Deserialize, Serialize};

use super::dual::{Dual, Scalar};
use super::{Obstacle, TebLimits, TebParams, TebTrajectory, TebWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Time,
    Obstacle,
    Kinematics,
    Velocity,
    Acceleration,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Time, Term::Obstacle, Term::Kinematics, Term::Velocity, Term::Acceleration];

    pub fn name(self) -> &'static str {
        match self {
            Term::Time => "time",
            Term::Obstacle => "obstacle",
            Term::Kinematics => "kinematics",
            Term::Velocity => "velocity",
            Term::Acceleration => "acceleration",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub time: f64,
    pub obstacle: f64,
    pub kinematics: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.time + self.obstacle + self.kinematics + self.velocity + self.acceleration
    }

    pub fn get(&self, t: Term) -> f64 {
        match t {
            Term::Time => self.time,
            Term::Obstacle => self.obstacle,
            Term::Kinematics => self.kinematics,
            Term::Velocity => self.velocity,
            Term::Acceleration => self.acceleration,
        }
    }

    fn slot(&mut self, t: Term) -> &mut f64 {
        match t {
            Term::Time => &mut self.time,
            Term::Obstacle => &mut self.obstacle,
            Term::Kinematics => &mut self.kinematics,
            Term::Velocity => &mut self.velocity,
            Term::Acceleration => &mut self.acceleration,
        }
    }

    /// First non-finite term, if any.
    pub fn non_finite(&self) -> Option<Term> {
        Term::ALL.into_iter().find(|t| !self.get(*t).is_finite())
    }
}

/// Velocity boundary conditions of the band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub v_start: f64,
    /// Velocity at the last pose; `None` when the band ends at an
    /// intermediate local goal and the robot keeps moving.
    pub v_goal: Option<f64>,
}

impl Default for Boundary {
    fn default() -> Self {
        Self { v_start: 0.0, v_goal: Some(0.0) }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum BlockKind {
    Obstacle(Obstacle),
    Kinematics,
    Velocity,
    Acceleration,
    AccelStart(f64),
    AccelGoal(f64),
}

impl BlockKind {
    fn len(&self) -> usize {
        match self {
            BlockKind::Obstacle(_) => 2,
            BlockKind::Acceleration => 11,
            _ => 7,
        }
    }

    fn term(&self) -> Term {
        match self {
            BlockKind::Obstacle(_) => Term::Obstacle,
            BlockKind::Kinematics => Term::Kinematics,
            BlockKind::Velocity => Term::Velocity,
            _ => Term::Acceleration,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub kind: BlockKind,
    pub start: usize,
}

/// Everything except the band itself: obstacle association, weights and
/// limits. Fixed during one outer iteration.
#[derive(Debug, Clone)]
pub struct Problem {
    pub weights: TebWeights,
    pub limits: TebLimits,
    pub params: TebParams,
    pub boundary: Boundary,
    pub(crate) blocks: Vec<Block>,
    pub n_poses: usize,
}

pub fn clearance<S: Scalar>(x: S, y: S, o: &Obstacle, robot_radius: f64) -> S {
    let dx = x - S::c(o.center.x);
    let dy = y - S::c(o.center.y);
    let mut d2 = dx * dx + dy * dy;
    if d2.val() <= 0.0 {
        d2 = d2 + S::c(1e-18);
    }
    d2.sqrt() - S::c(o.radius + robot_radius)
}

impl Problem {
    pub fn new(
        traj: &TebTrajectory,
        obstacles: &[Obstacle],
        weights: TebWeights,
        limits: TebLimits,
        params: TebParams,
        boundary: Boundary,
    ) -> Self {
        let n = traj.poses.len();
        let mut blocks = Vec::new();
        for (i, p) in traj.poses.iter().enumerate() {
            for o in obstacles {
                if clearance(p.x, p.y, o, params.robot_radius) < params.association_radius {
                    blocks.push(Block { kind: BlockKind::Obstacle(*o), start: 4 * i });
                }
            }
        }
        for i in 0..n - 1 {
            blocks.push(Block { kind: BlockKind::Kinematics, start: 4 * i });
            blocks.push(Block { kind: BlockKind::Velocity, start: 4 * i });
            if i + 2 < n {
                blocks.push(Block { kind: BlockKind::Acceleration, start: 4 * i });
            }
        }
        blocks.push(Block { kind: BlockKind::AccelStart(boundary.v_start), start: 0 });
        if let Some(v) = boundary.v_goal {
            blocks.push(Block { kind: BlockKind::AccelGoal(v), start: 4 * (n - 2) });
        }
        Self { weights, limits, params, boundary, blocks, n_poses: n }
    }

    pub fn n_vars(&self) -> usize {
        4 * self.n_poses - 1
    }

    /// Whether variable `k` may move: the first and last pose are pinned.
    pub fn is_free(&self, k: usize) -> bool {
        k >= 3 && k < 4 * (self.n_poses - 1)
    }

    fn sqrt_weight(&self, t: Term) -> f64 {
        let w = &self.weights;
        match t {
            Term::Time => w.time,
            Term::Obstacle => w.obstacle,
            Term::Kinematics => w.kinematics,
            Term::Velocity => w.velocity,
            Term::Acceleration => w.acceleration,
        }
        .sqrt()
    }

    fn residuals<S: Scalar>(&self, kind: &BlockKind, v: &[S]) -> [S; 2] {
        let zero = S::c(0.0);
        let lim = &self.limits;
        match kind {
            BlockKind::Obstacle(o) => {
                let d = clearance(v[0], v[1], o, self.params.robot_radius);
                [hinge_below(d, self.params.d_min, NEAR_ACTIVE * self.params.d_min), zero]
            }
            BlockKind::Kinematics => {
                let (dx, dy) = (v[4] - v[0], v[5] - v[1]);
                let (c0, s0, c1, s1) = (v[2].cos(), v[2].sin(), v[6].cos(), v[6].sin());
                let arc = (c0 + c1) * dy - (s0 + s1) * dx;
                let forward = dx * c0 + dy * s0;
                [arc, hinge_below(forward, 0.0, 0.0)]
            }
            BlockKind::Velocity => {
                let (vl, w) = segment_velocity(&v[..7]);
                [hinge_abs(vl, lim.v_max), hinge_abs(w, lim.omega_max)]
            }
            BlockKind::Acceleration => {
                let (v1, _) = segment_velocity(&v[..7]);
                let (v2, _) = segment_velocity(&v[4..11]);
                let a = (v2 - v1) * S::c(2.0) / (v[3] + v[7]);
                [hinge_abs(a, lim.a_max), zero]
            }
            BlockKind::AccelStart(v0) => {
                let (vl, _) = segment_velocity(&v[..7]);
                [hinge_abs((vl - S::c(*v0)) / v[3], lim.a_max), zero]
            }
            BlockKind::AccelGoal(vg) => {
                let (vl, _) = segment_velocity(&v[..7]);
                [hinge_abs((S::c(*vg) - vl) / v[3], lim.a_max), zero]
            }
        }
    }

    pub fn evaluate(&self, z: &[f64]) -> CostBreakdown {
        let mut out = CostBreakdown {
            time: self.weights.time * dts(z).sum::<f64>(),
            ..Default::default()
        };
        for b in &self.blocks {
            let w = self.sqrt_weight(b.kind.term());
            let r = self.residuals(&b.kind, &z[b.start..b.start + b.kind.len()]);
            *out.slot(b.kind.term()) += r.iter().map(|r| (w * r) * (w * r)).sum::<f64>();
        }
        out
    }

    /// Weighted residual rows with their Jacobian over the block window.
    pub(crate) fn linearize(&self, z: &[f64]) -> Vec<Row> {
        let mut rows = Vec::with_capacity(self.blocks.len() * 2 + self.n_poses);
        // w·ΔT written as the square of √(w·ΔT): same value and gradient, and
        // the Gauss–Newton model gains curvature w / (2ΔT) along ΔT
        let w = self.weights.time;
        if w > 0.0 {
            for k in (3..z.len()).step_by(4) {
                let mut jac = [0.0; 11];
                jac[0] = 0.5 * (w / z[k]).sqrt();
                rows.push(Row { term: Term::Time, start: k, len: 1, r: (w * z[k]).sqrt(), jac });
            }
        }
        for b in &self.blocks {
            match b.kind.len() {
                2 => self.push_rows::<2>(z, b, &mut rows),
                7 => self.push_rows::<7>(z, b, &mut rows),
                _ => self.push_rows::<11>(z, b, &mut rows),
            }
        }
        rows
    }

    fn push_rows<const N: usize>(&self, z: &[f64], b: &Block, rows: &mut Vec<Row>) {
        let vars: [Dual<N>; N] = std::array::from_fn(|i| Dual::var(z[b.start + i], i));
        let w = self.sqrt_weight(b.kind.term());
        for r in self.residuals(&b.kind, &vars) {
            if r.v == 0.0 && r.d.iter().all(|d| *d == 0.0) {
                continue;
            }
            let mut jac = [0.0; 11];
            for i in 0..N {
                jac[i] = w * r.d[i];
            }
            rows.push(Row { term: b.kind.term(), start: b.start, len: N, r: w * r.v, jac });
        }
    }

    /// Gradient of one term with respect to every variable.
    pub fn gradient(&self, z: &[f64], term: Term) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        for row in self.linearize(z).iter().filter(|r| r.term == term) {
            for k in 0..row.len {
                g[row.start + k] += 2.0 * row.r * row.jac[k];
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Row {
    pub term: Term,
    pub start: usize,
    pub len: usize,
    pub r: f64,
    pub jac: [f64; 11],
}

fn dts(z: &[f64]) -> impl Iterator<Item = f64> + '_ {
    z.iter().skip(3).step_by(4).copied()
}

/// Hinges are "near active" this fraction of the limit before they bite:
/// the residual is still zero but its Jacobian enters the Gauss–Newton model,
/// which otherwise cannot see a limit it is about to cross.
const NEAR_ACTIVE: f64 = 0.2;

/// Zero with the derivative of `x`.
fn flat<S: Scalar>(x: S) -> S {
    x - S::c(x.val())
}

/// `max(0, lo - x)`
fn hinge_below<S: Scalar>(x: S, lo: f64, margin: f64) -> S {
    if x.val() < lo {
        S::c(lo) - x
    } else if x.val() < lo + margin {
        -flat(x)
    } else {
        S::c(0.0)
    }
}

/// `max(0, |x| - lim)`
fn hinge_abs<S: Scalar>(x: S, lim: f64) -> S {
    let near = (1.0 - NEAR_ACTIVE) * lim;
    if x.val() > lim {
        x - S::c(lim)
    } else if x.val() < -lim {
        -x - S::c(lim)
    } else if x.val() > near {
        flat(x)
    } else if x.val() < -near {
        -flat(x)
    } else {
        S::c(0.0)
    }
}

/// Heading change wrapped to (−π, π]; the wrap offset is constant so it
/// does not affect derivatives.
pub fn angle_diff<S: Scalar>(a: S, b: S) -> S {
    let d = b - a;
    let wrapped = crate::normalize_angle(d.val());
    d + S::c(wrapped - d.val())
}

/// Linear and angular velocity over one segment `[x0, y0, θ0, ΔT, x1, y1, θ1]`.
/// Linear velocity is the displacement projected on the mean heading.
pub fn segment_velocity<S: Scalar>(v: &[S]) -> (S, S) {
    let dth = angle_diff(v[2], v[6]);
    let mean = v[2] + dth * S::c(0.5);
    let (dx, dy) = (v[4] - v[0], v[5] - v[1]);
    let lin = (dx * mean.cos() + dy * mean.sin()) / v[3];
    (lin, dth / v[3])
}

pub fn to_vars(traj: &TebTrajectory) -> Vec<f64> {
    let mut z = Vec::with_capacity(4 * traj.poses.len());
    for (i, p) in traj.poses.iter().enumerate() {
        z.extend([p.x, p.y, p.theta]);
        if let Some(dt) = traj.dts.get(i) {
            z.push(*dt);
        }
    }
    z
}

pub fn from_vars(z: &[f64]) -> TebTrajectory {
    let n = (z.len() + 1) / 4;
    let poses = (0..n)
        .map(|i| crate::Pose2D { x: z[4 * i], y: z[4 * i + 1], theta: z[4 * i + 2] })
        .collect();
    let dts = (0..n - 1).map(|i| z[4 * i + 3]).collect();
    TebTrajectory { poses, dts }
}
