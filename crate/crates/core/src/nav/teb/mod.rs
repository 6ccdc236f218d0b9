//! Timed-elastic-band local planner.
//!
//! The band is a sequence of poses with a time interval between each pair.
//! [`optimize`] deforms it in space and time against soft penalties for
//! travel time, obstacle proximity, nonholonomic kinematics, forward-only
//! motion and velocity/acceleration limits (see [`cost`]).

mod banded;
pub mod cost;
mod dual;
pub(crate) mod optimize;

pub use banded::BandedMatrix;
pub use cost::{Boundary, CostBreakdown, Problem, Term};
pub use optimize::{auto_resize, optimize, OptimizeReport};

use serde::{Deserialize, Serialize};

use crate::world::Point2;
use crate::{normalize_angle, Costmap, Pose2D, Result, Twist2D, LETHAL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TebWeights {
    pub time: f64,
    pub obstacle: f64,
    pub kinematics: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

// Velocity and acceleration weights are high enough that the limits bind
// within a few percent; lower values let the time term trade overspeed for
// travel time.
impl Default for TebWeights {
    fn default() -> Self {
        Self { time: 1.0, obstacle: 50.0, kinematics: 1000.0, velocity: 100.0, acceleration: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TebLimits {
    pub v_max: f64,
    pub omega_max: f64,
    pub a_max: f64,
}

impl Default for TebLimits {
    fn default() -> Self {
        Self { v_max: 0.5, omega_max: 1.0, a_max: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TebParams {
    /// Clearance below which the obstacle penalty is active.
    pub d_min: f64,
    /// Radius of the circle enclosing the footprint; clearance is measured
    /// from this circle.
    pub robot_radius: f64,
    /// Obstacles farther than this (clearance) are not attached to a pose.
    pub association_radius: f64,
    pub spacing: f64,
    pub insert_above: f64,
    pub remove_below: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub max_poses: usize,
    /// Shorter bands are refined by splitting their longest segment.
    pub min_poses: usize,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Iterations per control tick when the band is warm-started.
    pub warm_outer_iterations: usize,
    pub warm_inner_iterations: usize,
    /// Distance along the global path to the local goal.
    pub lookahead: f64,
    /// Fraction of `v_max` used for the initial time stamps.
    pub v_ref_fraction: f64,
}

impl Default for TebParams {
    fn default() -> Self {
        Self {
            d_min: 0.25,
            robot_radius: 0.35,
            association_radius: 1.0,
            spacing: 0.2,
            insert_above: 0.4,
            remove_below: 0.1,
            dt_min: 0.01,
            dt_max: 1.0,
            max_poses: 100,
            min_poses: 3,
            outer_iterations: 5,
            inner_iterations: 20,
            warm_outer_iterations: 2,
            warm_inner_iterations: 10,
            lookahead: 3.0,
            v_ref_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Point2,
    pub radius: f64,
}

impl Obstacle {
    pub fn point(center: Point2) -> Self {
        Self { center, radius: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TebTrajectory {
    pub poses: Vec<Pose2D>,
    pub dts: Vec<f64>,
}

impl TebTrajectory {
    pub fn total_time(&self) -> f64 {
        self.dts.iter().sum()
    }

    pub fn length(&self) -> f64 {
        self.poses.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }

    pub fn start(&self) -> &Pose2D {
        &self.poses[0]
    }

    pub fn goal(&self) -> &Pose2D {
        self.poses.last().expect("band has at least two poses")
    }

    /// Smallest clearance of any pose to any obstacle.
    pub fn min_clearance(&self, obstacles: &[Obstacle], robot_radius: f64) -> f64 {
        self.poses
            .iter()
            .flat_map(|p| obstacles.iter().map(move |o| cost::clearance(p.x, p.y, o, robot_radius)))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Samples the polyline every `spacing` meters (uniformly, endpoints
/// included) with headings along the path tangent and `ΔT = len / v_ref`.
pub fn initialize(path: &[Point2], v_ref: f64, params: &TebParams) -> TebTrajectory {
    assert!(!path.is_empty(), "global path must not be empty");
    let mut pts: Vec<Point2> = vec![path[0]];
    for p in &path[1..] {
        if (p - pts.last().unwrap()).norm() > 1e-9 {
            pts.push(*p);
        }
    }
    if pts.len() == 1 {
        let p = Pose2D::new(pts[0].x, pts[0].y, 0.0);
        return TebTrajectory { poses: vec![p, p], dts: vec![params.dt_min] };
    }
    let seg_len: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = seg_len.iter().sum();
    let k = ((total / params.spacing - 1e-9).ceil() as usize).max(1);
    let step = total / k as f64;

    let mut poses = Vec::with_capacity(k + 1);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for j in 0..=k {
        let s = if j == k { total } else { j as f64 * step };
        while seg + 1 < seg_len.len() && s >= seg_start + seg_len[seg] - 1e-12 {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let dir = (pts[seg + 1] - pts[seg]) / seg_len[seg];
        let p = pts[seg] + dir * (s - seg_start).min(seg_len[seg]);
        poses.push(Pose2D::new(p.x, p.y, dir.y.atan2(dir.x)));
    }
    let dts = poses
        .windows(2)
        .map(|w| (w[0].distance(&w[1]) / v_ref).clamp(params.dt_min, params.dt_max))
        .collect();
    TebTrajectory { poses, dts }
}

/// Linear velocity is the displacement `s₀ → s₁` projected on the heading of
/// `s₀`; angular velocity is the wrapped heading change. Both over `ΔT₀`.
pub fn next_command(traj: &TebTrajectory) -> Twist2D {
    if traj.poses.len() < 2 {
        return Twist2D::ZERO;
    }
    let (a, b, dt) = (traj.poses[0], traj.poses[1], traj.dts[0]);
    let v = ((b.x - a.x) * a.theta.cos() + (b.y - a.y) * a.theta.sin()) / dt;
    Twist2D::new(v, normalize_angle(b.theta - a.theta) / dt)
}

/// Commands slower than this backwards count as reversing.
pub const REVERSE_TOLERANCE: f64 = 1e-3;

pub fn is_reverse(cmd: &Twist2D) -> bool {
    cmd.v < -REVERSE_TOLERANCE
}

/// True when the band comes closer than `0.8·d_min` to an obstacle, its end
/// is more than 0.1 m from `goal`, or it is not executable.
pub fn needs_replan(traj: &TebTrajectory, obstacles: &[Obstacle], goal: &Pose2D, params: &TebParams) -> bool {
    if traj.poses.len() < 2 || traj.dts.len() + 1 != traj.poses.len() {
        return true;
    }
    if traj.min_clearance(obstacles, params.robot_radius) < 0.8 * params.d_min {
        return true;
    }
    if traj.goal().position().coords.metric_distance(&goal.position().coords) > 0.1 {
        return true;
    }
    let finite = traj.poses.iter().all(|p| p.x.is_finite() && p.y.is_finite() && p.theta.is_finite());
    let dt_ok = traj.dts.iter().all(|dt| *dt >= params.dt_min - 1e-12 && *dt <= params.dt_max + 1e-12);
    !finite || !dt_ok || is_reverse(&next_command(traj))
}

/// Boundary cells of lethal regions within `radius` of `around`, as discs
/// of half a cell.
pub fn obstacles_from_costmap(costmap: &Costmap, around: &Point2, radius: f64) -> Vec<Obstacle> {
    let g = *costmap.geometry();
    let r = g.resolution;
    let (cx, cy) = g.world_to_cell_signed(around);
    let span = (radius / r).ceil() as i64;
    let lethal = |ix: i64, iy: i64| g.checked_cell(ix, iy).is_some_and(|c| costmap.cost(c) == LETHAL);
    let mut out = Vec::new();
    for iy in cy - span..=cy + span {
        for ix in cx - span..=cx + span {
            if !lethal(ix, iy) {
                continue;
            }
            let interior = lethal(ix + 1, iy) && lethal(ix - 1, iy) && lethal(ix, iy + 1) && lethal(ix, iy - 1);
            if interior {
                continue;
            }
            let c = g.checked_cell(ix, iy).unwrap();
            let p = g.cell_center(c);
            if (p - around).norm() <= radius {
                out.push(Obstacle { center: p, radius: 0.5 * r });
            }
        }
    }
    out
}

/// Stateful wrapper: seeds a band from the global path, warm-starts it
/// every control tick and reports the command to execute.
#[derive(Debug, Clone, Default)]
pub struct TebPlanner {
    pub weights: TebWeights,
    pub limits: TebLimits,
    pub params: TebParams,
    traj: Option<TebTrajectory>,
    local_goal: Option<(Pose2D, bool)>,
    last_cost: Option<CostBreakdown>,
}

impl TebPlanner {
    pub fn new(weights: TebWeights, limits: TebLimits, params: TebParams) -> Self {
        Self { weights, limits, params, ..Default::default() }
    }

    pub fn trajectory(&self) -> Option<&TebTrajectory> {
        self.traj.as_ref()
    }

    pub fn last_cost(&self) -> Option<&CostBreakdown> {
        self.last_cost.as_ref()
    }

    pub fn clear(&mut self) {
        self.traj = None;
        self.local_goal = None;
    }

    /// Local goal `lookahead` meters along `path` past the point closest to
    /// `pose`. The flag is set when that is the end of the path.
    pub fn local_goal(&self, pose: &Pose2D, path: &[Point2], goal: &Pose2D) -> (Pose2D, bool) {
        let (local, is_final, _) = self.lookahead(pose, path, goal);
        (local, is_final)
    }

    /// Local goal plus the range of path vertices strictly between the
    /// robot's projection and the local goal.
    fn lookahead(&self, pose: &Pose2D, path: &[Point2], goal: &Pose2D) -> (Pose2D, bool, std::ops::Range<usize>) {
        if path.len() < 2 {
            return (*goal, true, 0..0);
        }
        let p = pose.position();
        let mut best = (f64::INFINITY, 0usize, 0.0);
        for (i, w) in path.windows(2).enumerate() {
            let d = w[1] - w[0];
            let len2 = d.norm_squared();
            let t = if len2 > 0.0 { ((p - w[0]).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let dist = (w[0] + d * t - p).norm();
            if dist < best.0 {
                best = (dist, i, t);
            }
        }
        let (_, first, t) = best;
        let mut seg = first;
        let mut remaining = self.params.lookahead;
        let mut from = path[seg] + (path[seg + 1] - path[seg]) * t;
        loop {
            let to = path[seg + 1];
            let len = (to - from).norm();
            if remaining <= len && len > 0.0 {
                let dir = (to - from) / len;
                let q = from + dir * remaining;
                return (Pose2D::new(q.x, q.y, dir.y.atan2(dir.x)), false, first + 1..seg + 1);
            }
            remaining -= len;
            seg += 1;
            if seg + 1 >= path.len() {
                return (*goal, true, first + 1..path.len() - 1);
            }
            from = path[seg];
        }
    }

    /// Whether the current band should be discarded and re-seeded.
    pub fn needs_replan(&self, pose: &Pose2D, obstacles: &[Obstacle], goal: &Pose2D) -> bool {
        let (Some(traj), Some((local, is_final))) = (&self.traj, &self.local_goal) else {
            return true;
        };
        if *is_final {
            if needs_replan(traj, obstacles, goal, &self.params) {
                return true;
            }
        } else if needs_replan(traj, obstacles, local, &self.params)
            || pose.distance(local) < 0.5 * self.params.lookahead
        {
            return true;
        }
        false
    }

    pub fn reseed(&mut self, pose: &Pose2D, path: &[Point2], goal: &Pose2D) {
        let (local, is_final, between) = self.lookahead(pose, path, goal);
        let start = pose.position();
        let mut pts = vec![start];
        for w in &path[between] {
            if (w - start).norm() >= self.params.spacing && (w - local.position()).norm() >= 1e-9 {
                pts.push(*w);
            }
        }
        pts.push(local.position());
        let v_ref = self.params.v_ref_fraction * self.limits.v_max;
        let mut traj = initialize(&pts, v_ref, &self.params);
        traj.poses[0] = *pose;
        let n = traj.poses.len();
        if n > 1 {
            traj.poses[n - 1] = Pose2D::new(local.x, local.y, local.theta);
        }
        self.traj = Some(traj);
        self.local_goal = Some((local, is_final));
    }

    /// Warm-starts the band at `pose`, optimizes it and returns the command.
    pub fn update(&mut self, pose: &Pose2D, v_now: f64, obstacles: &[Obstacle], fresh: bool) -> Result<Twist2D> {
        let Some(mut traj) = self.traj.take() else {
            return Ok(Twist2D::ZERO);
        };
        let is_final = self.local_goal.is_some_and(|(_, f)| f);
        // drop poses the robot has already passed
        let n = traj.poses.len();
        let k = (0..n - 1)
            .min_by(|a, b| {
                pose.distance(&traj.poses[*a]).total_cmp(&pose.distance(&traj.poses[*b]))
            })
            .unwrap_or(0);
        if k > 0 {
            traj.poses.drain(0..k);
            traj.dts.drain(0..k);
        }
        traj.poses[0] = *pose;
        let mut params = self.params;
        if !fresh {
            params.outer_iterations = params.warm_outer_iterations;
            params.inner_iterations = params.warm_inner_iterations;
        }
        let boundary = Boundary { v_start: v_now, v_goal: is_final.then_some(0.0) };
        let (traj, report) = optimize(&traj, obstacles, &self.weights, &self.limits, &params, boundary)?;
        let cmd = next_command(&traj);
        self.last_cost = Some(report.final_cost);
        self.traj = Some(traj);
        Ok(cmd)
    }
}
