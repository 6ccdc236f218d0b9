//! Levenberg–Marquardt over the flattened band.
//!
//! The model is `F(z + δ) ≈ F + 2Jᵀr·δ + δᵀJᵀJδ`. Each inner iteration solves
//! `(2JᵀJ + λ(diag + 1))δ = −2Jᵀr` with a banded Cholesky, shortens the step
//! to a per-variable trust length, and keeps it only when the true cost does
//! not increase. λ follows the gain-ratio rule.

use serde::{Deserialize, Serialize};

use super::banded::BandedMatrix;
use super::cost::{from_vars, to_vars, Boundary, CostBreakdown, Problem, Row};
use super::{Obstacle, TebLimits, TebParams, TebTrajectory, TebWeights};
use crate::{normalize_angle, Error, Pose2D, Result};

const BANDWIDTH: usize = 10;
const LAMBDA_INIT: f64 = 1e-2;
const LAMBDA_MAX: f64 = 1e10;
const LAMBDA_MIN: f64 = 1e-9;
const MAX_DXY: f64 = 0.1;
const MAX_DTHETA: f64 = 0.3;
const MAX_DT_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    /// Accepted total costs, one sequence per outer iteration.
    pub accepted: Vec<Vec<f64>>,
    pub iterations: usize,
    pub final_cost: CostBreakdown,
}

impl OptimizeReport {
    pub fn is_monotone(&self) -> bool {
        self.accepted.iter().all(|seq| seq.windows(2).all(|w| w[1] <= w[0]))
    }
}

/// Splits segments longer than `insert_above`, drops interior poses that
/// close a segment shorter than `remove_below`, then splits again until the
/// band has `min_poses`.
pub fn auto_resize(traj: &mut TebTrajectory, params: &TebParams) {
    let mut i = 0;
    while i + 1 < traj.poses.len() {
        let (a, b) = (traj.poses[i], traj.poses[i + 1]);
        let len = a.distance(&b);
        if len > params.insert_above && traj.poses.len() < params.max_poses {
            let mid = arc_midpoint(&a, &b);
            let dt = 0.5 * traj.dts[i];
            traj.poses.insert(i + 1, mid);
            traj.dts[i] = dt.max(params.dt_min);
            traj.dts.insert(i + 1, dt.max(params.dt_min));
            continue;
        }
        // never remove the pinned goal; merge into the following segment
        if len < params.remove_below && i + 2 < traj.poses.len() && i + 1 > 0 {
            traj.poses.remove(i + 1);
            let dt = traj.dts.remove(i + 1);
            traj.dts[i] = (traj.dts[i] + dt).min(params.dt_max);
            continue;
        }
        i += 1;
    }
    while traj.poses.len() >= 2 && traj.poses.len() < params.min_poses.min(params.max_poses) {
        let i = (0..traj.poses.len() - 1)
            .max_by(|a, b| {
                let la = traj.poses[*a].distance(&traj.poses[*a + 1]);
                let lb = traj.poses[*b].distance(&traj.poses[*b + 1]);
                la.total_cmp(&lb)
            })
            .unwrap_or(0);
        // start == goal: nothing to split
        if traj.poses[i].distance(&traj.poses[i + 1]) < 1e-9 {
            break;
        }
        let mid = arc_midpoint(&traj.poses[i], &traj.poses[i + 1]);
        let dt = (0.5 * traj.dts[i]).max(params.dt_min);
        traj.poses.insert(i + 1, mid);
        traj.dts[i] = dt;
        traj.dts.insert(i + 1, dt);
    }
}

/// Midpoint of the circular arc joining two poses whose chord runs along
/// their mean heading, so both halves keep satisfying the arc constraint.
pub fn arc_midpoint(a: &Pose2D, b: &Pose2D) -> Pose2D {
    let turn = normalize_angle(b.theta - a.theta);
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len = dx.hypot(dy);
    let sagitta = 0.5 * len * (0.25 * turn).tan();
    // left normal of the chord; a left turn bulges to the right
    let (nx, ny) = if len > 0.0 { (-dy / len, dx / len) } else { (0.0, 0.0) };
    Pose2D::new(
        0.5 * (a.x + b.x) - nx * sagitta,
        0.5 * (a.y + b.y) - ny * sagitta,
        a.theta + 0.5 * turn,
    )
}

pub fn optimize(
    traj: &TebTrajectory,
    obstacles: &[Obstacle],
    weights: &TebWeights,
    limits: &TebLimits,
    params: &TebParams,
    boundary: Boundary,
) -> Result<(TebTrajectory, OptimizeReport)> {
    let mut band = traj.clone();
    let mut report = OptimizeReport::default();
    for _ in 0..params.outer_iterations {
        auto_resize(&mut band, params);
        let problem = Problem::new(&band, obstacles, *weights, *limits, *params, boundary);
        let mut z = to_vars(&band);
        let mut cost = problem.evaluate(&z);
        if let Some(term) = cost.non_finite() {
            return Err(Error::NonFiniteCost { term: term.name() });
        }
        let mut seq = vec![cost.total()];
        let mut lambda = LAMBDA_INIT;
        let mut nu = 2.0;
        for _ in 0..params.inner_iterations {
            report.iterations += 1;
            let rows = problem.linearize(&z);
            let Some((delta, predicted)) = solve_step(&problem, &z, &rows, lambda) else {
                lambda *= nu;
                nu *= 2.0;
                if lambda > LAMBDA_MAX {
                    break;
                }
                continue;
            };
            let candidate = apply(&problem, &z, &delta, params);
            let c = problem.evaluate(&candidate);
            let gain = cost.total() - c.total();
            if gain >= 0.0 {
                z = candidate;
                cost = c;
                seq.push(cost.total());
                let rho = if predicted > 0.0 { gain / predicted } else { 1.0 };
                lambda = (lambda * (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3))).max(LAMBDA_MIN);
                nu = 2.0;
                if gain <= 1e-12 * cost.total().max(1.0) {
                    break;
                }
            } else {
                lambda *= nu;
                nu *= 2.0;
                if lambda > LAMBDA_MAX {
                    break;
                }
            }
        }
        debug_assert!(seq.windows(2).all(|w| w[1] <= w[0]));
        report.accepted.push(seq);
        band = from_vars(&z);
        report.final_cost = cost;
    }
    Ok((band, report))
}

/// Damped step and the reduction the quadratic model predicts for it.
fn solve_step(problem: &Problem, z: &[f64], rows: &[Row], lambda: f64) -> Option<(Vec<f64>, f64)> {
    let n = problem.n_vars();
    let mut h = BandedMatrix::zeros(n, BANDWIDTH);
    let mut g = vec![0.0; n];
    // pinned variables keep an identity row with zero right-hand side
    for row in rows {
        for a in 0..row.len {
            let i = row.start + a;
            if !problem.is_free(i) {
                continue;
            }
            g[i] += 2.0 * row.r * row.jac[a];
            for b in 0..=a {
                if problem.is_free(row.start + b) {
                    h.add_lower(i, row.start + b, 2.0 * row.jac[a] * row.jac[b]);
                }
            }
        }
    }
    for i in 0..n {
        if problem.is_free(i) {
            let d = h.diag(i);
            h.set_diag(i, d + lambda * (d + 1.0));
        } else {
            h.set_diag(i, 1.0);
            g[i] = 0.0;
        }
    }
    let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut delta = h.solve(&rhs)?;
    // shorten the whole step so no variable moves more than its trust
    // length; ΔT has no curvature of its own when the limits are slack
    let mut scale: f64 = 1.0;
    for (k, d) in delta.iter().enumerate() {
        let cap = match k % 4 {
            3 => MAX_DT_FRACTION * z[k],
            2 => MAX_DTHETA,
            _ => MAX_DXY,
        };
        if d.abs() > cap {
            scale = scale.min(cap / d.abs());
        }
    }
    delta.iter_mut().for_each(|d| *d *= scale);
    // model: F + g·δ + Σ (J_row δ)²
    let mut predicted = -g.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>();
    for row in rows {
        let jd: f64 = (0..row.len)
            .filter(|a| problem.is_free(row.start + a))
            .map(|a| row.jac[a] * delta[row.start + a])
            .sum();
        predicted -= jd * jd;
    }
    Some((delta, predicted))
}

fn apply(problem: &Problem, z: &[f64], delta: &[f64], params: &TebParams) -> Vec<f64> {
    let mut out = z.to_vec();
    for k in 0..z.len() {
        if !problem.is_free(k) {
            continue;
        }
        out[k] = match k % 4 {
            2 => normalize_angle(z[k] + delta[k]),
            3 => (z[k] + delta[k]).clamp(params.dt_min, params.dt_max),
            _ => z[k] + delta[k],
        };
    }
    out
}
