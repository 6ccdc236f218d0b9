//! Damped-least-squares inverse kinematics with seeded restarts.

use nalgebra::{Matrix6, SMatrix, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{JointVector, KinematicChain, DOF};
use crate::Transform3D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkParams {
    pub damping: f64,
    pub step_clamp: f64,
    pub max_iterations: usize,
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
    pub restarts: usize,
    /// Half-width of the uniform perturbation applied to the seed on restart.
    pub restart_spread: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            damping: 0.1,
            step_clamp: 0.2,
            max_iterations: 200,
            position_tolerance: 1e-3,
            orientation_tolerance: 1e-2,
            restarts: 3,
            restart_spread: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum IkError {
    #[error("target is unreachable")]
    Unreachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub q: JointVector,
    pub iterations: usize,
    pub restarts: usize,
    pub position_error: f64,
    pub orientation_error: f64,
}

/// Position error and rotation-log orientation error, both in the base frame.
pub fn pose_error(current: &Transform3D, target: &Transform3D) -> Vector6<f64> {
    let dp = target.translation.vector - current.translation.vector;
    let dr = (target.rotation * current.rotation.inverse()).scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// Geometric Jacobian (linear rows first) at `q`.
pub fn jacobian(chain: &KinematicChain, q: &JointVector) -> SMatrix<f64, 6, DOF> {
    let f = chain.frames(q);
    let tip = f.end_effector.translation.vector;
    let mut j = SMatrix::<f64, 6, DOF>::zeros();
    for i in 0..DOF {
        let a = f.joint_axis(i, chain);
        let v: Vector3<f64> = a.cross(&(tip - f.joint_position(i)));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&v);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&a);
    }
    j
}

fn converged(e: &Vector6<f64>, p: &IkParams) -> bool {
    e.fixed_rows::<3>(0).norm() < p.position_tolerance && e.fixed_rows::<3>(3).norm() < p.orientation_tolerance
}

/// One damped-least-squares descent from `seed`.
fn descend(chain: &KinematicChain, target: &Transform3D, seed: &JointVector, p: &IkParams) -> (JointVector, usize, bool) {
    let mut q = chain.clamp_to_limits(seed);
    let damp = Matrix6::identity() * (p.damping * p.damping);
    for it in 0..=p.max_iterations {
        let e = pose_error(&chain.forward_kinematics(&q), target);
        if converged(&e, p) {
            return (q, it, true);
        }
        if it == p.max_iterations {
            break;
        }
        let j = jacobian(chain, &q);
        let Some(inv) = (j * j.transpose() + damp).try_inverse() else {
            break;
        };
        let dq = j.transpose() * inv * e;
        let mut next = q;
        for i in 0..DOF {
            next[i] += dq[i].clamp(-p.step_clamp, p.step_clamp);
        }
        q = chain.clamp_to_limits(&next);
    }
    (q, p.max_iterations, false)
}

/// Solves for a configuration placing the tool at `target`. Tries `seed`
/// first, then up to `restarts` perturbed copies of it.
pub fn solve_ik<R: Rng>(
    chain: &KinematicChain,
    target: &Transform3D,
    seed: &JointVector,
    params: &IkParams,
    rng: &mut R,
) -> Result<IkSolution, IkError> {
    let dist = (target.translation.vector - chain.shoulder()).norm();
    if dist > chain.reach() + params.position_tolerance {
        return Err(IkError::Unreachable);
    }
    let mut total = 0;
    for attempt in 0..=params.restarts {
        let start = if attempt == 0 {
            *seed
        } else {
            let mut s = *seed;
            for i in 0..DOF {
                s[i] += rng.random_range(-params.restart_spread..=params.restart_spread);
            }
            s
        };
        let (q, it, ok) = descend(chain, target, &start, params);
        total += it;
        if ok {
            let e = pose_error(&chain.forward_kinematics(&q), target);
            return Ok(IkSolution {
                q,
                iterations: total,
                restarts: attempt,
                position_error: e.fixed_rows::<3>(0).norm(),
                orientation_error: e.fixed_rows::<3>(3).norm(),
            });
        }
    }
    Err(IkError::Unreachable)
}
