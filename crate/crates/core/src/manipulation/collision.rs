//! Inter-arm self-collision check on link capsules.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{JointVector, KinematicChain};

/// Required gap between capsule surfaces.
pub const COLLISION_MARGIN: f64 = 0.02;

pub const LINK_NAMES: [&str; 3] = ["upper_arm", "forearm", "hand"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SelfCollision {
    Clear { distance: f64 },
    /// Link indices (left, right) of the closest pair.
    Colliding { pair: (usize, usize), distance: f64 },
}

impl SelfCollision {
    pub fn is_clear(&self) -> bool {
        matches!(self, SelfCollision::Clear { .. })
    }

    pub fn distance(&self) -> f64 {
        match self {
            SelfCollision::Clear { distance } | SelfCollision::Colliding { distance, .. } => *distance,
        }
    }
}

/// Closest distance between segments `p1q1` and `p2q2`.
pub fn segment_distance(p1: &Vector3<f64>, q1: &Vector3<f64>, p2: &Vector3<f64>, q2: &Vector3<f64>) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let eps = 1e-15;
    let (s, t) = if a <= eps && e <= eps {
        (0.0, 0.0)
    } else if a <= eps {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > eps { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Link segments of an arm: shoulder→elbow, elbow→wrist, wrist→tool.
pub fn link_segments(chain: &KinematicChain, q: &JointVector) -> [(Vector3<f64>, Vector3<f64>); 3] {
    let s = chain.skeleton(q);
    [(s[0], s[1]), (s[1], s[2]), (s[2], s[3])]
}

/// Minimum surface distance between any link of one arm and any link of
/// the other; colliding below [`COLLISION_MARGIN`].
pub fn check_self_collision(
    left: &KinematicChain,
    left_q: &JointVector,
    right: &KinematicChain,
    right_q: &JointVector,
) -> SelfCollision {
    let a = link_segments(left, left_q);
    let b = link_segments(right, right_q);
    let mut best = (f64::INFINITY, (0, 0));
    for (i, (p1, q1)) in a.iter().enumerate() {
        for (j, (p2, q2)) in b.iter().enumerate() {
            let d = segment_distance(p1, q1, p2, q2) - left.link_radius - right.link_radius;
            if d < best.0 {
                best = (d, (i, j));
            }
        }
    }
    if best.0 < COLLISION_MARGIN {
        SelfCollision::Colliding { pair: best.1, distance: best.0 }
    } else {
        SelfCollision::Clear { distance: best.0 }
    }
}
