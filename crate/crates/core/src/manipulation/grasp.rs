//! Arm selection, grasp sequencing, payload gate and handover detection.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::collision::check_self_collision;
use super::ik::{solve_ik, IkParams};
use super::{ArmSide, JointVector, KinematicChain};
use crate::sim::WristForce;
use crate::{Error, Result, Transform3D};

pub const PAYLOAD_LIMIT_KG: f64 = 2.2;
pub const APPROACH_OFFSET: f64 = 0.10;

/// Configuration of an arm that is not in use: hanging beside the base.
pub fn park_configuration() -> JointVector {
    JointVector([0.0, 1.2, 0.0, 0.4, 0.0, 0.0, 0.0])
}

/// Reachability score per arm; the smaller finite one wins, exact ties go
/// to the right arm.
pub fn select_arm(left: &KinematicChain, right: &KinematicChain, object: &Transform3D) -> Option<ArmSide> {
    let score = |c: &KinematicChain| {
        let d = (object.translation.vector - c.shoulder()).norm();
        if d <= c.reach() {
            d
        } else {
            f64::INFINITY
        }
    };
    let (l, r) = (score(left), score(right));
    match (l.is_finite(), r.is_finite()) {
        (false, false) => None,
        _ if l < r => Some(ArmSide::Left),
        _ => Some(ArmSide::Right),
    }
}

/// Tool pointing straight down, rotated `yaw` about the vertical.
pub fn gripper_down(position: Vector3<f64>, yaw: f64) -> Transform3D {
    let r = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2);
    Isometry3::from_parts(Translation3::from(position), r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waypoint {
    Intermediate,
    Grasp,
    Retreat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum GraspError {
    #[error("no IK solution for the {0:?} waypoint")]
    Unreachable(Waypoint),
    #[error("{0:?} waypoint collides with the other arm")]
    SelfCollision(Waypoint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspPlan {
    pub arm: ArmSide,
    /// Intermediate, grasp and retreat configurations.
    pub waypoints: [JointVector; 3],
    pub object_id: String,
    pub object_mass: f64,
    /// Object pose in the base frame when the plan was made.
    pub object_pose: Transform3D,
}

/// Yaw of the object's x axis projected on the horizontal plane.
fn planar_yaw(t: &Transform3D) -> f64 {
    let x = t.rotation * Vector3::x();
    x.y.atan2(x.x)
}

/// Top-down grasp with one intermediate point 0.10 m above the object and
/// a retreat to the same height. Each waypoint is solved from the previous
/// solution and checked against the other arm at `other_q`.
#[allow(clippy::too_many_arguments)]
pub fn plan_grasp<R: Rng>(
    chain: &KinematicChain,
    other: &KinematicChain,
    other_q: &JointVector,
    object_id: &str,
    object_pose: &Transform3D,
    mass: f64,
    seed: &JointVector,
    params: &IkParams,
    rng: &mut R,
) -> Result<GraspPlan, GraspError> {
    let p = object_pose.translation.vector;
    let yaw = planar_yaw(object_pose);
    let grasp = gripper_down(p, yaw);
    let above = gripper_down(p + Vector3::z() * APPROACH_OFFSET, yaw);
    let targets = [(Waypoint::Intermediate, above), (Waypoint::Grasp, grasp), (Waypoint::Retreat, above)];
    let mut q = *seed;
    let mut out = [JointVector::ZERO; 3];
    for (k, (which, target)) in targets.iter().enumerate() {
        q = solve_ik(chain, target, &q, params, rng).map_err(|_| GraspError::Unreachable(*which))?.q;
        let clear = match chain.side {
            ArmSide::Left => check_self_collision(chain, &q, other, other_q),
            ArmSide::Right => check_self_collision(other, other_q, chain, &q),
        };
        if !clear.is_clear() {
            return Err(GraspError::SelfCollision(*which));
        }
        out[k] = q;
    }
    Ok(GraspPlan {
        arm: chain.side,
        waypoints: out,
        object_id: object_id.to_string(),
        object_mass: mass,
        object_pose: *object_pose,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetStatus {
    Keep,
    Replan,
}

pub const REPLAN_TRANSLATION: f64 = 0.03;
pub const REPLAN_ROTATION: f64 = 0.1;

pub fn monitor_target(plan: &GraspPlan, latest: &Transform3D) -> TargetStatus {
    let dp = (latest.translation.vector - plan.object_pose.translation.vector).norm();
    let dr = plan.object_pose.rotation.angle_to(&latest.rotation);
    if dp > REPLAN_TRANSLATION || dr > REPLAN_ROTATION {
        TargetStatus::Replan
    } else {
        TargetStatus::Keep
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PayloadCheck {
    Ok,
    OverLimit,
}

pub fn check_payload(mass_kg: f64) -> Result<PayloadCheck> {
    if !(mass_kg >= 0.0) || !mass_kg.is_finite() {
        return Err(Error::InvalidMass(mass_kg));
    }
    Ok(if mass_kg <= PAYLOAD_LIMIT_KG { PayloadCheck::Ok } else { PayloadCheck::OverLimit })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HandoverStatus {
    Hold,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandoverParams {
    pub force_threshold: f64,
    pub debounce: u32,
}

impl Default for HandoverParams {
    fn default() -> Self {
        Self { force_threshold: 5.0, debounce: 3 }
    }
}

/// Releases once `|f_z|` has been at or above the threshold for `debounce`
/// consecutive readings.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HandoverMonitor {
    pub params: HandoverParams,
    streak: u32,
}

impl HandoverMonitor {
    pub fn new(params: HandoverParams) -> Self {
        Self { params, streak: 0 }
    }

    pub fn reset(&mut self) {
        self.streak = 0;
    }

    pub fn update(&mut self, reading: &WristForce) -> HandoverStatus {
        if reading.f_z.abs() >= self.params.force_threshold {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        if self.streak >= self.params.debounce {
            HandoverStatus::Release
        } else {
            HandoverStatus::Hold
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn arms() -> (KinematicChain, KinematicChain) {
        (KinematicChain::default_arm(ArmSide::Left), KinematicChain::default_arm(ArmSide::Right))
    }

    fn at(x: f64, y: f64, z: f64) -> Transform3D {
        Isometry3::translation(x, y, z)
    }

    #[test]
    fn arm_selection_examples() {
        let (l, r) = arms();
        assert_eq!(select_arm(&l, &r, &at(0.6, 0.4, 0.8)), Some(ArmSide::Left));
        assert_eq!(select_arm(&l, &r, &at(0.6, 0.0, 0.8)), Some(ArmSide::Right));
        assert_eq!(select_arm(&l, &r, &at(1.8, 0.0, 0.8)), None);
    }

    proptest! {
        #[test]
        fn selection_mirrors(x in -1.5f64..1.5, y in -1.5f64..1.5, z in 0.0f64..2.0) {
            let (l, r) = arms();
            let a = select_arm(&l, &r, &at(x, y, z));
            let b = select_arm(&l, &r, &at(x, -y, z));
            if y.abs() > 1e-9 {
                prop_assert_eq!(a.map(ArmSide::other), b);
            }
        }
    }

    #[test]
    fn grasp_plan_offsets() {
        let (l, r) = arms();
        let mut rng = stream(3, Stream::Ik);
        let obj = at(0.65, 0.3, 0.75);
        let plan = plan_grasp(&l, &r, &park_configuration(), "cup", &obj, 0.3, &JointVector::ZERO, &IkParams::default(), &mut rng).unwrap();
        let z = |q: &JointVector| l.forward_kinematics(q).translation.z;
        assert!((z(&plan.waypoints[0]) - z(&plan.waypoints[1]) - APPROACH_OFFSET).abs() < 2e-3);
        assert!((z(&plan.waypoints[2]) - z(&plan.waypoints[1]) - APPROACH_OFFSET).abs() < 2e-3);
        let tip = l.forward_kinematics(&plan.waypoints[1]).translation.vector;
        assert!((tip - obj.translation.vector).norm() < 1e-3);
        for q in &plan.waypoints {
            assert!(check_self_collision(&l, q, &r, &park_configuration()).is_clear());
        }
    }

    #[test]
    fn intermediate_beyond_reach() {
        // wrist (0.2 m above the tool) within reach for the grasp, not 0.1 m higher
        let (l, r) = arms();
        let mut rng = stream(3, Stream::Ik);
        let s = l.shoulder();
        let yaw = crate::manipulation::chain::MOUNT_YAW;
        let h = 0.77;
        let obj = at(s.x + h * yaw.cos(), s.y + h * yaw.sin(), s.z - 0.2 + 0.15);
        let err = plan_grasp(&l, &r, &park_configuration(), "cup", &obj, 0.3, &JointVector::ZERO, &IkParams::default(), &mut rng).unwrap_err();
        assert_eq!(err, GraspError::Unreachable(Waypoint::Intermediate));
    }

    #[test]
    fn target_monitoring() {
        let plan = GraspPlan {
            arm: ArmSide::Right,
            waypoints: [JointVector::ZERO; 3],
            object_id: "cup".into(),
            object_mass: 0.3,
            object_pose: at(0.5, 0.0, 0.8),
        };
        assert_eq!(monitor_target(&plan, &at(0.5, 0.0, 0.8)), TargetStatus::Keep);
        assert_eq!(monitor_target(&plan, &at(0.55, 0.0, 0.8)), TargetStatus::Replan);
        let turned = Isometry3::from_parts(Translation3::new(0.5, 0.0, 0.8), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.2));
        assert_eq!(monitor_target(&plan, &turned), TargetStatus::Replan);
    }

    #[test]
    fn payload_gate() {
        assert_eq!(check_payload(0.3).unwrap(), PayloadCheck::Ok);
        assert_eq!(check_payload(2.2).unwrap(), PayloadCheck::Ok);
        assert_eq!(check_payload(5.0).unwrap(), PayloadCheck::OverLimit);
        assert!(check_payload(-0.1).is_err());
        assert!(check_payload(f64::NAN).is_err());
    }

    #[test]
    fn handover_debounce() {
        let run = |forces: &[f64]| {
            let mut m = HandoverMonitor::default();
            forces.iter().position(|f| m.update(&WristForce { f_z: *f }) == HandoverStatus::Release)
        };
        assert_eq!(run(&[0.0; 50]), None);
        assert_eq!(run(&[0.0, 6.0, 6.0, 6.0]), Some(3));
        assert_eq!(run(&[6.0, 0.0, 6.0, 0.0, 6.0, 0.0, 6.0]), None);
        assert_eq!(run(&[0.0, -5.0, -5.0, -5.0]), Some(3));
    }
}
