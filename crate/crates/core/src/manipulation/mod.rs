//! Dual 7-DOF arm kinematics, inverse kinematics and grasp sequencing.

pub(crate) mod chain;
pub mod collision;
pub mod grasp;
pub mod ik;

pub use chain::{ArmSide, ChainFrames, Joint, JointVector, KinematicChain, DOF};
pub use collision::{check_self_collision, SelfCollision};
pub use grasp::{
    check_payload, gripper_down, monitor_target, park_configuration, plan_grasp, select_arm, GraspError, GraspPlan,
    HandoverMonitor, HandoverParams, HandoverStatus, PayloadCheck, TargetStatus, Waypoint,
};
pub use ik::{solve_ik, IkError, IkParams, IkSolution};
