use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::Transform3D;

pub const DOF: usize = 7;

/// Seven joint angles in radians, ordered from shoulder to wrist.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointVector(pub [f64; DOF]);

impl JointVector {
    pub const ZERO: JointVector = JointVector([0.0; DOF]);

    pub fn as_vector(&self) -> nalgebra::SVector<f64, DOF> {
        nalgebra::SVector::from_column_slice(&self.0)
    }

    pub fn from_vector(v: &nalgebra::SVector<f64, DOF>) -> Self {
        let mut q = [0.0; DOF];
        q.copy_from_slice(v.as_slice());
        JointVector(q)
    }

    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for JointVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for JointVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmSide {
    Left,
    Right,
}

impl ArmSide {
    pub fn index(self) -> usize {
        match self {
            ArmSide::Left => 0,
            ArmSide::Right => 1,
        }
    }

    pub fn other(self) -> ArmSide {
        match self {
            ArmSide::Left => ArmSide::Right,
            ArmSide::Right => ArmSide::Left,
        }
    }
}

/// One revolute joint: a fixed transform from the previous joint frame,
/// followed by a rotation about `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub origin: Transform3D,
    pub axis: Unit<Vector3<f64>>,
    pub min: f64,
    pub max: f64,
}

/// World-frame pose of each joint after its rotation has been applied.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    pub joints: [Transform3D; DOF],
    pub end_effector: Transform3D,
}

impl ChainFrames {
    pub fn joint_position(&self, i: usize) -> Vector3<f64> {
        self.joints[i].translation.vector
    }

    pub fn joint_axis(&self, i: usize, chain: &KinematicChain) -> Vector3<f64> {
        self.joints[i].rotation * chain.joints[i].axis.into_inner()
    }
}

/// Serial 7-DOF arm mounted on the base.
///
/// The shipped geometry is a spherical shoulder (yaw, pitch, roll), a 0.4 m
/// upper arm, an elbow pitch and forearm roll, a 0.4 m forearm, a wrist pitch
/// and roll, and a 0.2 m hand: 1.0 m from shoulder to tool point. At `q = 0`
/// the arm points straight along the mount's +x axis.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub side: ArmSide,
    pub mount: Transform3D,
    pub joints: [Joint; DOF],
    pub tool: Transform3D,
    pub link_radius: f64,
}

pub const UPPER_ARM: f64 = 0.4;
pub const FOREARM: f64 = 0.4;
pub const HAND: f64 = 0.2;
pub const SHOULDER_OFFSET: f64 = 0.25;
pub const SHOULDER_HEIGHT: f64 = 1.0;
/// Outward yaw of each shoulder mount.
pub const MOUNT_YAW: f64 = std::f64::consts::PI / 6.0;

fn joint(offset: f64, axis: Vector3<f64>, min: f64, max: f64) -> Joint {
    Joint {
        origin: Isometry3::from_parts(
            Translation3::new(offset, 0.0, 0.0),
            UnitQuaternion::identity(),
        ),
        axis: Unit::new_normalize(axis),
        min,
        max,
    }
}

impl KinematicChain {
    pub fn default_arm(side: ArmSide) -> Self {
        let sign = match side {
            ArmSide::Left => 1.0,
            ArmSide::Right => -1.0,
        };
        let mount = Isometry3::from_parts(
            Translation3::new(0.0, sign * SHOULDER_OFFSET, SHOULDER_HEIGHT),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), sign * MOUNT_YAW),
        );
        let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
        Self {
            side,
            mount,
            joints: [
                joint(0.0, z, -1.7, 1.7),
                joint(0.0, y, -1.5, 1.5),
                joint(0.0, x, -3.0, 3.0),
                joint(UPPER_ARM, y, -0.05, 2.6),
                joint(0.0, x, -3.0, 3.0),
                joint(FOREARM, y, -1.6, 2.1),
                joint(0.0, x, -3.0, 3.0),
            ],
            tool: Isometry3::from_parts(
                Translation3::new(HAND, 0.0, 0.0),
                UnitQuaternion::identity(),
            ),
            link_radius: 0.05,
        }
    }

    /// Shoulder-to-tool reach with the arm fully extended.
    pub fn reach(&self) -> f64 {
        self.joints
            .iter()
            .map(|j| j.origin.translation.vector.norm())
            .sum::<f64>()
            + self.tool.translation.vector.norm()
    }

    pub fn shoulder(&self) -> Vector3<f64> {
        self.mount.translation.vector
    }

    pub fn limits(&self) -> [(f64, f64); DOF] {
        std::array::from_fn(|i| (self.joints[i].min, self.joints[i].max))
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        self.joints
            .iter()
            .zip(q.0.iter())
            .all(|(j, a)| *a >= j.min && *a <= j.max)
    }

    pub fn clamp_to_limits(&self, q: &JointVector) -> JointVector {
        JointVector(std::array::from_fn(|i| {
            q[i].clamp(self.joints[i].min, self.joints[i].max)
        }))
    }

    pub fn frames(&self, q: &JointVector) -> ChainFrames {
        let mut t = self.mount;
        let joints = std::array::from_fn(|i| {
            let j = &self.joints[i];
            t = t * j.origin * UnitQuaternion::from_axis_angle(&j.axis, q[i]);
            t
        });
        ChainFrames {
            joints,
            end_effector: t * self.tool,
        }
    }

    /// End-effector pose in the base frame.
    pub fn forward_kinematics(&self, q: &JointVector) -> Transform3D {
        self.frames(q).end_effector
    }

    /// Points along the arm centerline: shoulder, elbow, wrist, tool.
    pub fn skeleton(&self, q: &JointVector) -> [Vector3<f64>; 4] {
        let f = self.frames(q);
        [
            f.joint_position(1),
            f.joint_position(3),
            f.joint_position(5),
            f.end_effector.translation.vector,
        ]
    }
}
