//! Deterministic ground-truth world.
//!
//! A single driver calls [`WorldModel::tick`] at a fixed 20 Hz. Dynamic
//! obstacles move at constant velocity, the base follows exact unicycle
//! kinematics, and the arms move kinematically toward their joint targets at
//! a fixed joint rate. All sensor noise comes from seeded streams.

mod drive;
mod lidar;

pub use drive::step_drive;
pub use lidar::{cast_lidar, ray_disc, ray_segment, Disc, LidarParams, LidarScan, Segment};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::manipulation::{ArmSide, JointVector, KinematicChain};
use crate::rng::{self, SimRng, Stream};
use crate::world::{Point2, Vector2};
use crate::{Error, Footprint, Pose2D, Result, Transform3D, Twist2D};

pub const TICK_DT: f64 = 0.05;
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkerParams {
    pub sigma_pos: f64,
    pub sigma_rot: f64,
    pub max_range: f64,
    /// Half-angle of the camera cone around the base heading.
    pub half_fov: f64,
}

impl Default for MarkerParams {
    fn default() -> Self {
        Self {
            sigma_pos: 0.005,
            sigma_rot: 0.01,
            max_range: 1.5,
            half_fov: 60f64.to_radians(),
        }
    }
}

/// Odometry error model: standard deviations proportional to the motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryNoise {
    pub alpha_trans: f64,
    pub alpha_rot: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self {
            alpha_trans: 0.05,
            alpha_rot: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub lidar: LidarParams,
    pub marker: MarkerParams,
    pub odometry: OdometryNoise,
    /// Joint-space speed limit of the kinematic arms, rad/s.
    pub arm_joint_rate: f64,
    /// Number of ticks an operator tug keeps pulling on the wrist.
    pub tug_ticks: u32,
    /// Tool-to-object distance below which closing the gripper grasps.
    pub grasp_tolerance: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            lidar: LidarParams::default(),
            marker: MarkerParams::default(),
            odometry: OdometryNoise::default(),
            arm_joint_rate: 1.0,
            tug_ticks: 5,
            grasp_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicObstacle {
    pub id: u32,
    pub center: Point2,
    pub radius: f64,
    pub velocity: Vector2,
}

impl DynamicObstacle {
    pub fn disc(&self) -> Disc {
        Disc {
            center: self.center,
            radius: self.radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldObject {
    pub id: String,
    pub marker: u32,
    /// World-frame pose.
    pub pose: Transform3D,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gripper {
    Open,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmCommand {
    pub target: Option<JointVector>,
    pub gripper: Option<Gripper>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub q: JointVector,
    pub target: JointVector,
    pub gripper_closed: bool,
    /// Held object index and its pose in the tool frame.
    pub holding: Option<(usize, Transform3D)>,
}

impl ArmState {
    fn at(q: JointVector) -> Self {
        Self {
            q,
            target: q,
            gripper_closed: false,
            holding: None,
        }
    }

    pub fn at_target(&self) -> bool {
        self.q == self.target
    }
}

/// Force along the tool z-axis, tared for the held load.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WristForce {
    pub f_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerReading {
    pub object_id: String,
    pub marker: u32,
    /// Object pose in the base frame.
    pub pose: Transform3D,
}

/// Everything the robot senses during one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorBundle {
    pub tick: u64,
    pub time: f64,
    pub scan: LidarScan,
    /// Noisy base motion since the previous tick, in the previous base frame.
    pub odometry: Pose2D,
    pub wrist: [WristForce; 2],
    pub markers: Vec<MarkerReading>,
    pub arm_q: [JointVector; 2],
    pub collision: bool,
}

pub fn base_transform(pose: &Pose2D) -> Transform3D {
    Isometry3::from_parts(
        Translation3::new(pose.x, pose.y, 0.0),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), pose.theta),
    )
}

#[derive(Debug, Clone)]
pub struct WorldModel {
    pub walls: Vec<Segment>,
    pub obstacles: Vec<DynamicObstacle>,
    pub objects: Vec<WorldObject>,
    pub base: Pose2D,
    pub arms: [ArmState; 2],
    pub chains: [KinematicChain; 2],
    pub footprint: Footprint,
    pub params: SimParams,
    pub tick: u64,
    next_obstacle_id: u32,
    tug: Option<(f64, u32)>,
    rng_lidar: SimRng,
    rng_marker: SimRng,
    rng_odom: SimRng,
}

impl WorldModel {
    pub fn new(seed: u64, walls: Vec<Segment>, base: Pose2D, params: SimParams) -> Self {
        Self {
            walls,
            obstacles: Vec::new(),
            objects: Vec::new(),
            base,
            arms: [ArmState::at(JointVector::ZERO), ArmState::at(JointVector::ZERO)],
            chains: [
                KinematicChain::default_arm(ArmSide::Left),
                KinematicChain::default_arm(ArmSide::Right),
            ],
            footprint: Footprint::default(),
            params,
            tick: 0,
            next_obstacle_id: 1,
            tug: None,
            rng_lidar: rng::stream(seed, Stream::Lidar),
            rng_marker: rng::stream(seed, Stream::Marker),
            rng_odom: rng::stream(seed, Stream::Odometry),
        }
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * TICK_DT
    }

    pub fn add_obstacle(&mut self, center: Point2, radius: f64, velocity: Vector2) -> u32 {
        let id = self.next_obstacle_id;
        self.next_obstacle_id += 1;
        self.obstacles.push(DynamicObstacle {
            id,
            center,
            radius,
            velocity,
        });
        id
    }

    pub fn remove_obstacle(&mut self, id: u32) {
        self.obstacles.retain(|o| o.id != id);
    }

    pub fn set_arm_configuration(&mut self, side: ArmSide, q: JointVector) {
        let arm = &mut self.arms[side.index()];
        arm.q = q;
        arm.target = q;
    }

    /// Starts an external pull on the wrist of whichever arm holds an object.
    pub fn apply_tug(&mut self, f_z: f64) {
        self.tug = Some((f_z, self.params.tug_ticks));
    }

    pub fn object_index(&self, id: &str) -> Result<usize> {
        self.objects
            .iter()
            .position(|o| o.id == id)
            .ok_or_else(|| Error::UnknownObject(id.to_string()))
    }

    pub fn discs(&self) -> Vec<Disc> {
        self.obstacles.iter().map(DynamicObstacle::disc).collect()
    }

    pub fn in_collision(&self) -> bool {
        self.obstacles
            .iter()
            .any(|o| self.footprint.intersects_disc(&self.base, &o.center, o.radius))
            || self
                .walls
                .iter()
                .any(|w| self.footprint.intersects_segment(&self.base, &w.a, &w.b))
    }

    pub fn cast_lidar(&mut self) -> LidarScan {
        let discs = self.discs();
        cast_lidar(&self.walls, &discs, &self.base, &self.params.lidar, &mut self.rng_lidar)
    }

    /// Object pose in the base frame as seen by the fiducial camera.
    ///
    /// `Ok(None)` when the marker is out of range or outside the camera cone.
    pub fn sense_marker(&mut self, object_id: &str) -> Result<Option<Transform3D>> {
        let idx = self.object_index(object_id)?;
        Ok(self.sense_marker_index(idx))
    }

    fn sense_marker_index(&mut self, idx: usize) -> Option<Transform3D> {
        let rel = base_transform(&self.base).inverse() * self.objects[idx].pose;
        let p = rel.translation.vector;
        let m = &self.params.marker;
        if p.x.hypot(p.y) > m.max_range || p.y.atan2(p.x).abs() > m.half_fov {
            return None;
        }
        let mut noisy = rel;
        if m.sigma_pos > 0.0 {
            let n = Normal::new(0.0, m.sigma_pos).expect("sigma");
            noisy.translation.vector += Vector3::from_fn(|_, _| n.sample(&mut self.rng_marker));
        }
        if m.sigma_rot > 0.0 {
            let n = Normal::new(0.0, m.sigma_rot).expect("sigma");
            let w = Vector3::from_fn(|_, _| n.sample(&mut self.rng_marker));
            noisy.rotation = UnitQuaternion::from_scaled_axis(w) * noisy.rotation;
        }
        Some(noisy)
    }

    fn noisy_odometry(&mut self, delta: &Pose2D) -> Pose2D {
        let trans = delta.x.hypot(delta.y);
        let rot = delta.theta.abs();
        let st = self.params.odometry.alpha_trans * trans;
        let sr = self.params.odometry.alpha_rot * rot + 0.01 * trans;
        let mut sample = |s: f64| {
            if s > 0.0 {
                Normal::new(0.0, s).expect("sigma").sample(&mut self.rng_odom)
            } else {
                0.0
            }
        };
        let (ex, ey, et) = (sample(st), sample(st), sample(sr));
        Pose2D::new(delta.x + ex, delta.y + ey, delta.theta + et)
    }

    fn tool_in_world(&self, side: usize) -> Transform3D {
        base_transform(&self.base) * self.chains[side].forward_kinematics(&self.arms[side].q)
    }

    fn apply_gripper(&mut self, side: usize, g: Gripper) {
        match g {
            Gripper::Close if !self.arms[side].gripper_closed => {
                self.arms[side].gripper_closed = true;
                let tool = self.tool_in_world(side);
                let tol = self.params.grasp_tolerance;
                let held = self.arms.iter().filter_map(|a| a.holding.map(|h| h.0)).collect::<Vec<_>>();
                let pick = self
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !held.contains(i))
                    .map(|(i, o)| (i, (o.pose.translation.vector - tool.translation.vector).norm()))
                    .filter(|(_, d)| *d <= tol)
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((i, _)) = pick {
                    let offset = tool.inverse() * self.objects[i].pose;
                    self.arms[side].holding = Some((i, offset));
                }
            }
            Gripper::Open => {
                self.arms[side].gripper_closed = false;
                self.arms[side].holding = None;
            }
            Gripper::Close => {}
        }
    }

    /// Advances the world by one fixed tick and returns the sensor bundle.
    pub fn tick(&mut self, base_cmd: Twist2D, arm_cmds: [ArmCommand; 2]) -> SensorBundle {
        let dt = TICK_DT;
        for o in &mut self.obstacles {
            o.center += o.velocity * dt;
        }

        let prev = self.base;
        self.base = step_drive(&self.base, &base_cmd, dt);

        let max_step = self.params.arm_joint_rate * dt;
        for (side, cmd) in arm_cmds.iter().enumerate() {
            if let Some(t) = cmd.target {
                self.arms[side].target = self.chains[side].clamp_to_limits(&t);
            }
            let arm = &mut self.arms[side];
            for j in 0..arm.q.0.len() {
                let d = arm.target[j] - arm.q[j];
                arm.q[j] = if d.abs() <= max_step {
                    arm.target[j]
                } else {
                    arm.q[j] + max_step * d.signum()
                };
            }
            if let Some(g) = cmd.gripper {
                self.apply_gripper(side, g);
            }
        }
        for side in 0..2 {
            if let Some((i, offset)) = self.arms[side].holding {
                self.objects[i].pose = self.tool_in_world(side) * offset;
            }
        }

        let tug = match self.tug.take() {
            Some((f, n)) if n > 0 => {
                if n > 1 {
                    self.tug = Some((f, n - 1));
                }
                f
            }
            _ => 0.0,
        };
        let wrist = std::array::from_fn(|side| WristForce {
            f_z: if self.arms[side].holding.is_some() { tug } else { 0.0 },
        });

        self.tick += 1;
        let delta = if prev == self.base {
            Pose2D::identity()
        } else {
            prev.between(&self.base)
        };
        let odometry = self.noisy_odometry(&delta);
        let scan = self.cast_lidar();
        let held: Vec<usize> = self.arms.iter().filter_map(|a| a.holding.map(|h| h.0)).collect();
        let markers = (0..self.objects.len())
            .filter(|i| !held.contains(i))
            .filter_map(|i| {
                self.sense_marker_index(i).map(|pose| MarkerReading {
                    object_id: self.objects[i].id.clone(),
                    marker: self.objects[i].marker,
                    pose,
                })
            })
            .collect();
        SensorBundle {
            tick: self.tick,
            time: self.time(),
            scan,
            odometry,
            wrist,
            markers,
            arm_q: [self.arms[0].q, self.arms[1].q],
            collision: self.in_collision(),
        }
    }
}
