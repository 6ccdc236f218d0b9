//! Simulated software stack for a dual-arm mobile caregiver-assistant robot.
//!
//! The crate covers the whole fetch-and-handover loop: a deterministic world
//! simulator, occupancy mapping and costmap inflation, Monte-Carlo
//! localization, A* global planning, a timed-elastic-band local planner,
//! PID drive control with a watchdog, 7-DOF arm kinematics and grasping,
//! grammar-constrained command parsing, embedding-based face matching, and
//! the finite-state machine that ties them together.
//!
//! Everything is seeded and single-threaded on the hot path, so a scenario
//! replayed with the same seed and command log produces a byte-identical
//! trace.

pub mod control;
pub mod error;
pub mod interaction;
pub mod localization;
pub mod manipulation;
pub mod mapping;
pub mod nav;
pub mod orchestrator;
pub mod protocol;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod world;

pub use error::{Error, Result};
pub use world::{
    normalize_angle, CellIndex, Costmap, Footprint, OccupancyGrid, Point2, Pose2D, Transform3D,
    Twist2D, Vector2, INSCRIBED, LETHAL,
};
