//! Navigation: global A* seed path and the timed-elastic-band local planner.

pub mod global;
pub mod teb;

pub use global::{plan, GlobalPath, PlanError};
