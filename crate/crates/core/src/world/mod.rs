//! Geometric and world-model types shared by every subsystem.

mod footprint;
mod grid;
mod pgm;
mod pose;

pub use footprint::Footprint;
pub use grid::{CellIndex, Costmap, GridGeometry, GridGeometryExt, OccupancyGrid, INSCRIBED, LETHAL, L_MAX, L_MIN};
pub use pgm::{decode_pgm, encode_pgm, load_map, pixel_value, save_map, MapMetadata};
pub use pose::{normalize_angle, Pose2D, Twist2D};

pub type Point2 = nalgebra::Point2<f64>;
pub type Vector2 = nalgebra::Vector2<f64>;

/// Rigid 3-D transform (unit quaternion + translation), used for arm, marker
/// and object frames.
pub type Transform3D = nalgebra::Isometry3<f64>;
