//! Static map building, the dynamic obstacle layer, and costmap inflation.

mod dynamic;
mod edt;
mod inflate;
mod raycast;
mod survey;

pub use dynamic::{DynamicLayer, DynamicLayerParams};
pub use edt::{squared_distance_transform, DistanceField};
pub use inflate::{cost_for_distance, inflate, inflate_mask, InflationParams};
pub use raycast::{integrate_scan, traverse, LogOddsParams};
pub use survey::{survey_map, survey_stops, wall_bounds, SurveyParams};
