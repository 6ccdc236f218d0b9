use serde::{Deserialize, Serialize};

use super::{DistanceField, DynamicLayer};
use crate::world::GridGeometry;
use crate::{Costmap, OccupancyGrid, INSCRIBED, LETHAL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InflationParams {
    /// Width of the cushion around obstacles, meters.
    pub radius: f64,
    /// Exponential decay rate of cost beyond the cushion, 1/m.
    pub decay: f64,
}

impl Default for InflationParams {
    fn default() -> Self {
        Self {
            radius: 0.10,
            decay: 5.0,
        }
    }
}

/// Cost of a free cell at distance `d` (meters) from the nearest obstacle.
pub fn cost_for_distance(d: f64, params: &InflationParams) -> u8 {
    if d <= params.radius + 1e-9 {
        INSCRIBED
    } else {
        (252.0 * (-params.decay * (d - params.radius)).exp()).round() as u8
    }
}

/// Costmap from an occupancy mask over `geometry`.
pub fn inflate_mask(geometry: GridGeometry, mask: &[bool], params: &InflationParams) -> Costmap {
    let field = DistanceField::from_mask(geometry, mask);
    let costs = mask
        .iter()
        .zip(field.values())
        .map(|(occ, d)| if *occ { LETHAL } else { cost_for_distance(*d, params) })
        .collect();
    Costmap::from_costs(geometry, costs)
}

/// Costmap from the static map overlaid with the dynamic layer.
pub fn inflate(
    static_grid: &OccupancyGrid,
    layer: Option<&DynamicLayer>,
    params: &InflationParams,
) -> Costmap {
    let geometry = *static_grid.geometry();
    let mut mask = static_grid.occupancy_mask();
    if let Some(layer) = layer {
        for c in layer.cells() {
            mask[geometry.index(c)] = true;
        }
    }
    inflate_mask(geometry, &mask, params)
}
