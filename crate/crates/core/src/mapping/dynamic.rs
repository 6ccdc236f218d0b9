use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sim::LidarScan;
use crate::{CellIndex, OccupancyGrid, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicLayerParams {
    /// Ticks without re-observation after which an entry is dropped.
    pub decay_ticks: u32,
    /// Endpoints within this many cells (Chebyshev) of a static-occupied
    /// cell are attributed to the static map.
    pub static_margin: usize,
}

impl Default for DynamicLayerParams {
    fn default() -> Self {
        Self {
            decay_ticks: 40,
            static_margin: 3,
        }
    }
}

/// Obstacles seen at runtime in cells the static map considers free.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DynamicLayer {
    params: DynamicLayerParams,
    ages: BTreeMap<CellIndex, u32>,
}

impl DynamicLayer {
    pub fn new(params: DynamicLayerParams) -> Self {
        Self {
            params,
            ages: BTreeMap::new(),
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.ages.keys().copied()
    }

    pub fn age(&self, c: CellIndex) -> Option<u32> {
        self.ages.get(&c).copied()
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    pub fn clear(&mut self) {
        self.ages.clear();
    }

    fn near_static(&self, grid: &OccupancyGrid, c: CellIndex) -> bool {
        let m = self.params.static_margin as i64;
        let g = grid.geometry();
        (-m..=m).any(|dy| {
            (-m..=m).any(|dx| {
                g.checked_cell(c.ix as i64 + dx, c.iy as i64 + dy)
                    .is_some_and(|n| grid.is_occupied(n))
            })
        })
    }

    /// Ages every entry, refreshes cells hit by this scan, and drops expired
    /// entries.
    pub fn update(&mut self, static_grid: &OccupancyGrid, pose: &Pose2D, scan: &LidarScan) {
        for age in self.ages.values_mut() {
            *age += 1;
        }
        for i in 0..scan.beam_count() {
            if scan.is_max_range(i) {
                continue;
            }
            let Some(c) = static_grid.world_to_grid(&scan.endpoint(pose, i)) else {
                continue;
            };
            if static_grid.is_free(c) && !self.near_static(static_grid, c) {
                self.ages.insert(c, 0);
            }
        }
        let decay = self.params.decay_ticks;
        self.ages.retain(|_, age| *age < decay);
    }
}
