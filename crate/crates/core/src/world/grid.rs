use serde::{Deserialize, Serialize};

use super::{Point2, Pose2D};

/// Saturation bounds for cell log-odds.
pub const L_MIN: f32 = -4.0;
pub const L_MAX: f32 = 4.0;

/// Cost of a cell occupied by an obstacle.
pub const LETHAL: u8 = 255;
/// Cost of a cell inside the inflation cushion of an obstacle.
pub const INSCRIBED: u8 = 253;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub ix: usize,
    pub iy: usize,
}

impl CellIndex {
    pub const fn new(ix: usize, iy: usize) -> Self {
        Self { ix, iy }
    }
}

/// Axis-aligned lattice geometry shared by grids and costmaps.
///
/// The origin is the world position of the lower-left corner of cell (0, 0).
/// Only its translation is used; the lattice is never rotated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub resolution: f64,
    pub origin: Pose2D,
    pub width: usize,
    pub height: usize,
}

impl GridGeometry {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `floor((p - origin) / resolution)` as signed cell coordinates.
    pub fn world_to_cell_signed(&self, p: &Point2) -> (i64, i64) {
        (
            ((p.x - self.origin.x) / self.resolution).floor() as i64,
            ((p.y - self.origin.y) / self.resolution).floor() as i64,
        )
    }

    pub fn world_to_grid(&self, p: &Point2) -> Option<CellIndex> {
        let (ix, iy) = self.world_to_cell_signed(p);
        self.checked_cell(ix, iy)
    }

    pub fn checked_cell(&self, ix: i64, iy: i64) -> Option<CellIndex> {
        (ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height)
            .then(|| CellIndex::new(ix as usize, iy as usize))
    }

    /// Lower-left corner of a cell.
    pub fn grid_to_world(&self, c: CellIndex) -> Point2 {
        Point2::new(
            self.origin.x + c.ix as f64 * self.resolution,
            self.origin.y + c.iy as f64 * self.resolution,
        )
    }

    pub fn cell_center(&self, c: CellIndex) -> Point2 {
        let h = 0.5 * self.resolution;
        self.grid_to_world(c) + nalgebra::Vector2::new(h, h)
    }

    pub fn index(&self, c: CellIndex) -> usize {
        c.iy * self.width + c.ix
    }

    pub fn cell_of(&self, idx: usize) -> CellIndex {
        CellIndex::new(idx % self.width, idx / self.width)
    }

    pub fn contains(&self, p: &Point2) -> bool {
        self.world_to_grid(p).is_some()
    }
}

/// Anything laid out on a [`GridGeometry`].
pub trait GridGeometryExt {
    fn geometry(&self) -> &GridGeometry;
}

impl GridGeometryExt for GridGeometry {
    fn geometry(&self) -> &GridGeometry {
        self
    }
}

impl GridGeometryExt for OccupancyGrid {
    fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }
}

impl GridGeometryExt for Costmap {
    fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }
}

/// Log-odds occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    geometry: GridGeometry,
    cells: Vec<f32>,
}

impl OccupancyGrid {
    /// New grid with every cell unknown (log-odds 0).
    ///
    /// Panics if `resolution` is not a positive finite number.
    pub fn new(resolution: f64, origin: Pose2D, width: usize, height: usize) -> Self {
        assert!(
            resolution.is_finite() && resolution > 0.0,
            "grid resolution must be positive"
        );
        Self {
            geometry: GridGeometry {
                resolution,
                origin,
                width,
                height,
            },
            cells: vec![0.0; width * height],
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn resolution(&self) -> f64 {
        self.geometry.resolution
    }

    pub fn origin(&self) -> Pose2D {
        self.geometry.origin
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn cells(&self) -> &[f32] {
        &self.cells
    }

    pub fn world_to_grid(&self, p: &Point2) -> Option<CellIndex> {
        self.geometry.world_to_grid(p)
    }

    pub fn grid_to_world(&self, c: CellIndex) -> Point2 {
        self.geometry.grid_to_world(c)
    }

    pub fn cell_center(&self, c: CellIndex) -> Point2 {
        self.geometry.cell_center(c)
    }

    pub fn log_odds(&self, c: CellIndex) -> f32 {
        self.cells[self.geometry.index(c)]
    }

    pub fn set_log_odds(&mut self, c: CellIndex, l: f32) {
        let i = self.geometry.index(c);
        self.cells[i] = l.clamp(L_MIN, L_MAX);
    }

    /// Adds `delta` to a cell and saturates at the clamp bounds.
    pub fn update(&mut self, c: CellIndex, delta: f32) {
        let i = self.geometry.index(c);
        self.cells[i] = (self.cells[i] + delta).clamp(L_MIN, L_MAX);
    }

    pub fn is_occupied(&self, c: CellIndex) -> bool {
        self.log_odds(c) > 0.0
    }

    pub fn is_free(&self, c: CellIndex) -> bool {
        self.log_odds(c) < 0.0
    }

    pub fn occupied_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, l)| **l > 0.0)
            .map(|(i, _)| self.geometry.cell_of(i))
    }

    /// Occupancy mask in row-major order.
    pub fn occupancy_mask(&self) -> Vec<bool> {
        self.cells.iter().map(|l| *l > 0.0).collect()
    }
}

/// Inflated cost layer over the lattice of an occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    geometry: GridGeometry,
    costs: Vec<u8>,
}

impl Costmap {
    pub fn from_costs(geometry: GridGeometry, costs: Vec<u8>) -> Self {
        assert_eq!(geometry.len(), costs.len());
        Self { geometry, costs }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn resolution(&self) -> f64 {
        self.geometry.resolution
    }

    pub fn cost(&self, c: CellIndex) -> u8 {
        self.costs[self.geometry.index(c)]
    }

    pub fn costs(&self) -> &[u8] {
        &self.costs
    }

    pub fn set_cost(&mut self, c: CellIndex, cost: u8) {
        let i = self.geometry.index(c);
        self.costs[i] = cost;
    }

    pub fn world_to_grid(&self, p: &Point2) -> Option<CellIndex> {
        self.geometry.world_to_grid(p)
    }

    pub fn cell_center(&self, c: CellIndex) -> Point2 {
        self.geometry.cell_center(c)
    }

    pub fn lethal_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.costs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == LETHAL)
            .map(|(i, _)| self.geometry.cell_of(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> OccupancyGrid {
        OccupancyGrid::new(0.05, Pose2D::identity(), 40, 30)
    }

    #[test]
    fn world_to_grid_floor_semantics() {
        let g = grid();
        assert_eq!(g.world_to_grid(&Point2::new(0.0, 0.0)), Some(CellIndex::new(0, 0)));
        assert_eq!(g.world_to_grid(&Point2::new(0.049, 0.049)), Some(CellIndex::new(0, 0)));
        assert_eq!(g.world_to_grid(&Point2::new(-0.01, 0.0)), None);
        assert_eq!(g.world_to_grid(&Point2::new(2.0, 0.0)), None);
        assert_eq!(g.world_to_grid(&Point2::new(1.99, 1.49)), Some(CellIndex::new(39, 29)));
    }

    #[test]
    fn cell_center_round_trip() {
        let g = OccupancyGrid::new(0.05, Pose2D::new(-1.3, 0.7, 0.0), 37, 23);
        for iy in 0..g.height() {
            for ix in 0..g.width() {
                let c = CellIndex::new(ix, iy);
                assert_eq!(g.world_to_grid(&g.cell_center(c)), Some(c));
            }
        }
    }

    #[test]
    fn log_odds_clamped() {
        let mut g = grid();
        let c = CellIndex::new(3, 4);
        for _ in 0..20 {
            g.update(c, 0.85);
        }
        assert_eq!(g.log_odds(c), L_MAX);
        for _ in 0..40 {
            g.update(c, -0.4);
        }
        assert_eq!(g.log_odds(c), L_MIN);
    }

    #[test]
    #[should_panic]
    fn zero_resolution_rejected() {
        OccupancyGrid::new(0.0, Pose2D::identity(), 2, 2);
    }
}
