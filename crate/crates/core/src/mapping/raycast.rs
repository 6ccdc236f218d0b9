use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::sim::LidarScan;
use crate::world::{GridGeometryExt, Point2};
use crate::{OccupancyGrid, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogOddsParams {
    pub l_free: f32,
    pub l_occ: f32,
}

impl Default for LogOddsParams {
    fn default() -> Self {
        Self {
            l_free: -0.4,
            l_occ: 0.85,
        }
    }
}

/// Cells crossed by the segment `from → to`, in order, both ends included.
///
/// Grid traversal in the style of Amanatides & Woo; coordinates are signed
/// and may lie outside the grid.
pub fn traverse(geom: &impl GridGeometryExt, from: &Point2, to: &Point2) -> Vec<(i64, i64)> {
    let g = geom.geometry();
    let res = g.resolution;
    let (mut ix, mut iy) = g.world_to_cell_signed(from);
    let (jx, jy) = g.world_to_cell_signed(to);
    let d = to - from;
    let step_x: i64 = if d.x > 0.0 { 1 } else { -1 };
    let step_y: i64 = if d.y > 0.0 { 1 } else { -1 };
    let boundary = |i: i64, step: i64, o: f64| o + (i + i64::from(step > 0)) as f64 * res;
    let mut t_max_x = if d.x != 0.0 {
        (boundary(ix, step_x, g.origin.x) - from.x) / d.x
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if d.y != 0.0 {
        (boundary(iy, step_y, g.origin.y) - from.y) / d.y
    } else {
        f64::INFINITY
    };
    let t_dx = if d.x != 0.0 { res / d.x.abs() } else { f64::INFINITY };
    let t_dy = if d.y != 0.0 { res / d.y.abs() } else { f64::INFINITY };

    let budget = (jx - ix).unsigned_abs() + (jy - iy).unsigned_abs() + 1;
    let mut cells = Vec::with_capacity(budget as usize);
    cells.push((ix, iy));
    for _ in 0..budget {
        if (ix, iy) == (jx, jy) {
            break;
        }
        if t_max_x < t_max_y {
            ix += step_x;
            t_max_x += t_dx;
        } else {
            iy += step_y;
            t_max_y += t_dy;
        }
        cells.push((ix, iy));
    }
    if cells.last() != Some(&(jx, jy)) {
        // rounding drift near corners: finish with the true end cell
        cells.push((jx, jy));
    }
    cells
}

/// Log-odds update of one scan taken at a known pose.
///
/// Each cell is updated at most once per scan: endpoint cells of beams that
/// hit something receive `l_occ`, every other traversed cell receives
/// `l_free`. A hit exactly on a cell boundary belongs to the cell beyond it.
pub fn integrate_scan(
    grid: &mut OccupancyGrid,
    pose: &Pose2D,
    scan: &LidarScan,
    params: &LogOddsParams,
) {
    let origin = pose.position();
    let mut occupied = BTreeSet::new();
    let mut free = BTreeSet::new();
    for i in 0..scan.beam_count() {
        let a = pose.theta + scan.beam_angle(i);
        let dir = nalgebra::Vector2::new(a.cos(), a.sin());
        let end = origin + dir * (scan.ranges[i] + 1e-6);
        let cells = traverse(grid, &origin, &end);
        let hit = !scan.is_max_range(i);
        let (ray, last) = cells.split_at(cells.len() - 1);
        free.extend(ray.iter().copied());
        if hit {
            occupied.insert(last[0]);
        } else {
            free.insert(last[0]);
        }
    }
    let geom = *grid.geometry();
    let to_cell = |(x, y): (i64, i64)| geom.checked_cell(x, y);
    for c in free.difference(&occupied).filter_map(|c| to_cell(*c)) {
        grid.update(c, params.l_free);
    }
    for c in occupied.iter().filter_map(|c| to_cell(*c)) {
        grid.update(c, params.l_occ);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CellIndex;
    use crate::sim::{cast_lidar, LidarParams, Segment};
    use crate::world::L_MAX;
    use rand::SeedableRng;

    fn scan_at_wall(max_range_beam: bool) -> (OccupancyGrid, LidarScan) {
        let grid = OccupancyGrid::new(0.05, Pose2D::new(-1.0, -1.0, 0.0), 80, 40);
        let range = if max_range_beam { 10.0 } else { 2.0 };
        let scan = LidarScan {
            angle_min: 0.0,
            angle_increment: 0.01,
            max_range: 10.0,
            ranges: vec![range],
        };
        (grid, scan)
    }

    #[test]
    fn traversal_is_connected() {
        let g = OccupancyGrid::new(0.05, Pose2D::identity(), 100, 100);
        let cells = traverse(&g, &Point2::new(0.51, 0.33), &Point2::new(3.97, 2.12));
        assert_eq!(cells.first(), Some(&(10, 6)));
        assert_eq!(cells.last(), Some(&(79, 42)));
        for w in cells.windows(2) {
            let (a, b) = (w[0], w[1]);
            assert_eq!((a.0 - b.0).abs() + (a.1 - b.1).abs(), 1);
        }
    }

    #[test]
    fn hit_beam_updates() {
        let (mut g, scan) = scan_at_wall(false);
        integrate_scan(&mut g, &Pose2D::new(0.025, 0.025, 0.0), &scan, &LogOddsParams::default());
        // endpoint x = 2.025 → cell 60
        assert_eq!(g.log_odds(CellIndex::new(60, 20)), 0.85);
        for ix in 20..60 {
            assert_eq!(g.log_odds(CellIndex::new(ix, 20)), -0.4, "cell {ix}");
        }
        assert_eq!(g.log_odds(CellIndex::new(61, 20)), 0.0);
    }

    #[test]
    fn max_range_beam_only_frees() {
        let (mut g, scan) = scan_at_wall(true);
        integrate_scan(&mut g, &Pose2D::new(0.025, 0.025, 0.0), &scan, &LogOddsParams::default());
        assert!(g.cells().iter().all(|l| *l <= 0.0));
        assert_eq!(g.log_odds(CellIndex::new(79, 20)), -0.4);
    }

    #[test]
    fn repeated_scans_saturate() {
        let (mut g, scan) = scan_at_wall(false);
        let pose = Pose2D::new(0.025, 0.025, 0.0);
        for _ in 0..50 {
            integrate_scan(&mut g, &pose, &scan, &LogOddsParams::default());
        }
        // 5 hits reach 4.25 before clamping
        assert_eq!(g.log_odds(CellIndex::new(60, 20)), L_MAX);
        assert_eq!(g.log_odds(CellIndex::new(40, 20)), -4.0);
    }

    #[test]
    fn wall_on_cell_boundary_lands_beyond() {
        let mut g = OccupancyGrid::new(0.05, Pose2D::new(-1.0, -1.0, 0.0), 80, 40);
        let wall = Segment {
            a: Point2::new(1.5, -1.0),
            b: Point2::new(1.5, 1.0),
        };
        let params = LidarParams {
            sigma: 0.0,
            ..Default::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let pose = Pose2D::new(0.0, 0.0, 0.0);
        let scan = cast_lidar(&[wall], &[], &pose, &params, &mut rng);
        integrate_scan(&mut g, &pose, &scan, &LogOddsParams::default());
        // x = 1.5 is the left edge of column 50
        for iy in 10..30 {
            assert!(g.is_occupied(CellIndex::new(50, iy)), "row {iy}");
            assert!(!g.is_occupied(CellIndex::new(49, iy)));
        }
    }
}
