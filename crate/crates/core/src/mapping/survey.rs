//! Static map building from a scripted sweep at ground-truth poses.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{integrate_scan, LogOddsParams};
use crate::sim::{cast_lidar, ray_segment, LidarParams, Segment};
use crate::world::{Point2, Vector2};
use crate::{OccupancyGrid, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveyParams {
    pub resolution: f64,
    /// Lattice spacing of survey stops.
    pub spacing: f64,
    /// Stops closer than this to a wall are skipped.
    pub wall_clearance: f64,
    /// Map extent beyond the wall bounding box.
    pub padding: f64,
}

impl Default for SurveyParams {
    fn default() -> Self {
        Self { resolution: 0.05, spacing: 0.5, wall_clearance: 0.3, padding: 0.5 }
    }
}

/// `[xmin, ymin, xmax, ymax]` of all wall endpoints.
pub fn wall_bounds(walls: &[Segment]) -> Option<[f64; 4]> {
    let mut it = walls.iter().flat_map(|w| [w.a, w.b]);
    let first = it.next()?;
    Some(it.fold([first.x, first.y, first.x, first.y], |b, p| {
        [b[0].min(p.x), b[1].min(p.y), b[2].max(p.x), b[3].max(p.y)]
    }))
}

fn point_segment_distance(p: &Point2, s: &Segment) -> f64 {
    let d = s.b - s.a;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 { ((p - s.a).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (s.a + d * t - p).norm()
}

fn blocked(walls: &[Segment], a: &Point2, b: &Point2) -> bool {
    let d = b - a;
    let len = d.norm();
    let dir: Vector2 = d / len;
    walls.iter().any(|w| ray_segment(a, &dir, w).is_some_and(|t| t <= len))
}

/// Survey stops: lattice points reachable from `start` without crossing a
/// wall and keeping `wall_clearance` from every wall.
pub fn survey_stops(walls: &[Segment], start: &Point2, bounds: [f64; 4], params: &SurveyParams) -> Vec<Point2> {
    let s = params.spacing;
    let nx = ((bounds[2] - bounds[0]) / s).floor() as i64;
    let ny = ((bounds[3] - bounds[1]) / s).floor() as i64;
    let origin = Point2::new(start.x - ((start.x - bounds[0]) / s).floor() * s, start.y - ((start.y - bounds[1]) / s).floor() * s);
    let at = |i: i64, j: i64| Point2::new(origin.x + i as f64 * s, origin.y + j as f64 * s);
    let ok = |p: &Point2| {
        p.x >= bounds[0] && p.x <= bounds[2] && p.y >= bounds[1] && p.y <= bounds[3]
            && walls.iter().all(|w| point_segment_distance(p, w) >= params.wall_clearance)
    };
    let i0 = ((start.x - origin.x) / s).round() as i64;
    let j0 = ((start.y - origin.y) / s).round() as i64;
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    let mut out = Vec::new();
    if ok(&at(i0, j0)) {
        seen.insert((i0, j0));
        queue.push_back((i0, j0));
    }
    while let Some((i, j)) = queue.pop_front() {
        let p = at(i, j);
        out.push(p);
        for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (a, b) = (i + di, j + dj);
            if a < -1 || b < -1 || a > nx + 1 || b > ny + 1 || seen.contains(&(a, b)) {
                continue;
            }
            let q = at(a, b);
            if ok(&q) && !blocked(walls, &p, &q) {
                seen.insert((a, b));
                queue.push_back((a, b));
            }
        }
    }
    out
}

/// Noise-free scans from every survey stop in four headings, integrated into
/// a grid covering the walls plus padding.
pub fn survey_map(walls: &[Segment], start: &Pose2D, lidar: &LidarParams, params: &SurveyParams) -> OccupancyGrid {
    let b = wall_bounds(walls).unwrap_or([start.x - 1.0, start.y - 1.0, start.x + 1.0, start.y + 1.0]);
    let pad = params.padding;
    let (x0, y0) = (b[0] - pad, b[1] - pad);
    let w = ((b[2] + pad - x0) / params.resolution).ceil() as usize;
    let h = ((b[3] + pad - y0) / params.resolution).ceil() as usize;
    let mut grid = OccupancyGrid::new(params.resolution, Pose2D::new(x0, y0, 0.0), w, h);
    let lidar = LidarParams { sigma: 0.0, ..*lidar };
    // noise-free casting never draws from the stream
    let mut rng = crate::rng::stream(0, crate::rng::Stream::Lidar);
    let log_odds = LogOddsParams::default();
    for p in survey_stops(walls, &start.position(), b, params) {
        for k in 0..4 {
            let pose = Pose2D::new(p.x, p.y, k as f64 * std::f64::consts::FRAC_PI_2);
            let scan = cast_lidar(walls, &[], &pose, &lidar, &mut rng);
            integrate_scan(&mut grid, &pose, &scan, &log_odds);
        }
    }
    grid
}
