use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::world::{Point2, Vector2};
use crate::Pose2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarParams {
    pub beams: usize,
    /// Total angular span in radians, centered on the heading.
    pub span: f64,
    pub max_range: f64,
    pub sigma: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            beams: 360,
            span: 270f64.to_radians(),
            max_range: 10.0,
            sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    /// Bearing of the first beam relative to the heading.
    pub angle_min: f64,
    pub angle_increment: f64,
    pub max_range: f64,
    pub ranges: Vec<f64>,
}

impl LidarScan {
    pub fn beam_count(&self) -> usize {
        self.ranges.len()
    }

    pub fn span(&self) -> f64 {
        self.angle_increment * self.ranges.len() as f64
    }

    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angle_min + i as f64 * self.angle_increment
    }

    pub fn is_max_range(&self, i: usize) -> bool {
        self.ranges[i] >= self.max_range
    }

    /// World-frame endpoint of beam `i` seen from `pose`.
    pub fn endpoint(&self, pose: &Pose2D, i: usize) -> Point2 {
        let a = pose.theta + self.beam_angle(i);
        let r = self.ranges[i];
        Point2::new(pose.x + r * a.cos(), pose.y + r * a.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub center: Point2,
    pub radius: f64,
}

/// Distance along the ray to a segment, if hit.
pub fn ray_segment(origin: &Point2, dir: &Vector2, seg: &Segment) -> Option<f64> {
    let e = seg.b - seg.a;
    let denom = dir.x * e.y - dir.y * e.x;
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = seg.a - origin;
    let t = (w.x * e.y - w.y * e.x) / denom;
    let u = (w.x * dir.y - w.y * dir.x) / denom;
    (t > 1e-12 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Distance along the ray to the first crossing of a disc boundary.
pub fn ray_disc(origin: &Point2, dir: &Vector2, disc: &Disc) -> Option<f64> {
    let oc = origin - disc.center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - disc.radius * disc.radius;
    let disc_ = b * b - c;
    if disc_ < 0.0 {
        return None;
    }
    let sq = disc_.sqrt();
    let t0 = -b - sq;
    let t1 = -b + sq;
    if t0 > 1e-12 {
        Some(t0)
    } else if t1 > 1e-12 {
        // origin inside the disc
        Some(t1)
    } else {
        None
    }
}

/// Raycasts every beam against walls and discs.
pub fn cast_lidar<R: Rng>(
    walls: &[Segment],
    discs: &[Disc],
    pose: &Pose2D,
    params: &LidarParams,
    rng: &mut R,
) -> LidarScan {
    let inc = params.span / params.beams as f64;
    let angle_min = -0.5 * params.span;
    let noise = (params.sigma > 0.0).then(|| Normal::new(0.0, params.sigma).expect("sigma"));
    let origin = pose.position();
    let ranges = (0..params.beams)
        .map(|i| {
            let a = pose.theta + angle_min + i as f64 * inc;
            let dir = Vector2::new(a.cos(), a.sin());
            let hit = walls
                .iter()
                .filter_map(|s| ray_segment(&origin, &dir, s))
                .chain(discs.iter().filter_map(|d| ray_disc(&origin, &dir, d)))
                .fold(f64::INFINITY, f64::min);
            if hit >= params.max_range {
                params.max_range
            } else {
                let r = hit + noise.as_ref().map_or(0.0, |n| n.sample(rng));
                r.clamp(1e-3, params.max_range)
            }
        })
        .collect();
    LidarScan {
        angle_min,
        angle_increment: inc,
        max_range: params.max_range,
        ranges,
    }
}
