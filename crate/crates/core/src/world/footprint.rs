use std::f64::consts::PI;

use crate::{Error, Result};

use super::{Point2, Pose2D};

/// Convex collision polygon of the base, in the body frame (counter-clockwise).
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    vertices: Vec<Point2>,
}

impl Default for Footprint {
    fn default() -> Self {
        Footprint::hexagon(0.35)
    }
}

impl Footprint {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidArgument(
                "footprint needs at least three vertices".into(),
            ));
        }
        let n = vertices.len();
        // convex, counter-clockwise, origin strictly inside
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if cross(&a, &b, &c) <= 0.0 {
                return Err(Error::InvalidArgument(
                    "footprint must be convex and counter-clockwise".into(),
                ));
            }
            if cross(&a, &b, &Point2::origin()) <= 0.0 {
                return Err(Error::InvalidArgument(
                    "footprint must contain the origin".into(),
                ));
            }
        }
        Ok(Self { vertices })
    }

    /// Regular hexagon with a vertex on the +x axis.
    pub fn hexagon(circumradius: f64) -> Self {
        let vertices = (0..6)
            .map(|k| {
                let a = k as f64 * PI / 3.0;
                Point2::new(circumradius * a.cos(), circumradius * a.sin())
            })
            .collect();
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn circumradius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| v.coords.norm())
            .fold(0.0, f64::max)
    }

    pub fn inscribed_radius(&self) -> f64 {
        let o = Point2::origin();
        self.edges_body()
            .map(|(a, b)| point_segment_distance(&o, &a, &b))
            .fold(f64::INFINITY, f64::min)
    }

    fn edges_body(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn world_vertices(&self, pose: &Pose2D) -> Vec<Point2> {
        self.vertices.iter().map(|v| pose.transform_point(v)).collect()
    }

    pub fn contains(&self, pose: &Pose2D, p: &Point2) -> bool {
        let w = self.world_vertices(pose);
        let n = w.len();
        (0..n).all(|i| cross(&w[i], &w[(i + 1) % n], p) >= 0.0)
    }

    /// Distance from the polygon (as a filled region) to a point; zero inside.
    pub fn distance_to_point(&self, pose: &Pose2D, p: &Point2) -> f64 {
        if self.contains(pose, p) {
            return 0.0;
        }
        let w = self.world_vertices(pose);
        let n = w.len();
        (0..n)
            .map(|i| point_segment_distance(p, &w[i], &w[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    /// True when the footprint and an open disc overlap.
    pub fn intersects_disc(&self, pose: &Pose2D, center: &Point2, radius: f64) -> bool {
        self.distance_to_point(pose, center) < radius
    }

    pub fn intersects_segment(&self, pose: &Pose2D, a: &Point2, b: &Point2) -> bool {
        if self.contains(pose, a) || self.contains(pose, b) {
            return true;
        }
        let w = self.world_vertices(pose);
        let n = w.len();
        (0..n).any(|i| segments_intersect(a, b, &w[i], &w[(i + 1) % n]))
    }
}

fn cross(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

pub(crate) fn point_segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    (p - (a + ab * t)).norm()
}

fn segments_intersect(p1: &Point2, p2: &Point2, q1: &Point2, q2: &Point2) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}
