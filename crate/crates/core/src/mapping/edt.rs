use crate::world::{GridGeometry, Point2};
use crate::OccupancyGrid;

/// Exact squared Euclidean distance transform (in cells²) of a row-major
/// occupancy mask, via the two-pass lower-envelope method of Felzenszwalb and
/// Huttenlocher. Cells with no occupied cell anywhere get `f64::INFINITY`.
pub fn squared_distance_transform(mask: &[bool], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(mask.len(), width * height);
    let mut d: Vec<f64> = mask
        .iter()
        .map(|m| if *m { 0.0 } else { f64::INFINITY })
        .collect();
    let mut f = vec![0.0; width.max(height)];
    let mut out = vec![0.0; width.max(height)];
    // columns
    for x in 0..width {
        for y in 0..height {
            f[y] = d[y * width + x];
        }
        transform_1d(&f[..height], &mut out[..height]);
        for y in 0..height {
            d[y * width + x] = out[y];
        }
    }
    // rows
    for y in 0..height {
        let row = &mut d[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        transform_1d(&f[..width], &mut out[..width]);
        row.copy_from_slice(&out[..width]);
    }
    d
}

/// 1-D squared distance transform of a sampled function.
fn transform_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let finite: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if finite.is_empty() {
        d.iter_mut().for_each(|v| *v = f64::INFINITY);
        return;
    }
    // parabola vertices and envelope boundaries
    let mut v = vec![0usize; finite.len()];
    let mut z = vec![0.0f64; finite.len() + 1];
    let mut k = 0usize;
    v[0] = finite[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64)
    };
    for &q in &finite[1..] {
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

/// Distance in meters from every cell center to the nearest occupied cell
/// center.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    geometry: GridGeometry,
    dist: Vec<f64>,
}

impl DistanceField {
    pub fn from_mask(geometry: GridGeometry, mask: &[bool]) -> Self {
        let res = geometry.resolution;
        let dist = squared_distance_transform(mask, geometry.width, geometry.height)
            .into_iter()
            .map(|d2| d2.sqrt() * res)
            .collect();
        Self { geometry, dist }
    }

    pub fn from_grid(grid: &OccupancyGrid) -> Self {
        Self::from_mask(*grid.geometry(), &grid.occupancy_mask())
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.dist
    }

    /// Distance at the cell containing `p`; infinite outside the grid.
    pub fn at(&self, p: &Point2) -> f64 {
        match self.geometry.world_to_grid(p) {
            Some(c) => self.dist[self.geometry.index(c)],
            None => f64::INFINITY,
        }
    }
}
