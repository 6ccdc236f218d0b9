//! Symmetric positive-definite banded Cholesky.

/// Lower band of a symmetric matrix: `band[i][k]` holds `A(i, i - k)`.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    pub n: usize,
    pub bw: usize,
    band: Vec<Vec<f64>>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, band: vec![vec![0.0; bw + 1]; n] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.band[i][i - j]
        }
    }

    /// Adds `v` to `A(i, j)` for `i >= j`.
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i >= j && i - j <= self.bw);
        self.band[i][i - j] += v;
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.band[i][0]
    }

    pub fn set_diag(&mut self, i: usize, v: f64) {
        self.band[i][0] = v;
    }

    /// Factorizes in place and solves `A x = b`. Returns `None` when the
    /// matrix is not numerically positive definite.
    pub fn solve(mut self, b: &[f64]) -> Option<Vec<f64>> {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = self.band[i][i - j];
                for k in lo.max(j.saturating_sub(bw))..j {
                    s -= self.band[i][i - k] * self.band[j][j - k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    self.band[i][0] = s.sqrt();
                } else {
                    self.band[i][i - j] = s / self.band[j][0];
                }
            }
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                y[i] -= self.band[i][i - k] * y[k];
            }
            y[i] /= self.band[i][0];
        }
        for i in (0..n).rev() {
            for k in i + 1..(i + bw + 1).min(n) {
                y[i] -= self.band[k][k - i] * y[k];
            }
            y[i] /= self.band[i][0];
        }
        Some(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_dense_solve() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (n, bw) = (40, 10);
        // A = Jᵀ J + I with J banded
        let mut j = DMatrix::<f64>::zeros(n, n);
        for r in 0..n {
            for c in r.saturating_sub(5)..=r {
                j[(r, c)] = rng.random_range(-1.0..1.0);
            }
        }
        let a = j.transpose() * &j + DMatrix::identity(n, n);
        let mut m = BandedMatrix::zeros(n, bw);
        for r in 0..n {
            for c in r.saturating_sub(bw)..=r {
                m.add_lower(r, c, a[(r, c)]);
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = m.solve(&b).unwrap();
        let dense = a.cholesky().unwrap().solve(&DVector::from_vec(b));
        for i in 0..n {
            assert!((x[i] - dense[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut m = BandedMatrix::zeros(2, 1);
        m.add_lower(0, 0, 1.0);
        m.add_lower(1, 0, 2.0);
        m.add_lower(1, 1, 1.0);
        assert!(m.solve(&[1.0, 1.0]).is_none());
    }
}
