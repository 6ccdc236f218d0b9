//! Monte-Carlo localization against the static map.
//!
//! Motion update composes each particle with the odometry delta plus Gaussian
//! noise; the measurement update scores decimated beam endpoints against a
//! precomputed likelihood field (distance to the nearest static obstacle);
//! systematic resampling runs when the effective sample size drops below N/2.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mapping::DistanceField;
use crate::rng::SimRng;
use crate::sim::LidarScan;
use crate::{normalize_angle, Pose2D};

/// Endpoint distances beyond this many `sigma_hit` count as outliers.
pub const OUTLIER_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MclParams {
    pub particles: usize,
    pub sigma_xy: f64,
    pub sigma_theta: f64,
    pub sigma_hit: f64,
    /// Use every n-th beam.
    pub beam_stride: usize,
}

impl Default for MclParams {
    fn default() -> Self {
        Self {
            particles: 500,
            sigma_xy: 0.01,
            sigma_theta: 0.01,
            sigma_hit: 0.1,
            beam_stride: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub pose: Pose2D,
    pub weight: f64,
}

/// Result of a measurement update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementOutcome {
    Updated,
    /// Every particle scored zero; weights were reset to uniform.
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleSummary {
    pub count: usize,
    pub mean: Pose2D,
    pub std_xy: f64,
    pub std_theta: f64,
    pub n_eff: f64,
}

#[derive(Debug, Clone)]
pub struct ParticleSet {
    particles: Vec<Particle>,
    rng: SimRng,
}

impl ParticleSet {
    pub fn from_poses(poses: Vec<Pose2D>, rng: SimRng) -> Self {
        let w = 1.0 / poses.len() as f64;
        Self {
            particles: poses
                .into_iter()
                .map(|pose| Particle { pose, weight: w })
                .collect(),
            rng,
        }
    }

    pub fn from_particles(particles: Vec<Particle>, rng: SimRng) -> Self {
        Self { particles, rng }
    }

    /// `n` particles drawn uniformly from a box of the given half-widths
    /// around `center`.
    pub fn uniform_around(
        center: &Pose2D,
        half_xy: f64,
        half_theta: f64,
        n: usize,
        mut rng: SimRng,
    ) -> Self {
        let poses = (0..n)
            .map(|_| {
                Pose2D::new(
                    center.x + rng.random_range(-half_xy..=half_xy),
                    center.y + rng.random_range(-half_xy..=half_xy),
                    center.theta + rng.random_range(-half_theta..=half_theta),
                )
            })
            .collect();
        Self::from_poses(poses, rng)
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    pub fn effective_sample_size(&self) -> f64 {
        let s2: f64 = self.particles.iter().map(|p| p.weight * p.weight).sum();
        if s2 > 0.0 {
            1.0 / s2
        } else {
            0.0
        }
    }

    fn set_uniform(&mut self) {
        let w = 1.0 / self.particles.len() as f64;
        self.particles.iter_mut().for_each(|p| p.weight = w);
    }

    pub fn motion_update(&mut self, odom_delta: &Pose2D, sigma_xy: f64, sigma_theta: f64) {
        let nxy = (sigma_xy > 0.0).then(|| Normal::new(0.0, sigma_xy).expect("sigma"));
        let nth = (sigma_theta > 0.0).then(|| Normal::new(0.0, sigma_theta).expect("sigma"));
        for p in &mut self.particles {
            let mut d = *odom_delta;
            if let Some(n) = &nxy {
                d.x += n.sample(&mut self.rng);
                d.y += n.sample(&mut self.rng);
            }
            if let Some(n) = &nth {
                d.theta = normalize_angle(d.theta + n.sample(&mut self.rng));
            }
            p.pose = p.pose.compose(&d);
        }
    }

    /// Log-likelihood of a scan taken from `pose` under the likelihood field.
    /// Endpoints far from every mapped obstacle (people, furniture that moved)
    /// all cost the same, so they cannot drag the estimate around.
    pub fn scan_log_likelihood(
        pose: &Pose2D,
        scan: &LidarScan,
        field: &DistanceField,
        sigma_hit: f64,
        stride: usize,
    ) -> f64 {
        let inv = 1.0 / (2.0 * sigma_hit * sigma_hit);
        let cap = OUTLIER_SIGMAS * sigma_hit;
        (0..scan.beam_count())
            .step_by(stride.max(1))
            .filter(|&i| !scan.is_max_range(i))
            .map(|i| {
                let d = field.at(&scan.endpoint(pose, i));
                if d.is_finite() {
                    let d = d.min(cap);
                    -d * d * inv
                } else {
                    f64::NEG_INFINITY
                }
            })
            .sum()
    }

    pub fn measurement_update(
        &mut self,
        scan: &LidarScan,
        field: &DistanceField,
        sigma_hit: f64,
        stride: usize,
    ) -> MeasurementOutcome {
        // work in log space so that many small factors do not underflow
        let logs: Vec<f64> = self
            .particles
            .iter()
            .map(|p| {
                p.weight.ln() + Self::scan_log_likelihood(&p.pose, scan, field, sigma_hit, stride)
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            self.set_uniform();
            return MeasurementOutcome::Diverged;
        }
        for (p, l) in self.particles.iter_mut().zip(&logs) {
            p.weight = (l - max).exp();
        }
        let total = self.weight_sum();
        for p in &mut self.particles {
            p.weight /= total;
        }
        MeasurementOutcome::Updated
    }

    /// Low-variance systematic resampling when `N_eff < N/2`. Returns whether
    /// resampling happened.
    pub fn resample(&mut self) -> bool {
        let n = self.particles.len();
        if n == 0 || self.effective_sample_size() >= n as f64 / 2.0 {
            return false;
        }
        let total = self.weight_sum();
        let step = total / n as f64;
        let start = self.rng.random_range(0.0..step);
        let mut out = Vec::with_capacity(n);
        let mut i = 0;
        let mut cumulative = self.particles[0].weight;
        for k in 0..n {
            let u = start + k as f64 * step;
            while u > cumulative && i + 1 < n {
                i += 1;
                cumulative += self.particles[i].weight;
            }
            out.push(Particle {
                pose: self.particles[i].pose,
                weight: 1.0 / n as f64,
            });
        }
        self.particles = out;
        true
    }

    /// Weighted mean position and circular mean heading.
    pub fn estimate(&self) -> Pose2D {
        let total = self.weight_sum();
        let (mut x, mut y, mut s, mut c) = (0.0, 0.0, 0.0, 0.0);
        for p in &self.particles {
            let w = p.weight / total;
            x += w * p.pose.x;
            y += w * p.pose.y;
            s += w * p.pose.theta.sin();
            c += w * p.pose.theta.cos();
        }
        Pose2D::new(x, y, s.atan2(c))
    }

    pub fn summary(&self) -> ParticleSummary {
        let mean = self.estimate();
        let total = self.weight_sum();
        let (mut vxy, mut vth) = (0.0, 0.0);
        for p in &self.particles {
            let w = p.weight / total;
            vxy += w * ((p.pose.x - mean.x).powi(2) + (p.pose.y - mean.y).powi(2));
            vth += w * normalize_angle(p.pose.theta - mean.theta).powi(2);
        }
        ParticleSummary {
            count: self.len(),
            mean,
            std_xy: vxy.sqrt(),
            std_theta: vth.sqrt(),
            n_eff: self.effective_sample_size(),
        }
    }
}
