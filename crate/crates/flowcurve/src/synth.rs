//! Seeded synthetic traffic data for self-tests and benchmarks, plus
//! golden curve fixtures used as regression anchors.

use crate::curve::Hyperplane;
use crate::types::AggregatedObservation;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

/// Triangular density-flow ground truth: a free-flow branch of slope
/// `free_flow_speed` up to capacity, then a straight congested branch
/// down to zero flow at `jam_density`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularTruth {
    pub free_flow_speed: f64,
    pub capacity: f64,
    pub jam_density: f64,
}

impl TriangularTruth {
    pub fn critical_density(&self) -> f64 {
        self.capacity / self.free_flow_speed
    }

    pub fn congested_wave_speed(&self) -> f64 {
        -self.capacity / (self.jam_density - self.critical_density())
    }

    pub fn flow_at(&self, k: f64) -> f64 {
        let free = self.free_flow_speed * k;
        let congested = self.capacity + self.congested_wave_speed() * (k - self.critical_density());
        free.min(congested).max(0.0)
    }
}

/// Noise applied to the true flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    /// Zero-mean Gaussian with a fixed standard deviation.
    Gaussian { sigma: f64 },
    /// Zero-mean Gaussian whose spread grows with density, mimicking the
    /// higher variance of the congested region.
    Heteroskedastic { base: f64, congested_extra: f64 },
    /// Exponentially distributed downward deviations: observed flows sit
    /// below the frontier, more so under congestion.
    AsymmetricDownward { scale: f64 },
}

/// Samples `n` observations from a triangular truth. Densities cover
/// the free-flow branch densely and the congested branch with roughly a
/// third of the points, like real detector data does.
pub fn triangular_observations(
    truth: &TriangularTruth,
    n: usize,
    noise: NoiseModel,
    seed: u64,
) -> Vec<AggregatedObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_c = truth.critical_density();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let k = if i % 3 == 0 {
            rng.gen_range(k_c..truth.jam_density * 0.95)
        } else {
            rng.gen_range(0.2..k_c * 1.05)
        };
        let q_true = truth.flow_at(k);
        let congestion = ((k - k_c) / (truth.jam_density - k_c)).clamp(0.0, 1.0);
        let q = match noise {
            NoiseModel::None => q_true,
            NoiseModel::Gaussian { sigma } => {
                q_true + Normal::new(0.0, sigma).unwrap().sample(&mut rng)
            }
            NoiseModel::Heteroskedastic {
                base,
                congested_extra,
            } => {
                let sigma = base + congested_extra * congestion;
                q_true + Normal::new(0.0, sigma).unwrap().sample(&mut rng)
            }
            NoiseModel::AsymmetricDownward { scale } => {
                let lambda = 1.0 / (scale * (1.0 + 2.0 * congestion));
                q_true - Exp::new(lambda).unwrap().sample(&mut rng)
            }
        };
        out.push(AggregatedObservation::synthetic(k, q.max(0.0)));
    }
    out
}

/// Concave quadratic truth with heteroskedastic Gaussian noise, used by
/// the quantile-coverage checks. Flow follows 80k - 0.4k^2 on densities
/// in (0, 100).
pub fn concave_noisy_observations(n: usize, seed: u64) -> Vec<AggregatedObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let k: f64 = rng.gen_range(1.0..99.0);
        let q_true = 80.0 * k - 0.4 * k * k;
        let sigma = 20.0 + 0.05 * q_true;
        let q = q_true + Normal::new(0.0, sigma).unwrap().sample(&mut rng);
        out.push(AggregatedObservation::synthetic(k, q.max(0.0)));
    }
    out
}

/// Points lying exactly on a concave piecewise-linear function, so every
/// estimator should reproduce them with zero loss.
pub fn concave_exact_observations(n: usize) -> Vec<AggregatedObservation> {
    let planes = [(0.0, 80.0), (400.0, 40.0), (2800.0, -20.0)];
    (0..n)
        .map(|i| {
            let k = 1.0 + 120.0 * i as f64 / n as f64;
            let q = planes
                .iter()
                .map(|(a, b)| a + b * k)
                .fold(f64::INFINITY, f64::min);
            AggregatedObservation::synthetic(k, q.max(0.0))
        })
        .collect()
}

/// Coefficients of a six-piece conditional-mean curve fitted on road
/// detector data; serves as a golden fixture for envelope construction
/// and parameter extraction.
pub fn golden_mean_curve_planes() -> Vec<Hyperplane> {
    vec![
        Hyperplane::new(45.12, 76.88, 10.0),
        Hyperplane::new(864.03, 55.48, 50.0),
        Hyperplane::new(3910.85, 15.37, 80.0),
        Hyperplane::new(4951.16, 2.93, 84.0),
        Hyperplane::new(6644.69, -16.91, 87.0),
        Hyperplane::new(7306.55, -24.34, 120.0),
    ]
}

/// Coefficients of a twelve-piece quantile curve (tau = 0.75) fitted on
/// bagged detector data; golden fixture for parameter extraction.
pub fn golden_quantile_curve_planes() -> Vec<Hyperplane> {
    vec![
        Hyperplane::new(0.0, 79.95, 4.0),
        Hyperplane::new(33.10, 75.45, 8.0),
        Hyperplane::new(84.14, 69.79, 12.0),
        Hyperplane::new(84.37, 69.78, 18.0),
        Hyperplane::new(104.97, 68.67, 20.0),
        Hyperplane::new(375.51, 56.11, 23.0),
        Hyperplane::new(429.21, 53.93, 26.0),
        Hyperplane::new(807.74, 40.44, 29.0),
        Hyperplane::new(1543.74, 16.61, 32.0),
        Hyperplane::new(2585.99, -14.03, 35.0),
        Hyperplane::new(2683.16, -16.71, 45.0),
        Hyperplane::new(2988.56, -22.14, 100.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_truth_geometry() {
        let truth = TriangularTruth {
            free_flow_speed: 80.0,
            capacity: 2000.0,
            jam_density: 135.0,
        };
        assert!((truth.critical_density() - 25.0).abs() < 1e-12);
        assert!((truth.flow_at(25.0) - 2000.0).abs() < 1e-12);
        assert!(truth.flow_at(135.0).abs() < 1e-9);
        assert_eq!(truth.flow_at(200.0), 0.0);
    }

    #[test]
    fn generators_are_deterministic() {
        let truth = TriangularTruth {
            free_flow_speed: 80.0,
            capacity: 2000.0,
            jam_density: 135.0,
        };
        let a = triangular_observations(&truth, 50, NoiseModel::Gaussian { sigma: 10.0 }, 7);
        let b = triangular_observations(&truth, 50, NoiseModel::Gaussian { sigma: 10.0 }, 7);
        assert_eq!(a, b);
        let c = triangular_observations(&truth, 50, NoiseModel::Gaussian { sigma: 10.0 }, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn downward_noise_stays_below_frontier() {
        let truth = TriangularTruth {
            free_flow_speed: 80.0,
            capacity: 2000.0,
            jam_density: 135.0,
        };
        let obs =
            triangular_observations(&truth, 200, NoiseModel::AsymmetricDownward { scale: 60.0 }, 3);
        let above = obs
            .iter()
            .filter(|o| o.q > truth.flow_at(o.k) + 1e-9)
            .count();
        assert_eq!(above, 0);
    }
}
