//! Discrete-time stochastic benchmark systems `x' = f(x, u, w)` with additive
//! diagonal Gaussian noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{wrap_angle, Interval, IntervalBox};

/// Benchmark dynamics and their physical parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dynamics {
    /// `x' = [[1, tau], [0, 1]] x + [tau^2 / 2, tau] u + w`
    DoubleIntegrator { tau: f64 },
    /// State `(p, v)`:
    /// `v' = v + tau (P u - g cos(k p)) + w2`, `p' = p + tau (v' - w2) + w1`.
    MountainCar {
        tau: f64,
        power: f64,
        gravity: f64,
        /// `k` in `cos(k p)`
        #[serde(default = "one")]
        hill_frequency: f64,
    },
    /// State `(x, y, theta)`, input `(steering, speed)`:
    /// `x' = x + tau u2 cos(theta)`, `y' = y + tau u2 sin(theta)`,
    /// `theta' = wrap(theta + tau alpha u1 + w)`.
    Dubins { tau: f64, alpha: f64 },
}

fn one() -> f64 {
    1.0
}

impl Dynamics {
    pub fn state_dim(&self) -> usize {
        match self {
            Dynamics::DoubleIntegrator { .. } | Dynamics::MountainCar { .. } => 2,
            Dynamics::Dubins { .. } => 3,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Dynamics::DoubleIntegrator { .. } | Dynamics::MountainCar { .. } => 1,
            Dynamics::Dubins { .. } => 2,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Dynamics::DoubleIntegrator { .. })
    }
}

/// A benchmark: dynamics, noise law, state/input domains and the reach-avoid
/// regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemModel {
    pub name: String,
    pub dynamics: Dynamics,
    pub state_box: IntervalBox,
    pub input_box: IntervalBox,
    /// Per-state-dimension standard deviation of the additive noise; zero
    /// marks a noise-free dimension.
    pub noise_std: Vec<f64>,
    #[serde(default)]
    pub wrap_dims: Vec<usize>,
    pub goal_box: IntervalBox,
    #[serde(default)]
    pub unsafe_boxes: Vec<IntervalBox>,
    pub initial_state: Vec<f64>,
}

impl SystemModel {
    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        check_dim("state_box", n, self.state_box.dim())?;
        check_dim("input_box", self.input_dim(), self.input_box.dim())?;
        check_dim("noise_std", n, self.noise_std.len())?;
        check_dim("goal_box", n, self.goal_box.dim())?;
        check_dim("initial_state", n, self.initial_state.len())?;
        for b in std::iter::once(&self.state_box)
            .chain(std::iter::once(&self.input_box))
            .chain(std::iter::once(&self.goal_box))
            .chain(&self.unsafe_boxes)
        {
            IntervalBox::new(b.lo.clone(), b.hi.clone())?;
        }
        for b in &self.unsafe_boxes {
            check_dim("unsafe box", n, b.dim())?;
        }
        if !self.state_box.contains_box(&self.goal_box) {
            return Err(Error::InvalidModel(
                "goal box must lie inside the state box".into(),
            ));
        }
        if self.noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidModel(format!(
                "noise_std must be finite and non-negative: {:?}",
                self.noise_std
            )));
        }
        for &d in &self.wrap_dims {
            if d >= n || self.state_box.lo[d] != -PI || self.state_box.hi[d] != PI {
                return Err(Error::InvalidModel(format!(
                    "wrap dimension {d} must have state bounds exactly [-pi, pi]"
                )));
            }
        }
        let all_finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self.dynamics {
            Dynamics::DoubleIntegrator { tau } | Dynamics::Dubins { tau, .. }
                if !(tau > 0.0) =>
            {
                return Err(Error::InvalidModel("tau must be positive".into()));
            }
            Dynamics::MountainCar { tau, .. } if !(tau > 0.0) => {
                return Err(Error::InvalidModel("tau must be positive".into()));
            }
            _ => {}
        }
        if !all_finite(&self.initial_state) {
            return Err(Error::InvalidModel("initial state must be finite".into()));
        }
        Ok(())
    }

    /// Unsafe boxes clipped to the state box.
    pub fn clipped_unsafe_boxes(&self) -> Vec<IntervalBox> {
        self.unsafe_boxes
            .iter()
            .filter_map(|b| b.intersect(&self.state_box))
            .collect()
    }

    pub fn in_goal(&self, x: &[f64]) -> bool {
        self.goal_box.contains(x)
    }

    /// Safe means inside the state box and outside every unsafe box.
    pub fn is_safe(&self, x: &[f64]) -> bool {
        self.state_box.contains(x) && !self.unsafe_boxes.iter().any(|b| b.contains(x))
    }

    fn wrap_state(&self, x: &mut [f64]) {
        for &d in &self.wrap_dims {
            x[d] = wrap_angle(x[d]);
        }
    }

    /// One transition `f(x, u, w)`.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        check_dim("input", self.input_dim(), u.len())?;
        check_dim("noise", self.state_dim(), w.len())?;
        let mut next = match self.dynamics {
            Dynamics::DoubleIntegrator { tau } => vec![
                x[0] + tau * x[1] + 0.5 * tau * tau * u[0] + w[0],
                x[1] + tau * u[0] + w[1],
            ],
            Dynamics::MountainCar {
                tau,
                power,
                gravity,
                hill_frequency,
            } => {
                let (p, v) = (x[0], x[1]);
                let v_next = v + tau * (power * u[0] - gravity * (hill_frequency * p).cos()) + w[1];
                let p_next = p + tau * (v_next - w[1]) + w[0];
                vec![p_next, v_next]
            }
            Dynamics::Dubins { tau, alpha } => vec![
                x[0] + tau * u[1] * x[2].cos() + w[0],
                x[1] + tau * u[1] * x[2].sin() + w[1],
                x[2] + tau * alpha * u[0] + w[2],
            ],
        };
        self.wrap_state(&mut next);
        Ok(next)
    }

    /// Noise-free successor `f(x, u, 0)`.
    pub fn deterministic_mean(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.step(x, u, &vec![0.0; self.state_dim()])
    }

    /// Noise-free successor before angle wrapping.
    pub fn unwrapped_mean(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match self.dynamics {
            Dynamics::Dubins { tau, alpha } => vec![
                x[0] + tau * u[1] * x[2].cos(),
                x[1] + tau * u[1] * x[2].sin(),
                x[2] + tau * alpha * u[0],
            ],
            _ => self
                .deterministic_mean(x, u)
                .expect("dimensions checked by caller"),
        }
    }

    /// Draw one noise vector from the stream.
    pub fn sample_noise(&self, stream: &mut NoiseStream) -> Vec<f64> {
        self.noise_std
            .iter()
            .map(|&s| {
                let z: f64 = stream.rng.sample(StandardNormal);
                s * z
            })
            .collect()
    }

    /// Interval enclosure of `{f(x, u, 0) : x in cell, u in ball}` before
    /// wrapping. Every output coordinate is exact for the three benchmarks:
    /// each output is either a sum of terms in distinct variables or a
    /// monotone function of a single variable.
    pub fn unwrapped_image_bounds(&self, cell: &IntervalBox, ball: &IntervalBox) -> IntervalBox {
        let x = cell.intervals();
        let u = ball.intervals();
        let out = match self.dynamics {
            Dynamics::DoubleIntegrator { tau } => vec![
                x[0].add(x[1].scale(tau)).add(u[0].scale(0.5 * tau * tau)),
                x[1].add(u[0].scale(tau)),
            ],
            Dynamics::MountainCar {
                tau,
                power,
                gravity,
                hill_frequency,
            } => {
                let cos_p = x[0].scale(hill_frequency).cos();
                let v_next = x[1]
                    .add(u[0].scale(tau * power))
                    .add(cos_p.scale(-tau * gravity));
                // p' = h(p) + tau v + tau^2 P u with h(p) = p - tau^2 g cos(k p).
                // h is increasing when 1 - tau^2 g k > 0; otherwise fall back to
                // the dependency-blind enclosure.
                let c = tau * tau * gravity;
                let h = |p: f64| p - c * (hill_frequency * p).cos();
                let h_iv = if c * hill_frequency.abs() < 1.0 {
                    Interval::new(h(x[0].lo), h(x[0].hi))
                } else {
                    x[0].add(cos_p.scale(-c))
                };
                let p_next = h_iv
                    .add(x[1].scale(tau))
                    .add(u[0].scale(tau * tau * power));
                vec![p_next, v_next]
            }
            Dynamics::Dubins { tau, alpha } => vec![
                x[0].add(u[1].mul(x[2].cos()).scale(tau)),
                x[1].add(u[1].mul(x[2].sin()).scale(tau)),
                x[2].add(u[0].scale(tau * alpha)),
            ],
        };
        IntervalBox::from_intervals(&out)
    }

    /// Interval enclosure of the noise-free successor set, wrapped. A wrapped
    /// dimension whose image crosses the seam is returned as the full range.
    pub fn mean_image_bounds(&self, cell: &IntervalBox, ball: &IntervalBox) -> IntervalBox {
        let mut image = self.unwrapped_image_bounds(cell, ball);
        for &d in &self.wrap_dims {
            let iv = image.interval(d);
            let (lo, hi) = if iv.width() >= 2.0 * PI {
                (-PI, PI)
            } else {
                let lo = wrap_angle(iv.lo);
                let hi = lo + iv.width();
                if hi <= PI {
                    (lo, hi)
                } else {
                    (-PI, PI)
                }
            };
            image.lo[d] = lo;
            image.hi[d] = hi;
        }
        image
    }

    /// Analytic Jacobians `(df/dx, df/du)` of the noise-free map (row-major,
    /// before wrapping).
    pub fn jacobians(&self, x: &[f64], u: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        match self.dynamics {
            Dynamics::DoubleIntegrator { tau } => (
                vec![vec![1.0, tau], vec![0.0, 1.0]],
                vec![vec![0.5 * tau * tau], vec![tau]],
            ),
            Dynamics::MountainCar {
                tau,
                power,
                gravity,
                hill_frequency: k,
            } => {
                let dv_dp = tau * gravity * k * (k * x[0]).sin();
                (
                    vec![vec![1.0 + tau * dv_dp, tau], vec![dv_dp, 1.0]],
                    vec![vec![tau * tau * power], vec![tau * power]],
                )
            }
            Dynamics::Dubins { tau, alpha } => {
                let (s, c) = x[2].sin_cos();
                (
                    vec![
                        vec![1.0, 0.0, -tau * u[1] * s],
                        vec![0.0, 1.0, tau * u[1] * c],
                        vec![0.0, 0.0, 1.0],
                    ],
                    vec![vec![0.0, tau * c], vec![0.0, tau * s], vec![tau * alpha, 0.0]],
                )
            }
        }
    }
}

/// Deterministic per-episode random stream: a ChaCha8 generator keyed by a
/// base seed with an independent stream id (episode index).
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseStream { rng }
    }

    /// Position the stream at its `counter`-th 32-bit word.
    pub fn seek(&mut self, counter: u128) {
        self.rng.set_word_pos(counter);
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;

    #[test]
    fn double_integrator_step() {
        let m = benchmarks::double_integrator();
        assert_eq!(m.step(&[0.0, 0.0], &[0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.step(&[1.0, 2.0], &[1.0], &[0.0, 0.0]).unwrap(), vec![3.5, 3.0]);
        assert_eq!(m.deterministic_mean(&[0.0, 0.0], &[5.0]).unwrap(), vec![2.5, 5.0]);
    }

    #[test]
    fn dubins_step() {
        let m = benchmarks::dubins();
        let x = m.step(&[0.0, 0.0, 0.0], &[PI / 2.0, 1.0], &[0.0; 3]).unwrap();
        assert_eq!(x, vec![1.0, 0.0, 0.85 * PI / 2.0]);
    }

    #[test]
    fn mountain_car_mean() {
        let m = benchmarks::mountain_car();
        let x = m.deterministic_mean(&[-0.5, 0.0], &[0.0]).unwrap();
        let v = 0.0 + 2.0 * (0.0 - 0.0025 * (3.0 * -0.5f64).cos());
        assert_eq!(x, vec![-0.5 + 2.0 * v, v]);
    }

    #[test]
    fn mountain_car_noise_placement() {
        let m = benchmarks::mountain_car();
        let x = m.step(&[-0.5, 0.01], &[0.3], &[0.002, -0.001]).unwrap();
        let v = 0.01 + 2.0 * (0.0015 * 0.3 - 0.0025 * (3.0 * -0.5f64).cos()) - 0.001;
        let p = -0.5 + 2.0 * (v + 0.001) + 0.002;
        assert_eq!(x, vec![p, v]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = benchmarks::double_integrator();
        assert!(matches!(
            m.step(&[0.0], &[0.0], &[0.0, 0.0]),
            Err(Error::Dimension { .. })
        ));
        assert!(m.step(&[0.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn wrapped_output_in_range() {
        let m = benchmarks::dubins();
        let x = m.step(&[0.0, 0.0, 3.0], &[PI / 2.0, 3.0], &[0.0, 0.0, 0.2]).unwrap();
        assert!((-PI..=PI).contains(&x[2]));
    }

    #[test]
    fn dubins_heading_image_includes_peak() {
        let m = benchmarks::dubins();
        let cell = IntervalBox::new(vec![0.0, 0.0, -0.1], vec![0.0, 0.0, 0.1]).unwrap();
        let ball = IntervalBox::point(&[0.0, 1.0]);
        let img = m.mean_image_bounds(&cell, &ball);
        assert_eq!(img.hi[0], 1.0);
        assert!((img.lo[0] - 0.1f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn singleton_image_is_the_mean() {
        for m in benchmarks::all() {
            let x = m.state_box.center();
            let u = m.input_box.center();
            let img = m.mean_image_bounds(&IntervalBox::point(&x), &IntervalBox::point(&u));
            let mean = m.deterministic_mean(&x, &u).unwrap();
            for j in 0..mean.len() {
                assert!((img.lo[j] - mean[j]).abs() < 1e-15 && (img.hi[j] - mean[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn seam_crossing_returns_full_range() {
        let m = benchmarks::dubins();
        let cell = IntervalBox::new(vec![0.0, 0.0, 3.0], vec![1.0, 1.0, PI]).unwrap();
        let ball = IntervalBox::point(&[0.1, 1.0]);
        let img = m.mean_image_bounds(&cell, &ball);
        assert_eq!((img.lo[2], img.hi[2]), (-PI, PI));
        // entirely past the seam: shifted, not widened
        let cell = IntervalBox::new(vec![0.0, 0.0, 3.0], vec![1.0, 1.0, 3.1]).unwrap();
        let img = m.mean_image_bounds(&cell, &IntervalBox::point(&[0.4, 1.0]));
        assert!(img.hi[2] - img.lo[2] < 0.2);
    }

    #[test]
    fn noise_stream_is_reproducible() {
        let m = benchmarks::double_integrator();
        let a = m.sample_noise(&mut NoiseStream::new(42, 0));
        let b = m.sample_noise(&mut NoiseStream::new(42, 0));
        assert_eq!(a, b);
        let c = m.sample_noise(&mut NoiseStream::new(42, 1));
        assert_ne!(a, c);
        let mut s = NoiseStream::new(7, 3);
        let first = m.sample_noise(&mut s);
        m.sample_noise(&mut s);
        s.seek(0);
        assert_eq!(m.sample_noise(&mut s), first);
    }

    #[test]
    fn zero_std_gives_zero_noise() {
        let mut m = benchmarks::double_integrator();
        m.noise_std = vec![0.0, 0.0];
        let w = m.sample_noise(&mut NoiseStream::new(1, 0));
        assert_eq!(w, vec![0.0, 0.0]);
    }

    #[test]
    fn sample_std_matches_noise_std() {
        let m = benchmarks::mountain_car();
        let mut s = NoiseStream::new(42, 0);
        let n = 100_000;
        let mut sq = vec![0.0; 2];
        let mut sum = vec![0.0; 2];
        for _ in 0..n {
            let w = m.sample_noise(&mut s);
            for j in 0..2 {
                sum[j] += w[j];
                sq[j] += w[j] * w[j];
            }
        }
        for j in 0..2 {
            let mean = sum[j] / n as f64;
            let std = (sq[j] / n as f64 - mean * mean).sqrt();
            assert!((std / m.noise_std[j] - 1.0).abs() < 0.02, "dim {j}: {std}");
        }
    }
}
