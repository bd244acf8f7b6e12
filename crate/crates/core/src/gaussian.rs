//! Per-dimension Gaussian landing probabilities and their extrema over an
//! interval of means.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use crate::geometry::{contains_lattice_point, Interval};

/// Upper tail `P(Z > z)` of a standard normal.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// `P(a <= Z <= b)` for a standard normal, computed on the tail side that
/// avoids cancellation.
pub fn normal_mass(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b <= 0.0 {
        normal_sf(-b) - normal_sf(-a)
    } else {
        1.0 - normal_sf(b) - normal_sf(-a)
    }
}

/// Probability that `m + sigma Z` falls in `target`.
pub fn landing_probability(m: f64, sigma: f64, target: Interval) -> f64 {
    normal_mass((target.lo - m) / sigma, (target.hi - m) / sigma)
}

/// Same, for an angle wrapped into `[-pi, pi)`: the mass of every
/// `2 pi`-shifted copy of the target.
pub fn wrapped_landing_probability(m: f64, sigma: f64, target: Interval) -> f64 {
    // copies more than 12 sigma away contribute nothing representable
    let reach = 12.0 * sigma + target.width();
    let k_lo = ((m - target.hi - reach) / TAU).floor() as i64;
    let k_hi = ((m - target.lo + reach) / TAU).ceil() as i64;
    (k_lo..=k_hi)
        .map(|k| landing_probability(m, sigma, target.shift(k as f64 * TAU)))
        .sum::<f64>()
        .min(1.0)
}

/// How one state dimension of the successor is distributed around its mean.
#[derive(Clone, Copy, Debug)]
pub enum Axis {
    /// Additive noise with standard deviation `sigma > 0`.
    Gaussian { sigma: f64 },
    /// Additive noise, angle wrapped into `[-pi, pi)`.
    WrappedGaussian { sigma: f64 },
    /// No noise: the successor coordinate equals its mean.
    Deterministic,
}

/// Bounds `[min, max]` of the probability of landing in `target` over all
/// means in `means`.
///
/// The Gaussian factor is unimodal in the mean with its peak at the target
/// midpoint, so the maximum is at the midpoint when covered and at the
/// nearer endpoint otherwise, and the minimum is at an endpoint. On the
/// circle the same holds with the trough at the antipode of the midpoint.
/// For a deterministic axis measure-zero boundary contacts are ignored; a
/// point-valued mean is resolved with `half_open` (target treated as
/// `[lo, hi)` unless it is the last cell).
pub fn factor_bounds(axis: Axis, means: Interval, target: Interval, closed_top: bool) -> (f64, f64) {
    match axis {
        Axis::Gaussian { sigma } => {
            let f = |m: f64| landing_probability(m, sigma, target);
            let c = target.mid();
            let (fa, fb) = (f(means.lo), f(means.hi));
            let hi = if means.contains(c) { f(c) } else { fa.max(fb) };
            (fa.min(fb), hi)
        }
        Axis::WrappedGaussian { sigma } => {
            let f = |m: f64| wrapped_landing_probability(m, sigma, target);
            let c = target.mid();
            let (fa, fb) = (f(means.lo), f(means.hi));
            let hi = if contains_lattice_point(means, c, TAU) {
                f(c)
            } else {
                fa.max(fb)
            };
            let lo = if contains_lattice_point(means, c + 0.5 * TAU, TAU) {
                f(c + 0.5 * TAU)
            } else {
                fa.min(fb)
            };
            (lo, hi)
        }
        Axis::Deterministic => {
            if means.width() == 0.0 {
                let m = means.lo;
                let inside = target.lo <= m && (m < target.hi || (closed_top && m <= target.hi));
                let v = if inside { 1.0 } else { 0.0 };
                (v, v)
            } else {
                let lo = if target.lo <= means.lo && means.hi <= target.hi {
                    1.0
                } else {
                    0.0
                };
                let hi = if means.overlap(&target) > 0.0 { 1.0 } else { 0.0 };
                (lo, hi)
            }
        }
    }
}
