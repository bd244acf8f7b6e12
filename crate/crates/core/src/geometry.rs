//! Closed intervals and axis-aligned boxes with the interval arithmetic used
//! to bound images of cells and input balls.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}] is empty");
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn add(self, other: Interval) -> Interval {
        Interval::new(self.lo + other.lo, self.hi + other.hi)
    }

    pub fn shift(self, c: f64) -> Interval {
        Interval::new(self.lo + c, self.hi + c)
    }

    pub fn scale(self, c: f64) -> Interval {
        if c >= 0.0 {
            Interval::new(c * self.lo, c * self.hi)
        } else {
            Interval::new(c * self.hi, c * self.lo)
        }
    }

    /// Product of two intervals: min/max over the four corners.
    pub fn mul(self, other: Interval) -> Interval {
        let c = [
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        ];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(lo, hi)
    }

    /// Range of `cos` over the interval. Endpoints plus the critical angles
    /// `2k*pi` (maximum) and `(2k+1)*pi` (minimum) that fall inside.
    pub fn cos(self) -> Interval {
        if self.width() >= TAU {
            return Interval::new(-1.0, 1.0);
        }
        let (a, b) = (self.lo.cos(), self.hi.cos());
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        if contains_lattice_point(self, 0.0, TAU) {
            hi = 1.0;
        }
        if contains_lattice_point(self, PI, TAU) {
            lo = -1.0;
        }
        Interval::new(lo, hi)
    }

    /// Range of `sin` over the interval.
    pub fn sin(self) -> Interval {
        if self.width() >= TAU {
            return Interval::new(-1.0, 1.0);
        }
        let (a, b) = (self.lo.sin(), self.hi.sin());
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        if contains_lattice_point(self, 0.5 * PI, TAU) {
            hi = 1.0;
        }
        if contains_lattice_point(self, -0.5 * PI, TAU) {
            lo = -1.0;
        }
        Interval::new(lo, hi)
    }

    /// Length of `self ∩ other`, zero when disjoint or touching.
    pub fn overlap(&self, other: &Interval) -> f64 {
        (self.hi.min(other.hi) - self.lo.max(other.lo)).max(0.0)
    }
}

/// Whether `offset + k * period` lies in `iv` for some integer `k`.
pub(crate) fn contains_lattice_point(iv: Interval, offset: f64, period: f64) -> bool {
    let k = ((iv.lo - offset) / period).ceil();
    offset + k * period <= iv.hi
}

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        return theta;
    }
    let w = theta - TAU * ((theta + PI) / TAU).floor();
    // floor can land exactly on PI through rounding
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Axis-aligned box `{x : lo <= x <= hi}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl IntervalBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim("box bounds", lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidModel(format!(
                "empty box: lo {lo:?} hi {hi:?}"
            )));
        }
        Ok(IntervalBox { lo, hi })
    }

    pub fn from_intervals(ivs: &[Interval]) -> Self {
        IntervalBox {
            lo: ivs.iter().map(|i| i.lo).collect(),
            hi: ivs.iter().map(|i| i.hi).collect(),
        }
    }

    pub fn point(x: &[f64]) -> Self {
        IntervalBox {
            lo: x.to_vec(),
            hi: x.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn interval(&self, j: usize) -> Interval {
        Interval::new(self.lo[j], self.hi[j])
    }

    pub fn intervals(&self) -> Vec<Interval> {
        (0..self.dim()).map(|j| self.interval(j)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Containment with a per-coordinate slack.
    pub fn contains_tol(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l - tol <= *v && *v <= *h + tol)
    }

    pub fn contains_box(&self, other: &IntervalBox) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|j| self.lo[j] <= other.lo[j] && other.hi[j] <= self.hi[j])
    }

    pub fn intersect(&self, other: &IntervalBox) -> Option<IntervalBox> {
        if other.dim() != self.dim() {
            return None;
        }
        let lo: Vec<f64> = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect();
        let hi: Vec<f64> = self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect();
        if lo.iter().zip(&hi).all(|(l, h)| l <= h) {
            Some(IntervalBox { lo, hi })
        } else {
            None
        }
    }

    /// True when the intersection has positive length in every dimension.
    pub fn overlaps_interior(&self, other: &IntervalBox) -> bool {
        (0..self.dim()).all(|j| self.interval(j).overlap(&other.interval(j)) > 0.0)
    }

    /// Clamp a point into the box.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| v.max(*l).min(*h))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }
}
