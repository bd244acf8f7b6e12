#![allow(dead_code)]

pub mod checks;
pub mod coarse;
pub mod vi_oracle;

use std::path::PathBuf;

use certmpc::abstraction::ChoiceRows;
use certmpc::config::BenchmarkConfig;
use certmpc::{Imdp, Label};
use rand::Rng;

/// Random feasible interval row over `targets`: a reference distribution
/// widened by random fractions on both sides, some lower bounds zeroed.
pub fn random_row<R: Rng>(rng: &mut R, targets: &[usize]) -> ChoiceRows {
    let w: Vec<f64> = targets.iter().map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
    let total: f64 = w.iter().sum();
    targets
        .iter()
        .zip(&w)
        .map(|(&t, wi)| {
            let p = wi / total;
            let lo = if rng.random_bool(0.2) { 0.0 } else { p * (1.0 - rng.random::<f64>()) };
            let hi = (p + rng.random::<f64>() * (1.0 - p)).min(1.0);
            (t, lo, hi)
        })
        .collect()
}

/// Random IMDP: state 0 is the goal, state 1 unsafe when `n > 3`, the rest
/// neutral with `num_actions` choices over at most `max_targets` targets.
pub fn random_imdp<R: Rng>(rng: &mut R, n: usize, num_actions: usize, max_targets: usize) -> Imdp {
    let labels: Vec<Label> = (0..n)
        .map(|s| match s {
            0 => Label::Goal,
            1 if n > 3 => Label::Unsafe,
            _ => Label::Neutral,
        })
        .collect();
    let choices = (0..n)
        .map(|s| {
            if labels[s] != Label::Neutral {
                return vec![(0, vec![(s, 1.0, 1.0)])];
            }
            (0..num_actions)
                .map(|a| {
                    let k = rng.random_range(1..=max_targets.min(n));
                    let mut all: Vec<usize> = (0..n).collect();
                    for i in 0..k {
                        let j = rng.random_range(i..n);
                        all.swap(i, j);
                    }
                    let mut targets = all[..k].to_vec();
                    targets.sort();
                    (a, random_row(rng, &targets))
                })
                .collect()
        })
        .collect();
    Imdp::from_choices(labels, num_actions, n - 1, choices).unwrap()
}

/// Vertices of `{p : lo <= p <= hi, sum p = 1}`: every coordinate but one
/// at a bound, the remaining one taking up the slack.
pub fn polytope_vertices(lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    let n = lo.len();
    let mut out: Vec<Vec<f64>> = Vec::new();
    for free in 0..n {
        for mask in 0..(1usize << n) {
            if mask & (1 << free) != 0 {
                continue;
            }
            let mut p: Vec<f64> = (0..n).map(|k| if mask & (1 << k) != 0 { hi[k] } else { lo[k] }).collect();
            p[free] = 0.0;
            let rest = 1.0 - p.iter().sum::<f64>();
            if rest < lo[free] - 1e-12 || rest > hi[free] + 1e-12 {
                continue;
            }
            p[free] = rest.clamp(lo[free], hi[free]);
            if !out.iter().any(|q| q.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-14)) {
                out.push(p);
            }
        }
    }
    out
}

/// A shipped benchmark configuration by file stem.
pub fn config(name: &str) -> BenchmarkConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    BenchmarkConfig::load(&path).unwrap()
}
