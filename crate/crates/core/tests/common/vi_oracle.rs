use certmpc::synthesis::{evaluate_policy, worst_case_expectation, Direction};
use certmpc::abstraction::ChoiceRows;
use certmpc::{robust_value_iteration, Imdp, Label};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{polytope_vertices, random_imdp, random_row};

fn single_row(rows: ChoiceRows, n: usize) -> Imdp {
    let labels = vec![Label::Neutral; n];
    let mut choices: Vec<Vec<(usize, ChoiceRows)>> = vec![Vec::new(); n];
    choices[0].push((0, rows));
    Imdp::from_choices(labels, 1, 0, choices).unwrap()
}

/// One random row of `k` targets: the greedy backup against the best
/// polytope vertex, and feasibility of the returned distribution.
pub fn backup_matches_vertices(seed: u64, k: usize, min: bool) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<usize> = (0..k).collect();
    let rows = random_row(&mut rng, &targets);
    let values: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    let imdp = single_row(rows.clone(), k);
    let dir = if min { Direction::Min } else { Direction::Max };
    let (got, dist) = worst_case_expectation(imdp.transitions(0), &values, dir).map_err(|e| e.to_string())?;

    let lo: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let hi: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let vertices = polytope_vertices(&lo, &hi);
    if vertices.is_empty() {
        return Err(format!("seed {seed}: empty polytope"));
    }
    let scores = vertices.iter().map(|p| p.iter().zip(&values).map(|(a, b)| a * b).sum::<f64>());
    let want = if min { scores.fold(f64::INFINITY, f64::min) } else { scores.fold(f64::NEG_INFINITY, f64::max) };
    if (got - want).abs() >= 1e-12 {
        return Err(format!("seed {seed}: greedy {got} vs vertices {want}"));
    }
    let sum: f64 = dist.iter().sum();
    let inside = dist.iter().zip(lo.iter().zip(&hi)).all(|(p, (l, h))| *p >= l - 1e-12 && *p <= h + 1e-12);
    let direct: f64 = dist.iter().zip(&values).map(|(a, b)| a * b).sum();
    if (sum - 1.0).abs() >= 1e-12 || !inside || (direct - got).abs() >= 1e-12 {
        return Err(format!("seed {seed}: infeasible distribution {dist:?}"));
    }
    Ok(())
}

/// Reach-avoid probability of the Markov chain `p` (rows over all states).
fn chain_reach(labels: &[Label], p: &[Vec<f64>]) -> Vec<f64> {
    let n = labels.len();
    let mut reach: Vec<bool> = labels.iter().map(|l| *l == Label::Goal).collect();
    loop {
        let mut changed = false;
        for s in 0..n {
            if !reach[s] && labels[s] == Label::Neutral && (0..n).any(|t| p[s][t] > 0.0 && reach[t]) {
                reach[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let free: Vec<usize> = (0..n).filter(|&s| reach[s] && labels[s] == Label::Neutral).collect();
    let mut out: Vec<f64> = labels.iter().map(|l| if *l == Label::Goal { 1.0 } else { 0.0 }).collect();
    if free.is_empty() {
        return out;
    }
    let m = free.len();
    let a = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.0 } - p[free[i]][free[j]]);
    let b = DVector::from_fn(m, |i, _| (0..n).filter(|&t| labels[t] == Label::Goal).map(|t| p[free[i]][t]).sum());
    let x = a.lu().solve(&b).unwrap();
    for (i, &s) in free.iter().enumerate() {
        out[s] = x[i];
    }
    out
}

/// Per-state values of `policy` against every memoryless vertex adversary,
/// reduced element-wise by `pick`.
fn adversary_extreme(imdp: &Imdp, policy: &[usize], pick: fn(f64, f64) -> f64, init: f64) -> Vec<f64> {
    let n = imdp.num_states();
    let options: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|s| {
            let mut row = vec![0.0; n];
            if imdp.label(s) != Label::Neutral {
                row[s] = 1.0;
                return vec![row];
            }
            let tr = imdp.find(s, policy[s]).unwrap();
            let lo: Vec<f64> = tr.iter().map(|t| t.1).collect();
            let hi: Vec<f64> = tr.iter().map(|t| t.2).collect();
            polytope_vertices(&lo, &hi)
                .into_iter()
                .map(|v| {
                    let mut row = vec![0.0; n];
                    for ((t, _, _), p) in tr.iter().zip(v) {
                        row[t] += p;
                    }
                    row
                })
                .collect()
        })
        .collect();
    let mut best = vec![init; n];
    let mut idx = vec![0usize; n];
    loop {
        let p: Vec<Vec<f64>> = (0..n).map(|s| options[s][idx[s]].clone()).collect();
        let v = chain_reach(imdp.labels(), &p);
        for s in 0..n {
            best[s] = pick(best[s], v[s]);
        }
        let mut s = 0;
        while s < n {
            idx[s] += 1;
            if idx[s] < options[s].len() {
                break;
            }
            idx[s] = 0;
            s += 1;
        }
        if s == n {
            return best;
        }
    }
}

fn policies(imdp: &Imdp) -> Vec<Vec<usize>> {
    let n = imdp.num_states();
    let mut out = vec![vec![0usize; n]];
    for s in 0..n {
        let acts: Vec<usize> = imdp.choices(s).map(|c| imdp.choice_action(c)).collect();
        out = out
            .into_iter()
            .flat_map(|p| {
                acts.iter().map(move |&a| {
                    let mut q = p.clone();
                    q[s] = a;
                    q
                })
            })
            .collect();
    }
    out
}

/// `count` random 3-5 state IMDPs: robust VI (values, lambda, policy
/// optimality, upper values) against exhaustive policy x vertex-adversary
/// search. Returns the largest value gap seen.
pub fn value_iteration_matches_oracle(seed: u64, count: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for instance in 0..count {
        let n = rng.random_range(3..=5);
        let actions = rng.random_range(1..=3);
        let imdp = random_imdp(&mut rng, n, actions, 4);
        let (vb, pol) = robust_value_iteration(&imdp, 1e-12, 100_000).map_err(|e| e.to_string())?;

        let mut oracle = vec![f64::NEG_INFINITY; n];
        for p in policies(&imdp) {
            let v = adversary_extreme(&imdp, &p, f64::min, f64::INFINITY);
            for s in 0..n {
                oracle[s] = oracle[s].max(v[s]);
            }
        }
        let own = adversary_extreme(&imdp, &pol.action, f64::min, f64::INFINITY);
        let upper = adversary_extreme(&imdp, &pol.action, f64::max, f64::NEG_INFINITY);
        let exact_hi = evaluate_policy(&imdp, &pol.action, Direction::Max, 100_000).map_err(|e| e.to_string())?;
        let init = imdp.initial_state();
        worst = worst.max((pol.lambda - oracle[init]).abs());
        for s in 0..n {
            for (what, got, want) in [
                ("v_lo", vb.v_lo[s], oracle[s]),
                ("policy value", own[s], oracle[s]),
                ("v_hi", vb.v_hi[s], upper[s]),
                ("exact upper", exact_hi[s], upper[s]),
            ] {
                worst = worst.max((got - want).abs());
                if (got - want).abs() >= 1e-6 {
                    return Err(format!("instance {instance} state {s}: {what} {got} vs oracle {want}"));
                }
            }
            if vb.v_lo[s] > vb.v_hi[s] + 1e-12 {
                return Err(format!("instance {instance} state {s}: v_lo above v_hi"));
            }
        }
        if (pol.lambda - oracle[init]).abs() >= 1e-6 {
            return Err(format!("instance {instance}: lambda {} vs oracle {}", pol.lambda, oracle[init]));
        }
    }
    Ok(worst)
}
