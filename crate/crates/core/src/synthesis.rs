//! Robust value iteration for reach-avoid objectives on interval MDPs.

use std::io::Write;

use rayon::prelude::*;

use crate::abstraction::{ActionSet, Imdp, Transitions};
use crate::error::{Error, Result};
use crate::geometry::IntervalBox;
use crate::partition::{Label, Partition};

/// Which side the adversary plays when resolving interval ambiguity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

const MASS_TOL: f64 = 1e-9;

/// Optimum of `sum_k p_k v_k` over `{p : lo <= p <= hi, sum p = 1}` and an
/// optimal distribution, by the sorted greedy: every target starts at its
/// lower bound and the remaining mass goes to targets in order of
/// increasing (min) or decreasing (max) value, each up to its upper bound.
pub fn worst_case_expectation(
    trans: Transitions<'_>,
    values: &[f64],
    direction: Direction,
) -> Result<(f64, Vec<f64>)> {
    let mut order: Vec<usize> = (0..trans.len()).collect();
    let key = |k: usize| values[trans.targets[k] as usize];
    match direction {
        Direction::Min => order.sort_by(|&a, &b| key(a).total_cmp(&key(b))),
        Direction::Max => order.sort_by(|&a, &b| key(b).total_cmp(&key(a))),
    }
    let mut dist: Vec<f64> = trans.lo.to_vec();
    let mut remaining = 1.0 - dist.iter().sum::<f64>();
    for &k in &order {
        if remaining <= 0.0 {
            break;
        }
        let add = (trans.hi[k] - trans.lo[k]).min(remaining);
        dist[k] += add;
        remaining -= add;
    }
    if remaining > MASS_TOL || remaining < -MASS_TOL {
        return Err(Error::InfeasibleAmbiguitySet {
            state: usize::MAX,
            action: usize::MAX,
            sum_lo: trans.lo.iter().sum(),
            sum_hi: trans.hi.iter().sum(),
        });
    }
    let value = dist
        .iter()
        .zip(trans.targets)
        .map(|(p, &t)| p * values[t as usize])
        .sum();
    Ok((value, dist))
}

/// Allocation-free form of [`worst_case_expectation`] for the sweep loop.
fn backup(trans: Transitions<'_>, values: &[f64], direction: Direction, buf: &mut Vec<(f64, u32)>) -> f64 {
    buf.clear();
    let mut remaining = 1.0;
    let mut acc = 0.0;
    for k in 0..trans.len() {
        let v = values[trans.targets[k] as usize];
        remaining -= trans.lo[k];
        acc += trans.lo[k] * v;
        let slack = trans.hi[k] - trans.lo[k];
        if slack > 0.0 {
            let key = if direction == Direction::Min { v } else { -v };
            buf.push((key, k as u32));
        }
    }
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for &(_, k) in buf.iter() {
        if remaining <= 0.0 {
            break;
        }
        let k = k as usize;
        let add = (trans.hi[k] - trans.lo[k]).min(remaining);
        acc += add * values[trans.targets[k] as usize];
        remaining -= add;
    }
    acc
}

/// Lower and upper reach-avoid probabilities per IMDP state.
#[derive(Clone, Debug)]
pub struct ValueBounds {
    pub v_lo: Vec<f64>,
    pub v_hi: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Optimal robust policy and the certified bound at the initial state.
#[derive(Clone, Debug)]
pub struct RobustPolicy {
    pub action: Vec<usize>,
    pub lambda: f64,
}

fn goal_indicator(imdp: &Imdp) -> Vec<f64> {
    imdp.labels()
        .iter()
        .map(|l| if *l == Label::Goal { 1.0 } else { 0.0 })
        .collect()
}

/// Robust value iteration with Gauss-Jacobi sweeps from the goal indicator.
///
/// The lower bound maximizes over actions against the minimizing adversary.
/// A state only switches action when another action is strictly better than
/// its current one, and the first choice is the lowest maximizing index;
/// this keeps states whose values coincide in floating point from picking
/// actions that cycle without progress.
///
/// Every few sweeps the iterate is raised to the exact value of the current
/// policy; both lie below the fixed point, so this only speeds things up.
/// The sweeps stop once the residual drops under `tol`, which can happen far
/// below the fixed point when the goal mass gained per step is tiny. The
/// sweep policy is then refined by policy iteration: evaluate it exactly
/// (see [`evaluate_policy`]), switch every state to a strictly better action
/// and repeat until none exists. `v_lo` is the exact value of the final
/// policy, a fixed point of the robust backup. The upper bound evaluates
/// the same policy against the maximizing adversary.
pub fn robust_value_iteration(imdp: &Imdp, tol: f64, max_iters: usize) -> Result<(ValueBounds, RobustPolicy)> {
    let n = imdp.num_states();
    let mut v = goal_indicator(imdp);
    let mut choice: Vec<usize> = (0..n).map(|s| imdp.choices(s).start).collect();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let (next, next_choice) = sweep(imdp, &v, &choice, iterations == 1);
        residual = sup_distance(&next, &v);
        v = next;
        choice = next_choice;
        if residual < tol {
            break;
        }
        if iterations % EVAL_PERIOD == 0 {
            let w = min_adversary_values(imdp, &choice, &v, max_iters)?;
            for (a, b) in v.iter_mut().zip(&w) {
                *a = a.max(*b);
            }
        }
    }
    if residual >= tol {
        return Err(Error::NonConvergence {
            iterations,
            residual,
        });
    }
    let v_lo = loop {
        let w = min_adversary_values(imdp, &choice, &v, max_iters)?;
        let (next, next_choice) = sweep(imdp, &w, &choice, false);
        let gain = next.iter().zip(&w).map(|(a, b)| a - b).fold(0.0, f64::max);
        if gain <= IMPROVE_TOL || next_choice == choice {
            residual = gain.max(0.0);
            break w;
        }
        if iterations >= max_iters {
            return Err(Error::NonConvergence {
                iterations,
                residual: gain,
            });
        }
        iterations += 1;
        choice = next_choice;
        v = w;
    };
    let action: Vec<usize> = choice.iter().map(|&c| imdp.choice_action(c)).collect();
    let v_hi = max_adversary_values(imdp, &choice, &v_lo, max_iters)?;
    let lambda = v_lo[imdp.initial_state()];
    Ok((
        ValueBounds {
            v_lo,
            v_hi,
            iterations,
            residual,
        },
        RobustPolicy { action, lambda },
    ))
}

/// Sweeps between exact evaluations of the current policy.
const EVAL_PERIOD: usize = 50;

/// Gain below which policy iteration keeps the current action.
const IMPROVE_TOL: f64 = 1e-12;

/// One synchronous backup. `fresh` picks the lowest maximizing action;
/// otherwise the previous choice is kept unless another is strictly better.
fn sweep(imdp: &Imdp, prev: &[f64], prev_choice: &[usize], fresh: bool) -> (Vec<f64>, Vec<usize>) {
    (0..imdp.num_states())
        .into_par_iter()
        .map_init(Vec::new, |buf, s| {
            let choices = imdp.choices(s);
            if imdp.label(s) != Label::Neutral {
                return (prev[s], choices.start);
            }
            let current = prev_choice[s];
            let mut best_c = current;
            let mut best = if fresh {
                f64::NEG_INFINITY
            } else {
                backup(imdp.transitions(current), prev, Direction::Min, buf)
            };
            let keep = best;
            for c in choices {
                let val = backup(imdp.transitions(c), prev, Direction::Min, buf);
                if val > best && (fresh || val > keep + IMPROVE_TOL) {
                    best = val;
                    best_c = c;
                }
            }
            (best, best_c)
        })
        .unzip()
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Improvement threshold of the adversary's policy iteration.
const SWITCH_TOL: f64 = 1e-13;

/// Reach probabilities of the Markov chain where every `solve` state moves
/// by `dist[s]` over the targets of `choice[s]`; the other states keep
/// `fixed`. The caller guarantees the system is nonsingular; `guess` seeds
/// the iterative solver.
fn chain_values(
    imdp: &Imdp,
    choice: &[usize],
    solve: &[bool],
    dist: &[Vec<f64>],
    fixed: &[f64],
    guess: &[f64],
) -> Result<Vec<f64>> {
    let n = imdp.num_states();
    let mut index = vec![usize::MAX; n];
    let mut states = Vec::new();
    for s in 0..n {
        if solve[s] {
            index[s] = states.len();
            states.push(s);
        }
    }
    let mut v = fixed.to_vec();
    if states.is_empty() {
        return Ok(v);
    }
    // rows of I - P restricted to the solve set, diagonal first
    let mut a = Csr::default();
    let mut rhs = vec![0.0; states.len()];
    for (i, &s) in states.iter().enumerate() {
        let trans = imdp.transitions(choice[s]);
        let mut diag = 1.0;
        let row_start = a.cols.len();
        a.cols.push(i);
        a.vals.push(0.0);
        for (k, &t) in trans.targets.iter().enumerate() {
            let p = dist[s][k];
            if p == 0.0 {
                continue;
            }
            let t = t as usize;
            if t == s {
                diag -= p;
            } else if solve[t] {
                a.cols.push(index[t]);
                a.vals.push(-p);
            } else {
                rhs[i] += p * fixed[t];
            }
        }
        a.vals[row_start] = diag;
        a.row_ptr.push(a.cols.len());
    }
    let x0: Vec<f64> = states.iter().map(|&s| guess[s]).collect();
    let x = match gmres(&a, &rhs, x0) {
        Some(x) => x,
        None => a.lu_solve(&rhs)?,
    };
    for (i, &s) in states.iter().enumerate() {
        v[s] = x[i].clamp(0.0, 1.0);
    }
    Ok(v)
}

/// Square sparse matrix in compressed rows; the first entry of every row is
/// its diagonal.
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Default for Csr {
    fn default() -> Self {
        Csr {
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }
}

impl Csr {
    fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn mul(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().with_min_len(256).for_each(|(i, yi)| {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            *yi = self.cols[r.clone()].iter().zip(&self.vals[r]).map(|(&j, &a)| a * x[j]).sum();
        });
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.vals[self.row_ptr[i]]).collect()
    }

    fn lu_solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        use faer::prelude::Solve;
        use faer::sparse::{SparseColMat, Triplet};
        let n = self.dim();
        let triplets: Vec<Triplet<usize, usize, f64>> = (0..n)
            .flat_map(|i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, k)))
            .map(|(i, k)| Triplet::new(i, self.cols[k], self.vals[k]))
            .collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::InvalidModel(format!("policy evaluation matrix: {e:?}")))?;
        let lu = m
            .sp_lu()
            .map_err(|e| Error::InvalidModel(format!("policy evaluation factorization: {e:?}")))?;
        let x = lu.solve(&faer::Col::<f64>::from_fn(n, |i| rhs[i]));
        Ok((0..n).map(|i| x[i]).collect())
    }
}

/// Sup-norm residual accepted from the iterative solver.
const SOLVE_TOL: f64 = 1e-13;
const GMRES_RESTART: usize = 60;
const GMRES_MAX_ITERS: usize = 3000;

/// Restarted GMRES with right Jacobi preconditioning. `None` when the
/// residual target is not met within the iteration budget.
fn gmres(a: &Csr, b: &[f64], mut x: Vec<f64>) -> Option<Vec<f64>> {
    let n = a.dim();
    let dinv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let dot = |u: &[f64], v: &[f64]| -> f64 { u.par_iter().zip(v).map(|(p, q)| p * q).sum() };
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut total = 0;
    loop {
        a.mul(&x, &mut r);
        r.par_iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= SOLVE_TOL {
            return Some(x);
        }
        if total >= GMRES_MAX_ITERS {
            return None;
        }
        let beta = dot(&r, &r).sqrt();
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; GMRES_RESTART]; GMRES_RESTART + 1];
        let (mut cs, mut sn) = (vec![0.0; GMRES_RESTART], vec![0.0; GMRES_RESTART]);
        let mut g = vec![0.0; GMRES_RESTART + 1];
        g[0] = beta;
        let mut k = 0;
        while k < GMRES_RESTART && total < GMRES_MAX_ITERS {
            total += 1;
            z.par_iter_mut().zip(&basis[k]).zip(&dinv).for_each(|((zi, vi), di)| *zi = vi * di);
            a.mul(&z, &mut w);
            for (j, vj) in basis.iter().enumerate() {
                let hij = dot(&w, vj);
                h[j][k] = hij;
                w.par_iter_mut().zip(vj).for_each(|(wi, v)| *wi -= hij * v);
            }
            let norm = dot(&w, &w).sqrt();
            h[k + 1][k] = norm;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let rho = h[k][k].hypot(h[k + 1][k]);
            if rho == 0.0 {
                break;
            }
            cs[k] = h[k][k] / rho;
            sn[k] = h[k + 1][k] / rho;
            h[k][k] = rho;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k += 1;
            if norm == 0.0 || g[k].abs() <= 1e-3 * SOLVE_TOL {
                break;
            }
            basis.push(w.iter().map(|v| v / norm).collect());
        }
        // back substitution, then x += D^-1 V y
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        x.par_iter_mut().enumerate().for_each(|(i, xi)| {
            let upd: f64 = (0..k).map(|j| y[j] * basis[j][i]).sum();
            *xi += dinv[i] * upd;
        });
    }
}

/// Exact reach-avoid probability of fixed choices against the minimizing
/// adversary.
///
/// States from which the adversary can keep all mass away from the goal
/// forever (a set it can close under its own choices) have value zero. On
/// the remaining states every adversary leaves eventually, so policy
/// iteration over greedy vertex distributions converges to the minimum.
fn min_adversary_values(imdp: &Imdp, choice: &[usize], start: &[f64], max_rounds: usize) -> Result<Vec<f64>> {
    let n = imdp.num_states();
    let mut trap: Vec<bool> = imdp.labels().iter().map(|l| *l != Label::Goal).collect();
    loop {
        let mut changed = false;
        for s in 0..n {
            if !trap[s] || imdp.label(s) != Label::Neutral {
                continue;
            }
            let trans = imdp.transitions(choice[s]);
            let mut lo_out = 0.0;
            let mut hi_in = 0.0;
            for (t, lo, hi) in trans.iter() {
                if trap[t] {
                    hi_in += hi;
                } else {
                    lo_out += lo;
                }
            }
            if lo_out > 0.0 || hi_in < 1.0 - MASS_TOL {
                trap[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let solve: Vec<bool> = (0..n).map(|s| imdp.label(s) == Label::Neutral && !trap[s]).collect();
    let fixed = goal_indicator(imdp);
    let mut dist = vec![Vec::new(); n];
    for s in (0..n).filter(|&s| solve[s]) {
        dist[s] = worst_case_expectation(imdp.transitions(choice[s]), start, Direction::Min)?.1;
    }
    let mut guess = start.to_vec();
    for _ in 0..max_rounds {
        let v = chain_values(imdp, choice, &solve, &dist, &fixed, &guess)?;
        let switches: Vec<(usize, Vec<f64>)> = (0..n)
            .into_par_iter()
            .filter(|&s| solve[s])
            .filter_map(|s| {
                worst_case_expectation(imdp.transitions(choice[s]), &v, Direction::Min)
                    .map(|(val, d)| (val < v[s] - SWITCH_TOL).then_some((s, d)))
                    .transpose()
            })
            .collect::<Result<_>>()?;
        if switches.is_empty() {
            return Ok(v);
        }
        for (s, d) in switches {
            dist[s] = d;
        }
        guess = v;
    }
    Err(Error::NonConvergence {
        iterations: max_rounds,
        residual: f64::NAN,
    })
}

/// Exact reach-avoid probability of fixed choices against the maximizing
/// adversary, starting from a vector `start` that is known not to exceed it.
///
/// Alternates a sweep with the exact value of the greedy adversary's chain
/// and keeps the larger of the two; both stay below the maximum, and the
/// iteration stops at a fixed point of the sweep.
fn max_adversary_values(imdp: &Imdp, choice: &[usize], start: &[f64], max_rounds: usize) -> Result<Vec<f64>> {
    let n = imdp.num_states();
    let fixed = goal_indicator(imdp);
    let mut v = start.to_vec();
    for _ in 0..max_rounds {
        let greedy: Vec<(f64, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                if imdp.label(s) != Label::Neutral {
                    Ok((v[s], Vec::new()))
                } else {
                    worst_case_expectation(imdp.transitions(choice[s]), &v, Direction::Max)
                }
            })
            .collect::<Result<_>>()?;
        // states of the greedy chain that reach the goal with positive probability
        let mut reach: Vec<bool> = imdp.labels().iter().map(|l| *l == Label::Goal).collect();
        loop {
            let mut changed = false;
            for s in 0..n {
                if reach[s] || imdp.label(s) != Label::Neutral {
                    continue;
                }
                let trans = imdp.transitions(choice[s]);
                if trans.targets.iter().zip(&greedy[s].1).any(|(&t, &p)| p > 0.0 && reach[t as usize]) {
                    reach[s] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let solve: Vec<bool> = (0..n).map(|s| reach[s] && imdp.label(s) == Label::Neutral).collect();
        let dist: Vec<Vec<f64>> = greedy.iter().map(|g| g.1.clone()).collect();
        let w = chain_values(imdp, choice, &solve, &dist, &fixed, &v)?;
        let next: Vec<f64> = (0..n).map(|s| greedy[s].0.max(w[s]).max(v[s]).min(1.0)).collect();
        let gain = sup_distance(&next, &v);
        v = next;
        if gain <= SWITCH_TOL {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_rounds,
        residual: f64::NAN,
    })
}

/// Exact reach-avoid probability of a fixed policy against the `direction`
/// adversary; `max_rounds` caps the policy-iteration rounds.
pub fn evaluate_policy(imdp: &Imdp, policy: &[usize], direction: Direction, max_rounds: usize) -> Result<Vec<f64>> {
    let choice: Vec<usize> = (0..imdp.num_states())
        .map(|s| {
            let cs = imdp.choices(s);
            if imdp.label(s) != Label::Neutral {
                return Ok(cs.start);
            }
            cs.clone()
                .find(|&c| imdp.choice_action(c) == policy[s])
                .ok_or_else(|| {
                    Error::InvalidModel(format!("action {} not enabled at state {s}", policy[s]))
                })
        })
        .collect::<Result<_>>()?;
    match direction {
        Direction::Min => min_adversary_values(imdp, &choice, &goal_indicator(imdp), max_rounds),
        Direction::Max => {
            let lo = min_adversary_values(imdp, &choice, &goal_indicator(imdp), max_rounds)?;
            max_adversary_values(imdp, &choice, &lo, max_rounds)
        }
    }
}

/// The permissive policy `x -> F_set(x, sigma(R(x)))`: every input inside
/// the returned box inherits the certified bound.
#[derive(Clone, Copy)]
pub struct PermissivePolicy<'a> {
    pub actions: &'a ActionSet,
    pub policy: &'a RobustPolicy,
    pub partition: &'a Partition,
}

impl<'a> PermissivePolicy<'a> {
    pub fn new(actions: &'a ActionSet, policy: &'a RobustPolicy, partition: &'a Partition) -> Self {
        PermissivePolicy {
            actions,
            policy,
            partition,
        }
    }

    /// Action prescribed in the cell of `x`; `None` on goal, unsafe and
    /// outside cells, where the control loop has already stopped.
    pub fn action(&self, x: &[f64]) -> Option<usize> {
        let s = self.partition.locate(x);
        (!self.partition.is_terminal(s)).then(|| self.policy.action[s])
    }

    pub fn input_set(&self, x: &[f64]) -> Option<&'a IntervalBox> {
        self.action(x).map(|a| self.actions.interface_set(a))
    }

    pub fn cell_input_set(&self, cell: usize) -> Option<&'a IntervalBox> {
        (!self.partition.is_terminal(cell)).then(|| self.actions.interface_set(self.policy.action[cell]))
    }
}

/// Lower-bound values over the grid, row-major like the partition.
#[derive(Clone, Debug)]
pub struct Heatmap {
    pub counts: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn heatmap(values: &ValueBounds, partition: &Partition) -> Heatmap {
    Heatmap {
        counts: partition.counts().to_vec(),
        values: values.v_lo[..partition.num_cells()].to_vec(),
    }
}

impl Heatmap {
    /// One 2-D slice per index of the dimensions after the first two.
    pub fn slices(&self) -> Vec<Vec<Vec<f64>>> {
        let (n0, n1) = (self.counts[0], *self.counts.get(1).unwrap_or(&1));
        let rest: usize = self.counts.iter().skip(2).product();
        (0..rest)
            .map(|k| {
                (0..n0)
                    .map(|i| (0..n1).map(|j| self.values[(i * n1 + j) * rest + k]).collect())
                    .collect()
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, partition: &Partition, mut w: W) -> std::io::Result<()> {
        let d = self.counts.len();
        let mut header: Vec<String> = (0..d).map(|j| format!("i{j}")).collect();
        header.extend((0..d).map(|j| format!("x{j}")));
        header.push("lambda".into());
        writeln!(w, "{}", header.join(","))?;
        for (i, v) in self.values.iter().enumerate() {
            let idx = partition.multi_index(i);
            let c = partition.cell_center(i).expect("interior cell");
            let mut fields: Vec<String> = idx.iter().map(|k| k.to_string()).collect();
            fields.extend(c.iter().map(|x| x.to_string()));
            fields.push(v.to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// `state,v_lo,v_hi,action` rows.
pub fn write_values_csv<W: Write>(values: &ValueBounds, policy: &RobustPolicy, mut w: W) -> std::io::Result<()> {
    writeln!(w, "state,v_lo,v_hi,action")?;
    for s in 0..values.v_lo.len() {
        writeln!(w, "{s},{},{},{}", values.v_lo[s], values.v_hi[s], policy.action[s])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::ChoiceRows;

    fn view<'a>(t: &'a [u32], lo: &'a [f64], hi: &'a [f64]) -> Transitions<'a> {
        Transitions { targets: t, lo, hi }
    }

    #[test]
    fn two_free_targets() {
        let v = [0.0, 1.0];
        let (e, d) = worst_case_expectation(view(&[0, 1], &[0.0, 0.0], &[1.0, 1.0]), &v, Direction::Min).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(d, vec![1.0, 0.0]);
        let (e, d) = worst_case_expectation(view(&[0, 1], &[0.0, 0.0], &[1.0, 1.0]), &v, Direction::Max).unwrap();
        assert_eq!(e, 1.0);
        assert_eq!(d, vec![0.0, 1.0]);
    }

    #[test]
    fn greedy_fills_low_values_first() {
        let v = [0.0, 0.5, 1.0];
        let t = [0, 1, 2];
        let (e, d) = worst_case_expectation(view(&t, &[0.1; 3], &[0.5; 3]), &v, Direction::Min).unwrap();
        for (a, b) in d.iter().zip([0.5, 0.4, 0.1]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((e - 0.3).abs() < 1e-15);
    }

    #[test]
    fn no_ambiguity_is_dot_product() {
        let v = [0.2, 0.7, 0.9];
        let p = [0.3, 0.3, 0.4];
        let (e, _) = worst_case_expectation(view(&[0, 1, 2], &p, &p), &v, Direction::Min).unwrap();
        assert!((e - (0.06 + 0.21 + 0.36)).abs() < 1e-15);
    }

    #[test]
    fn infeasible_set() {
        let v = [0.0, 1.0];
        let r = worst_case_expectation(view(&[0, 1], &[0.1, 0.1], &[0.2, 0.2]), &v, Direction::Min);
        assert!(matches!(r, Err(Error::InfeasibleAmbiguitySet { .. })));
    }

    fn chain() -> Imdp {
        // 0 -> {1, goal 2, unsafe 3}, 1 -> {0, goal}
        let labels = vec![Label::Neutral, Label::Neutral, Label::Goal, Label::Unsafe];
        let choices: Vec<Vec<(usize, ChoiceRows)>> = vec![
            vec![
                (0, vec![(1, 0.5, 0.7), (3, 0.3, 0.5)]),
                (1, vec![(2, 0.2, 0.4), (3, 0.6, 0.8)]),
            ],
            vec![(0, vec![(0, 0.0, 0.5), (2, 0.5, 1.0)])],
            vec![(0, vec![(2, 1.0, 1.0)])],
            vec![(0, vec![(3, 1.0, 1.0)])],
        ];
        Imdp::from_choices(labels, 2, 0, choices).unwrap()
    }

    #[test]
    fn chain_values() {
        let imdp = chain();
        let (vb, pol) = robust_value_iteration(&imdp, 1e-12, 10_000).unwrap();
        // action 0 at state 0: worst case 0.5 * V(1); V(1) = 0.5 V(0) + 0.5
        // => V(0) = max(0.25 V(0) + 0.25, 0.2) = 1/3
        assert!((vb.v_lo[0] - 1.0 / 3.0).abs() < 1e-10);
        assert!((vb.v_lo[1] - 2.0 / 3.0).abs() < 1e-10);
        assert_eq!(pol.action[0], 0);
        assert!((pol.lambda - 1.0 / 3.0).abs() < 1e-10);
        for s in 0..4 {
            assert!(vb.v_lo[s] <= vb.v_hi[s] + 1e-12);
        }
        assert_eq!(vb.v_hi[2], 1.0);
        assert_eq!(vb.v_hi[3], 0.0);
    }

    #[test]
    fn all_goal_converges_immediately() {
        let imdp = Imdp::from_choices(vec![Label::Goal; 3], 1, 0, (0..3).map(|s| vec![(0, vec![(s, 1.0, 1.0)])]).collect()).unwrap();
        let (vb, pol) = robust_value_iteration(&imdp, 1e-6, 10).unwrap();
        assert_eq!(vb.iterations, 1);
        assert_eq!(vb.v_lo, vec![1.0; 3]);
        assert_eq!(vb.v_hi, vec![1.0; 3]);
        assert_eq!(pol.lambda, 1.0);
    }

    #[test]
    fn non_convergence_is_reported() {
        let imdp = chain();
        let r = robust_value_iteration(&imdp, 1e-15, 3);
        assert!(matches!(r, Err(Error::NonConvergence { iterations: 3, .. })));
    }

    #[test]
    fn saturated_states_keep_progressing_actions() {
        // state 1 can self-loop (action 0) or move to goal (action 1). Once
        // V(1) = 1 the self-loop ties; the policy must keep moving.
        let labels = vec![Label::Goal, Label::Neutral];
        let choices = vec![
            vec![(0, vec![(0, 1.0, 1.0)])],
            vec![(0, vec![(1, 1.0, 1.0)]), (1, vec![(0, 1.0, 1.0)])],
        ];
        let imdp = Imdp::from_choices(labels, 2, 1, choices).unwrap();
        let (vb, pol) = robust_value_iteration(&imdp, 1e-9, 100).unwrap();
        assert_eq!(vb.v_lo[1], 1.0);
        assert_eq!(pol.action[1], 1);
        let again = evaluate_policy(&imdp, &pol.action, Direction::Min, 100).unwrap();
        assert_eq!(again[1], 1.0);
    }
}
