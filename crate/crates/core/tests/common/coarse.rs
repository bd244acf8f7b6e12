use certmpc::benchmarks;
use certmpc::mpc::{MpcController, MpcSettings, MpcStatus};
use certmpc::pwa::{pwa_table, AffineModel};
use certmpc::{build_imdp, robust_value_iteration, ActionSet, IntervalBox, Label, LabelMode, Partition, RobustPolicy, SystemModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Double integrator on `[-10, 10]^2` with 5x5 cells of width 4; the
/// center cell is the goal.
pub fn coarse_model() -> SystemModel {
    let mut m = benchmarks::double_integrator();
    m.state_box = IntervalBox::new(vec![-10.0; 2], vec![10.0; 2]).unwrap();
    m.goal_box = IntervalBox::new(vec![-2.0; 2], vec![2.0; 2]).unwrap();
    m.initial_state = vec![-6.0, 4.0];
    m
}

pub struct Setup {
    pub model: SystemModel,
    pub partition: Partition,
    pub actions: ActionSet,
    pub policy: RobustPolicy,
    pub pwa: Vec<AffineModel>,
}

pub fn setup(model: SystemModel, counts: &[usize], action_counts: &[usize], eps: &[f64]) -> Setup {
    let partition = Partition::build(&model, counts, LabelMode::Strict).unwrap();
    let actions = ActionSet::grid(&model, action_counts, eps).unwrap();
    let imdp = build_imdp(&model, &partition, &actions).unwrap();
    let (_, policy) = robust_value_iteration(&imdp, 1e-9, 100_000).unwrap();
    let pwa = pwa_table(&model, &partition, &actions, &policy);
    Setup {
        model,
        partition,
        actions,
        policy,
        pwa,
    }
}

impl Setup {
    pub fn controller(&self, settings: MpcSettings) -> MpcController<'_> {
        MpcController::new(&self.model, &self.partition, &self.actions, &self.policy, &self.pwa, settings).unwrap()
    }

    pub fn input_box(&self, cell: usize) -> &IntervalBox {
        match self.partition.label(cell) {
            Label::Goal => &self.model.input_box,
            _ => self.actions.interface_set(self.policy.action[cell]),
        }
    }
}

/// Exact minimum of `0.5 u'Hu + g'u` over `{C u >= d}`: every candidate
/// active set of at most `dim u` rows, solved as an equality QP, keeping
/// the best primal-feasible point.
fn kkt_enumeration(h: &DMatrix<f64>, g: &DVector<f64>, c: &[DVector<f64>], d: &[f64]) -> Option<f64> {
    let nv = g.len();
    let mut best: Option<f64> = None;
    let mut subsets: Vec<Vec<usize>> = vec![vec![]];
    for size in 1..=nv {
        let mut next = Vec::new();
        for s in subsets.iter().filter(|s| s.len() == size - 1) {
            let start = s.last().map_or(0, |&l| l + 1);
            for i in start..c.len() {
                let mut t = s.clone();
                t.push(i);
                next.push(t);
            }
        }
        subsets.extend(next);
    }
    for active in subsets {
        let k = active.len();
        let mut kkt = DMatrix::<f64>::zeros(nv + k, nv + k);
        let mut rhs = DVector::<f64>::zeros(nv + k);
        kkt.view_mut((0, 0), (nv, nv)).copy_from(h);
        for i in 0..nv {
            rhs[i] = -g[i];
        }
        for (a, &row) in active.iter().enumerate() {
            for j in 0..nv {
                kkt[(nv + a, j)] = c[row][j];
                kkt[(j, nv + a)] = c[row][j];
            }
            rhs[nv + a] = d[row];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let u = sol.rows(0, nv).into_owned();
        if !u.iter().all(|v| v.is_finite()) {
            continue;
        }
        if c.iter().zip(d).any(|(ci, di)| ci.dot(&u) < di - 1e-9) {
            continue;
        }
        let val = 0.5 * u.dot(&(h * &u)) + g.dot(&u);
        if best.is_none_or(|b| val < b) {
            best = Some(val);
        }
    }
    best
}

/// Optimal horizon-`n` cost by enumerating every cell sequence the
/// interval bounds do not rule out, each solved exactly.
fn oracle_cost(s: &Setup, x0: &[f64], horizon: usize, q: &DMatrix<f64>, r: f64) -> Option<f64> {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let b = DVector::from_column_slice(&[0.5, 1.0]);
    let reference = DVector::from_column_slice(&[0.0, 0.0]);
    let cells: Vec<usize> = (0..s.partition.num_cells()).filter(|&c| s.partition.label(c) != Label::Unsafe).collect();
    let c0 = s.partition.locate(x0);
    let mut best: Option<f64> = None;
    let mut seq = vec![0usize; horizon];
    let total = cells.len().pow(horizon as u32);
    for code in 0..total {
        let mut rem = code;
        for slot in seq.iter_mut() {
            *slot = cells[rem % cells.len()];
            rem /= cells.len();
        }
        let path: Vec<usize> = std::iter::once(c0).chain(seq.iter().copied()).collect();
        // x_t = G_t u + h_t
        let mut g_t = DMatrix::<f64>::zeros(2, horizon);
        let mut h_t = DVector::from_column_slice(x0);
        let mut hess = DMatrix::<f64>::identity(horizon, horizon) * (2.0 * r);
        let mut grad = DVector::<f64>::zeros(horizon);
        let mut constant = 0.0;
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let mut reachable = true;
        for t in 0..horizon {
            let ub = s.input_box(path[t]);
            let mut e = DVector::<f64>::zeros(horizon);
            e[t] = 1.0;
            rows.push(e.clone());
            rhs.push(ub.lo[0]);
            rows.push(-e);
            rhs.push(-ub.hi[0]);
            g_t = &a * &g_t;
            g_t.set_column(t, &b);
            h_t = &a * &h_t;
            let err = &h_t - &reference;
            hess += g_t.transpose() * q * &g_t * 2.0;
            grad += g_t.transpose() * q * &err * 2.0;
            constant += err.dot(&(q * &err));
            let cell = s.partition.cell_bounds(path[t + 1]).unwrap();
            for d in 0..2 {
                let row = g_t.row(d).transpose();
                // interval reach test before any QP
                let (mut lo, mut hi) = (h_t[d], h_t[d]);
                for j in 0..=t {
                    let bj = s.input_box(path[j]);
                    let (p, q2) = (row[j] * bj.lo[0], row[j] * bj.hi[0]);
                    lo += p.min(q2);
                    hi += p.max(q2);
                }
                if hi < cell.lo[d] - 1e-9 || lo > cell.hi[d] + 1e-9 {
                    reachable = false;
                }
                rows.push(row.clone());
                rhs.push(cell.lo[d] - h_t[d]);
                rows.push(-row);
                rhs.push(h_t[d] - cell.hi[d]);
            }
            if !reachable {
                break;
            }
        }
        if !reachable {
            continue;
        }
        if let Some(v) = kkt_enumeration(&hess, &grad, &rows, &rhs) {
            let v = v + constant;
            if best.is_none_or(|b| v < b) {
                best = Some(v);
            }
        }
    }
    best
}

fn check_sequence(s: &Setup, x: &[f64], cells: &[usize], states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Result<(), String> {
    if cells.len() != states.len() + 1 || cells[0] != s.partition.locate(x) {
        return Err(format!("{x:?}: malformed cell sequence {cells:?}"));
    }
    for t in 0..inputs.len() {
        if !s.input_box(cells[t]).contains_tol(&inputs[t], 1e-9) {
            return Err(format!("{x:?}: input {t} leaves its ball"));
        }
        if !s.partition.cell_bounds(cells[t + 1]).unwrap().contains_tol(&states[t], 1e-6) {
            return Err(format!("{x:?}: state {} leaves its cell", t + 1));
        }
    }
    let mut xt = x.to_vec();
    for (t, u) in inputs.iter().enumerate() {
        xt = s.model.deterministic_mean(&xt, u).unwrap();
        for (a, b) in xt.iter().zip(&states[t]) {
            if (a - b).abs() >= 1e-9 {
                return Err(format!("{x:?}: prediction {t} disagrees with the model"));
            }
        }
    }
    Ok(())
}

/// Branch and bound against the exhaustive oracle at `count` random neutral
/// states of the coarse grid, horizon 3, Q = I, R = 1. Returns the number
/// of feasible states and the largest relative cost gap.
pub fn miqp_matches_oracle(count: usize, seed: u64) -> Result<(usize, f64), String> {
    let s = setup(coarse_model(), &[5, 5], &[11], &[0.5]);
    let horizon = 3;
    let q = DMatrix::<f64>::identity(2, 2);
    let ctrl = s.controller(MpcSettings::diagonal(horizon, &[1.0, 1.0], &[1.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut compared, mut feasible, mut worst) = (0, 0, 0.0f64);
    while compared < count {
        let x = vec![rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let cell = s.partition.locate(&x);
        if s.partition.label(cell) != Label::Neutral {
            continue;
        }
        let sol = ctrl.solve(&x).map_err(|e| e.to_string())?;
        match oracle_cost(&s, &x, horizon, &q, 1.0) {
            None => {
                if sol.status != MpcStatus::InfeasibleFallback {
                    return Err(format!("{x:?}: oracle infeasible, solver {:?}", sol.status));
                }
            }
            Some(best) => {
                feasible += 1;
                if sol.status != MpcStatus::Optimal {
                    return Err(format!("{x:?}: oracle feasible, solver {:?}", sol.status));
                }
                let gap = (sol.cost - best).abs() / best.abs().max(1.0);
                worst = worst.max(gap);
                if gap >= 1e-4 {
                    return Err(format!("{x:?}: solver {} oracle {best}", sol.cost));
                }
                check_sequence(&s, &x, &sol.cell_sequence, &sol.predicted_states, &sol.predicted_inputs)?;
            }
        }
        compared += 1;
    }
    Ok((feasible, worst))
}
