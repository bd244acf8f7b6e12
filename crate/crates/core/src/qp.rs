//! Small dense convex quadratic programs
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  lo <= x <= hi
//!                 C x >= d          (optional)
//! ```
//!
//! [`solve_box_qp`] handles the box-only case with accelerated projected
//! gradient. [`solve_qp`] is the Goldfarb-Idnani dual active-set method for
//! strictly convex problems with general inequalities.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

pub const PG_TOL: f64 = 1e-8;
pub const PG_MAX_ITERS: usize = 10_000;

pub fn objective(h: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(h * x)) + g.dot(x)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn max_eigenvalue(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    if n == 0 {
        return 0.0;
    }
    // start off-axis so no eigenvector is orthogonal to the seed by symmetry
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = h * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w.dot(&v);
        v = w / norm;
        if (next - lambda).abs() <= 1e-12 * next.abs().max(1e-300) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotient underestimates; pad so 1/L stays a safe step
    lambda.max(h.iter().fold(0.0f64, |m, v| m.max(v.abs()))) * 1.0 + lambda * 1e-6
}

fn project(x: &mut DVector<f64>, lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].max(lo[i]).min(hi[i]);
    }
}

/// Box-constrained QP by projected gradient with Nesterov momentum and a
/// fixed step `1/L`. Stops when the projected-gradient residual
/// `|x - P(x - grad)|` drops below [`PG_TOL`] or after [`PG_MAX_ITERS`].
pub fn solve_box_qp(h: &DMatrix<f64>, g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> Result<QpSolution> {
    let n = g.len();
    if h.nrows() != n || h.ncols() != n || lo.len() != n || hi.len() != n {
        return Err(Error::Dimension {
            what: "box QP",
            expected: n,
            got: h.nrows(),
        });
    }
    if lo.iter().zip(hi).any(|(l, u)| !(l <= u)) {
        return Err(Error::Infeasible);
    }
    let l = max_eigenvalue(h);
    let step = if l > 0.0 { 1.0 / l } else { 1.0 };
    let mut x = DVector::zeros(n);
    project(&mut x, lo, hi);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    let residual = |x: &DVector<f64>| {
        let grad = h * x + g;
        let mut p = x - grad;
        project(&mut p, lo, hi);
        (x - p).norm()
    };
    while iterations < PG_MAX_ITERS {
        iterations += 1;
        let grad = h * &y + g;
        let mut next = &y - grad * step;
        project(&mut next, lo, hi);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        y = &next + (&next - &x) * momentum;
        // restart momentum when it stops helping
        if objective(h, g, &next) > objective(h, g, &x) {
            y = next.clone();
            t = 1.0;
        } else {
            t = t_next;
        }
        x = next;
        if residual(&x) < PG_TOL {
            break;
        }
    }
    let value = objective(h, g, &x);
    Ok(QpSolution {
        x: x.iter().copied().collect(),
        value,
        iterations,
    })
}

/// Rigorous lower bound on the box-QP optimum from any box-feasible `x`:
/// `f(x) + min_{y in box} grad(x)'(y - x)` (convexity).
pub fn box_qp_lower_bound(h: &DMatrix<f64>, g: &DVector<f64>, lo: &[f64], hi: &[f64], x: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    let grad = h * &xv + g;
    let lin: f64 = (0..x.len())
        .map(|i| {
            let y = if grad[i] >= 0.0 { lo[i] } else { hi[i] };
            grad[i] * (y - x[i])
        })
        .sum();
    objective(h, g, &xv) + lin
}

/// General inequality rows `C x >= d`.
#[derive(Clone, Debug)]
pub struct Inequalities {
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl Inequalities {
    pub fn empty(n: usize) -> Self {
        Inequalities {
            c: DMatrix::zeros(0, n),
            d: DVector::zeros(0),
        }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

const FEAS_TOL: f64 = 1e-9;

/// Strictly convex QP with bounds and inequalities via the Goldfarb-Idnani
/// dual method. Variables with `lo == hi` are eliminated first.
pub fn solve_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &[f64],
    hi: &[f64],
    ineq: &Inequalities,
) -> Result<QpSolution> {
    let n = g.len();
    if lo.iter().zip(hi).any(|(l, u)| !(l <= u)) {
        return Err(Error::Infeasible);
    }
    let free: Vec<usize> = (0..n).filter(|&i| hi[i] > lo[i]).collect();
    let fixed: Vec<usize> = (0..n).filter(|&i| hi[i] <= lo[i]).collect();
    let mut x_full = DVector::zeros(n);
    for &i in &fixed {
        x_full[i] = lo[i];
    }
    let nf = free.len();
    // reduced data
    let hf = DMatrix::from_fn(nf, nf, |i, j| h[(free[i], free[j])]);
    let gf = DVector::from_fn(nf, |i, _| {
        g[free[i]] + fixed.iter().map(|&k| h[(free[i], k)] * x_full[k]).sum::<f64>()
    });
    let m = ineq.len();
    // rows: general inequalities, then lower and upper bounds of free vars
    let rows = m + 2 * nf;
    let mut c = DMatrix::zeros(rows, nf);
    let mut d = DVector::zeros(rows);
    for r in 0..m {
        for (i, &fi) in free.iter().enumerate() {
            c[(r, i)] = ineq.c[(r, fi)];
        }
        d[r] = ineq.d[r] - fixed.iter().map(|&k| ineq.c[(r, k)] * x_full[k]).sum::<f64>();
    }
    for (i, &fi) in free.iter().enumerate() {
        c[(m + 2 * i, i)] = 1.0;
        d[m + 2 * i] = lo[fi];
        c[(m + 2 * i + 1, i)] = -1.0;
        d[m + 2 * i + 1] = -hi[fi];
    }
    let (xf, iterations) = if nf == 0 {
        if (0..rows).any(|r| -d[r] < -FEAS_TOL * (1.0 + d[r].abs())) {
            return Err(Error::Infeasible);
        }
        (DVector::zeros(0), 0)
    } else {
        goldfarb_idnani(&hf, &gf, &c, &d)?
    };
    for (i, &fi) in free.iter().enumerate() {
        x_full[fi] = xf[i].max(lo[fi]).min(hi[fi]);
    }
    let value = objective(h, g, &x_full);
    Ok(QpSolution {
        x: x_full.iter().copied().collect(),
        value,
        iterations,
    })
}

fn goldfarb_idnani(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
) -> Result<(DVector<f64>, usize)> {
    let n = g.len();
    let rows = d.len();
    let chol = Cholesky::new(h.clone()).ok_or_else(|| {
        Error::InvalidModel("QP Hessian is not positive definite".into())
    })?;
    let hinv = chol.inverse();
    let mut x = -(&hinv * g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let scale: Vec<f64> = (0..rows)
        .map(|r| 1.0 + d[r].abs() + c.row(r).norm())
        .collect();
    let slack = |x: &DVector<f64>, r: usize| c.row(r).transpose().dot(x) - d[r];
    let max_iters = 50 * (n + rows) + 100;
    let mut iterations = 0;
    loop {
        // most violated inactive constraint
        let mut p = None;
        let mut worst = -FEAS_TOL;
        for r in 0..rows {
            if active.contains(&r) {
                continue;
            }
            let s = slack(&x, r) / scale[r];
            if s < worst {
                worst = s;
                p = Some(r);
            }
        }
        let Some(p) = p else {
            return Ok((x, iterations));
        };
        let np = c.row(p).transpose();
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iters {
                return Err(Error::Infeasible);
            }
            let q = active.len();
            let (z, r) = if q == 0 {
                (&hinv * &np, DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_fn(n, q, |i, k| c[(active[k], i)]);
                let hn = &hinv * &nmat;
                let mmat = nmat.transpose() * &hn;
                let rhs = hn.transpose() * &np;
                let r = match Cholesky::new(mmat.clone()) {
                    Some(ch) => ch.solve(&rhs),
                    None => mmat.lu().solve(&rhs).ok_or(Error::Infeasible)?,
                };
                let z = &hinv * (&np - &nmat * &r);
                (z, r)
            };
            let zn = z.dot(&np);
            // dual step length: largest t keeping multipliers non-negative
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..active.len() {
                if r[k] > 0.0 {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(k);
                    }
                }
            }
            let degenerate = zn <= 1e-14 * np.norm_squared().max(1e-300);
            if degenerate {
                let Some(k) = drop else {
                    return Err(Error::Infeasible);
                };
                for j in 0..active.len() {
                    u[j] -= t1 * r[j];
                }
                up += t1;
                active.remove(k);
                u.remove(k);
                continue;
            }
            let t2 = -slack(&x, p) / zn;
            let t = t1.min(t2);
            x += &z * t;
            for j in 0..active.len() {
                u[j] -= t * r[j];
            }
            up += t;
            if t2 <= t1 {
                active.push(p);
                u.push(up);
                break;
            }
            let k = drop.expect("partial step drops a constraint");
            active.remove(k);
            u.remove(k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, ridge: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        a.transpose() * &a + DMatrix::identity(n, n) * ridge
    }

    /// Enumerate every lower/upper/free pattern; keep the best box-feasible
    /// stationary point.
    fn active_set_oracle(h: &DMatrix<f64>, g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> f64 {
        let n = g.len();
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(n as u32) {
            let mut pat = vec![0u8; n];
            let mut c = code;
            for p in pat.iter_mut() {
                *p = (c % 3) as u8;
                c /= 3;
            }
            let mut x = DVector::zeros(n);
            let free: Vec<usize> = (0..n).filter(|&i| pat[i] == 2).collect();
            for i in 0..n {
                if pat[i] == 0 {
                    x[i] = lo[i];
                } else if pat[i] == 1 {
                    x[i] = hi[i];
                }
            }
            if !free.is_empty() {
                let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
                let rhs = DVector::from_fn(free.len(), |a, _| {
                    let i = free[a];
                    -(g[i] + (0..n).filter(|j| pat[*j] != 2).map(|j| h[(i, j)] * x[j]).sum::<f64>())
                });
                let Some(sol) = hf.lu().solve(&rhs) else { continue };
                for (a, &i) in free.iter().enumerate() {
                    x[i] = sol[a];
                }
            }
            if (0..n).all(|i| x[i] >= lo[i] - 1e-12 && x[i] <= hi[i] + 1e-12) {
                best = best.min(objective(h, g, &x));
            }
        }
        best
    }

    #[test]
    fn identity_zero_gradient() {
        let h = DMatrix::identity(4, 4);
        let g = DVector::zeros(4);
        let s = solve_box_qp(&h, &g, &[-1.0; 4], &[1.0; 4]).unwrap();
        assert!(s.x.iter().all(|v| v.abs() < 1e-12));
        assert!(s.value.abs() < 1e-20);
    }

    #[test]
    fn clipped_unconstrained_minimizer() {
        let n = 5;
        let h = DMatrix::identity(n, n);
        let g = DVector::from_element(n, -2.0);
        let s = solve_box_qp(&h, &g, &vec![-1.0; n], &vec![1.0; n]).unwrap();
        assert!(s.x.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!((s.value - (-1.5 * n as f64)).abs() < 1e-12);
        let gi = solve_qp(&h, &g, &vec![-1.0; n], &vec![1.0; n], &Inequalities::empty(n)).unwrap();
        assert!((gi.value - s.value).abs() < 1e-12);
    }

    #[test]
    fn box_qp_matches_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let n = 6;
            let h = random_psd(&mut rng, n, 0.05);
            let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.1..2.5)).collect();
            let oracle = active_set_oracle(&h, &g, &lo, &hi);
            let pg = solve_box_qp(&h, &g, &lo, &hi).unwrap();
            let gi = solve_qp(&h, &g, &lo, &hi, &Inequalities::empty(n)).unwrap();
            assert!((pg.value - oracle).abs() < 1e-7, "pg {} oracle {}", pg.value, oracle);
            assert!((gi.value - oracle).abs() < 1e-9, "gi {} oracle {}", gi.value, oracle);
            let lb = box_qp_lower_bound(&h, &g, &lo, &hi, &pg.x);
            assert!(lb <= oracle + 1e-12 && oracle - lb < 1e-5);
        }
    }

    #[test]
    fn general_inequalities() {
        // min 1/2 |x|^2 + x0 s.t. x0 + 2 x1 >= 1
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_vec(vec![1.0, 0.0]);
        let ineq = Inequalities {
            c: DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            d: DVector::from_vec(vec![1.0]),
        };
        let s = solve_qp(&h, &g, &[-10.0; 2], &[10.0; 2], &ineq).unwrap();
        assert!((s.x[0] + 0.6).abs() < 1e-12 && (s.x[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn infeasible_rows_detected() {
        let h = DMatrix::identity(1, 1);
        let g = DVector::zeros(1);
        // 0.5 x >= 1 with x <= 1
        let ineq = Inequalities {
            c: DMatrix::from_row_slice(1, 1, &[0.5]),
            d: DVector::from_vec(vec![1.0]),
        };
        assert!(matches!(solve_qp(&h, &g, &[-1.0], &[1.0], &ineq), Err(Error::Infeasible)));
        // dependent rows that are jointly satisfiable
        let ineq = Inequalities {
            c: DMatrix::from_row_slice(1, 1, &[0.5]),
            d: DVector::from_vec(vec![0.4]),
        };
        let s = solve_qp(&h, &g, &[-1.0], &[1.0], &ineq).unwrap();
        assert!((s.x[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn fixed_variables_are_exact() {
        let h = DMatrix::identity(2, 2) * 2.0;
        let g = DVector::from_vec(vec![1.0, 1.0]);
        let s = solve_qp(&h, &g, &[0.3, -1.0], &[0.3, 1.0], &Inequalities::empty(2)).unwrap();
        assert_eq!(s.x[0], 0.3);
        assert!((s.x[1] + 0.5).abs() < 1e-12);
    }
}
