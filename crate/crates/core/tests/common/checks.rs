use certmpc::pipeline::Abstraction;
use certmpc::{Imdp, Label, NoiseStream, SystemModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform<R: Rng>(rng: &mut R, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).map(|(l, h)| if h > l { rng.random_range(*l..*h) } else { *l }).collect()
}

/// Empirical landing frequencies at random points of cell x ball against
/// the certified interval, for `triples` random (cell, action, target)
/// entries, 20 points each and `draws` noise samples per point. Returns
/// the largest excursion outside the interval in standard errors.
pub fn interval_soundness(abs: &Abstraction, model: &SystemModel, triples: usize, draws: usize, seed: u64) -> Result<f64, String> {
    let (p, imdp) = (&abs.partition, &abs.imdp);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < triples {
        let s = rng.random_range(0..p.num_cells());
        if imdp.label(s) != Label::Neutral {
            continue;
        }
        let c = imdp.choices(s).start + rng.random_range(0..imdp.choices(s).len());
        let a = imdp.choice_action(c);
        let row: Vec<(usize, f64, f64)> = imdp.transitions(c).iter().collect();
        let (target, lo, hi) = row[rng.random_range(0..row.len())];
        let cell = p.cell_bounds(s).unwrap();
        let ball = abs.actions.interface_set(a);
        for point in 0..20 {
            let x = uniform(&mut rng, &cell.lo, &cell.hi);
            let u = uniform(&mut rng, &ball.lo, &ball.hi);
            let mut noise = NoiseStream::new(checked as u64, point);
            let mut hits = 0usize;
            for _ in 0..draws {
                let w = model.sample_noise(&mut noise);
                let next = model.step(&x, &u, &w).map_err(|e| e.to_string())?;
                if p.locate(&next) == target {
                    hits += 1;
                }
            }
            let f = hits as f64 / draws as f64;
            let se = |q: f64| (q * (1.0 - q) / draws as f64).sqrt().max(1.0 / draws as f64);
            let excess = ((lo - f) / se(lo)).max((f - hi) / se(hi));
            worst = worst.max(excess);
            if excess > 3.0 {
                return Err(format!("cell {s} action {a} target {target}: frequency {f} outside [{lo}, {hi}]"));
            }
        }
        checked += 1;
    }
    Ok(worst)
}

/// Largest containment violations of `small` inside `large`, split into
/// interior targets and the outside state.
pub fn nesting_violation(small: &Imdp, large: &Imdp, outside: usize) -> (f64, f64) {
    assert_eq!(small.num_states(), large.num_states());
    let (mut interior, mut out) = (0.0f64, 0.0f64);
    for s in 0..small.num_states() {
        for c in small.choices(s) {
            let a = small.choice_action(c);
            let big: Vec<(usize, f64, f64)> = large.find(s, a).expect("same actions").iter().collect();
            for (t, lo, hi) in small.transitions(c).iter() {
                let (blo, bhi) = big.iter().find(|e| e.0 == t).map_or((0.0, 0.0), |e| (e.1, e.2));
                let v = (blo - lo).max(hi - bhi).max(0.0);
                if t == outside {
                    out = out.max(v);
                } else {
                    interior = interior.max(v);
                }
            }
        }
    }
    (interior, out)
}

/// The outside state collects the mass of pruned targets, and which targets
/// fall under the pruning threshold changes with the ball, so its interval
/// only nests up to that credit.
pub const PRUNE_SLACK: f64 = 1e-6;

/// Interval nesting and `v_lo` monotonicity between consecutive radii.
/// Values are compared up to `v_tol`, the accuracy they were computed to.
/// Returns the largest rise of `v_lo`.
pub fn nested(small: &Imdp, v_small: &[f64], large: &Imdp, v_large: &[f64], outside: usize, v_tol: f64) -> Result<f64, String> {
    let (interior, out) = nesting_violation(small, large, outside);
    if interior > 1e-12 {
        return Err(format!("interior intervals not nested ({interior:e})"));
    }
    if out > PRUNE_SLACK {
        return Err(format!("outside interval not nested ({out:e})"));
    }
    let mut rise = 0.0f64;
    for (s, (a, b)) in v_small.iter().zip(v_large).enumerate() {
        rise = rise.max(b - a);
        if *b > a + v_tol {
            return Err(format!("v_lo[{s}] rose from {a} to {b}"));
        }
    }
    Ok(rise)
}

/// Worst relative Frobenius error of the analytic Jacobians against
/// central differences over random points of the state and input boxes.
pub fn jacobian_error(model: &SystemModel, points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (model.state_dim(), model.input_dim());
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x = uniform(&mut rng, &model.state_box.lo, &model.state_box.hi);
        let u = uniform(&mut rng, &model.input_box.lo, &model.input_box.hi);
        let (ja, jb) = model.jacobians(&x, &u);
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..n + m {
            let (mut xp, mut xm, mut up, mut um) = (x.clone(), x.clone(), u.clone(), u.clone());
            let h = if k < n {
                let h = 1e-6 * x[k].abs().max(1e-2);
                xp[k] += h;
                xm[k] -= h;
                h
            } else {
                let h = 1e-6 * u[k - n].abs().max(1e-2);
                up[k - n] += h;
                um[k - n] -= h;
                h
            };
            let fp = model.unwrapped_mean(&xp, &up);
            let fm = model.unwrapped_mean(&xm, &um);
            for i in 0..n {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let an = if k < n { ja[i][k] } else { jb[i][k - n] };
                num += (fd - an).powi(2);
                den += an * an;
            }
        }
        worst = worst.max(num.sqrt() / den.sqrt().max(1e-12));
    }
    worst
}
