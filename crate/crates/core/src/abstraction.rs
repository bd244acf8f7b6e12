//! Interval MDP abstraction: one state per partition cell, one action per
//! input ball, and per-transition probability intervals computed in closed
//! form from Gaussian CDFs over the mean-image box.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::SystemModel;
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{factor_bounds, landing_probability, Axis};
use crate::geometry::{Interval, IntervalBox};
use crate::partition::{Label, Partition};

/// Targets whose upper bound falls below this are dropped; their mass is
/// credited to the outside state.
pub const PRUNE_THRESHOLD: f64 = 1e-8;
/// Half-width, in standard deviations, of the candidate-target window.
pub const TAIL_SIGMAS: f64 = 6.0;

/// Abstract actions: L-infinity balls of a common radius around a uniform
/// grid of input centers, clipped to the input box.
#[derive(Clone, Debug)]
pub struct ActionSet {
    centers: Vec<Vec<f64>>,
    radius: Vec<f64>,
    balls: Vec<IntervalBox>,
}

impl ActionSet {
    /// `counts[j]` centers along input dimension `j` (endpoints included; a
    /// single center sits at the midpoint).
    pub fn grid(model: &SystemModel, counts: &[usize], radius: &[f64]) -> Result<Self> {
        let m = model.input_dim();
        check_dim("action grid counts", m, counts.len())?;
        check_dim("ball radius", m, radius.len())?;
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidModel("action counts must be positive".into()));
        }
        let axes: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let (lo, hi) = (model.input_box.lo[j], model.input_box.hi[j]);
                let c = counts[j];
                if c == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..c)
                        .map(|k| lo + (hi - lo) * k as f64 / (c - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut centers = vec![Vec::with_capacity(m)];
        for axis in &axes {
            centers = centers
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut c = prefix.clone();
                        c.push(v);
                        c
                    })
                })
                .collect();
        }
        Self::from_centers(model, centers, radius.to_vec())
    }

    pub fn from_centers(model: &SystemModel, centers: Vec<Vec<f64>>, radius: Vec<f64>) -> Result<Self> {
        let m = model.input_dim();
        check_dim("ball radius", m, radius.len())?;
        if radius.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidModel(format!(
                "ball radius must be finite and non-negative: {radius:?}"
            )));
        }
        let mut balls = Vec::with_capacity(centers.len());
        for c in &centers {
            check_dim("action center", m, c.len())?;
            if !model.input_box.contains(c) {
                return Err(Error::InvalidModel(format!(
                    "action center {c:?} outside the input box"
                )));
            }
            let ball = IntervalBox {
                lo: c.iter().zip(&radius).map(|(v, r)| v - r).collect(),
                hi: c.iter().zip(&radius).map(|(v, r)| v + r).collect(),
            };
            let clipped = ball
                .intersect(&model.input_box)
                .expect("center lies in the input box");
            // a zero radius must reproduce the center bit for bit
            let clipped = if radius.iter().all(|r| *r == 0.0) {
                IntervalBox::point(c)
            } else {
                clipped
            };
            balls.push(clipped);
        }
        Ok(ActionSet {
            centers,
            radius,
            balls,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, a: usize) -> &[f64] {
        &self.centers[a]
    }

    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    /// The set of admissible inputs for action `a`: `B(u_a, eps) ∩ U`. It
    /// does not depend on the state.
    pub fn interface_set(&self, a: usize) -> &IntervalBox {
        &self.balls[a]
    }

    pub fn balls(&self) -> &[IntervalBox] {
        &self.balls
    }

    /// Area (volume) of an unclipped ball.
    pub fn ball_volume(&self) -> f64 {
        self.radius.iter().map(|r| 2.0 * r).product()
    }
}

/// Read-only view of one `(state, action)` transition list.
#[derive(Clone, Copy, Debug)]
pub struct Transitions<'a> {
    pub targets: &'a [u32],
    pub lo: &'a [f64],
    pub hi: &'a [f64],
}

impl Transitions<'_> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.targets
            .iter()
            .zip(self.lo.iter().zip(self.hi))
            .map(|(&t, (&l, &h))| (t as usize, l, h))
    }
}

/// Finite interval MDP with sparse transitions stored in compressed rows:
/// `state -> choices -> (target, p_lo, p_hi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Imdp {
    num_actions: usize,
    labels: Vec<Label>,
    initial_state: usize,
    state_ptr: Vec<usize>,
    choice_action: Vec<u32>,
    choice_ptr: Vec<usize>,
    targets: Vec<u32>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Transition list of one choice while the IMDP is being assembled.
pub type ChoiceRows = Vec<(usize, f64, f64)>;

const MASS_TOL: f64 = 1e-9;

impl Imdp {
    /// Assemble from per-state choice lists `(action, [(target, lo, hi)])`.
    /// Validates intervals and ambiguity-set feasibility.
    pub fn from_choices(
        labels: Vec<Label>,
        num_actions: usize,
        initial_state: usize,
        choices: Vec<Vec<(usize, ChoiceRows)>>,
    ) -> Result<Imdp> {
        check_dim("choice lists", labels.len(), choices.len())?;
        let mut imdp = Imdp {
            num_actions,
            labels,
            initial_state,
            state_ptr: vec![0],
            choice_action: Vec::new(),
            choice_ptr: vec![0],
            targets: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
        };
        for (s, list) in choices.into_iter().enumerate() {
            for (a, rows) in list {
                imdp.push_choice(s, a, &rows)?;
            }
            imdp.state_ptr.push(imdp.choice_action.len());
        }
        if imdp.initial_state >= imdp.num_states() {
            return Err(Error::InvalidModel(format!(
                "initial state {} out of range",
                imdp.initial_state
            )));
        }
        Ok(imdp)
    }

    fn push_choice(&mut self, s: usize, a: usize, rows: &[(usize, f64, f64)]) -> Result<()> {
        let n = self.labels.len();
        let mut sum_lo = 0.0;
        let mut sum_hi = 0.0;
        for &(t, l, h) in rows {
            if t >= n || !(0.0 <= l && l <= h && h <= 1.0) {
                return Err(Error::InvalidModel(format!(
                    "bad transition ({s}, {a}, {t}) with interval [{l}, {h}]"
                )));
            }
            sum_lo += l;
            sum_hi += h;
        }
        if sum_lo > 1.0 + MASS_TOL || sum_hi < 1.0 - MASS_TOL {
            return Err(Error::InfeasibleAmbiguitySet {
                state: s,
                action: a,
                sum_lo,
                sum_hi,
            });
        }
        self.choice_action.push(a as u32);
        for &(t, l, h) in rows {
            self.targets.push(t as u32);
            self.lo.push(l);
            self.hi.push(h);
        }
        self.choice_ptr.push(self.targets.len());
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.labels.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_transitions(&self) -> usize {
        self.targets.len()
    }

    pub fn num_choices(&self) -> usize {
        self.choice_action.len()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, s: usize) -> Label {
        self.labels[s]
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn set_initial_state(&mut self, s: usize) {
        assert!(s < self.num_states());
        self.initial_state = s;
    }

    /// Choice indices available at `s`.
    pub fn choices(&self, s: usize) -> std::ops::Range<usize> {
        self.state_ptr[s]..self.state_ptr[s + 1]
    }

    pub fn choice_action(&self, c: usize) -> usize {
        self.choice_action[c] as usize
    }

    pub fn transitions(&self, c: usize) -> Transitions<'_> {
        let r = self.choice_ptr[c]..self.choice_ptr[c + 1];
        Transitions {
            targets: &self.targets[r.clone()],
            lo: &self.lo[r.clone()],
            hi: &self.hi[r],
        }
    }

    /// Transitions of `(s, a)` if `a` is enabled at `s`.
    pub fn find(&self, s: usize, a: usize) -> Option<Transitions<'_>> {
        self.choices(s)
            .find(|&c| self.choice_action(c) == a)
            .map(|c| self.transitions(c))
    }

    /// Explicit-state text export: header, label lines, then one
    /// `s a s' p_lo p_hi` line per transition with 17 significant digits.
    pub fn write_explicit<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "imdp 1")?;
        writeln!(w, "states {}", self.num_states())?;
        writeln!(w, "actions {}", self.num_actions)?;
        writeln!(w, "initial {}", self.initial_state)?;
        for (s, l) in self.labels.iter().enumerate() {
            match l {
                Label::Goal => writeln!(w, "label {s} goal")?,
                Label::Unsafe => writeln!(w, "label {s} unsafe")?,
                Label::Neutral => {}
            }
        }
        writeln!(w, "transitions {}", self.num_transitions())?;
        let mut line = String::new();
        for s in 0..self.num_states() {
            for c in self.choices(s) {
                let a = self.choice_action(c);
                for (t, l, h) in self.transitions(c).iter() {
                    line.clear();
                    write!(line, "{s} {a} {t} {l:.16e} {h:.16e}").expect("string write");
                    writeln!(w, "{line}")?;
                }
            }
        }
        Ok(())
    }

    /// Parse the format written by [`Imdp::write_explicit`].
    pub fn read_explicit<R: BufRead>(r: R) -> Result<Imdp> {
        let bad = |line: usize, msg: &str| Error::Config(format!("imdp line {line}: {msg}"));
        let mut lines = r.lines().enumerate();
        let mut header = |key: &str| -> Result<usize> {
            let (i, l) = lines.next().ok_or_else(|| bad(0, "unexpected end of file"))?;
            let l = l?;
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(bad(i + 1, &format!("expected `{key}`")));
            }
            it.next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(i + 1, "expected an integer"))
        };
        if header("imdp")? != 1 {
            return Err(bad(1, "unsupported version"));
        }
        let n = header("states")?;
        let num_actions = header("actions")?;
        let initial = header("initial")?;
        let mut labels = vec![Label::Neutral; n];
        let mut choices: Vec<Vec<(usize, ChoiceRows)>> = vec![Vec::new(); n];
        for (i, l) in lines {
            let l = l?;
            let f: Vec<&str> = l.split_whitespace().collect();
            match f.as_slice() {
                ["label", s, kind] => {
                    let s: usize = s.parse().map_err(|_| bad(i + 1, "bad state"))?;
                    if s >= n {
                        return Err(bad(i + 1, "state out of range"));
                    }
                    labels[s] = match *kind {
                        "goal" => Label::Goal,
                        "unsafe" => Label::Unsafe,
                        _ => return Err(bad(i + 1, "unknown label")),
                    };
                }
                ["transitions", _] | [] => {}
                [s, a, t, lo, hi] => {
                    let p = |v: &str| v.parse::<usize>().map_err(|_| bad(i + 1, "bad index"));
                    let q = |v: &str| v.parse::<f64>().map_err(|_| bad(i + 1, "bad probability"));
                    let (s, a, t) = (p(s)?, p(a)?, p(t)?);
                    if s >= n {
                        return Err(bad(i + 1, "state out of range"));
                    }
                    let row = (t, q(lo)?, q(hi)?);
                    match choices[s].last_mut() {
                        Some((last, rows)) if *last == a => rows.push(row),
                        _ => choices[s].push((a, vec![row])),
                    }
                }
                _ => return Err(bad(i + 1, "malformed line")),
            }
        }
        Imdp::from_choices(labels, num_actions, initial, choices)
    }
}

fn axes(model: &SystemModel) -> Vec<Axis> {
    (0..model.state_dim())
        .map(|j| {
            let s = model.noise_std[j];
            if s == 0.0 {
                Axis::Deterministic
            } else if model.wrap_dims.contains(&j) {
                Axis::WrappedGaussian { sigma: s }
            } else {
                Axis::Gaussian { sigma: s }
            }
        })
        .collect()
}

/// Per-dimension factor bounds for every candidate target coordinate, plus
/// the bounds on staying inside the state box.
struct FactorTable {
    /// `(first coordinate, [(lo, hi)])` per dimension
    dims: Vec<(usize, Vec<(f64, f64)>)>,
    inside: Vec<(f64, f64)>,
    /// Upper bound on in-box mass outside the candidate windows.
    tail: f64,
}

fn factor_table(partition: &Partition, axes: &[Axis], image: &IntervalBox) -> FactorTable {
    let mut dims = Vec::with_capacity(axes.len());
    let mut inside = Vec::with_capacity(axes.len());
    let mut tail = 0.0;
    for (j, &axis) in axes.iter().enumerate() {
        let means = image.interval(j);
        let n = partition.counts()[j];
        let range = match axis {
            Axis::Gaussian { sigma } => {
                let window = Interval::new(means.lo - TAIL_SIGMAS * sigma, means.hi + TAIL_SIGMAS * sigma);
                // the window never reaches further than the tail bound below
                tail += 2.0 * crate::gaussian::normal_sf(TAIL_SIGMAS);
                partition.overlapping_range(j, window)
            }
            Axis::WrappedGaussian { .. } => 0..n,
            Axis::Deterministic => partition.overlapping_range(j, means),
        };
        let factors = range
            .clone()
            .map(|k| factor_bounds(axis, means, partition.cell_interval(j, k), k + 1 == n))
            .collect();
        dims.push((range.start, factors));
        inside.push(match axis {
            Axis::WrappedGaussian { .. } => (1.0, 1.0),
            _ => factor_bounds(axis, means, partition.state_box().interval(j), true),
        });
    }
    FactorTable { dims, inside, tail }
}

/// Means at the vertices of `cell x ball` when the dynamics are affine and
/// every axis carries ordinary Gaussian noise. The landing probability of a
/// box is log-concave in the mean, so over the image polytope (the hull of
/// these points) its minimum sits at one of them.
fn vertex_means(model: &SystemModel, axes: &[Axis], cell: &IntervalBox, ball: &IntervalBox) -> Option<Vec<Vec<f64>>> {
    if !model.dynamics.is_affine() || !axes.iter().all(|a| matches!(a, Axis::Gaussian { .. })) {
        return None;
    }
    let (n, m) = (cell.dim(), ball.dim());
    let corner = |lo: &[f64], hi: &[f64], bits: usize, k: usize| -> Vec<f64> {
        (0..k).map(|j| if bits >> j & 1 == 1 { hi[j] } else { lo[j] }).collect()
    };
    let mut out = Vec::with_capacity(1 << (n + m));
    for bx in 0..1usize << n {
        let x = corner(&cell.lo, &cell.hi, bx, n);
        for bu in 0..1usize << m {
            let u = corner(&ball.lo, &ball.hi, bu, m);
            out.push(model.unwrapped_mean(&x, &u));
        }
    }
    Some(out)
}

/// `min_v prod_j mass_j(v)` over vertex means, where `mass_j` is the
/// probability of landing in `target_j` along dimension `j`.
fn vertex_lower(vertices: &[Vec<f64>], axes: &[Axis], target: &[Interval]) -> f64 {
    vertices
        .iter()
        .map(|v| {
            axes.iter()
                .zip(target)
                .enumerate()
                .map(|(j, (axis, t))| match axis {
                    Axis::Gaussian { sigma } => landing_probability(v[j], *sigma, *t),
                    _ => 1.0,
                })
                .product::<f64>()
        })
        .fold(1.0, f64::min)
}

fn axis_sigmas(axes: &[Axis]) -> Vec<f64> {
    axes.iter()
        .map(|a| match a {
            Axis::Gaussian { sigma } | Axis::WrappedGaussian { sigma } => *sigma,
            Axis::Deterministic => 0.0,
        })
        .collect()
}

const ASCENT_ITERS: usize = 100;
const ASCENT_GAP: f64 = 1e-12;

/// Certified upper bound on `prod_j mass_j(m)` over the image polytope
/// `m = v_0 + sum_i t_i (v_{2^i} - v_0)`, `t` in the unit cube, where `v` are
/// the vertex means of [`vertex_means`] (bit `i` of the index flips
/// coordinate `i` of the cell-ball corner).
///
/// The log-mass is concave in `t`; projected Newton steps find a near
/// maximizer and the linearization at the final point, maximized over the
/// cube, bounds the true maximum from above. `None` when the mass vanishes
/// numerically.
fn polytope_upper(vertices: &[Vec<f64>], sigmas: &[f64], target: &[Interval]) -> Option<f64> {
    let d = sigmas.len();
    let k = vertices.len().trailing_zeros() as usize;
    let base = &vertices[0];
    let gens: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..d).map(|j| vertices[1 << i][j] - base[j]).collect())
        .collect();
    let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let eval = |t: &[f64]| -> (f64, Vec<f64>, DMatrix<f64>) {
        let mut logf = 0.0;
        let mut grad = vec![0.0; k];
        let mut hess = DMatrix::zeros(k, k);
        for j in 0..d {
            let m = base[j] + (0..k).map(|i| t[i] * gens[i][j]).sum::<f64>();
            let sj = sigmas[j];
            let (za, zb) = ((target[j].lo - m) / sj, (target[j].hi - m) / sj);
            let f = crate::gaussian::normal_mass(za, zb);
            let (pa, pb) = (pdf(za), pdf(zb));
            let d1 = (pa - pb) / (sj * f);
            let d2 = (za * pa - zb * pb) / (sj * sj * f) - d1 * d1;
            logf += f.ln();
            for a in 0..k {
                grad[a] += d1 * gens[a][j];
                for b in 0..k {
                    hess[(a, b)] += d2 * gens[a][j] * gens[b][j];
                }
            }
        }
        (logf, grad, hess)
    };
    let finite = |v: f64, g: &[f64]| v.is_finite() && g.iter().all(|x| x.is_finite());
    let best_vertex = (0..vertices.len())
        .max_by(|&a, &b| {
            let p = |v: &Vec<f64>| -> f64 {
                (0..d).map(|j| landing_probability(v[j], sigmas[j], target[j])).product()
            };
            p(&vertices[a]).total_cmp(&p(&vertices[b]))
        })
        .expect("vertices");
    let mut t: Vec<f64> = (0..k).map(|i| (best_vertex >> i & 1) as f64).collect();
    let (mut val, mut grad, mut hess) = eval(&t);
    if !finite(val, &grad) {
        return None;
    }
    let fw_gap = |t: &[f64], grad: &[f64]| -> f64 {
        (0..k)
            .map(|i| if grad[i] > 0.0 { grad[i] * (1.0 - t[i]) } else { -grad[i] * t[i] })
            .sum()
    };
    let mut gap = fw_gap(&t, &grad);
    for _ in 0..ASCENT_ITERS {
        if gap < ASCENT_GAP {
            break;
        }
        let free: Vec<usize> = (0..k)
            .filter(|&i| !(t[i] <= 0.0 && grad[i] <= 0.0 || t[i] >= 1.0 && grad[i] >= 0.0))
            .collect();
        let nf = free.len();
        let scale = free.iter().map(|&i| -hess[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let neg_h = DMatrix::from_fn(nf, nf, |a, b| {
            -hess[(free[a], free[b])] + if a == b { 1e-10 * scale } else { 0.0 }
        });
        let rhs = DVector::from_fn(nf, |a, _| grad[free[a]]);
        let mut dir = vec![0.0; k];
        match neg_h.cholesky() {
            Some(ch) => {
                let x = ch.solve(&rhs);
                for a in 0..nf {
                    dir[free[a]] = x[a];
                }
            }
            None => {
                for &i in &free {
                    dir[i] = grad[i] / scale;
                }
            }
        }
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = (0..k).map(|i| (t[i] + alpha * dir[i]).clamp(0.0, 1.0)).collect();
            if trial == t {
                break;
            }
            let (v2, g2, h2) = eval(&trial);
            // concavity: a non-negative slope at the trial along the move means
            // no loss, and slopes stay accurate where values stop resolving
            let slope: f64 = (0..k).map(|i| g2[i] * (trial[i] - t[i])).sum();
            if finite(v2, &g2) && (slope >= 0.0 || v2 > val) {
                t = trial;
                (val, grad, hess) = (v2, g2, h2);
                gap = fw_gap(&t, &grad);
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    // small relative slack for rounding in the generator arithmetic
    let bound = (val + gap).exp() * (1.0 + 1e-9);
    bound.is_finite().then_some(bound)
}

/// Probability interval of moving from interior cell `s` into `target`
/// (an interior cell or the outside index) under any input in `ball`.
pub fn transition_interval(
    model: &SystemModel,
    partition: &Partition,
    s: usize,
    ball: &IntervalBox,
    target: usize,
) -> Result<(f64, f64)> {
    let cell = partition.cell_bounds(s)?;
    let image = model.unwrapped_image_bounds(&cell, ball);
    let axes = axes(model);
    let vertices = vertex_means(model, &axes, &cell, ball);
    if target == partition.outside() {
        let mut in_lo = 1.0;
        let mut in_hi = 1.0;
        for (j, &axis) in axes.iter().enumerate() {
            let (l, h) = match axis {
                Axis::WrappedGaussian { .. } => (1.0, 1.0),
                _ => factor_bounds(axis, image.interval(j), partition.state_box().interval(j), true),
            };
            in_lo *= l;
            in_hi *= h;
        }
        if let Some(v) = &vertices {
            in_lo = in_lo.max(vertex_lower(v, &axes, &partition.state_box().intervals()));
        }
        return Ok(((1.0 - in_hi).max(0.0), (1.0 - in_lo).clamp(0.0, 1.0)));
    }
    let idx = partition.multi_index(partition.cell_bounds(target).map(|_| target)?);
    let mut lo = 1.0;
    let mut hi = 1.0;
    for (j, &axis) in axes.iter().enumerate() {
        let n = partition.counts()[j];
        let (l, h) = factor_bounds(axis, image.interval(j), partition.cell_interval(j, idx[j]), idx[j] + 1 == n);
        lo *= l;
        hi *= h;
    }
    if let Some(v) = &vertices {
        let target_box = partition.cell_bounds(target)?.intervals();
        lo = lo.max(vertex_lower(v, &axes, &target_box));
        if hi > PRUNE_THRESHOLD {
            if let Some(up) = polytope_upper(v, &axis_sigmas(&axes), &target_box) {
                hi = hi.min(up).max(lo);
            }
        }
    }
    Ok((lo, hi))
}

/// Transition list of interior non-terminal cell `s` under `ball`, pruned
/// at [`PRUNE_THRESHOLD`] with the dropped mass moved to the outside state.
/// Also returns the dropped mass.
pub fn transition_row(
    model: &SystemModel,
    partition: &Partition,
    axes_: Option<&[Axis]>,
    s: usize,
    ball: &IntervalBox,
) -> Result<(ChoiceRows, f64)> {
    let owned;
    let axes = match axes_ {
        Some(a) => a,
        None => {
            owned = axes(model);
            &owned
        }
    };
    let cell = partition.cell_bounds(s)?;
    let image = model.unwrapped_image_bounds(&cell, ball);
    let table = factor_table(partition, axes, &image);
    let d = table.dims.len();
    let vertices = vertex_means(model, axes, &cell, ball);
    // per dimension, candidate coordinate and vertex: the landing factor
    let sigmas = axis_sigmas(axes);
    let vertex_factors: Option<Vec<Vec<Vec<f64>>>> = vertices.as_ref().map(|verts| {
        (0..d)
            .map(|j| {
                let (start, ref f) = table.dims[j];
                let sigma = match axes[j] {
                    Axis::Gaussian { sigma } => sigma,
                    _ => unreachable!("vertex bounds need Gaussian axes"),
                };
                (0..f.len())
                    .map(|k| {
                        let t = partition.cell_interval(j, start + k);
                        verts.iter().map(|v| landing_probability(v[j], sigma, t)).collect()
                    })
                    .collect()
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut pruned = table.tail;
    if table.dims.iter().all(|(_, f)| !f.is_empty()) {
        let mut idx = vec![0usize; d];
        'outer: loop {
            let mut lo = 1.0;
            let mut hi = 1.0;
            let mut flat = 0;
            for j in 0..d {
                let (start, ref f) = table.dims[j];
                let (l, h) = f[idx[j]];
                lo *= l;
                hi *= h;
                flat += (start + idx[j]) * partition.stride(j);
            }
            if let Some(vf) = &vertex_factors {
                let nv = vf[0][0].len();
                let exact = (0..nv)
                    .map(|v| (0..d).map(|j| vf[j][idx[j]][v]).product::<f64>())
                    .fold(1.0, f64::min);
                lo = lo.max(exact);
                if hi > PRUNE_THRESHOLD {
                    let target: Vec<Interval> =
                        (0..d).map(|j| partition.cell_interval(j, table.dims[j].0 + idx[j])).collect();
                    if let Some(up) = polytope_upper(vertices.as_ref().expect("affine"), &sigmas, &target) {
                        hi = hi.min(up).max(lo);
                    }
                }
            }
            if hi > PRUNE_THRESHOLD {
                rows.push((flat, lo, hi));
            } else {
                pruned += hi;
            }
            let mut j = d;
            loop {
                if j == 0 {
                    break 'outer;
                }
                j -= 1;
                idx[j] += 1;
                if idx[j] < table.dims[j].1.len() {
                    break;
                }
                idx[j] = 0;
            }
        }
    }
    let mut in_lo: f64 = table.inside.iter().map(|p| p.0).product();
    if let Some(v) = &vertices {
        in_lo = in_lo.max(vertex_lower(v, axes, &partition.state_box().intervals()));
    }
    let in_hi: f64 = table.inside.iter().map(|p| p.1).product();
    let out_lo = (1.0 - in_hi).max(0.0);
    let out_hi = (1.0 - in_lo + pruned).clamp(0.0, 1.0);
    if out_hi > 0.0 {
        rows.push((partition.outside(), out_lo, out_hi));
    }
    Ok((rows, pruned))
}

/// Build the IMDP. Goal, unsafe and outside states are absorbing with a
/// single `[1, 1]` self-loop under action 0.
pub fn build_imdp(model: &SystemModel, partition: &Partition, actions: &ActionSet) -> Result<Imdp> {
    let axes = axes(model);
    let n = partition.num_cells();
    let labels = partition.labels().to_vec();
    let per_state: Vec<Vec<(usize, ChoiceRows)>> = (0..=n)
        .into_par_iter()
        .map(|s| -> Result<Vec<(usize, ChoiceRows)>> {
            if s == n || partition.is_terminal(s) {
                return Ok(vec![(0, vec![(s, 1.0, 1.0)])]);
            }
            (0..actions.len())
                .map(|a| {
                    transition_row(model, partition, Some(&axes), s, actions.interface_set(a))
                        .map(|(rows, _)| (a, rows))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let initial = partition.locate(&model.initial_state);
    Imdp::from_choices(labels, actions.len(), initial, per_state)
}
