//! Model predictive control restricted to the certified input sets.
//!
//! The mixed-integer program picks one cell per prediction step. Instead of
//! branching on relaxed binaries, the solver enumerates cell sequences depth
//! first: each prefix fixes the affine model, the input box and the state box
//! of every step so far, which leaves a small convex QP over the inputs.
//! Children of a prefix are the cells met by the interval image of its last
//! cell, and a prefix is dropped once its QP value reaches the incumbent.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::abstraction::ActionSet;
use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Interval, IntervalBox};
use crate::partition::{Label, Partition};
use crate::pwa::AffineModel;
use crate::qp::{self, Inequalities, QpSolution};
use crate::synthesis::RobustPolicy;

/// Nearest goal-cell center to `x`, lowest index on ties. Angles in
/// `wrap_dims` are compared by their distance on the circle.
pub fn target_point(partition: &Partition, wrap_dims: &[usize], x: &[f64]) -> Result<Vec<f64>> {
    let mut best: Option<(f64, usize)> = None;
    for &g in partition.goal_cells() {
        let c = partition.cell_center(g)?;
        let d: f64 = (0..x.len())
            .map(|j| {
                let diff = if wrap_dims.contains(&j) {
                    wrap_angle(x[j] - c[j])
                } else {
                    x[j] - c[j]
                };
                diff * diff
            })
            .sum();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, g));
        }
    }
    match best {
        Some((_, g)) => partition.cell_center(g),
        None => Err(Error::InvalidModel("partition has no goal cells".into())),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpEngine {
    /// Dual active-set with the state boxes as inequality rows.
    #[default]
    ActiveSet,
    /// Projected gradient over the input boxes; a candidate that leaves a
    /// state box by more than `1e-6` rejects the sequence.
    ProjectedGradient,
}

#[derive(Clone, Debug)]
pub struct MpcSettings {
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub engine: QpEngine,
    /// Stop the search after this many QP evaluations.
    pub max_nodes: usize,
    pub trace: bool,
}

impl MpcSettings {
    pub fn new(horizon: usize, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        MpcSettings {
            horizon,
            q,
            r,
            engine: QpEngine::ActiveSet,
            max_nodes: 200_000,
            trace: false,
        }
    }

    pub fn diagonal(horizon: usize, q: &[f64], r: &[f64]) -> Self {
        Self::new(
            horizon,
            DMatrix::from_diagonal(&DVector::from_column_slice(q)),
            DMatrix::from_diagonal(&DVector::from_column_slice(r)),
        )
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("MPC horizon must be at least 1".into()));
        }
        for (what, mat, dim) in [("Q", &self.q, n), ("R", &self.r, m)] {
            if mat.nrows() != dim || mat.ncols() != dim {
                return Err(Error::Dimension {
                    what: if what == "Q" { "Q weight" } else { "R weight" },
                    expected: dim,
                    got: mat.nrows(),
                });
            }
            if (mat - mat.transpose()).amax() > 1e-12 {
                return Err(Error::Config(format!("{what} must be symmetric")));
            }
            let min_eig = mat.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-12 {
                return Err(Error::Config(format!("{what} must be positive semidefinite")));
            }
        }
        Ok(())
    }
}

/// A cell, shifted by whole turns along the wrapped dimensions so that
/// predictions can be followed on the unwrapped chart.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Region {
    pub cell: usize,
    pub turns: Vec<i32>,
}

#[derive(Clone, Debug)]
pub struct RegionData {
    pub state_box: IntervalBox,
    pub input_box: IntervalBox,
    /// Affine prediction valid on the shifted box.
    pub model: AffineModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpcStatus {
    Optimal,
    /// Search stopped at the node limit; the incumbent is returned.
    NodeLimit,
    InfeasibleFallback,
}

#[derive(Clone, Debug)]
pub struct MpcSolution {
    pub u0: Vec<f64>,
    pub predicted_states: Vec<Vec<f64>>,
    pub predicted_inputs: Vec<Vec<f64>>,
    /// Cells `c_0..c_N` occupied along the prediction.
    pub cell_sequence: Vec<usize>,
    pub cost: f64,
    pub status: MpcStatus,
    pub solve_time: f64,
    pub explored_sequences: usize,
    pub trace: Vec<String>,
}

/// Everything needed to solve one MPC step.
#[derive(Clone, Debug)]
pub struct MiqpInstance {
    pub horizon: usize,
    pub x: Vec<f64>,
    pub reference: Vec<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub engine: QpEngine,
    pub max_nodes: usize,
    pub trace: bool,
    pub root: Region,
    pub state_box: IntervalBox,
    pub wrap_dims: Vec<usize>,
    pub regions: HashMap<Region, RegionData>,
    /// One-step reachable regions of every region met within the horizon.
    pub successors: HashMap<Region, Vec<Region>>,
    /// Regions reachable at each prediction step `0..=N`.
    pub layers: Vec<Vec<Region>>,
}

impl MiqpInstance {
    /// Distinct cells reachable within the horizon.
    pub fn candidate_cells(&self) -> Vec<usize> {
        let mut cells: Vec<usize> = self.layers.iter().flatten().map(|r| r.cell).collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }

    pub fn region(&self, r: &Region) -> &RegionData {
        &self.regions[r]
    }
}

/// The data the controller needs besides the current state.
pub struct MpcController<'a> {
    pub model: &'a SystemModel,
    pub partition: &'a Partition,
    pub actions: &'a ActionSet,
    pub policy: &'a RobustPolicy,
    pub pwa: &'a [AffineModel],
    pub settings: MpcSettings,
}

impl<'a> MpcController<'a> {
    pub fn new(
        model: &'a SystemModel,
        partition: &'a Partition,
        actions: &'a ActionSet,
        policy: &'a RobustPolicy,
        pwa: &'a [AffineModel],
        settings: MpcSettings,
    ) -> Result<Self> {
        settings.validate(model.state_dim(), model.input_dim())?;
        if pwa.len() != partition.num_cells() {
            return Err(Error::Dimension {
                what: "PWA table",
                expected: partition.num_cells(),
                got: pwa.len(),
            });
        }
        Ok(MpcController {
            model,
            partition,
            actions,
            policy,
            pwa,
            settings,
        })
    }

    /// Inputs admitted in a cell: the policy ball, or the whole input box on
    /// goal cells. `None` for unsafe and outside cells.
    pub fn cell_input_box(&self, cell: usize) -> Option<&'a IntervalBox> {
        match self.partition.label(cell) {
            Label::Neutral => Some(self.actions.interface_set(self.policy.action[cell])),
            Label::Goal => Some(&self.model.input_box),
            Label::Unsafe => None,
        }
    }

    fn turn_offsets(&self, turns: &[i32]) -> DVector<f64> {
        let mut s = DVector::zeros(self.model.state_dim());
        for (k, &d) in self.model.wrap_dims.iter().enumerate() {
            s[d] = TAU * turns[k] as f64;
        }
        s
    }

    fn region_data(&self, region: &Region) -> Option<RegionData> {
        let input_box = self.cell_input_box(region.cell)?.clone();
        let mut state_box = self.partition.cell_bounds(region.cell).ok()?;
        let s = self.turn_offsets(&region.turns);
        for &d in &self.model.wrap_dims {
            state_box.lo[d] += s[d];
            state_box.hi[d] += s[d];
        }
        let base = &self.pwa[region.cell];
        // f(x + s) = f(x) + s for whole turns of a wrapped angle
        let c = &base.c - &base.a * &s + &s;
        Some(RegionData {
            state_box,
            input_box,
            model: AffineModel {
                a: base.a.clone(),
                b: base.b.clone(),
                c,
                validity_cell: region.cell,
            },
        })
    }

    fn successors_of(&self, data: &RegionData) -> Vec<Region> {
        let image = affine_image(&data.model, &data.state_box, &data.input_box);
        let n = self.model.state_dim();
        let wraps = &self.model.wrap_dims;
        // per dimension: list of (grid coordinate, turn)
        let mut options: Vec<Vec<(usize, i32)>> = Vec::with_capacity(n);
        for j in 0..n {
            let iv = image.interval(j);
            let mut opts = Vec::new();
            if wraps.contains(&j) {
                let k_lo = ((iv.lo + 0.5 * TAU) / TAU).floor() as i32 - 1;
                let k_hi = ((iv.hi + 0.5 * TAU) / TAU).floor() as i32 + 1;
                for k in k_lo..=k_hi {
                    let shifted = iv.shift(-TAU * k as f64);
                    for c in self.partition.overlapping_range(j, shifted) {
                        opts.push((c, k));
                    }
                }
            } else {
                for c in self.partition.overlapping_range(j, iv) {
                    opts.push((c, 0));
                }
            }
            if opts.is_empty() {
                return Vec::new();
            }
            options.push(opts);
        }
        let mut out = Vec::new();
        let mut pick = vec![0usize; n];
        loop {
            let idx: Vec<usize> = (0..n).map(|j| options[j][pick[j]].0).collect();
            let cell = self.partition.flat_index(&idx);
            if self.partition.label(cell) != Label::Unsafe {
                let turns = wraps.iter().map(|&d| options[d][pick[d]].1).collect();
                out.push(Region { cell, turns });
            }
            let mut j = n;
            loop {
                if j == 0 {
                    out.sort();
                    return out;
                }
                j -= 1;
                pick[j] += 1;
                if pick[j] < options[j].len() {
                    break;
                }
                pick[j] = 0;
            }
        }
    }

    /// Instance for state `x` and reference `r`, with the regions reachable
    /// within the horizon.
    pub fn build_miqp(&self, x: &[f64], reference: &[f64]) -> Result<MiqpInstance> {
        let n = self.model.state_dim();
        if x.len() != n || reference.len() != n {
            return Err(Error::Dimension {
                what: "MPC state",
                expected: n,
                got: x.len(),
            });
        }
        let cell = self.partition.locate(x);
        if cell == self.partition.outside() || self.partition.label(cell) == Label::Unsafe {
            return Err(Error::NotInterior(cell));
        }
        let root = Region {
            cell,
            turns: vec![0; self.model.wrap_dims.len()],
        };
        let mut reference = reference.to_vec();
        for &d in &self.model.wrap_dims {
            reference[d] = x[d] + wrap_angle(reference[d] - x[d]);
        }
        let mut regions = HashMap::new();
        let mut successors = HashMap::new();
        regions.insert(root.clone(), self.region_data(&root).expect("root region"));
        let mut layers = vec![vec![root.clone()]];
        for _ in 0..self.settings.horizon {
            let mut next: BTreeMap<Region, ()> = BTreeMap::new();
            for region in layers.last().unwrap() {
                if !successors.contains_key(region) {
                    let succ = self.successors_of(&regions[region]);
                    for s in &succ {
                        if !regions.contains_key(s) {
                            if let Some(d) = self.region_data(s) {
                                regions.insert(s.clone(), d);
                            }
                        }
                    }
                    successors.insert(region.clone(), succ);
                }
                for s in &successors[region] {
                    next.insert(s.clone(), ());
                }
            }
            layers.push(next.into_keys().collect());
        }
        Ok(MiqpInstance {
            horizon: self.settings.horizon,
            x: x.to_vec(),
            reference,
            q: self.settings.q.clone(),
            r: self.settings.r.clone(),
            engine: self.settings.engine,
            max_nodes: self.settings.max_nodes,
            trace: self.settings.trace,
            root,
            state_box: self.model.state_box.clone(),
            wrap_dims: self.model.wrap_dims.clone(),
            regions,
            successors,
            layers,
        })
    }

    /// Target point, instance and solution for state `x`.
    pub fn solve(&self, x: &[f64]) -> Result<MpcSolution> {
        let r = target_point(self.partition, &self.model.wrap_dims, x)?;
        let inst = self.build_miqp(x, &r)?;
        Ok(solve_miqp(&inst))
    }
}

/// Interval image of `state_box x input_box` under the affine map.
pub fn affine_image(model: &AffineModel, state_box: &IntervalBox, input_box: &IntervalBox) -> IntervalBox {
    let n = model.a.nrows();
    let ivs: Vec<Interval> = (0..n)
        .map(|i| {
            let mut acc = Interval::point(model.c[i]);
            for j in 0..model.a.ncols() {
                acc = acc.add(state_box.interval(j).scale(model.a[(i, j)]));
            }
            for j in 0..model.b.ncols() {
                acc = acc.add(input_box.interval(j).scale(model.b[(i, j)]));
            }
            acc
        })
        .collect();
    IntervalBox::from_intervals(&ivs)
}

/// Solution of the condensed QP for one (partial) cell sequence.
#[derive(Clone, Debug)]
pub struct SequenceSolution {
    pub inputs: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub cost: f64,
}

const STATE_TOL: f64 = 1e-6;

/// Optimal inputs for the first `steps` steps when step `t` uses the model
/// and input box of `seq[t]` and the state after step `t` must lie in
/// `seq[t + 1]`. States past the end of `seq` are only kept inside the
/// state box (wrapped dimensions left free). Cost counts only those steps.
pub fn solve_sequence(inst: &MiqpInstance, seq: &[Region], steps: usize) -> Option<SequenceSolution> {
    let n = inst.x.len();
    let m = inst.r.nrows();
    let nv = m * steps;
    let mut g_mat = DMatrix::<f64>::zeros(n, nv);
    let mut h_vec = DVector::from_column_slice(&inst.x);
    let r = DVector::from_column_slice(&inst.reference);
    let mut hess = DMatrix::<f64>::zeros(nv, nv);
    let mut grad = DVector::<f64>::zeros(nv);
    let mut constant = 0.0;
    let mut lo = Vec::with_capacity(nv);
    let mut hi = Vec::with_capacity(nv);
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut maps = Vec::with_capacity(steps);
    for t in 0..steps {
        let data = inst.regions.get(&seq[t])?;
        lo.extend_from_slice(&data.input_box.lo);
        hi.extend_from_slice(&data.input_box.hi);
        let model = &data.model;
        g_mat = &model.a * &g_mat;
        g_mat.view_mut((0, t * m), (n, m)).copy_from(&model.b);
        h_vec = &model.a * &h_vec + &model.c;
        maps.push((g_mat.clone(), h_vec.clone()));
        let err = &h_vec - &r;
        let gq = g_mat.transpose() * &inst.q;
        hess += &gq * &g_mat * 2.0;
        grad += &gq * &err * 2.0;
        constant += err.dot(&(&inst.q * &err));
        let mut block = hess.view_mut((t * m, t * m), (m, m));
        block += &inst.r * 2.0;
        let (bound, free_wraps) = match seq.get(t + 1) {
            Some(next) => (&inst.regions.get(next)?.state_box, false),
            None => (&inst.state_box, true),
        };
        for d in 0..n {
            if free_wraps && inst.wrap_dims.contains(&d) {
                continue;
            }
            let row = g_mat.row(d).transpose();
            rows.push((row.clone(), bound.lo[d] - h_vec[d]));
            rows.push((-row, h_vec[d] - bound.hi[d]));
        }
    }
    // symmetrize against rounding
    let hess = (&hess + hess.transpose()) * 0.5;
    let sol = match inst.engine {
        QpEngine::ActiveSet => {
            let ineq = Inequalities {
                c: DMatrix::from_fn(rows.len(), nv, |i, j| rows[i].0[j]),
                d: DVector::from_fn(rows.len(), |i, _| rows[i].1),
            };
            let h = if Cholesky::new(hess.clone()).is_some() {
                hess.clone()
            } else {
                &hess + DMatrix::identity(nv, nv) * (1e-10 * (1.0 + hess.diagonal().amax()))
            };
            qp::solve_qp(&h, &grad, &lo, &hi, &ineq).ok()?
        }
        QpEngine::ProjectedGradient => {
            let s: QpSolution = qp::solve_box_qp(&hess, &grad, &lo, &hi).ok()?;
            let u = DVector::from_column_slice(&s.x);
            if rows.iter().any(|(c, d)| c.dot(&u) < d - STATE_TOL) {
                return None;
            }
            s
        }
    };
    let u = DVector::from_column_slice(&sol.x);
    let cost = (qp::objective(&hess, &grad, &u) + constant).max(0.0);
    let states = maps
        .iter()
        .map(|(g, h)| (g * &u + h).iter().copied().collect())
        .collect();
    let inputs = (0..steps).map(|t| sol.x[t * m..(t + 1) * m].to_vec()).collect();
    Some(SequenceSolution { inputs, states, cost })
}

struct Search<'a> {
    inst: &'a MiqpInstance,
    best: Option<(SequenceSolution, Vec<usize>)>,
    nodes: usize,
    limit_hit: bool,
    trace: Vec<String>,
}

impl Search<'_> {
    fn incumbent(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |(s, _)| s.cost)
    }

    fn evaluate(&mut self, seq: &[Region], steps: usize) -> Option<SequenceSolution> {
        self.nodes += 1;
        let sol = solve_sequence(self.inst, seq, steps);
        if self.inst.trace {
            let cells: Vec<usize> = seq.iter().map(|r| r.cell).collect();
            self.trace.push(
                json!({
                    "sequence": cells,
                    "steps": steps,
                    "bound": sol.as_ref().map(|s| s.cost),
                    "incumbent": self.best.as_ref().map(|(s, _)| s.cost),
                })
                .to_string(),
            );
        }
        sol
    }

    fn offer(&mut self, sol: SequenceSolution, cells: Vec<usize>) {
        if sol.cost < self.incumbent() {
            self.best = Some((sol, cells));
        }
    }

    fn containing(&self, succ: &[Region], x: &[f64]) -> Option<usize> {
        succ.iter()
            .find(|r| self.inst.regions[*r].state_box.contains_tol(x, 1e-9))
            .map(|r| r.cell)
    }

    fn descend(&mut self, seq: &mut Vec<Region>) {
        if self.nodes >= self.inst.max_nodes {
            self.limit_hit = true;
            return;
        }
        let horizon = self.inst.horizon;
        let depth = seq.len() - 1;
        let succ = self.inst.successors.get(&seq[depth]).cloned().unwrap_or_default();
        if depth + 1 == horizon {
            // last state only relaxed to the state box first
            let Some(relaxed) = self.evaluate(seq, horizon) else { return };
            if relaxed.cost >= self.incumbent() {
                return;
            }
            let cells: Vec<usize> = seq.iter().map(|r| r.cell).collect();
            if let Some(last) = self.containing(&succ, &relaxed.states[horizon - 1]) {
                let mut cells = cells;
                cells.push(last);
                self.offer(relaxed, cells);
                return;
            }
            for child in succ {
                seq.push(child);
                if let Some(sol) = self.evaluate(seq, horizon) {
                    let mut cells = cells.clone();
                    cells.push(seq[horizon].cell);
                    self.offer(sol, cells);
                }
                seq.pop();
            }
            return;
        }
        let mut children: Vec<(f64, Region)> = Vec::new();
        for child in succ {
            seq.push(child);
            if let Some(sol) = self.evaluate(seq, depth + 1) {
                children.push((sol.cost, seq[depth + 1].clone()));
            }
            seq.pop();
        }
        children.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        for (bound, child) in children {
            if bound >= self.incumbent() {
                break;
            }
            seq.push(child);
            self.descend(seq);
            seq.pop();
        }
    }
}

/// Exact optimum over cell sequences; the ball center of the root cell
/// when no sequence is feasible. `u0` always lies in the root input box.
pub fn solve_miqp(inst: &MiqpInstance) -> MpcSolution {
    let start = Instant::now();
    let mut search = Search {
        inst,
        best: None,
        nodes: 0,
        limit_hit: false,
        trace: Vec::new(),
    };
    let mut seq = vec![inst.root.clone()];
    search.descend(&mut seq);
    let root_box = &inst.regions[&inst.root].input_box;
    let mut sol = match search.best.take() {
        Some((s, cells)) => MpcSolution {
            u0: root_box.project(&s.inputs[0]),
            predicted_states: s.states,
            predicted_inputs: s.inputs,
            cell_sequence: cells,
            cost: s.cost,
            status: if search.limit_hit {
                MpcStatus::NodeLimit
            } else {
                MpcStatus::Optimal
            },
            solve_time: 0.0,
            explored_sequences: 0,
            trace: Vec::new(),
        },
        None => MpcSolution {
            u0: root_box.center(),
            predicted_states: Vec::new(),
            predicted_inputs: Vec::new(),
            cell_sequence: vec![inst.root.cell],
            cost: f64::INFINITY,
            status: MpcStatus::InfeasibleFallback,
            solve_time: 0.0,
            explored_sequences: 0,
            trace: Vec::new(),
        },
    };
    sol.explored_sequences = search.nodes;
    if inst.trace {
        search.trace.push(
            json!({ "cost": sol.cost, "status": sol.status, "explored": search.nodes }).to_string(),
        );
        sol.trace = search.trace;
    }
    sol.solve_time = start.elapsed().as_secs_f64();
    sol
}
