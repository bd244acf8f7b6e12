//! Closed-loop simulation of the certified controller and Monte Carlo
//! statistics with common random numbers.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::ActionSet;
use crate::dynamics::{NoiseStream, SystemModel};
use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::mpc::{target_point, MpcController, MpcStatus};
use crate::partition::{Label, Partition};
use crate::synthesis::RobustPolicy;

pub const DEFAULT_MAX_STEPS: usize = 150;

/// Tolerance on the certified-ball membership check of applied inputs.
const CONTRACT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sat {
    True,
    False,
    Timeout,
}

#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub sat: Sat,
    pub steps: usize,
    pub j_state: f64,
    pub j_input: f64,
    pub j_total: f64,
    pub fallback_count: usize,
    /// Wall-clock seconds of every MPC solve.
    pub mpc_times: Vec<f64>,
}

/// Input selection inside the certified set.
pub enum Controller<'a> {
    /// The ball center of the prescribed action.
    Vanilla,
    Mpc(MpcController<'a>),
}

/// A synthesized controller around one abstraction.
pub struct ClosedLoop<'a> {
    pub model: &'a SystemModel,
    pub partition: &'a Partition,
    pub actions: &'a ActionSet,
    pub policy: &'a RobustPolicy,
    pub controller: Controller<'a>,
    /// Stage weights used in the cost accounting.
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl ClosedLoop<'_> {
    fn weighted(&self, w: &DMatrix<f64>, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        v.dot(&(w * &v))
    }

    fn tracking_error(&self, r: &[f64], x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                if self.model.wrap_dims.contains(&j) {
                    wrap_angle(r[j] - x[j])
                } else {
                    r[j] - x[j]
                }
            })
            .collect()
    }

    fn terminal(&self, x: &[f64]) -> Option<Sat> {
        let cell = self.partition.locate(x);
        match self.partition.label(cell) {
            Label::Goal => Some(Sat::True),
            Label::Unsafe => Some(Sat::False),
            Label::Neutral => None,
        }
    }

    /// One run of the feedback loop from `x0`.
    pub fn run_episode(&self, x0: &[f64], max_steps: usize, noise: &mut NoiseStream) -> Result<EpisodeRecord> {
        let mut rec = EpisodeRecord {
            states: vec![x0.to_vec()],
            inputs: Vec::new(),
            sat: Sat::Timeout,
            steps: 0,
            j_state: 0.0,
            j_input: 0.0,
            j_total: 0.0,
            fallback_count: 0,
            mpc_times: Vec::new(),
        };
        let mut x = x0.to_vec();
        loop {
            if let Some(sat) = self.terminal(&x) {
                rec.sat = sat;
                break;
            }
            if rec.steps == max_steps {
                break;
            }
            let cell = self.partition.locate(&x);
            let ball = self.actions.interface_set(self.policy.action[cell]);
            let r = target_point(self.partition, &self.model.wrap_dims, &x)?;
            let u = match &self.controller {
                Controller::Vanilla => ball.center(),
                Controller::Mpc(mpc) => {
                    let sol = mpc.solve(&x)?;
                    if sol.status == MpcStatus::InfeasibleFallback {
                        rec.fallback_count += 1;
                    }
                    rec.mpc_times.push(sol.solve_time);
                    sol.u0
                }
            };
            if !ball.contains_tol(&u, CONTRACT_TOL) {
                return Err(Error::ContractViolation(format!(
                    "input {u:?} outside the certified set {ball:?} at state {x:?}"
                )));
            }
            rec.j_state += self.weighted(&self.q, &self.tracking_error(&r, &x));
            rec.j_input += self.weighted(&self.r, &u);
            let w = self.model.sample_noise(noise);
            x = self.model.step(&x, &u, &w)?;
            rec.inputs.push(u);
            rec.states.push(x.clone());
            rec.steps += 1;
        }
        rec.j_total = rec.j_state + rec.j_input;
        Ok(rec)
    }

    /// `n_runs` episodes; episode `i` draws its noise from stream `i` of
    /// `base_seed`, so different controllers see the same realizations.
    pub fn monte_carlo(&self, x0: &[f64], n_runs: usize, base_seed: u64, max_steps: usize) -> Result<Vec<EpisodeRecord>>
    where
        Self: Sync,
    {
        (0..n_runs)
            .into_par_iter()
            .map(|i| {
                let mut noise = NoiseStream::new(base_seed, i as u64);
                self.run_episode(x0, max_steps, &mut noise)
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Moments {
        let n = values.len();
        if n == 0 {
            return Moments {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Moments { mean, std }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub sat_frequency: f64,
    pub timeouts: usize,
    pub j_total: Moments,
    pub j_state: Moments,
    pub j_input: Moments,
    /// The same three costs over satisfying runs only.
    pub sat_j_total: Moments,
    pub sat_j_state: Moments,
    pub sat_j_input: Moments,
    pub mean_fallbacks: f64,
    /// Mean wall-clock seconds per MPC solve; `None` without MPC.
    pub mpc_step_time: Option<f64>,
}

pub fn summarize(records: &[EpisodeRecord]) -> Summary {
    let pick = |f: fn(&EpisodeRecord) -> f64, sat_only: bool| -> Vec<f64> {
        records
            .iter()
            .filter(|r| !sat_only || r.sat == Sat::True)
            .map(f)
            .collect()
    };
    let times: Vec<f64> = records.iter().flat_map(|r| r.mpc_times.iter().copied()).collect();
    let n = records.len().max(1) as f64;
    Summary {
        runs: records.len(),
        sat_frequency: records.iter().filter(|r| r.sat == Sat::True).count() as f64 / n,
        timeouts: records.iter().filter(|r| r.sat == Sat::Timeout).count(),
        j_total: Moments::of(&pick(|r| r.j_total, false)),
        j_state: Moments::of(&pick(|r| r.j_state, false)),
        j_input: Moments::of(&pick(|r| r.j_input, false)),
        sat_j_total: Moments::of(&pick(|r| r.j_total, true)),
        sat_j_state: Moments::of(&pick(|r| r.j_state, true)),
        sat_j_input: Moments::of(&pick(|r| r.j_input, true)),
        mean_fallbacks: records.iter().map(|r| r.fallback_count as f64).sum::<f64>() / n,
        mpc_step_time: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
    }
}

/// Timings stay out of the CSVs so that reruns are byte-identical.
pub const SUMMARY_HEADER: &str = "runs,sat_frequency,timeouts,E_J,std_J,E_J_state,E_J_input,sat_E_J,sat_E_J_state,sat_E_J_input,mean_fallbacks";

impl Summary {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.runs,
            self.sat_frequency,
            self.timeouts,
            self.j_total.mean,
            self.j_total.std,
            self.j_state.mean,
            self.j_input.mean,
            self.sat_j_total.mean,
            self.sat_j_state.mean,
            self.sat_j_input.mean,
            self.mean_fallbacks
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SUMMARY_HEADER}")?;
        writeln!(w, "{}", self.csv_row())
    }
}

/// Trajectories as `episode,step,x0..,u0..` rows; the last state of each
/// episode has empty input columns.
pub fn write_episodes_csv<W: Write>(records: &[EpisodeRecord], mut w: W) -> std::io::Result<()> {
    let Some(first) = records.first() else {
        return writeln!(w, "episode,step");
    };
    let n = first.states[0].len();
    let m = records.iter().find_map(|r| r.inputs.first().map(Vec::len)).unwrap_or(0);
    let mut header = vec!["episode".to_string(), "step".to_string()];
    header.extend((0..n).map(|j| format!("x{j}")));
    header.extend((0..m).map(|j| format!("u{j}")));
    header.push("sat".into());
    writeln!(w, "{}", header.join(","))?;
    for (e, rec) in records.iter().enumerate() {
        let sat = match rec.sat {
            Sat::True => "true",
            Sat::False => "false",
            Sat::Timeout => "timeout",
        };
        for (k, x) in rec.states.iter().enumerate() {
            let mut cols = vec![e.to_string(), k.to_string()];
            cols.extend(x.iter().map(|v| v.to_string()));
            match rec.inputs.get(k) {
                Some(u) => cols.extend(u.iter().map(|v| v.to_string())),
                None => cols.extend((0..m).map(|_| String::new())),
            }
            cols.push(sat.into());
            writeln!(w, "{}", cols.join(","))?;
        }
    }
    Ok(())
}

/// One row of an epsilon sweep, laid out like the comparison table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: Vec<f64>,
    pub ball_volume: f64,
    pub lambda: f64,
    pub summary: Option<Summary>,
    pub abstraction_time: f64,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: &str =
    "epsilon,ball_volume,lambda,E_J,E_J_state,E_J_input,sat_frequency,error";

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let eps: Vec<String> = self.epsilon.iter().map(|e| e.to_string()).collect();
        let (ej, ejs, eji, sat) = match &self.summary {
            Some(s) => (
                s.j_total.mean.to_string(),
                s.j_state.mean.to_string(),
                s.j_input.mean.to_string(),
                s.sat_frequency.to_string(),
            ),
            None => Default::default(),
        };
        let lambda = if self.error.is_some() {
            String::new()
        } else {
            self.lambda.to_string()
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            eps.join(" "),
            self.ball_volume,
            lambda,
            ej,
            ejs,
            eji,
            sat,
            self.error.as_deref().unwrap_or("").replace(',', ";")
        )
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}
