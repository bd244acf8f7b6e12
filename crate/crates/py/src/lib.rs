//! Python bindings: load a benchmark config, certify it at a ball radius,
//! query the permissive policy and run closed-loop batches.

use std::path::PathBuf;

use certmpc::config::{BenchmarkConfig, ControllerKind};
use certmpc::mpc::MpcController;
use certmpc::pipeline::{epsilon_sweep, Certified};
use certmpc::simulation::{Sat, Summary};
use certmpc::synthesis::heatmap;
use certmpc::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Dimension { .. } | Error::InvalidModel(_) | Error::LabelAlignment(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn controller(name: &str) -> PyResult<ControllerKind> {
    match name {
        "vanilla" => Ok(ControllerKind::Vanilla),
        "mpc" => Ok(ControllerKind::Mpc),
        other => Err(PyValueError::new_err(format!("controller must be 'vanilla' or 'mpc', got {other:?}"))),
    }
}

fn summary_dict<'py>(py: Python<'py>, s: &Summary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("runs", s.runs)?;
    d.set_item("sat_frequency", s.sat_frequency)?;
    d.set_item("timeouts", s.timeouts)?;
    d.set_item("E_J", s.j_total.mean)?;
    d.set_item("std_J", s.j_total.std)?;
    d.set_item("E_J_state", s.j_state.mean)?;
    d.set_item("E_J_input", s.j_input.mean)?;
    d.set_item("mean_fallbacks", s.mean_fallbacks)?;
    d.set_item("T_mpc_step", s.mpc_step_time)?;
    Ok(d)
}

/// A parsed and validated benchmark configuration.
#[pyclass(name = "Config", module = "certmpc_py")]
struct PyConfig {
    inner: BenchmarkConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: BenchmarkConfig::load(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: BenchmarkConfig::parse(text).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.model.name.clone()
    }

    #[getter]
    fn epsilon(&self) -> Vec<f64> {
        self.inner.actions.epsilon.clone()
    }

    #[getter]
    fn initial_state(&self) -> Vec<f64> {
        self.inner.model.initial_state.clone()
    }

    #[getter]
    fn sweep_epsilons(&self) -> Vec<Vec<f64>> {
        self.inner.sweep.epsilons.clone()
    }

    #[getter]
    fn n_runs(&self) -> usize {
        self.inner.simulation.n_runs
    }

    #[setter]
    fn set_n_runs(&mut self, n: usize) -> PyResult<()> {
        if n == 0 {
            return Err(PyValueError::new_err("n_runs must be at least 1"));
        }
        self.inner.simulation.n_runs = n;
        Ok(())
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.mpc.horizon
    }

    #[setter]
    fn set_horizon(&mut self, n: usize) -> PyResult<()> {
        if n == 0 {
            return Err(PyValueError::new_err("horizon must be at least 1"));
        }
        self.inner.mpc.horizon = n;
        Ok(())
    }

    /// One noisy step of the concrete system.
    fn step(&self, x: Vec<f64>, u: Vec<f64>, w: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.model.step(&x, &u, &w).map_err(to_py)
    }

    /// Abstraction and robust policy at `epsilon` (default: the configured radius).
    #[pyo3(signature = (epsilon = None))]
    fn certify(&self, py: Python<'_>, epsilon: Option<Vec<f64>>) -> PyResult<PyCertified> {
        let eps = epsilon.unwrap_or_else(|| self.inner.actions.epsilon.clone());
        let cfg = self.inner.clone();
        let cert = py.detach(|| Certified::build(&cfg, &eps)).map_err(to_py)?;
        Ok(PyCertified { cfg, cert })
    }

    /// One dict per radius; rows that failed carry an `error` string.
    #[pyo3(signature = (epsilons = None, simulate = true, seed = None))]
    fn sweep<'py>(
        &self,
        py: Python<'py>,
        epsilons: Option<Vec<Vec<f64>>>,
        simulate: bool,
        seed: Option<u64>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let eps = epsilons.unwrap_or_else(|| self.inner.sweep.epsilons.clone());
        let seed = seed.unwrap_or(self.inner.simulation.base_seed);
        let cfg = &self.inner;
        let rows = py.detach(|| epsilon_sweep(cfg, &eps, simulate, seed));
        rows.iter()
            .map(|r| {
                let d = match &r.summary {
                    Some(s) => summary_dict(py, s)?,
                    None => PyDict::new(py),
                };
                d.set_item("epsilon", r.epsilon.clone())?;
                d.set_item("ball_volume", r.ball_volume)?;
                d.set_item("lambda", r.lambda)?;
                d.set_item("T_abs", r.abstraction_time)?;
                d.set_item("error", r.error.clone())?;
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Config({:?}, epsilon={:?})", self.inner.model.name, self.inner.actions.epsilon)
    }
}

/// A certified abstraction: IMDP, robust policy and its satisfaction bound.
#[pyclass(name = "Certified", module = "certmpc_py")]
struct PyCertified {
    cfg: BenchmarkConfig,
    cert: Certified,
}

#[pymethods]
impl PyCertified {
    /// Certified lower bound at the configured initial state.
    #[getter]
    fn lambda_(&self) -> f64 {
        self.cert.lambda()
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.cert.abstraction.imdp.num_states()
    }

    #[getter]
    fn num_transitions(&self) -> usize {
        self.cert.abstraction.imdp.num_transitions()
    }

    #[getter]
    fn abstraction_time(&self) -> f64 {
        self.cert.abstraction.build_time
    }

    #[getter]
    fn synthesis_time(&self) -> f64 {
        self.cert.synthesis_time
    }

    fn v_lo(&self) -> Vec<f64> {
        self.cert.values.v_lo.clone()
    }

    fn v_hi(&self) -> Vec<f64> {
        self.cert.values.v_hi.clone()
    }

    /// Abstract action per IMDP state.
    fn policy(&self) -> Vec<usize> {
        self.cert.policy.action.clone()
    }

    /// Lower-bound values as 2-D grids, one per index of the trailing
    /// dimensions.
    fn heatmap(&self) -> Vec<Vec<Vec<f64>>> {
        heatmap(&self.cert.values, &self.cert.abstraction.partition).slices()
    }

    /// Box of admissible inputs at `x`, or None at terminal states.
    fn input_set(&self, x: Vec<f64>) -> PyResult<Option<(Vec<f64>, Vec<f64>)>> {
        let abs = &self.cert.abstraction;
        certmpc_check_dim(x.len(), self.cfg.model.state_dim())?;
        let cell = abs.partition.locate(&x);
        if abs.partition.is_terminal(cell) {
            return Ok(None);
        }
        let b = abs.actions.interface_set(self.cert.policy.action[cell]);
        Ok(Some((b.lo.clone(), b.hi.clone())))
    }

    /// First MPC input at `x` and the solver status.
    fn mpc_input(&self, x: Vec<f64>) -> PyResult<(Vec<f64>, String)> {
        certmpc_check_dim(x.len(), self.cfg.model.state_dim())?;
        let abs = &self.cert.abstraction;
        let ctrl = MpcController::new(
            &self.cfg.model,
            &abs.partition,
            &abs.actions,
            &self.cert.policy,
            &self.cert.pwa,
            self.cfg.mpc.settings(),
        )
        .map_err(to_py)?;
        let sol = ctrl.solve(&x).map_err(to_py)?;
        Ok((sol.u0, format!("{:?}", sol.status)))
    }

    /// Monte Carlo batch from the configured initial state.
    #[pyo3(signature = (controller = "mpc", seed = None, n_runs = None))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        controller: &str,
        seed: Option<u64>,
        n_runs: Option<usize>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let kind = self::controller(controller)?;
        let mut cfg = self.cfg.clone();
        if let Some(n) = n_runs {
            cfg.simulation.n_runs = n.max(1);
        }
        let seed = seed.unwrap_or(cfg.simulation.base_seed);
        let cert = &self.cert;
        let (summary, _) = py.detach(|| cert.simulate(&cfg, kind, seed)).map_err(to_py)?;
        summary_dict(py, &summary)
    }

    /// Per-episode states, inputs and outcome.
    #[pyo3(signature = (controller = "mpc", seed = None, n_runs = None))]
    fn trajectories<'py>(
        &self,
        py: Python<'py>,
        controller: &str,
        seed: Option<u64>,
        n_runs: Option<usize>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let kind = self::controller(controller)?;
        let mut cfg = self.cfg.clone();
        if let Some(n) = n_runs {
            cfg.simulation.n_runs = n.max(1);
        }
        let seed = seed.unwrap_or(cfg.simulation.base_seed);
        let cert = &self.cert;
        let (_, records) = py.detach(|| cert.simulate(&cfg, kind, seed)).map_err(to_py)?;
        records
            .into_iter()
            .map(|r| {
                let d = PyDict::new(py);
                let sat = match r.sat {
                    Sat::True => "true",
                    Sat::False => "false",
                    Sat::Timeout => "timeout",
                };
                d.set_item("sat", sat)?;
                d.set_item("J", r.j_total)?;
                d.set_item("J_state", r.j_state)?;
                d.set_item("J_input", r.j_input)?;
                d.set_item("fallbacks", r.fallback_count)?;
                d.set_item("states", r.states)?;
                d.set_item("inputs", r.inputs)?;
                Ok(d)
            })
            .collect()
    }
}

fn certmpc_check_dim(got: usize, expected: usize) -> PyResult<()> {
    if got == expected {
        Ok(())
    } else {
        Err(PyValueError::new_err(format!("state has {got} entries, expected {expected}")))
    }
}

#[pymodule]
fn certmpc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCertified>()?;
    Ok(())
}
