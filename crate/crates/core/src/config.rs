//! Benchmark configuration files (TOML).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::mpc::{MpcSettings, QpEngine};
use crate::partition::LabelMode;
use crate::simulation::DEFAULT_MAX_STEPS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub counts: Vec<usize>,
    #[serde(default)]
    pub label_mode: LabelMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    /// Centers per input dimension.
    pub counts: Vec<usize>,
    /// Ball radius per input dimension.
    pub epsilon: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iters() -> usize {
    10_000
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            tol: default_tol(),
            max_iters: default_max_iters(),
        }
    }
}

/// A weight matrix, either its diagonal or all rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Weight {
    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            Weight::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            Weight::Full(rows) => {
                let n = rows.len();
                DMatrix::from_fn(n, n, |i, j| rows[i].get(j).copied().unwrap_or(f64::NAN))
            }
        }
    }

    fn square(&self) -> bool {
        match self {
            Weight::Diagonal(_) => true,
            Weight::Full(rows) => rows.iter().all(|r| r.len() == rows.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: Weight,
    pub r: Weight,
    #[serde(default)]
    pub engine: QpEngine,
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
}

fn default_max_nodes() -> usize {
    200_000
}

impl MpcConfig {
    pub fn settings(&self) -> MpcSettings {
        let mut s = MpcSettings::new(self.horizon, self.q.matrix(), self.r.matrix());
        s.engine = self.engine;
        s.max_nodes = self.max_nodes;
        s
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Vanilla,
    #[default]
    Mpc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub controller: ControllerKind,
}

fn default_runs() -> usize {
    100
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_runs: default_runs(),
            base_seed: 0,
            max_steps: default_max_steps(),
            controller: ControllerKind::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Ball radii to sweep, one vector per row.
    #[serde(default)]
    pub epsilons: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default = "default_output")]
    pub output_dir: String,
    pub model: SystemModel,
    pub partition: PartitionConfig,
    pub actions: ActionConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    pub mpc: MpcConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_output() -> String {
    "out".into()
}

impl BenchmarkConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: BenchmarkConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical TOML text.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        m.validate()?;
        let (n, nu) = (m.state_dim(), m.input_dim());
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.partition.counts.len() != n || self.partition.counts.contains(&0) {
            return cfg(format!("partition.counts needs {n} positive entries"));
        }
        if self.actions.counts.len() != nu || self.actions.counts.contains(&0) {
            return cfg(format!("actions.counts needs {nu} positive entries"));
        }
        check_epsilon("actions.epsilon", &self.actions.epsilon, nu)?;
        for (i, e) in self.sweep.epsilons.iter().enumerate() {
            check_epsilon(&format!("sweep.epsilons[{i}]"), e, nu)?;
        }
        if !(self.synthesis.tol > 0.0) || self.synthesis.max_iters == 0 {
            return cfg("synthesis.tol and synthesis.max_iters must be positive".into());
        }
        if !self.mpc.q.square() || !self.mpc.r.square() {
            return cfg("mpc.q and mpc.r must be square".into());
        }
        self.mpc.settings().validate(n, nu)?;
        if self.simulation.n_runs == 0 {
            return cfg("simulation.n_runs must be at least 1".into());
        }
        Ok(())
    }
}

fn check_epsilon(what: &str, eps: &[f64], nu: usize) -> Result<()> {
    if eps.len() != nu {
        return Err(Error::Config(format!("{what} needs {nu} entries, got {}", eps.len())));
    }
    if eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::Config(format!("{what} must be finite and non-negative: {eps:?}")));
    }
    Ok(())
}
