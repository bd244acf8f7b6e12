//! Abstraction, synthesis and simulation wired together from a config.

use std::time::Instant;

use crate::abstraction::{build_imdp, ActionSet, Imdp};
use crate::config::{BenchmarkConfig, ControllerKind};
use crate::error::Result;
use crate::mpc::MpcController;
use crate::partition::Partition;
use crate::pwa::{pwa_table, AffineModel};
use crate::simulation::{summarize, ClosedLoop, Controller, EpisodeRecord, Summary, SweepRow};
use crate::synthesis::{robust_value_iteration, RobustPolicy, ValueBounds};

/// Partition, actions and IMDP for one ball radius.
pub struct Abstraction {
    pub partition: Partition,
    pub actions: ActionSet,
    pub imdp: Imdp,
    /// Seconds spent building partition and IMDP.
    pub build_time: f64,
}

pub fn build_abstraction(cfg: &BenchmarkConfig, epsilon: &[f64]) -> Result<Abstraction> {
    let start = Instant::now();
    let partition = Partition::build(&cfg.model, &cfg.partition.counts, cfg.partition.label_mode)?;
    let actions = ActionSet::grid(&cfg.model, &cfg.actions.counts, epsilon)?;
    let imdp = build_imdp(&cfg.model, &partition, &actions)?;
    Ok(Abstraction {
        partition,
        actions,
        imdp,
        build_time: start.elapsed().as_secs_f64(),
    })
}

/// An abstraction with its robust policy and prediction models.
pub struct Certified {
    pub abstraction: Abstraction,
    pub values: ValueBounds,
    pub policy: RobustPolicy,
    pub synthesis_time: f64,
    pub pwa: Vec<AffineModel>,
}

impl Certified {
    pub fn build(cfg: &BenchmarkConfig, epsilon: &[f64]) -> Result<Certified> {
        let abstraction = build_abstraction(cfg, epsilon)?;
        Self::from_abstraction(cfg, abstraction)
    }

    pub fn from_abstraction(cfg: &BenchmarkConfig, abstraction: Abstraction) -> Result<Certified> {
        let start = Instant::now();
        let (values, policy) =
            robust_value_iteration(&abstraction.imdp, cfg.synthesis.tol, cfg.synthesis.max_iters)?;
        let synthesis_time = start.elapsed().as_secs_f64();
        let pwa = pwa_table(&cfg.model, &abstraction.partition, &abstraction.actions, &policy);
        Ok(Certified {
            abstraction,
            values,
            policy,
            synthesis_time,
            pwa,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.policy.lambda
    }

    pub fn closed_loop<'a>(&'a self, cfg: &'a BenchmarkConfig, kind: ControllerKind) -> Result<ClosedLoop<'a>> {
        let abs = &self.abstraction;
        let controller = match kind {
            ControllerKind::Vanilla => Controller::Vanilla,
            ControllerKind::Mpc => Controller::Mpc(MpcController::new(
                &cfg.model,
                &abs.partition,
                &abs.actions,
                &self.policy,
                &self.pwa,
                cfg.mpc.settings(),
            )?),
        };
        Ok(ClosedLoop {
            model: &cfg.model,
            partition: &abs.partition,
            actions: &abs.actions,
            policy: &self.policy,
            controller,
            q: cfg.mpc.q.matrix(),
            r: cfg.mpc.r.matrix(),
        })
    }

    /// Monte Carlo batch from the configured initial state.
    pub fn simulate(
        &self,
        cfg: &BenchmarkConfig,
        kind: ControllerKind,
        base_seed: u64,
    ) -> Result<(Summary, Vec<EpisodeRecord>)> {
        let lp = self.closed_loop(cfg, kind)?;
        let sim = &cfg.simulation;
        let records = lp.monte_carlo(&cfg.model.initial_state, sim.n_runs, base_seed, sim.max_steps)?;
        Ok((summarize(&records), records))
    }
}

/// One table row per radius: rebuild, synthesize and (optionally) simulate.
/// A radius of zero runs the vanilla controller, any other the MPC. Errors
/// end up in their row and the sweep continues.
pub fn epsilon_sweep(cfg: &BenchmarkConfig, epsilons: &[Vec<f64>], simulate: bool, base_seed: u64) -> Vec<SweepRow> {
    epsilons
        .iter()
        .map(|eps| {
            let ball_volume: f64 = eps.iter().map(|e| 2.0 * e).product();
            let mut row = SweepRow {
                epsilon: eps.clone(),
                ball_volume,
                lambda: f64::NAN,
                summary: None,
                abstraction_time: f64::NAN,
                error: None,
            };
            let result = (|| -> Result<()> {
                let cert = Certified::build(cfg, eps)?;
                row.abstraction_time = cert.abstraction.build_time;
                row.lambda = cert.lambda();
                if simulate {
                    let kind = if eps.iter().all(|e| *e == 0.0) {
                        ControllerKind::Vanilla
                    } else {
                        ControllerKind::Mpc
                    };
                    row.summary = Some(cert.simulate(cfg, kind, base_seed)?.0);
                }
                Ok(())
            })();
            if let Err(e) = result {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect()
}
