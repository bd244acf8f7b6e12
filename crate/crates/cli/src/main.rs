use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use certmpc::config::{BenchmarkConfig, ControllerKind};
use certmpc::pipeline::{build_abstraction, epsilon_sweep, Certified};
use certmpc::simulation::{write_episodes_csv, write_sweep_csv};
use certmpc::synthesis::{heatmap, write_values_csv};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "certmpc", version, about = "Certified abstraction-based MPC for stochastic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Benchmark configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides simulation.base_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides simulation.controller.
    #[arg(long, global = true, value_enum)]
    controller: Option<Controller>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Controller {
    Vanilla,
    Mpc,
}

#[derive(Subcommand)]
enum Command {
    /// Build the IMDP at the configured radius and report its size.
    Abstract,
    /// Robust value iteration: values, policy and heat map.
    Synthesize,
    /// Monte Carlo closed loop from the configured initial state.
    Simulate {
        /// Also write every trajectory.
        #[arg(long)]
        trajectories: bool,
    },
    /// One row per ball radius: lambda and closed-loop costs.
    Sweep {
        /// One radius per flag, comma separated per input dimension
        /// (`--eps 0.15,0.3 --eps 0.2,0.4`); defaults to sweep.epsilons.
        #[arg(long = "eps")]
        eps: Vec<String>,
        /// Only build and synthesize.
        #[arg(long)]
        no_simulate: bool,
    },
    /// Explicit-state IMDP plus the state-to-cell table.
    ExportImdp,
}

struct Run {
    cfg: BenchmarkConfig,
    out: PathBuf,
    kind: ControllerKind,
}

impl Run {
    fn new(common: &Common) -> Result<Run> {
        let path = common.config.as_ref().context("--config is required")?;
        let mut cfg = BenchmarkConfig::load(path)?;
        if let Some(seed) = common.seed {
            cfg.simulation.base_seed = seed;
        }
        let kind = match common.controller {
            Some(Controller::Vanilla) => ControllerKind::Vanilla,
            Some(Controller::Mpc) => ControllerKind::Mpc,
            None => cfg.simulation.controller,
        };
        let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run { cfg, out, kind })
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    fn timings(&self, lines: &[String]) -> Result<()> {
        let mut w = self.create("timings.txt")?;
        for l in lines {
            writeln!(w, "{l}")?;
        }
        Ok(w.flush()?)
    }
}

fn parse_eps(rows: &[String], dim: usize) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|r| {
            let v: Vec<f64> = r
                .split(',')
                .map(|x| x.trim().parse::<f64>().with_context(|| format!("bad radius {x:?}")))
                .collect::<Result<_>>()?;
            if v.len() != dim {
                bail!("radius {r:?} needs {dim} entries");
            }
            if v.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                bail!("radius {r:?} must be finite and non-negative");
            }
            Ok(v)
        })
        .collect()
}

fn cmd_abstract(run: &Run) -> Result<()> {
    let abs = build_abstraction(&run.cfg, &run.cfg.actions.epsilon)?;
    let imdp = &abs.imdp;
    let mut w = run.create("imdp.txt")?;
    imdp.write_explicit(&mut w)?;
    w.flush()?;
    let stats = format!(
        "states {}\ninterior_cells {}\nactions {}\nchoices {}\ntransitions {}",
        imdp.num_states(),
        abs.partition.num_cells(),
        imdp.num_actions(),
        imdp.num_choices(),
        imdp.num_transitions()
    );
    fs::write(run.out.join("abstract.txt"), format!("{stats}\n"))?;
    run.timings(&[format!("T_abs {}", abs.build_time)])?;
    println!("{stats}\nT_abs {:.3}s", abs.build_time);
    Ok(())
}

fn cmd_synthesize(run: &Run) -> Result<()> {
    let cert = Certified::build(&run.cfg, &run.cfg.actions.epsilon)?;
    let p = &cert.abstraction.partition;
    let mut w = run.create("values.csv")?;
    write_values_csv(&cert.values, &cert.policy, &mut w)?;
    w.flush()?;
    let mut w = run.create("heatmap.csv")?;
    heatmap(&cert.values, p).write_csv(p, &mut w)?;
    w.flush()?;
    let x0 = &run.cfg.model.initial_state;
    fs::write(
        run.out.join("lambda.txt"),
        format!("initial_state {x0:?}\ncell {}\nlambda {}\n", p.locate(x0), cert.lambda()),
    )?;
    run.timings(&[
        format!("T_abs {}", cert.abstraction.build_time),
        format!("T_syn {}", cert.synthesis_time),
    ])?;
    println!(
        "lambda {:.6} at {x0:?} (T_abs {:.3}s, T_syn {:.3}s)",
        cert.lambda(),
        cert.abstraction.build_time,
        cert.synthesis_time
    );
    Ok(())
}

fn cmd_simulate(run: &Run, trajectories: bool) -> Result<()> {
    let cert = Certified::build(&run.cfg, &run.cfg.actions.epsilon)?;
    let (summary, records) = cert.simulate(&run.cfg, run.kind, run.cfg.simulation.base_seed)?;
    let mut w = run.create("summary.csv")?;
    summary.write_csv(&mut w)?;
    w.flush()?;
    if trajectories {
        let mut w = run.create("episodes.csv")?;
        write_episodes_csv(&records, &mut w)?;
        w.flush()?;
    }
    let mut t = vec![format!("T_abs {}", cert.abstraction.build_time)];
    if let Some(s) = summary.mpc_step_time {
        t.push(format!("T_mpc_step {s}"));
    }
    run.timings(&t)?;
    println!(
        "lambda {:.6}  sat {:.3}  E[J] {:.3}  E[J_state] {:.3}  E[J_input] {:.3}  fallbacks/run {:.3}",
        cert.lambda(),
        summary.sat_frequency,
        summary.j_total.mean,
        summary.j_state.mean,
        summary.j_input.mean,
        summary.mean_fallbacks
    );
    Ok(())
}

fn cmd_sweep(run: &Run, eps: &[String], simulate: bool) -> Result<()> {
    let rows = if eps.is_empty() {
        run.cfg.sweep.epsilons.clone()
    } else {
        parse_eps(eps, run.cfg.model.input_dim())?
    };
    if rows.is_empty() {
        bail!("no radii: set sweep.epsilons or pass --eps");
    }
    let table = epsilon_sweep(&run.cfg, &rows, simulate, run.cfg.simulation.base_seed);
    let mut w = run.create("sweep.csv")?;
    write_sweep_csv(&table, &mut w)?;
    w.flush()?;
    let mut w = run.create("elbow.csv")?;
    writeln!(w, "ball_volume,lambda,E_J")?;
    for r in &table {
        let ej = r.summary.as_ref().map(|s| s.j_total.mean.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{ej}", r.ball_volume, r.lambda)?;
    }
    w.flush()?;
    let t: Vec<String> = table
        .iter()
        .map(|r| {
            let step = r.summary.as_ref().and_then(|s| s.mpc_step_time).map(|s| format!(" T_mpc_step {s}")).unwrap_or_default();
            format!("epsilon {:?} T_abs {}{step}", r.epsilon, r.abstraction_time)
        })
        .collect();
    run.timings(&t)?;
    for r in &table {
        match (&r.error, &r.summary) {
            (Some(e), _) => println!("eps {:?}: error: {e}", r.epsilon),
            (None, Some(s)) => println!(
                "eps {:?}: lambda {:.6}  E[J] {:.3}  sat {:.3}",
                r.epsilon, r.lambda, s.j_total.mean, s.sat_frequency
            ),
            (None, None) => println!("eps {:?}: lambda {:.6}", r.epsilon, r.lambda),
        }
    }
    Ok(())
}

fn cmd_export(run: &Run) -> Result<()> {
    let abs = build_abstraction(&run.cfg, &run.cfg.actions.epsilon)?;
    let mut w = run.create("imdp.txt")?;
    abs.imdp.write_explicit(&mut w)?;
    w.flush()?;
    let p = &abs.partition;
    let n = run.cfg.model.state_dim();
    let mut w = run.create("states.csv")?;
    let mut header = vec!["state".to_string(), "label".to_string()];
    header.extend((0..n).flat_map(|j| [format!("lo{j}"), format!("hi{j}")]));
    writeln!(w, "{}", header.join(","))?;
    for s in 0..abs.imdp.num_states() {
        let label = format!("{:?}", abs.imdp.label(s)).to_lowercase();
        let bounds = match p.cell_bounds(s).ok() {
            Some(b) => (0..n).flat_map(|j| [b.lo[j].to_string(), b.hi[j].to_string()]).collect(),
            None => vec![String::new(); 2 * n],
        };
        writeln!(w, "{s},{label},{}", bounds.join(","))?;
    }
    w.flush()?;
    let mut w = run.create("actions.csv")?;
    let m = run.cfg.model.input_dim();
    let mut header = vec!["action".to_string()];
    header.extend((0..m).flat_map(|j| [format!("lo{j}"), format!("hi{j}")]));
    writeln!(w, "{}", header.join(","))?;
    for a in 0..abs.actions.len() {
        let b = abs.actions.interface_set(a);
        let cols: Vec<String> = (0..m).flat_map(|j| [b.lo[j].to_string(), b.hi[j].to_string()]).collect();
        writeln!(w, "{a},{}", cols.join(","))?;
    }
    w.flush()?;
    println!("wrote {}", run.out.join("imdp.txt").display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let run = Run::new(&cli.common)?;
    match &cli.command {
        Command::Abstract => cmd_abstract(&run),
        Command::Synthesize => cmd_synthesize(&run),
        Command::Simulate { trajectories } => cmd_simulate(&run, *trajectories),
        Command::Sweep { eps, no_simulate } => cmd_sweep(&run, eps, !no_simulate),
        Command::ExportImdp => cmd_export(&run),
    }
}
