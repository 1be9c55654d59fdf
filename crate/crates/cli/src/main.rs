use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;
mod output;

use config::{ChargeKind, EstimatorKind, Experiment, Overrides};
use error::CliError;
use output::Table;

/// Throughput, bounds and simulation for multi-server queues with job
/// replication.
#[derive(Parser, Debug)]
#[command(name = "replicap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form throughput of NoRep, FullRep, upfront partitions and the
    /// best replication factor.
    Analytic(Common),
    /// Saturated or Poisson-arrival simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Also write the saturated event log of the first policy.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 100.0)]
        horizon: f64,
    },
    /// Upper bounds on the service capacity.
    Bound {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        estimator: Option<EstimatorArg>,
        #[arg(long)]
        paths: Option<usize>,
        /// Log-spaced points added to the threshold grid.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long, value_enum)]
        charge: Option<ChargeArg>,
    },
    /// Optimal policy of the decision process for finite-support laws.
    Mdp {
        #[command(flatten)]
        common: Common,
        /// Where to write the optimal policy table (state, action).
        #[arg(long, value_name = "PATH")]
        policy_out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Result CSV; defaults to the config's `out`, then stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Write a gnuplot script for the result next to it.
    #[arg(long, value_name = "PATH")]
    gnuplot: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EstimatorArg {
    Exact,
    Mc,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ChargeArg {
    AsPrinted,
    ReplicasOnly,
}

fn load(c: &Common, mut o: Overrides) -> Result<Experiment, CliError> {
    o.seed = c.seed;
    Experiment::load(&c.config, &o)
}

fn out_path(c: &Common, e: &Experiment) -> Option<PathBuf> {
    c.out.clone().or_else(|| e.config.out.as_ref().map(|p| e.base.join(p)))
}

/// Writes the table, the optional plot script, and reports row failures.
fn finish(c: &Common, e: &Experiment, t: Table, x: Option<&str>, y: &str, series: &[&str]) -> Result<(), CliError> {
    let out = out_path(c, e);
    t.write_to(out.as_deref())?;
    if let Some(g) = &c.gnuplot {
        let x = x.ok_or_else(|| CliError::Config("no sweep axis to plot against".into()))?;
        let data = out
            .as_deref()
            .map(Path::display)
            .map(|d| d.to_string())
            .ok_or_else(|| CliError::Config("a plot script needs --out".into()))?;
        std::fs::write(g, t.gnuplot(&data, x, y, series)?)?;
    }
    t.into_outcome()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analytic(c) => {
            let e = load(&c, Overrides::default())?;
            let t = commands::analytic(&e)?;
            let axes = e.axes();
            finish(&c, &e, t, axes.first().map(String::as_str), "throughput", &["policy", "params"])
        }
        Command::Simulate {
            common: c,
            runs,
            jobs,
            trace,
            horizon,
        } => {
            let e = load(
                &c,
                Overrides {
                    runs,
                    jobs,
                    ..Default::default()
                },
            )?;
            if let Some(path) = trace {
                std::fs::write(path, commands::trace(&e, horizon)?)?;
            }
            let t = commands::simulate(&e)?;
            let axes = e.axes();
            let (x, y) = match e.config.simulate.mode {
                config::Mode::Saturated => (axes.first().map(String::as_str), "throughput"),
                config::Mode::Poisson => (Some("lambda"), "mean_response"),
            };
            finish(&c, &e, t, x, y, &["policy", "params"])
        }
        Command::Bound {
            common: c,
            estimator,
            paths,
            grid,
            charge,
        } => {
            let e = load(
                &c,
                Overrides {
                    paths,
                    grid,
                    estimator: estimator.map(|x| match x {
                        EstimatorArg::Exact => EstimatorKind::Exact,
                        EstimatorArg::Mc => EstimatorKind::Mc,
                    }),
                    charge: charge.map(|x| match x {
                        ChargeArg::AsPrinted => ChargeKind::AsPrinted,
                        ChargeArg::ReplicasOnly => ChargeKind::ReplicasOnly,
                    }),
                    ..Default::default()
                },
            )?;
            let t = commands::bound(&e)?;
            let axes = e.axes();
            finish(&c, &e, t, axes.first().map(String::as_str), "bound", &["kind"])
        }
        Command::Mdp { common: c, policy_out } => {
            let e = load(&c, Overrides::default())?;
            let out = commands::mdp(&e)?;
            if let Some(path) = policy_out {
                write_policies(&path, &out.policies)?;
            }
            let axes = e.axes();
            finish(&c, &e, out.table, axes.first().map(String::as_str), "throughput", &["policy", "params"])
        }
    }
}

/// One table goes to `path`; several get `-<index>` before the extension.
fn write_policies(path: &Path, tables: &[replicap::mdp::TabularPolicy]) -> Result<(), CliError> {
    if tables.len() == 1 {
        std::fs::write(path, tables[0].to_csv())?;
        return Ok(());
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("policy");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    for (i, t) in tables.iter().enumerate() {
        std::fs::write(path.with_file_name(format!("{stem}-{i}.{ext}")), t.to_csv())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("replicap: {e}");
            e.exit_code()
        }
    }
}
