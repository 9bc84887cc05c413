//! Command-line front end.
//!
//! Scenario arguments are either a bundled preset name or a path to a JSON
//! scenario file. Exit codes: 0 success, 2 validation failure, 3
//! observability or gain-synthesis failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use fleet_observer::error::Error;
use fleet_observer::harness::io::{emit_plots, write_baseline, write_montecarlo, write_run, Format};
use fleet_observer::harness::run::{prepare_structure, Certificates};
use fleet_observer::harness::{
    compare_baseline, load_raw, monte_carlo, prepare, run_scenario, validate_scenario, Scenario,
};

#[derive(Parser)]
#[command(name = "fleet-observer", version, about = "Distributed CAV observer with residual fault detection")]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for result files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format for traces.
    #[arg(long, global = true, value_enum, default_value_t = TableFormat::Csv)]
    format: TableFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

impl From<TableFormat> for Format {
    fn from(f: TableFormat) -> Self {
        match f {
            TableFormat::Csv => Format::Csv,
            TableFormat::Json => Format::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded simulation and write its traces.
    Simulate { scenario: String },
    /// Synthesize the observer gain and print its certificates.
    GainSynth { scenario: String },
    /// Check distributed observability of the scenario.
    CheckObservability { scenario: String },
    /// Run a seeded Monte Carlo campaign.
    Montecarlo {
        scenario: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Compare against the inner-consensus-loop estimator.
    CompareBaseline {
        scenario: String,
        #[arg(long = "L", value_delimiter = ',', default_value = "7,10,15")]
        l: Vec<usize>,
    },
    /// Write plot-ready series and a figure manifest for a result directory.
    EmitPlots { dir: PathBuf },
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<Error>() {
            Some(Error::Validation(_)) => 2,
            Some(
                Error::NotObservable { .. }
                | Error::GainSearch(_)
                | Error::Unbounded { .. }
                | Error::DegenerateGain { .. },
            ) => 3,
            _ => 1,
        };
        Self { code, err }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

fn load(name: &str, seed: Option<u64>) -> Result<(Value, Scenario), Failure> {
    let mut raw = load_raw(name)?;
    if let Some(seed) = seed {
        if let Some(obj) = raw.as_object_mut() {
            obj.insert("seed".into(), json!(seed));
        }
    }
    let s = validate_scenario(&raw)?;
    Ok((raw, s))
}

/// Write to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print(v: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("json values serialize");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_json(dir: &Path, name: &str, v: &Value) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let format = Format::from(cli.format);
    match cli.command {
        Command::Simulate { scenario } => {
            let (raw, s) = load(&scenario, cli.seed)?;
            let r = run_scenario(&s)?;
            if let Some(dir) = &cli.out {
                write_run(dir, &r, &raw, format)?;
            }
            print(&json!({
                "scenario": s.name,
                "seed": s.seed,
                "mse_mean": r.metrics.mse_mean,
                "disagreement_rms": r.metrics.disagreement_rms,
                "error_dynamics_defect": r.defect,
                "detectors": r.metrics.detectors,
            }));
        }
        Command::GainSynth { scenario } => {
            let (_, s) = load(&scenario, cli.seed)?;
            let setup = prepare(&s)?;
            let cert = serde_json::to_value(Certificates {
                observability: setup.observability,
                gain: setup.design,
                bounds: setup.bounds,
            })
            .map_err(anyhow::Error::from)?;
            if let Some(dir) = &cli.out {
                write_json(dir, "gain.json", &cert)?;
            }
            print(&cert);
        }
        Command::CheckObservability { scenario } => {
            let (_, s) = load(&scenario, cli.seed)?;
            let (network, _, shared, report) = prepare_structure(&s)?;
            let v = json!({
                "scenario": s.name,
                "report": report,
                "strongly_connected": network.is_strongly_connected(),
                "unmeasured_hdvs": shared.unmeasured(),
            });
            if let Some(dir) = &cli.out {
                write_json(dir, "observability.json", &v)?;
            }
            print(&v);
            if !report.observable {
                return Err(Error::NotObservable {
                    rank: report.rank,
                    dim: report.dim,
                }
                .into());
            }
        }
        Command::Montecarlo { scenario, trials } => {
            let (_, s) = load(&scenario, cli.seed)?;
            let report = monte_carlo(&s, trials, None)?;
            if let Some(dir) = &cli.out {
                write_montecarlo(dir, &report, format)?;
            }
            print(&json!({
                "scenario": report.scenario,
                "base_seed": report.base_seed,
                "trials": report.trials.len(),
                "mse": report.mse,
                "detectors": report.detectors,
            }));
        }
        Command::CompareBaseline { scenario, l } => {
            let (_, s) = load(&scenario, cli.seed)?;
            let cmp = compare_baseline(&s, &l)?;
            if let Some(dir) = &cli.out {
                write_baseline(dir, &cmp, format)?;
            }
            let row = |c: &fleet_observer::harness::baseline::ObserverCurve| {
                json!({
                    "observer": c.name,
                    "sweeps": c.sweeps,
                    "gain": c.gain,
                    "rho": c.rho,
                    "steady_mse": c.steady_mse,
                    "estimate_msgs": c.estimate_msgs,
                    "message_ratio": c.message_ratio,
                })
            };
            let rows: Vec<Value> = std::iter::once(&cmp.proposed).chain(&cmp.baselines).map(row).collect();
            print(&json!({"scenario": cmp.scenario, "seed": cmp.seed, "links": cmp.links, "observers": rows}));
        }
        Command::EmitPlots { dir } => {
            let manifest = emit_plots(&dir)?;
            print(&serde_json::to_value(manifest).map_err(anyhow::Error::from)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
