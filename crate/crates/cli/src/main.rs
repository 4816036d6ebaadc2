//! `dexloop`: replay synthetic intervention scenarios against the hand
//! retargeting methods, run numerical self-checks, and work with correction
//! logs. Exits nonzero if any invoked check fails.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dexloop_core::config::SimConfig;
use dexloop_core::hand::HandModel;
use dexloop_core::intervene::CorrectionLog;
use dexloop_core::sim::{
    check_gradients, check_toy_oracle, generate_scenario, run_rollout, run_sweep, Method,
    ReportFormat, ScenarioSpec, SweepSpec,
};

#[derive(Parser)]
#[command(name = "dexloop", version, about = "Seamless-intervention retargeting harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scenario replay harness.
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Numerical self-checks (exit code reflects the result).
    Check {
        #[command(subcommand)]
        cmd: CheckCmd,
    },
    /// Correction-log utilities.
    Log {
        #[command(subcommand)]
        cmd: LogCmd,
    },
}

#[derive(Args)]
struct CommonOpts {
    /// Harness config TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hand model TOML; the bundled 21-DoF hand when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SimCmd {
    /// Run one scenario under one retargeting method.
    Run {
        /// Scenario spec TOML.
        #[arg(long)]
        scenario: PathBuf,
        /// relative | teleop | deltacmd | jacobian
        #[arg(long)]
        method: String,
        #[command(flatten)]
        common: CommonOpts,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Metrics format: json | csv
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Replay a seeded scenario sweep under several methods.
    Sweep {
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', default_value = "relative,teleop")]
        methods: Vec<String>,
        /// Number of seeds (scenarios) to run.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Base scenario spec TOML; library default when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Misalignment range sampled per seed.
        #[arg(long, default_value_t = 0.2)]
        misalign_lo: f64,
        #[arg(long, default_value_t = 0.8)]
        misalign_hi: f64,
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CheckCmd {
    /// Analytic cost gradient vs central finite differences.
    Grads {
        #[arg(long, default_value_t = 100)]
        states: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Toy-finger per-step solve vs exhaustive 1e-3-rad grid search.
    Oracle {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 3)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum LogCmd {
    /// Copy a correction log, optionally filtered to intervention steps.
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only records executed under intervention.
        #[arg(long)]
        only_interventions: bool,
    },
}

fn load_model(path: &Option<PathBuf>) -> Result<HandModel> {
    match path {
        Some(p) => HandModel::load(p).with_context(|| format!("loading model {}", p.display())),
        None => Ok(HandModel::default_21dof()),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<SimConfig> {
    match path {
        Some(p) => SimConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(SimConfig::default()),
    }
}

fn load_scenario_spec(path: &Path) -> Result<ScenarioSpec> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Sim { cmd } => match cmd {
            SimCmd::Run {
                scenario,
                method,
                common,
                out,
                format,
            } => {
                let model = load_model(&common.model)?;
                let cfg = load_config(&common.config)?;
                let spec = load_scenario_spec(&scenario)?;
                let method = Method::from_str(&method)?;
                let format = ReportFormat::from_str(&format)?;
                let generated = generate_scenario(&model, &spec, &cfg)?;
                let output = run_rollout(&model, &generated, method, &cfg)?;

                fs::create_dir_all(&out)?;
                let log_path = out.join("correction.log");
                fs::write(&log_path, &output.log_bytes)?;
                let metrics_path = match format {
                    ReportFormat::Json => out.join("metrics.json"),
                    ReportFormat::Csv => out.join("metrics.csv"),
                };
                let file = fs::File::create(&metrics_path)?;
                output.metrics.write(format, BufWriter::new(file))?;

                println!(
                    "method {}: {} steps, mean boundary jump {:.3e} rad, median solve {:.3} ms",
                    method,
                    output.metrics.steps,
                    output.metrics.discontinuity.mean,
                    output.metrics.timing.median_ms
                );
                println!("wrote {} and {}", log_path.display(), metrics_path.display());
            }
            SimCmd::Sweep {
                methods,
                seeds,
                scenario,
                misalign_lo,
                misalign_hi,
                common,
                out,
            } => {
                let model = load_model(&common.model)?;
                let cfg = load_config(&common.config)?;
                let base = match &scenario {
                    Some(p) => load_scenario_spec(p)?,
                    None => ScenarioSpec::default(),
                };
                let methods: Vec<Method> = methods
                    .iter()
                    .map(|m| Method::from_str(m))
                    .collect::<Result<_, _>>()?;
                let sweep = SweepSpec {
                    base,
                    seeds,
                    misalignment_range: (misalign_lo, misalign_hi),
                };
                let summary = run_sweep(&model, &sweep, &methods, &cfg)?;

                fs::create_dir_all(&out)?;
                let path = out.join("sweep.json");
                serde_json::to_writer_pretty(BufWriter::new(fs::File::create(&path)?), &summary)?;
                for m in &summary.methods {
                    println!(
                        "{:<10} mean jump {:.3e} rad, max {:.3e}, mean tracking err {:.3e} m, median solve {:.3} ms",
                        m.method, m.mean_jump, m.max_jump, m.mean_tracking_error, m.median_solve_ms
                    );
                }
                println!("wrote {}", path.display());
            }
        },
        Command::Check { cmd } => match cmd {
            CheckCmd::Grads {
                states,
                seed,
                common,
            } => {
                let model = load_model(&common.model)?;
                let cfg = load_config(&common.config)?;
                let report = check_gradients(&model, &cfg.weights, states, seed)?;
                println!(
                    "gradient check: {} states, worst rel err {:.3e} (tolerance {:.0e})",
                    report.states, report.worst_rel_err, report.tolerance
                );
                if !report.passed {
                    bail!("gradient check failed");
                }
                println!("PASS");
            }
            CheckCmd::Oracle { instances, seed } => {
                let report = check_toy_oracle(instances, seed)?;
                println!(
                    "grid oracle: {} instances at {:.0e} rad, worst gap {:.3e} (tolerance {:.0e})",
                    report.instances, report.grid_resolution, report.worst_gap, report.tolerance
                );
                if !report.passed {
                    bail!("grid oracle check failed");
                }
                println!("PASS");
            }
        },
        Command::Log { cmd } => match cmd {
            LogCmd::Export {
                log,
                out,
                only_interventions,
            } => {
                let file = fs::File::open(&log)
                    .with_context(|| format!("opening log {}", log.display()))?;
                let parsed = CorrectionLog::read(BufReader::new(file))?;
                let exported = if only_interventions {
                    parsed.export_interventions()
                } else {
                    parsed
                };
                if let Some(parent) = out.parent() {
                    if !parent.as_os_str().is_empty() {
                        fs::create_dir_all(parent)?;
                    }
                }
                exported.write(BufWriter::new(fs::File::create(&out)?))?;
                println!(
                    "wrote {} records ({}) to {}",
                    exported.records.len(),
                    if only_interventions {
                        "interventions only"
                    } else {
                        "full rollout"
                    },
                    out.display()
                );
            }
        },
    }
    Ok(())
}
