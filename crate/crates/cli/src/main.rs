//! Command-line front end: load a scenario file, run one of the engines, and
//! emit a deterministic report.
//!
//! Exit codes: 0 success, 1 usage error, 2 scenario (parse/validation) error,
//! 3 runtime error. Reports embed the SHA-256 of the scenario bytes and the
//! seed they ran with, and contain no timestamps or host state, so identical
//! invocations produce identical bytes.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use latentrisk::apex::optimize;
use latentrisk::hydra::{run_campaign, StrategyStats};
use latentrisk::raven::{continuous_loop, LogRecord};
use latentrisk::riskcore::{assess_system_risk, measure_amplification, AmplificationMap};
use latentrisk::scenario::{load_scenario, LoadedScenario, ScenarioError};
use latentrisk::simengine::run_simulation;
use latentrisk::topology::ComponentId;

#[derive(Parser)]
#[command(
    name = "latentrisk",
    version,
    about = "Deterministic simulator and latent-risk analysis for optimization-layered topologies",
    max_term_width = 100
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct OutputArgs {
    /// Output format.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write to this file (atomically) instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario JSON file.
    #[arg(value_name = "SCENARIO")]
    scenario: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a scenario, reporting its structure and hash.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the simulation and emit the telemetry trace.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Override the scenario's duration (ticks).
        #[arg(long)]
        duration: Option<u64>,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Rank components by declared risk.
    Assess {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Measure one edge's bypass amplification empirically.
    MeasureAmp {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Edge to measure as FROM,TO (bypasses FROM, observes at TO).
        #[arg(long, value_name = "FROM,TO", value_parser = parse_edge)]
        edge: (String, String),
        /// Measurement window in ticks.
        #[arg(long, default_value_t = 300)]
        window: u64,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run a probe campaign and report discovered risk understatements.
    Campaign {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Search configurations for the risk-constrained Pareto front.
    Optimize {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the continuous monitoring loop and emit its decision log.
    Monitor {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Override the scenario's duration (ticks).
        #[arg(long)]
        duration: Option<u64>,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn parse_edge(s: &str) -> Result<(String, String), String> {
    match s.split_once(',') {
        Some((from, to)) if !from.is_empty() && !to.is_empty() => {
            Ok((from.to_string(), to.to_string()))
        }
        _ => Err("expected FROM,TO".to_string()),
    }
}

enum CliError {
    /// Unusable scenario input: missing file, bad JSON, failed validation.
    Scenario(String),
    /// The engines failed at run time.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Scenario(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Scenario(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Scenario(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load(path: &Path) -> Result<LoadedScenario, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Scenario(format!("cannot read {}: {e}", path.display())))?;
    Ok(load_scenario(&bytes)?)
}

/// Write output bytes to stdout, or atomically (write + rename) to `--out`.
fn emit(output: &OutputArgs, bytes: &[u8]) -> Result<(), CliError> {
    match &output.out {
        None => std::io::stdout().write_all(bytes).map_err(runtime),
        Some(path) => {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::Builder::new()
                .prefix(".latentrisk.")
                .tempfile_in(dir)
                .map_err(runtime)?;
            tmp.write_all(bytes).map_err(runtime)?;
            tmp.persist(path).map_err(|e| runtime(e.error))?;
            Ok(())
        }
    }
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(runtime)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Serialize)]
struct ValidateOutput<'a> {
    scenario_sha256: &'a str,
    components: usize,
    edges: usize,
    entries: usize,
    has_campaign: bool,
    has_optimizer: bool,
    has_monitor: bool,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    scenario_sha256: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { scenario, output } => {
            let loaded = load(&scenario.scenario)?;
            let graph = loaded.topology.graph();
            let body = ValidateOutput {
                scenario_sha256: &loaded.sha256,
                components: graph.components.len(),
                edges: graph.edges.len(),
                entries: graph.entries.len(),
                has_campaign: loaded.scenario.campaign.is_some(),
                has_optimizer: loaded.scenario.optimizer.is_some(),
                has_monitor: loaded.scenario.monitor.is_some(),
            };
            let bytes = match output.format {
                Format::Json => to_json_bytes(&body)?,
                Format::Csv => format!(
                    "scenario_sha256,components,edges,entries,has_campaign,has_optimizer,has_monitor\n{},{},{},{},{},{},{}\n",
                    body.scenario_sha256,
                    body.components,
                    body.edges,
                    body.entries,
                    body.has_campaign,
                    body.has_optimizer,
                    body.has_monitor
                )
                .into_bytes(),
            };
            emit(&output, &bytes)
        }

        Command::Simulate {
            scenario,
            duration,
            seed,
            output,
        } => {
            let loaded = load(&scenario.scenario)?;
            let duration = duration.unwrap_or(loaded.scenario.duration_s);
            let seed = seed.unwrap_or(loaded.scenario.seed);
            let mut trace =
                run_simulation(&loaded.topology, &loaded.scenario.traffic, duration, seed, &[])
                    .map_err(runtime)?;
            trace.meta.scenario_hash = loaded.sha256.clone();
            let bytes = match output.format {
                Format::Json => to_json_bytes(&trace)?,
                Format::Csv => {
                    let mut buf = Vec::new();
                    trace.write_csv(&mut buf).map_err(runtime)?;
                    buf
                }
            };
            emit(&output, &bytes)
        }

        Command::Assess { scenario, output } => {
            let loaded = load(&scenario.scenario)?;
            let map = AmplificationMap::from_declared(&loaded.topology);
            let catalog = if loaded.scenario.failure_modes.is_empty() {
                None
            } else {
                Some(loaded.scenario.failure_modes.as_slice())
            };
            let report =
                assess_system_risk(&loaded.topology, &map, catalog).map_err(runtime)?;
            let bytes = match output.format {
                Format::Json => to_json_bytes(&Report {
                    scenario_sha256: &loaded.sha256,
                    seed: loaded.scenario.seed,
                    body: &report,
                })?,
                Format::Csv => report.to_csv().into_bytes(),
            };
            emit(&output, &bytes)
        }

        Command::MeasureAmp {
            scenario,
            edge,
            window,
            seed,
            output,
        } => {
            let loaded = load(&scenario.scenario)?;
            let seed = seed.unwrap_or(loaded.scenario.seed);
            let from = ComponentId::new(edge.0);
            let to = ComponentId::new(edge.1);
            if loaded.topology.find_edge(&from, &to).is_none() {
                return Err(CliError::Scenario(format!(
                    "scenario has no edge `{from}` -> `{to}`"
                )));
            }
            let measurements = measure_amplification(
                &loaded.topology,
                &loaded.scenario.traffic,
                &from,
                window,
                seed,
            )
            .map_err(runtime)?;
            let measured = measurements
                .into_iter()
                .find(|m| m.to == to)
                .expect("edge existence checked above");
            let bytes = match output.format {
                Format::Json => to_json_bytes(&Report {
                    scenario_sha256: &loaded.sha256,
                    seed,
                    body: &measured,
                })?,
                Format::Csv => format!(
                    "from,to,alpha,baseline_mean_rps,stressed_mean_rps,window_s\n{},{},{:.6},{:.6},{:.6},{}\n",
                    measured.from,
                    measured.to,
                    measured.alpha,
                    measured.baseline_mean_rps,
                    measured.stressed_mean_rps,
                    measured.window_s
                )
                .into_bytes(),
            };
            emit(&output, &bytes)
        }

        Command::Campaign {
            scenario,
            seed,
            output,
        } => {
            let loaded = load(&scenario.scenario)?;
            let seed = seed.unwrap_or(loaded.scenario.seed);
            let settings = loaded.scenario.campaign.clone().unwrap_or_default();
            let mut stats = StrategyStats::default();
            let report = run_campaign(
                &loaded.topology,
                &loaded.scenario.traffic,
                &settings,
                &mut stats,
                seed,
            )
            .map_err(runtime)?;
            let bytes = match output.format {
                Format::Json => to_json_bytes(&Report {
                    scenario_sha256: &loaded.sha256,
                    seed,
                    body: &report,
                })?,
                Format::Csv => {
                    let mut text = String::from(
                        "component,declared_lri,declared_level,measured_lri,measured_level\n",
                    );
                    for d in &report.discovered {
                        text.push_str(&format!(
                            "{},{:.6},{},{:.6},{}\n",
                            d.component,
                            d.declared_lri,
                            d.declared_level,
                            d.measured_lri,
                            d.measured_level
                        ));
                    }
                    text.into_bytes()
                }
            };
            emit(&output, &bytes)
        }

        Command::Optimize {
            scenario,
            seed,
            output,
        } => {
            let loaded = load(&scenario.scenario)?;
            let seed = seed.unwrap_or(loaded.scenario.seed);
            let Some(opt) = loaded.scenario.optimizer.clone() else {
                return Err(CliError::Scenario(
                    "scenario has no optimizer section".into(),
                ));
            };
            let front = optimize(
                &loaded.topology,
                &loaded.scenario.traffic,
                &opt.variables,
                &opt.settings,
                seed,
            )
            .map_err(runtime)?;
            let bytes = match output.format {
                Format::Json => to_json_bytes(&Report {
                    scenario_sha256: &loaded.sha256,
                    seed,
                    body: &front,
                })?,
                Format::Csv => front.to_csv().into_bytes(),
            };
            emit(&output, &bytes)
        }

        Command::Monitor {
            scenario,
            duration,
            seed,
            output,
        } => {
            let loaded = load(&scenario.scenario)?;
            let seed = seed.unwrap_or(loaded.scenario.seed);
            let duration = duration.unwrap_or(loaded.scenario.duration_s);
            let Some(opt) = loaded.scenario.optimizer.clone() else {
                return Err(CliError::Scenario(
                    "scenario has no optimizer section".into(),
                ));
            };
            let Some(policy) = loaded.scenario.monitor.clone() else {
                return Err(CliError::Scenario(
                    "scenario has no monitor section".into(),
                ));
            };
            let (log, final_values) = continuous_loop(
                &loaded.topology,
                &loaded.scenario.traffic,
                &opt.variables,
                &opt.settings,
                &policy,
                duration,
                seed,
            )
            .map_err(runtime)?;
            let bytes = match output.format {
                Format::Json => {
                    // JSONL: one decision record per line, then a final line
                    // with the applied configuration.
                    let mut buf = Vec::new();
                    log.write_jsonl(&mut buf).map_err(runtime)?;
                    #[derive(Serialize)]
                    struct FinalLine<'a> {
                        kind: &'static str,
                        scenario_sha256: &'a str,
                        seed: u64,
                        final_values: &'a [f64],
                        final_lri: Option<f64>,
                    }
                    serde_json::to_writer(
                        &mut buf,
                        &FinalLine {
                            kind: "final",
                            scenario_sha256: &loaded.sha256,
                            seed,
                            final_values: &final_values,
                            final_lri: log.final_lri(),
                        },
                    )
                    .map_err(runtime)?;
                    buf.push(b'\n');
                    buf
                }
                Format::Csv => {
                    let mut text = String::from(
                        "tick_s,window_index,lri,level,trigger_fired,detector_fired,optimized,trial_rejected\n",
                    );
                    for record in &log.records {
                        if let LogRecord::Summary(s) = record {
                            text.push_str(&format!(
                                "{},{},{:.6},{},{},{},{},{}\n",
                                s.tick_s,
                                s.window_index,
                                s.lri,
                                s.level,
                                s.trigger_fired,
                                s.detector_fired,
                                s.optimized,
                                s.trial_rejected
                            ));
                        }
                    }
                    text.into_bytes()
                }
            };
            emit(&output, &bytes)
        }
    }
}
