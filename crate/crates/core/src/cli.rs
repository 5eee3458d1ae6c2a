//! Command-line front end: bound queries, single runs, verification
//! campaigns, and sweeps.
//!
//! Exit codes: 0 when every requested property held, 1 when a run violated a
//! property or a campaign found a counterexample, 2 on parse or configuration
//! errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bounds::{self, preferred_flavor, BoundKind, BoundReport, Mutation, ProtocolChoice, ProtocolKind};
use crate::certs::Value;
use crate::model::{validate_system, SystemSpec};
use crate::sim::{self, AdversaryBudget, AdversaryTrace, CampaignConfig, Schedule, SweepGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// How a scenario's adversary is chosen.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarySpec {
    /// Faulty replicas as placed in the system, all behaving correctly.
    #[default]
    None,
    /// Every placement and the full adversary family (`verify` only).
    Exhaustive,
    /// An adversary trace read from this JSON file, relative to the config.
    Scripted(PathBuf),
}

fn default_value() -> Value {
    Value::new(*b"value")
}

/// A scenario file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemSpec,
    /// Absent means the protocol is selected automatically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolChoice>,
    /// Hex-encoded payload.
    #[serde(default = "default_value")]
    pub value: Value,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<AdversaryBudget>,
}

impl ScenarioConfig {
    pub fn new(system: SystemSpec) -> Self {
        ScenarioConfig {
            system,
            protocol: None,
            value: default_value(),
            seeds: Vec::new(),
            adversary: AdversarySpec::None,
            budget: None,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "clustersend", version, about = "Cluster-sending protocols: bounds, runs, verification, sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the message and certificate lower bounds for a system.
    Bounds(CommonArgs),
    /// Run one scenario and print a summary line.
    Run(CommonArgs),
    /// Run every placement against the adversary family.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Largest cluster size accepted for exhaustive enumeration.
        #[arg(long, default_value_t = 6)]
        max_enum: usize,
    },
    /// Run the selected protocol over a grid of systems.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Schedule seed; overrides the seeds in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `auto` or one of rb-bcs, rb-brs, bs-bcs, bs-brs, spbs, rpbs.
    #[arg(long, default_value = "auto")]
    pub protocol: String,
    #[arg(long)]
    pub compact_certs: bool,
    #[arg(long, hide = true)]
    pub mutation: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

/// Parses `args` and runs the command, writing human-readable output to `out`.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_CONFIG
        }
    }
}

/// Runs a parsed command. `Err` means a configuration problem.
pub fn execute(cli: Cli, out: &mut dyn Write) -> anyhow::Result<i32> {
    match cli.command {
        Command::Bounds(args) => cmd_bounds(&args, out),
        Command::Run(args) => cmd_run(&args, out),
        Command::Verify { common, max_enum } => cmd_verify(&common, max_enum, out),
        Command::Sweep { config, out: path, format } => cmd_sweep(&config, path.as_deref(), format, out),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Reads a scenario; a bare system document is accepted as a scenario with defaults.
pub fn load_scenario(path: &Path) -> anyhow::Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str::<ScenarioConfig>(&text) {
        Ok(config) => Ok(config),
        Err(scenario_err) => match serde_json::from_str::<SystemSpec>(&text) {
            Ok(system) => Ok(ScenarioConfig::new(system)),
            Err(_) => Err(scenario_err).with_context(|| format!("parsing {}", path.display())),
        },
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn bound_name(kind: BoundKind) -> &'static str {
    match kind {
        BoundKind::SigmaSenderLarger => "sigma_1",
        BoundKind::SigmaReceiverLarger => "sigma_2",
        BoundKind::Tau1 => "tau_1",
        BoundKind::Tau2 => "tau_2",
    }
}

fn print_bound(out: &mut dyn Write, report: &BoundReport) -> std::io::Result<()> {
    writeln!(
        out,
        "{} = {} (q={} r={}; {})",
        bound_name(report.kind),
        report.value,
        report.q,
        report.r,
        report.side_condition
    )
}

fn ensure_valid(system: &SystemSpec) -> anyhow::Result<()> {
    let violations = validate_system(system);
    if !violations.is_empty() {
        bail!("invalid system: {}", violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "));
    }
    Ok(())
}

fn cmd_bounds(args: &CommonArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let config = load_scenario(&args.config)?;
    let system = &config.system;
    let mut reports = vec![bounds::sigma(system)?];
    print_bound(out, &reports[0])?;
    if system.signing.has_replica_signing() {
        let tau = bounds::tau(system)?;
        print_bound(out, &tau)?;
        reports.push(tau);
    }
    if let Some(path) = &args.out {
        write_json(path, &reports)?;
    }
    Ok(EXIT_OK)
}

/// The protocol a command runs: the CLI flag, else the config, else automatic selection.
fn resolve_choice(args: &CommonArgs, config: &ScenarioConfig) -> anyhow::Result<ProtocolChoice> {
    let system = &config.system;
    let mut choice = if args.protocol != "auto" {
        let kind: ProtocolKind = args.protocol.parse().map_err(anyhow::Error::msg)?;
        let flavor = kind.fixed_flavor().unwrap_or_else(|| preferred_flavor(system.failure_model, system.signing));
        ProtocolChoice::for_system(kind, flavor, &system.view())?
    } else if let Some(choice) = config.protocol {
        choice
    } else {
        bounds::select_protocol(system)?
    };
    if args.compact_certs {
        choice.compact_certs = true;
    }
    if let Some(mutation) = &args.mutation {
        choice.mutation = Some(mutation.parse::<Mutation>().map_err(anyhow::Error::msg)?);
    }
    crate::protocols::plan(&system.view(), &choice)?;
    Ok(choice)
}

fn schedules(args: &CommonArgs, config: &ScenarioConfig) -> Vec<Schedule> {
    match args.seed {
        Some(seed) => vec![Schedule::Seeded(seed)],
        None if config.seeds.is_empty() => vec![Schedule::Fifo],
        None => config.seeds.iter().map(|&s| Schedule::Seeded(s)).collect(),
    }
}

fn scripted_trace(config_path: &Path, path: &Path) -> anyhow::Result<AdversaryTrace> {
    let resolved = if path.is_relative() {
        config_path.parent().unwrap_or(Path::new(".")).join(path)
    } else {
        path.to_path_buf()
    };
    read_json(&resolved)
}

fn cmd_run(args: &CommonArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let config = load_scenario(&args.config)?;
    ensure_valid(&config.system)?;
    let choice = resolve_choice(args, &config)?;
    let trace = match &config.adversary {
        AdversarySpec::None => AdversaryTrace::passive(&config.system),
        AdversarySpec::Scripted(path) => scripted_trace(&args.config, path)?,
        AdversarySpec::Exhaustive => bail!("an exhaustive adversary needs the verify command"),
    };
    let mut transcripts = Vec::new();
    for schedule in schedules(args, &config) {
        transcripts.push(sim::run(&config.system, &choice, &config.value, &trace, &schedule)?);
    }
    let first = &transcripts[0];
    let held = transcripts.iter().all(|t| t.properties.all());
    let all = |f: fn(&sim::Properties) -> bool| transcripts.iter().all(|t| f(&t.properties));
    writeln!(out, "protocol={}", first.protocol)?;
    writeln!(
        out,
        "msgs={} receipt={} agreement={} confirmation={}",
        first.metrics.inter_cluster_msgs,
        all(|p| p.receipt),
        all(|p| p.agreement),
        all(|p| p.confirmation)
    )?;
    if let Some(path) = &args.out {
        write_json(path, first)?;
    }
    Ok(if held { EXIT_OK } else { EXIT_VIOLATION })
}

fn cmd_verify(args: &CommonArgs, max_enum: usize, out: &mut dyn Write) -> anyhow::Result<i32> {
    let config = load_scenario(&args.config)?;
    ensure_valid(&config.system)?;
    let (n1, n2) = (config.system.c1.n, config.system.c2.n);
    if n1 > max_enum || n2 > max_enum {
        bail!("cluster sizes {n1} and {n2} exceed --max-enum {max_enum}");
    }
    let choice = resolve_choice(args, &config)?;
    let seeds = match args.seed {
        Some(seed) => vec![seed],
        None if config.seeds.is_empty() => CampaignConfig::default().seeds,
        None => config.seeds.clone(),
    };
    let report = match &config.adversary {
        AdversarySpec::Scripted(path) => {
            let trace = scripted_trace(&args.config, path)?;
            let mut report = sim::CampaignReport { placements: 1, traces: 1, ..Default::default() };
            for &seed in &seeds {
                let schedule = Schedule::Seeded(seed);
                let t = sim::run(&config.system, &choice, &config.value, &trace, &schedule)?;
                report.runs += 1;
                report.seeds_used.insert(seed);
                if !t.properties.all() {
                    report.counterexample =
                        Some(sim::Counterexample { protocol: t.protocol, trace: trace.clone(), schedule, properties: t.properties });
                    break;
                }
            }
            report
        }
        AdversarySpec::None | AdversarySpec::Exhaustive => {
            let campaign = CampaignConfig { seeds, seeds_per_trace: None, budget: config.budget.unwrap_or_default() };
            sim::verify(&config.system, &choice, &config.value, &campaign)?
        }
    };
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    match &report.counterexample {
        None => {
            writeln!(out, "verified {} runs ({} placements, {} traces) for {}", report.runs, report.placements, report.traces, choice.label())?;
            Ok(EXIT_OK)
        }
        Some(counterexample) => {
            writeln!(out, "counterexample after {} runs:", report.runs)?;
            writeln!(out, "{}", serde_json::to_string(counterexample)?)?;
            Ok(EXIT_VIOLATION)
        }
    }
}

fn cmd_sweep(config: &Path, path: Option<&Path>, format: Format, out: &mut dyn Write) -> anyhow::Result<i32> {
    let grid: SweepGrid = read_json(config)?;
    let rows = sim::sweep(&grid);
    let mut buffer = Vec::new();
    match format {
        Format::Csv => sim::write_sweep_csv(&rows, &mut buffer)?,
        Format::Jsonl => sim::write_sweep_jsonl(&rows, &mut buffer)?,
    }
    match path {
        Some(path) => fs::write(path, &buffer).with_context(|| format!("writing {}", path.display()))?,
        None => out.write_all(&buffer)?,
    }
    let failed = rows.iter().filter(|r| r.error.is_some() || !(r.receipt && r.agreement && r.confirmation)).count();
    Ok(if failed == 0 { EXIT_OK } else { EXIT_VIOLATION })
}
