//! Command-line surface. `main` only parses arguments and maps errors to
//! exit codes; everything else lives here so it can be driven from tests.

use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use slicesim_core::domain::{NetworkState, SliceConfig};
use slicesim_core::perception::parse_request_lines;
use slicesim_core::planning::{Agent, IntentCatalog, Outcome, Planner, WorkflowConfig};
use slicesim_core::sim::{compare, gen_scenario, ChannelMode, Policy, RunConfig, RunOutput, Simulation, StepRecord};
use slicesim_core::tools::ChannelModel;

use crate::catalog::load_catalog;
use crate::llm::{Fixture, LiveClient, LiveConfig, LlmPlanner, Recorder, RuleRecorder, Transport};
use crate::output::{self, emit_csv, load_csv, render_traces, write_action_log, write_file};
use crate::plot::{render_svg, render_text, snapshots};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Io(_) => ExitCode::from(3),
        }
    }
}

impl From<output::OutputError> for CliError {
    fn from(e: output::OutputError) -> Self {
        match e {
            output::OutputError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "slicesim", version, about = "URLLC/eMBB slice management simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Agent,
    Traditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    Ideal,
    Zfbf,
}

#[derive(clap::Args, Clone, Debug)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value = "agent")]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 120)]
    pub users: usize,
    #[arg(long, default_value_t = 450.0)]
    pub area: f64,
    #[arg(long, value_enum, default_value = "ideal")]
    pub channel: ChannelArg,
    /// TOML intent catalog; the built-in catalog when absent.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub max_reflect: u32,
    #[arg(long)]
    pub out: PathBuf,
    /// off, replay:<fixture>, or live
    #[arg(long, default_value = "off")]
    pub llm: String,
    /// Write every planner exchange to this fixture file.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one seeded scenario and write CSV, plots, action log and traces.
    Run {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Checkpoint comparison of two result CSVs from the same scenario.
    Compare { a: PathBuf, b: PathBuf },
    /// Run a range of seeds (`a..b`, inclusive) and write per-seed CSVs plus a mean summary.
    Batch {
        #[arg(long)]
        seeds: String,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Feed a request file through the agent and print each plan trace.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        max_reflect: u32,
        #[arg(long, default_value_t = 450.0)]
        area: f64,
    },
}

pub fn parse_seeds(s: &str) -> Result<RangeInclusive<u64>, CliError> {
    let bad = || CliError::Config(format!("seeds must look like a..b, got {s:?}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LlmMode {
    Off,
    Replay(PathBuf),
    Live,
}

pub fn parse_llm(s: &str) -> Result<LlmMode, CliError> {
    match s {
        "off" => Ok(LlmMode::Off),
        "live" => Ok(LlmMode::Live),
        _ => s
            .strip_prefix("replay:")
            .filter(|p| !p.is_empty())
            .map(|p| LlmMode::Replay(PathBuf::from(p)))
            .ok_or_else(|| CliError::Config(format!("--llm must be off, live or replay:<fixture>, got {s:?}"))),
    }
}

fn load_slices_and_catalog(path: Option<&Path>) -> Result<(IntentCatalog, Vec<SliceConfig>), CliError> {
    match path {
        None => Ok((IntentCatalog::default_catalog(), SliceConfig::defaults())),
        Some(p) => {
            let loaded = load_catalog(p).map_err(|e| match e {
                crate::catalog::CatalogError::Io { .. } => CliError::Io(e.to_string()),
                other => config_err(other),
            })?;
            Ok((loaded.catalog, loaded.slices))
        }
    }
}

pub fn run_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let (catalog, slices) = load_slices_and_catalog(args.catalog.as_deref())?;
    Ok(RunConfig {
        policy: match args.policy {
            PolicyArg::Agent => Policy::Agent,
            PolicyArg::Traditional => Policy::Traditional,
        },
        channel: match args.channel {
            ChannelArg::Ideal => ChannelMode::Ideal,
            ChannelArg::Zfbf => ChannelMode::Zfbf(ChannelModel::default()),
        },
        workflow: WorkflowConfig {
            max_reflect: args.max_reflect,
            ..WorkflowConfig::default()
        },
        slices,
        catalog,
    })
}

fn build_planner(args: &RunArgs, record: Option<&Path>) -> Result<Option<Box<dyn Planner>>, CliError> {
    let recorder = record
        .map(Recorder::to_file)
        .transpose()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let planner: Option<Box<dyn Planner>> = match parse_llm(&args.llm)? {
        LlmMode::Off => recorder.map(|r| Box::new(RuleRecorder::new(r)) as Box<dyn Planner>),
        LlmMode::Replay(path) => {
            let fixture = Fixture::load(&path).map_err(config_err)?;
            let p = LlmPlanner::new(Transport::Replay(fixture));
            Some(Box::new(match recorder {
                Some(r) => p.recording(r),
                None => p,
            }))
        }
        LlmMode::Live => {
            let cfg = LiveConfig::from_env().map_err(config_err)?;
            let client = LiveClient::new(cfg).map_err(config_err)?;
            let p = LlmPlanner::new(Transport::Live(client));
            Some(Box::new(match recorder {
                Some(r) => p.recording(r),
                None => p,
            }))
        }
    };
    Ok(planner)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Runs one seed and writes its artifacts under `dir` with file stem `stem`.
fn run_one(seed: u64, args: &RunArgs, dir: &Path, stem: &str, record: Option<&Path>) -> Result<RunOutput, CliError> {
    let config = run_config(args)?;
    let scenario = gen_scenario(seed, args.users, args.area, &config.catalog).map_err(config_err)?;
    let mut sim = Simulation::new(config.clone()).map_err(config_err)?;
    if config.policy == Policy::Agent {
        if let Some(p) = build_planner(args, record)? {
            sim = sim.with_planner(p);
        }
    } else if args.llm != "off" || record.is_some() {
        return Err(CliError::Config("--llm and --record need --policy agent".into()));
    }
    let out = sim.run(&scenario);

    emit_csv(&out.log.steps, &dir.join(format!("{stem}.csv")))?;
    let title = format!("{} seed {}", config.policy.as_str(), seed);
    let snaps = snapshots(&out.log.steps, &config.slices);
    write_file(
        &dir.join(format!("{stem}_plot.txt")),
        render_text(&snaps, &title).as_bytes(),
    )?;
    write_file(
        &dir.join(format!("{stem}_plot.svg")),
        render_svg(&snaps, &title).as_bytes(),
    )?;
    if let Some(memory) = &out.memory {
        let mut buf = Vec::new();
        write_action_log(memory, &mut buf)?;
        write_file(&dir.join(format!("{stem}_actions.csv")), &buf)?;
        write_file(
            &dir.join(format!("{stem}_trace.tsv")),
            render_traces(&out.traces).as_bytes(),
        )?;
    }
    Ok(out)
}

fn checkpoint_table(steps: &[StepRecord]) -> String {
    let mut s = String::from("arrivals  embb  urllc  served  aggregate_occ\n");
    for c in slicesim_core::sim::checkpoints(steps) {
        let _ = writeln!(
            s,
            "{:>8}  {:>4}  {:>5}  {:>6}  {:>13.4}",
            c.arrivals,
            c.embb_users,
            c.urllc_users,
            c.served(),
            c.aggregate_occ
        );
    }
    s
}

pub fn compare_table(a: &[StepRecord], b: &[StepRecord]) -> Result<String, CliError> {
    let rows = compare(a, b).map_err(config_err)?;
    let mut s = String::from("arrivals  served_a  served_b  d_served  d_embb  d_urllc  occ_a   occ_b   d_occ\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>8}  {:>8}  {:>8}  {:>8}  {:>6}  {:>7}  {:.4}  {:.4}  {:+.4}",
            r.arrivals,
            r.a.served(),
            r.b.served(),
            r.served_delta(),
            r.embb_delta(),
            r.urllc_delta(),
            r.a.aggregate_occ,
            r.b.aggregate_occ,
            r.occupancy_delta()
        );
    }
    Ok(s)
}

fn seed_stem(policy: PolicyArg, seed: u64) -> String {
    let p = match policy {
        PolicyArg::Agent => "agent",
        PolicyArg::Traditional => "traditional",
    };
    format!("{p}_seed{seed}")
}

pub fn execute(cli: Cli, stdout: &mut dyn std::io::Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    match cli.command {
        Command::Run { seed, args } => {
            create_dir(&args.out)?;
            let stem = seed_stem(args.policy, seed);
            let out = run_one(seed, &args, &args.out, &stem, args.record.as_deref())?;
            write!(stdout, "{}", checkpoint_table(&out.log.steps)).map_err(io)?;
            writeln!(stdout, "wrote {}", args.out.join(format!("{stem}.csv")).display()).map_err(io)?;
        }
        Command::Compare { a, b } => {
            let a = load_csv(&a)?;
            let b = load_csv(&b)?;
            write!(stdout, "{}", compare_table(&a, &b)?).map_err(io)?;
        }
        Command::Batch { seeds, args } => {
            let range = parse_seeds(&seeds)?;
            if args.record.is_some() {
                return Err(CliError::Config("--record is only supported by run".into()));
            }
            create_dir(&args.out)?;
            let mut sums: Vec<(usize, f64, f64, f64)> = Vec::new();
            let n = (range.end() - range.start() + 1) as f64;
            for seed in range {
                let out = run_one(seed, &args, &args.out, &seed_stem(args.policy, seed), None)?;
                for (i, c) in out.log.summary.iter().enumerate() {
                    if sums.len() <= i {
                        sums.push((c.arrivals, 0.0, 0.0, 0.0));
                    }
                    sums[i].1 += f64::from(c.embb_users);
                    sums[i].2 += f64::from(c.urllc_users);
                    sums[i].3 += c.aggregate_occ;
                }
            }
            let mut s = String::from("arrivals,mean_embb_users,mean_urllc_users,mean_served,mean_aggregate_occ\n");
            for (arr, e, u, o) in sums {
                let _ = writeln!(s, "{arr},{:.4},{:.4},{:.4},{:.4}", e / n, u / n, (e + u) / n, o / n);
            }
            write_file(&args.out.join("batch_summary.csv"), s.as_bytes())?;
            write!(stdout, "{s}").map_err(io)?;
        }
        Command::Replay {
            trace,
            catalog,
            max_reflect,
            area,
        } => {
            let text =
                std::fs::read_to_string(&trace).map_err(|e| CliError::Io(format!("{}: {e}", trace.display())))?;
            let requests = parse_request_lines(&text, area)
                .map_err(|(line, e)| CliError::Config(format!("{}:{line}: {e}", trace.display())))?;
            let (catalog, slices) = load_slices_and_catalog(catalog.as_deref())?;
            catalog.validate(&slices).map_err(config_err)?;
            let mut state = NetworkState::new(&slices).map_err(config_err)?;
            let mut agent = Agent::new(
                catalog,
                WorkflowConfig {
                    max_reflect,
                    ..WorkflowConfig::default()
                },
            );
            for (i, req) in requests.iter().enumerate() {
                state.arrival_index = i as u64 + 1;
                let result = agent.run_workflow(req, &mut state);
                if let Outcome::Rejected { reason } = &result.outcome {
                    state.block(req.user, reason.clone());
                }
                writeln!(stdout, "# {req}").map_err(io)?;
                for step in &result.trace.steps {
                    writeln!(stdout, "{}\t{}\t{}", step.state, step.input, step.output).map_err(io)?;
                }
                let verdict = match &result.outcome {
                    Outcome::Admitted { decision, handovers } => format!(
                        "admitted {} {} Mb/s {} RBs, {} handovers",
                        decision.slice,
                        decision.rate,
                        decision.rbs,
                        handovers.len()
                    ),
                    Outcome::Rejected { reason } => format!("blocked {reason}"),
                };
                writeln!(stdout, "= {verdict}").map_err(io)?;
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli, stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(stderr, "slicesim: {e}");
            e.exit_code()
        }
    }
}
