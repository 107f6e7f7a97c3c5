use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use bpsim_core::dualopt::{self, DualError, DualOptions, DualSolution};
use bpsim_core::engine::{self, RunConfig};
use bpsim_core::experiment::{self, AttractionGrid, ExperimentPlan};
use bpsim_core::format::{self, LoadedScenario};
use bpsim_core::model::Scenario;
use bpsim_core::queueing::{self, Discipline, HopRecord, LittleCheckInput};

const EXIT_VALIDATION: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_RUN_ABORT: u8 = 4;

/// Slotted Backpressure simulator.
#[derive(Parser, Debug)]
#[command(name = "sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one (V, discipline, seed) run and print its report as JSON.
    Run(RunArgs),
    /// Sweep V, disciplines and seeds; write sweep.csv, per-run JSON and a summary.
    Sweep(SweepArgs),
    /// Solve the dual problem at one V and print the attractor as JSON.
    Dual(DualArgs),
    /// Solve the slackness LP and print the margin and certificate as JSON.
    Slackness(ScenarioArg),
    /// Fit the attraction tail of a backlog trace against a dual solution.
    Attraction(AttractionArgs),
    /// Check the delay bound |B| / lambda_min on one queue of a packet trace.
    LittleCheck(LittleArgs),
}

#[derive(Args, Debug)]
struct ScenarioArg {
    /// Scenario file, or a builtin name (tandem, multihop7, multihop7_overload, aux_demo).
    #[arg(long)]
    scenario: String,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Cost weight V, at least 1.
    #[arg(long)]
    v: f64,
    /// fifo, lifo or floating:<d_max>.
    #[arg(long, default_value = "lifo")]
    discipline: Discipline,
    /// Number of slots T.
    #[arg(long, default_value_t = 1_000_000)]
    horizon: u64,
    /// RNG seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory for report.json and, with --emit-traces, packets.csv and backlog.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write packets.csv and backlog.csv.
    #[arg(long)]
    emit_traces: bool,
    /// Skip the dual solve; deviation and band statistics are then omitted.
    #[arg(long)]
    no_dual: bool,
    /// Abort when total backlog exceeds this; defaults to 1e6 per queue.
    #[arg(long)]
    ceiling: Option<u64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Comma-separated V values.
    #[arg(long, value_delimiter = ',', default_value = "20,50,100,200,500")]
    v: Vec<f64>,
    /// Comma-separated disciplines.
    #[arg(long, value_delimiter = ',', default_value = "lifo,fifo")]
    discipline: Vec<Discipline>,
    /// Number of slots T.
    #[arg(long, default_value_t = 1_000_000)]
    horizon: u64,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-run traces under traces/.
    #[arg(long)]
    emit_traces: bool,
}

#[derive(Args, Debug)]
struct DualArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Cost weight V, at least 1.
    #[arg(long)]
    v: f64,
    /// Also write the JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AttractionArgs {
    /// backlog.csv written by `run --emit-traces`.
    #[arg(long)]
    trace: PathBuf,
    /// JSON written by `dual`, or any JSON object with a gamma_star array.
    #[arg(long)]
    dual: PathBuf,
    /// Comma-separated offsets D; defaults to 0,2,5,10,20,40.
    #[arg(long, value_delimiter = ',')]
    d_grid: Option<Vec<f64>>,
    /// Comma-separated step sizes K; defaults to 1,2,3,5,8,12,20.
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<f64>>,
    /// Largest tail index m; points are 0..=m.
    #[arg(long, default_value_t = 10)]
    m_max: u32,
}

#[derive(Args, Debug)]
struct LittleArgs {
    /// packets.csv written by `run --emit-traces`.
    #[arg(long)]
    packets: PathBuf,
    /// 0-based queue index.
    #[arg(long)]
    queue: usize,
    /// Inclusive 1-based buffer locations, e.g. 1,10.
    #[arg(long, value_delimiter = ',')]
    band: Vec<u64>,
    /// Lower bound on the in-band arrival rate.
    #[arg(long)]
    lambda_min: f64,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: EXIT_VALIDATION, error }
    }
}

type CmdResult = Result<(), Failure>;

fn load(arg: &ScenarioArg) -> Result<LoadedScenario, Failure> {
    format::load_scenario(&arg.scenario).map_err(|e| Failure::new(EXIT_VALIDATION, e))
}

fn print_json(value: &impl serde::Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).context("serializing output")?;
    println!("{text}");
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn dual_failure(e: DualError) -> Failure {
    match e {
        DualError::Infeasible { .. } => Failure::new(EXIT_INFEASIBLE, e),
        other => Failure::new(EXIT_VALIDATION, other),
    }
}

fn solve(scn: &Scenario, v: f64) -> Result<DualSolution, Failure> {
    dualopt::solve_dual(scn, v, &DualOptions::default()).map_err(dual_failure)
}

fn cmd_run(a: RunArgs) -> CmdResult {
    let scn = load(&a.scenario)?.scenario;
    let mut cfg = RunConfig::new(a.v, a.discipline, a.horizon, a.seed);
    if !a.no_dual {
        match dualopt::solve_dual(&scn, a.v, &DualOptions::default()) {
            Ok(d) => cfg.gamma_star = Some(d.gamma_star),
            Err(e) => log::warn!("dual solve failed, deviation statistics omitted: {e}"),
        }
    }
    if a.emit_traces && a.out.is_none() {
        return Err(anyhow!("--emit-traces needs --out").into());
    }
    cfg.record_trace = a.emit_traces;
    cfg.record_packets = a.emit_traces;
    cfg.ceiling = a.ceiling;
    let out = match engine::run_with_traces(&scn, &cfg) {
        Ok(o) => o,
        Err(engine::EngineError::Config(msg)) => return Err(anyhow!("invalid run configuration: {msg}").into()),
        Err(e) => return Err(Failure::new(EXIT_RUN_ABORT, e)),
    };
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_file(&dir.join("report.json"), serde_json::to_string_pretty(&out.report).context("serializing report")?)?;
        if let Some(p) = &out.packets {
            experiment::write_packets_csv(&dir.join("packets.csv"), p).map_err(anyhow::Error::from)?;
        }
        if let Some(t) = &out.trace {
            experiment::write_backlog_csv(&dir.join("backlog.csv"), t).map_err(anyhow::Error::from)?;
        }
    }
    print_json(&out.report)
}

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    let loaded = load(&a.scenario)?;
    let plan = ExperimentPlan {
        scenario: a.scenario.scenario.clone(),
        v_list: a.v,
        disciplines: a.discipline,
        horizon: a.horizon,
        seeds: a.seed,
        out: Some(a.out.clone()),
        emit_traces: a.emit_traces,
    };
    plan.validate().map_err(anyhow::Error::from)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_file(&a.out.join("plan.json"), serde_json::to_string_pretty(&plan).context("serializing plan")?)?;
    let result = experiment::run_sweep(&loaded.scenario, &plan).map_err(anyhow::Error::from)?;
    experiment::write_outputs(&result, &a.out).map_err(anyhow::Error::from)?;
    print!("{}", experiment::summary_table(&result));
    match result.failures() {
        0 => Ok(()),
        n => Err(Failure::new(EXIT_RUN_ABORT, anyhow!("{n} run(s) aborted; see summary.txt"))),
    }
}

fn cmd_dual(a: DualArgs) -> CmdResult {
    let scn = load(&a.scenario)?.scenario;
    let eta = match dualopt::check_slackness(&scn) {
        Ok(c) => c.eta,
        Err(DualError::Infeasible { eta }) => {
            println!("{}", json!({ "eta": eta, "feasible": false }));
            return Err(Failure::new(EXIT_INFEASIBLE, DualError::Infeasible { eta }));
        }
        Err(e) => return Err(dual_failure(e)),
    };
    let sol = solve(&scn, a.v)?;
    let mut value = serde_json::to_value(&sol).context("serializing dual solution")?;
    value["eta"] = json!(eta);
    value["v"] = json!(a.v);
    if let Some(path) = &a.out {
        write_file(path, serde_json::to_string_pretty(&value).context("serializing dual solution")?)?;
    }
    print_json(&value)?;
    if sol.converged {
        Ok(())
    } else {
        Err(Failure::new(EXIT_NOT_CONVERGED, anyhow!("dual solver did not converge (residual {:.3e})", sol.residual)))
    }
}

fn cmd_slackness(a: ScenarioArg) -> CmdResult {
    let scn = load(&a)?.scenario;
    match dualopt::check_slackness(&scn) {
        Ok(cert) => print_json(&json!({ "eta": cert.eta, "feasible": true, "policy": cert.policy })),
        Err(DualError::Infeasible { eta }) => {
            println!("{}", json!({ "eta": eta, "feasible": false }));
            Err(Failure::new(EXIT_INFEASIBLE, DualError::Infeasible { eta }))
        }
        Err(e) => Err(dual_failure(e)),
    }
}

fn cmd_attraction(a: AttractionArgs) -> CmdResult {
    let trace = experiment::read_backlog_csv(&a.trace).map_err(anyhow::Error::from)?;
    let text = fs::read_to_string(&a.dual).with_context(|| format!("reading {}", a.dual.display()))?;
    let dual: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.dual.display()))?;
    let gamma: Vec<f64> = serde_json::from_value(dual["gamma_star"].clone()).context("dual JSON needs a gamma_star array")?;
    if gamma.len() != trace.queue_count {
        return Err(anyhow!("gamma_star has {} entries but the trace has {} queues", gamma.len(), trace.queue_count).into());
    }
    let grid = AttractionGrid::default();
    let d = a.d_grid.unwrap_or(grid.d);
    let k = a.k_grid.unwrap_or(grid.k);
    let m: Vec<f64> = (0..=a.m_max).map(f64::from).collect();
    let fit = engine::estimate_attraction(&trace, &gamma, &d, &k, &m).map_err(|e| Failure::new(EXIT_VALIDATION, e))?;
    print_json(&fit)
}

fn cmd_little(a: LittleArgs) -> CmdResult {
    let [lo, hi] = a.band[..] else {
        return Err(anyhow!("--band takes two locations, e.g. --band 1,10").into());
    };
    let packets = experiment::read_packets_csv(&a.packets).map_err(anyhow::Error::from)?;
    let hops: Vec<HopRecord> = packets
        .iter()
        .filter(|p| p.queue_id == a.queue && !p.is_null)
        .map(|p| HopRecord { enqueue_slot: p.enqueue_slot, dequeue_slot: p.dequeue_slot, entry_backlog: p.entry_backlog })
        .collect();
    let horizon = packets.iter().map(|p| p.dequeue_slot.unwrap_or(p.enqueue_slot) + 1).max().unwrap_or(0);
    let input = LittleCheckInput::from_hops(&hops, (lo, hi), horizon, a.lambda_min);
    let check = queueing::little_bound_check(&input).map_err(|e| Failure::new(EXIT_VALIDATION, e))?;
    print_json(&check)
}

/// Error chain joined by ": ", skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Dual(a) => cmd_dual(a),
        Command::Slackness(a) => cmd_slackness(a),
        Command::Attraction(a) => cmd_attraction(a),
        Command::LittleCheck(a) => cmd_little(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}
