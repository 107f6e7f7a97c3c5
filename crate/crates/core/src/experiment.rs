//! V sweeps over disciplines and seeds, and their file outputs.
//!
//! Runs execute in parallel; results are collected in plan order and every
//! file is written from the calling thread, except per-run traces which are
//! streamed by the worker that produced them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dualopt::{self, DualOptions, DualSolution};
use crate::engine::{self, AttractionFit, BacklogTrace, PacketRecord, RunConfig, RunReport, MIN_ATTRACTION_TRACE};
use crate::model::Scenario;
use crate::queueing::Discipline;

pub const CSV_COLUMNS: [&str; 11] = [
    "V",
    "discipline",
    "seed",
    "avg_cost",
    "avg_backlog",
    "delay_mean",
    "delay_p50",
    "delay_p90",
    "deviation_fraction",
    "delivered",
    "dropped",
];

pub const MIN_HORIZON: u64 = 1_000;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub scenario: String,
    pub v_list: Vec<f64>,
    pub disciplines: Vec<Discipline>,
    pub horizon: u64,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub emit_traces: bool,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.v_list.is_empty() {
            return Err(ExperimentError::Plan("v_list is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::Plan("seeds is empty".into()));
        }
        if self.disciplines.is_empty() {
            return Err(ExperimentError::Plan("disciplines is empty".into()));
        }
        if self.horizon < MIN_HORIZON {
            return Err(ExperimentError::Plan(format!("horizon {} is below {MIN_HORIZON}", self.horizon)));
        }
        if let Some(v) = self.v_list.iter().find(|v| !v.is_finite() || **v < 1.0) {
            return Err(ExperimentError::Plan(format!("V = {v} must be finite and >= 1")));
        }
        if self.emit_traces && self.out.is_none() {
            return Err(ExperimentError::Plan("emit_traces needs an output directory".into()));
        }
        Ok(())
    }
}

/// Deviation grid, tail-spacing grid and tail points used for attraction fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractionGrid {
    pub d: Vec<f64>,
    pub k: Vec<f64>,
    pub m: Vec<f64>,
}

impl Default for AttractionGrid {
    fn default() -> Self {
        Self {
            d: vec![0.0, 2.0, 5.0, 10.0, 20.0, 40.0],
            k: vec![1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0],
            m: (0..=10).map(f64::from).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub v: f64,
    pub discipline: Discipline,
    pub seed: u64,
    pub report: Option<RunReport>,
    pub attraction: Option<AttractionFit>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualEntry {
    pub v: f64,
    pub solution: Option<DualSolution>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub scenario: String,
    pub duals: Vec<DualEntry>,
    pub runs: Vec<SweepRun>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn dual(&self, v: f64) -> Option<&DualSolution> {
        self.duals.iter().find(|d| d.v == v).and_then(|d| d.solution.as_ref())
    }

    /// Successful reports for one `(V, discipline)` cell, in seed order.
    pub fn reports(&self, v: f64, discipline: Discipline) -> Vec<&RunReport> {
        self.runs
            .iter()
            .filter(|r| r.v == v && r.discipline == discipline)
            .filter_map(|r| r.report.as_ref())
            .collect()
    }

    pub fn run(&self, v: f64, discipline: Discipline, seed: u64) -> Option<&SweepRun> {
        self.runs.iter().find(|r| r.v == v && r.discipline == discipline && r.seed == seed)
    }

    pub fn v_list(&self) -> Vec<f64> {
        self.duals.iter().map(|d| d.v).collect()
    }

    pub fn disciplines(&self) -> Vec<Discipline> {
        let mut out: Vec<Discipline> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.discipline) {
                out.push(r.discipline);
            }
        }
        out
    }
}

fn run_stem(v: f64, discipline: Discipline, seed: u64) -> String {
    let d = discipline.to_string().replace(':', "");
    format!("V{v}_{d}_s{seed}")
}

/// Runs every `(V, discipline, seed)` cell of the plan.
///
/// The dual is solved once per V and its `gamma_star` feeds the deviation
/// statistics and attraction fit of every run at that V. Failed runs are
/// recorded and the sweep continues.
pub fn run_sweep(scn: &Scenario, plan: &ExperimentPlan) -> Result<SweepResult, ExperimentError> {
    plan.validate()?;
    let trace_dir = match (&plan.out, plan.emit_traces) {
        (Some(out), true) => {
            let dir = out.join("traces");
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            Some(dir)
        }
        _ => None,
    };

    let duals: Vec<DualEntry> = plan
        .v_list
        .par_iter()
        .map(|&v| match dualopt::solve_dual(scn, v, &DualOptions::default()) {
            Ok(s) => DualEntry { v, solution: Some(s), error: None },
            Err(e) => DualEntry { v, solution: None, error: Some(e.to_string()) },
        })
        .collect();

    let mut jobs = Vec::new();
    for (vi, &v) in plan.v_list.iter().enumerate() {
        for &discipline in &plan.disciplines {
            for &seed in &plan.seeds {
                jobs.push((vi, v, discipline, seed));
            }
        }
    }
    let grid = AttractionGrid::default();
    let runs: Vec<SweepRun> = jobs
        .par_iter()
        .map(|&(vi, v, discipline, seed)| {
            let gamma = duals[vi].solution.as_ref().map(|s| s.gamma_star.clone());
            let mut cfg = RunConfig::new(v, discipline, plan.horizon, seed);
            cfg.record_trace = gamma.is_some();
            cfg.record_packets = trace_dir.is_some();
            cfg.gamma_star = gamma;
            single_run(scn, &cfg, &grid, trace_dir.as_deref())
        })
        .collect();

    Ok(SweepResult { scenario: scn.name().to_string(), duals, runs })
}

fn single_run(scn: &Scenario, cfg: &RunConfig, grid: &AttractionGrid, trace_dir: Option<&Path>) -> SweepRun {
    let mut out = SweepRun { v: cfg.v, discipline: cfg.discipline, seed: cfg.seed, report: None, attraction: None, error: None };
    let output = match engine::run_with_traces(scn, cfg) {
        Ok(o) => o,
        Err(e) => {
            log::warn!("run V={} {} seed {} aborted: {e}", cfg.v, cfg.discipline, cfg.seed);
            out.error = Some(e.to_string());
            return out;
        }
    };
    if let (Some(trace), Some(gamma)) = (&output.trace, &cfg.gamma_star) {
        if trace.len() >= MIN_ATTRACTION_TRACE {
            out.attraction = engine::estimate_attraction(trace, gamma, &grid.d, &grid.k, &grid.m).ok();
        }
    }
    if let Some(dir) = trace_dir {
        let stem = run_stem(cfg.v, cfg.discipline, cfg.seed);
        let written = output
            .packets
            .as_deref()
            .map_or(Ok(()), |p| write_packets_csv(&dir.join(format!("{stem}_packets.csv")), p))
            .and_then(|_| {
                output.trace.as_ref().map_or(Ok(()), |t| write_backlog_csv(&dir.join(format!("{stem}_backlog.csv")), t))
            });
        if let Err(e) = written {
            out.error = Some(e.to_string());
        }
    }
    log::info!("run V={} {} seed {} finished", cfg.v, cfg.discipline, cfg.seed);
    out.report = Some(output.report);
    out
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Renders the sweep table with the fixed column set.
pub fn sweep_csv(result: &SweepResult) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in &result.runs {
        let mut row = vec![r.v.to_string(), r.discipline.to_string(), r.seed.to_string()];
        match &r.report {
            Some(rep) => row.extend([
                rep.avg_cost.to_string(),
                rep.avg_backlog.to_string(),
                opt(rep.delay_mean),
                opt(rep.delay_p50),
                opt(rep.delay_p90),
                opt(rep.deviation_fraction),
                rep.delivered.to_string(),
                rep.dropped.to_string(),
            ]),
            None => row.extend(std::iter::repeat_n(String::new(), CSV_COLUMNS.len() - 3)),
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Plan(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Plain-text tables: cost, backlog and deviation versus V, then delays.
pub fn summary_table(result: &SweepResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario {}", result.scenario);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:>8} {:>12} {:>10} {:>10} {:>12} {:>10}", "V", "discipline", "cost", "floor", "backlog", "deviation");
    for v in result.v_list() {
        let floor = result.dual(v).map(|d| format!("{:.4}", d.g_value / v)).unwrap_or_else(|| "-".into());
        for d in result.disciplines() {
            let reps = result.reports(v, d);
            if reps.is_empty() {
                let _ = writeln!(s, "{v:>8} {:>12} {:>10}", d.to_string(), "failed");
                continue;
            }
            let (cost, _) = mean_sd(&reps.iter().map(|r| r.avg_cost).collect::<Vec<_>>());
            let (backlog, _) = mean_sd(&reps.iter().map(|r| r.avg_backlog).collect::<Vec<_>>());
            let devs: Vec<f64> = reps.iter().filter_map(|r| r.deviation_fraction).collect();
            let dev = if devs.is_empty() { "-".into() } else { format!("{:.4}", mean_sd(&devs).0) };
            let _ = writeln!(s, "{v:>8} {:>12} {cost:>10.4} {floor:>10} {backlog:>12.1} {dev:>10}", d.to_string());
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:>8} {:>12} {:>10} {:>8} {:>8} {:>8} {:>10}", "V", "discipline", "delay", "p50", "p90", "p99", "dropped");
    for v in result.v_list() {
        for d in result.disciplines() {
            let reps = result.reports(v, d);
            if reps.is_empty() {
                continue;
            }
            let delays: Vec<f64> = reps.iter().filter_map(|r| r.delay_mean).collect();
            let delay = if delays.is_empty() { "-".into() } else { format!("{:.2}", mean_sd(&delays).0) };
            let first = reps[0];
            let dropped: u64 = reps.iter().map(|r| r.dropped).sum();
            let _ = writeln!(
                s,
                "{v:>8} {:>12} {delay:>10} {:>8} {:>8} {:>8} {dropped:>10}",
                d.to_string(),
                opt(first.delay_p50),
                opt(first.delay_p90),
                opt(first.delay_p99)
            );
        }
    }
    let failed = result.failures();
    if failed > 0 {
        let _ = writeln!(s);
        let _ = writeln!(s, "{failed} run(s) failed");
        for r in result.runs.iter().filter(|r| r.error.is_some()) {
            let _ = writeln!(s, "  V={} {} seed {}: {}", r.v, r.discipline, r.seed, r.error.as_deref().unwrap_or(""));
        }
    }
    s
}

/// Writes `sweep.csv`, `summary.txt`, `duals.json` and one JSON file per run.
pub fn write_outputs(result: &SweepResult, out: &Path) -> Result<(), ExperimentError> {
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir).map_err(io_err(&runs_dir))?;
    let csv_path = out.join("sweep.csv");
    fs::write(&csv_path, sweep_csv(result)?).map_err(io_err(&csv_path))?;
    let summary_path = out.join("summary.txt");
    fs::write(&summary_path, summary_table(result)).map_err(io_err(&summary_path))?;
    let duals_path = out.join("duals.json");
    fs::write(&duals_path, serde_json::to_string_pretty(&result.duals)?).map_err(io_err(&duals_path))?;
    for r in &result.runs {
        let path = runs_dir.join(format!("{}.json", run_stem(r.v, r.discipline, r.seed)));
        fs::write(&path, serde_json::to_string_pretty(r)?).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn write_packets_csv(path: &Path, packets: &[PacketRecord]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["packet_id", "queue_id", "enqueue_slot", "dequeue_slot", "entry_backlog", "is_null", "end_to_end_delay"])?;
    for p in packets {
        w.write_record([
            p.packet_id.to_string(),
            p.queue_id.to_string(),
            p.enqueue_slot.to_string(),
            opt(p.dequeue_slot),
            p.entry_backlog.to_string(),
            p.is_null.to_string(),
            opt(p.end_to_end_delay),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_backlog_csv(path: &Path, trace: &BacklogTrace) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["slot".to_string(), "state".to_string(), "action".to_string()];
    header.extend((0..trace.queue_count).map(|j| format!("q{j}")));
    w.write_record(&header)?;
    for i in 0..trace.len() {
        let mut row = vec![(trace.start_slot + i as u64).to_string(), opt(trace.states.get(i)), opt(trace.actions.get(i))];
        row.extend(trace.row(i).iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads packet records written by [`write_packets_csv`]. The CSV has no
/// discard column, so `discarded` reads back as false.
pub fn read_packets_csv(path: &Path) -> Result<Vec<PacketRecord>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = |msg: String| ExperimentError::Plan(format!("{}: {msg}", path.display()));
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 7 {
            return Err(bad(format!("row {} has {} fields", i + 1, rec.len())));
        }
        let int = |k: usize| rec[k].parse::<u64>().map_err(|e| bad(format!("row {} field {k}: {e}", i + 1)));
        let opt_int = |k: usize| if rec[k].is_empty() { Ok(None) } else { int(k).map(Some) };
        out.push(PacketRecord {
            packet_id: int(0)?,
            queue_id: int(1)? as usize,
            enqueue_slot: int(2)?,
            dequeue_slot: opt_int(3)?,
            entry_backlog: int(4)?,
            is_null: rec[5].parse::<bool>().map_err(|e| bad(format!("row {}: {e}", i + 1)))?,
            discarded: false,
            end_to_end_delay: opt_int(6)?,
        });
    }
    Ok(out)
}

/// Reads a backlog trace written by [`write_backlog_csv`].
pub fn read_backlog_csv(path: &Path) -> Result<BacklogTrace, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let queue_count = headers.iter().filter(|h| h.starts_with('q')).count();
    let bad = |msg: String| ExperimentError::Plan(format!("{}: {msg}", path.display()));
    let mut trace = BacklogTrace { queue_count, ..Default::default() };
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 + queue_count {
            return Err(bad(format!("row {} has {} fields", i + 1, rec.len())));
        }
        let num = |k: usize| rec[k].parse::<f64>().map_err(|e| bad(format!("row {}: {e}", i + 1)));
        if i == 0 {
            trace.start_slot = num(0)? as u64;
        }
        if !rec[1].is_empty() {
            trace.states.push(num(1)? as usize);
        }
        if !rec[2].is_empty() {
            trace.actions.push(num(2)? as usize);
        }
        for k in 0..queue_count {
            trace.backlog.push(num(3 + k)?);
        }
    }
    Ok(trace)
}
