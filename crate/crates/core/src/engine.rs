//! Slotted simulation loop and its statistics.
//!
//! Slot order: observe `(S(t), q(t))`, decide, serve every queue, hand each
//! queue's departures to the action's transfers in listed order (leftovers exit
//! at sink queues), add exogenous packets, then insert each queue's arrivals in
//! ascending id order. Packets forwarded in slot `t` can be served downstream
//! from slot `t + 1`, and every queue follows `q(t+1) = max[q - mu, 0] + A`.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{self, ControlError};
use crate::model::{ChainSampler, Scenario};
use crate::queueing::{BandAccumulator, BandReport, Discipline, Packet, PacketIds, QueueBuffer, QueueError};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("instability suspected: total backlog {backlog} exceeds {ceiling} at slot {slot}")]
    Unstable { slot: u64, backlog: u64, ceiling: u64 },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("reports are not comparable: {0}")]
    Mismatch(String),
}

/// Default deviation band `2 [ln V]^2`.
pub fn default_band_margin(v: f64) -> f64 {
    2.0 * v.ln().powi(2)
}

pub fn default_warmup(horizon: u64) -> u64 {
    (horizon / 10).min(10_000)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub v: f64,
    pub discipline: Discipline,
    pub horizon: u64,
    pub seed: u64,
    /// Defaults to `min(10^4, horizon / 10)`.
    pub warmup: Option<u64>,
    /// Defaults to `2 [ln V]^2`.
    pub band_margin: Option<f64>,
    /// Attractor used for the deviation fraction and delay bands.
    pub gamma_star: Option<Vec<f64>>,
    /// Keep the post-warmup backlog trace.
    pub record_trace: bool,
    /// Keep one record per packet visit to a queue.
    pub record_packets: bool,
    /// Defaults to `10^6 · r` packets.
    pub ceiling: Option<u64>,
}

impl RunConfig {
    pub fn new(v: f64, discipline: Discipline, horizon: u64, seed: u64) -> Self {
        Self {
            v,
            discipline,
            horizon,
            seed,
            warmup: None,
            band_margin: None,
            gamma_star: None,
            record_trace: false,
            record_packets: false,
            ceiling: None,
        }
    }

    pub fn warmup(&self) -> u64 {
        self.warmup.unwrap_or_else(|| default_warmup(self.horizon))
    }

    pub fn band_margin(&self) -> f64 {
        self.band_margin.unwrap_or_else(|| default_band_margin(self.v))
    }
}

/// Fixed-bin integer histogram with exact percentiles.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Histogram {
    counts: Vec<u64>,
    total: u64,
    sum: u128,
}

impl Histogram {
    pub fn add(&mut self, x: u64) {
        let i = x as usize;
        if i >= self.counts.len() {
            self.counts.resize(i + 1, 0);
        }
        self.counts[i] += 1;
        self.total += 1;
        self.sum += x as u128;
    }

    pub fn count(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn mean(&self) -> Option<f64> {
        (self.total > 0).then(|| self.sum as f64 / self.total as f64)
    }

    /// Nearest-rank quantile: smallest `x` with `P(X <= x) >= p`.
    pub fn quantile(&self, p: f64) -> Option<u64> {
        if self.total == 0 {
            return None;
        }
        let rank = ((p * self.total as f64).ceil() as u64).max(1);
        let mut seen = 0;
        for (x, c) in self.counts.iter().enumerate() {
            seen += c;
            if seen >= rank {
                return Some(x as u64);
            }
        }
        Some(self.counts.len() as u64 - 1)
    }

    /// Fraction of samples strictly below `a`.
    pub fn fraction_below(&self, a: u64) -> Option<f64> {
        (self.total > 0).then(|| {
            let below: u64 = self.counts.iter().take(a as usize).sum();
            below as f64 / self.total as f64
        })
    }

    pub fn stats(&self) -> DelayStats {
        DelayStats {
            count: self.total,
            mean: self.mean(),
            p50: self.quantile(0.5),
            p90: self.quantile(0.9),
            p99: self.quantile(0.99),
            below_20: self.fraction_below(20),
            below_100: self.fraction_below(100),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub count: u64,
    pub mean: Option<f64>,
    pub p50: Option<u64>,
    pub p90: Option<u64>,
    pub p99: Option<u64>,
    pub below_20: Option<f64>,
    pub below_100: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub v: f64,
    pub discipline: Discipline,
    pub seed: u64,
    pub horizon: u64,
    pub warmup: u64,
    pub avg_cost: f64,
    pub avg_backlog: f64,
    pub avg_queue_backlog: Vec<f64>,
    pub injected: u64,
    pub delivered: u64,
    pub undelivered: u64,
    pub dropped: u64,
    pub delay_mean: Option<f64>,
    pub delay_p50: Option<u64>,
    pub delay_p90: Option<u64>,
    pub delay_p99: Option<u64>,
    /// End-to-end delay summary, including the fractions below 20 and 100 slots.
    pub delay: DelayStats,
    /// Hop delay of non-null packets at each queue.
    pub per_queue_delay: Vec<DelayStats>,
    pub band_margin: f64,
    pub deviation_fraction: Option<f64>,
    /// Per queue, per backlog level: number of post-warmup slots.
    pub backlog_histogram: Vec<Vec<u64>>,
    /// Per queue delay band around the attractor.
    pub band_reports: Vec<Option<BandReport>>,
}

/// Post-warmup backlog vectors with the state and action of each slot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BacklogTrace {
    pub queue_count: usize,
    pub start_slot: u64,
    /// Row-major, `queue_count` entries per slot.
    pub backlog: Vec<f64>,
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl BacklogTrace {
    pub fn from_rows(queue_count: usize, rows: &[Vec<f64>]) -> Self {
        Self {
            queue_count,
            start_slot: 0,
            backlog: rows.iter().flatten().copied().collect(),
            states: Vec::new(),
            actions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.backlog.len().checked_div(self.queue_count).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.backlog[i * self.queue_count..(i + 1) * self.queue_count]
    }

    /// `max_j |q_j(t) - gamma_j|` for each slot.
    pub fn deviations(&self, gamma: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.row(i).iter().zip(gamma).map(|(q, g)| (q - g).abs()).fold(0.0, f64::max))
            .collect()
    }
}

/// One packet's visit to one queue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub packet_id: u64,
    pub queue_id: usize,
    pub enqueue_slot: u64,
    pub dequeue_slot: Option<u64>,
    pub entry_backlog: u64,
    pub is_null: bool,
    pub discarded: bool,
    /// Set on the visit that ends with a non-null packet leaving the network.
    pub end_to_end_delay: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub trace: Option<BacklogTrace>,
    pub packets: Option<Vec<PacketRecord>>,
}

pub fn run(scn: &Scenario, config: &RunConfig) -> Result<RunReport, EngineError> {
    run_with_traces(scn, config).map(|o| o.report)
}

fn check_config(scn: &Scenario, config: &RunConfig) -> Result<(), EngineError> {
    if !(config.v >= 1.0) || !config.v.is_finite() {
        return Err(EngineError::Config(format!("V must be at least 1, got {}", config.v)));
    }
    if config.horizon == 0 || config.warmup() >= config.horizon {
        return Err(EngineError::Config(format!(
            "warmup {} must be below horizon {}",
            config.warmup(),
            config.horizon
        )));
    }
    if let Some(g) = &config.gamma_star {
        if g.len() != scn.queue_count() {
            return Err(EngineError::Config(format!("gamma_star has {} entries, expected {}", g.len(), scn.queue_count())));
        }
    }
    if !(config.band_margin() >= 0.0) {
        return Err(EngineError::Config("band margin must be nonnegative".into()));
    }
    if let Discipline::FloatingLifo { d_max: 0 } = config.discipline {
        return Err(EngineError::Config("floating queue needs d_max >= 1".into()));
    }
    Ok(())
}

pub fn run_with_traces(scn: &Scenario, config: &RunConfig) -> Result<RunOutput, EngineError> {
    check_config(scn, config)?;
    let r = scn.queue_count();
    let warmup = config.warmup();
    let ceiling = config.ceiling.unwrap_or(1_000_000 * r as u64);
    let margin = config.band_margin();
    let is_sink: Vec<bool> = (0..r).map(|j| scn.spec().sink_queues.contains(&j)).collect();

    let sampler = ChainSampler::new(&scn.spec().chain);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ids = PacketIds::new();
    let mut buffers: Vec<QueueBuffer> = (0..r).map(|_| QueueBuffer::new(config.discipline)).collect();
    let mut bands: Vec<Option<BandAccumulator>> = match &config.gamma_star {
        Some(g) => g
            .iter()
            .map(|&gj| BandAccumulator::new((gj - margin).max(0.0), gj + margin).map(Some))
            .collect::<Result<_, _>>()?,
        None => vec![None; r],
    };

    let mut trace = config.record_trace.then(|| BacklogTrace {
        queue_count: r,
        start_slot: warmup,
        ..Default::default()
    });
    let mut packets: Option<Vec<PacketRecord>> = config.record_packets.then(Vec::new);
    let mut open_visit: HashMap<u64, usize> = HashMap::new();
    let mut visits: Vec<Vec<Option<usize>>> = vec![Vec::new(); r];

    let mut q = vec![0.0; r];
    let mut departures: Vec<Vec<Packet>> = vec![Vec::new(); r];
    let mut arrivals: Vec<Vec<Packet>> = vec![Vec::new(); r];
    let mut e2e = Histogram::default();
    let mut hop: Vec<Histogram> = vec![Histogram::default(); r];
    let mut level_hist: Vec<Vec<u64>> = vec![Vec::new(); r];
    let mut band_arrivals = vec![0u64; r];
    let (mut cost_sum, mut backlog_sum) = (0.0, 0.0);
    let mut queue_sum = vec![0.0; r];
    let mut deviating = 0u64;
    let (mut injected, mut delivered, mut dropped) = (0u64, 0u64, 0u64);

    let mut state = 0usize;
    for t in 0..config.horizon {
        let mut total = 0;
        for (qj, b) in q.iter_mut().zip(&buffers) {
            let level = b.backlog_level();
            total += level;
            *qj = level as f64;
        }
        if total > ceiling {
            return Err(EngineError::Unstable { slot: t, backlog: total, ceiling });
        }
        let decision = controller::decide(scn, state, &q, config.v)?;
        let k = decision.action_index;
        let row = scn.row(state, k);
        let measuring = t >= warmup;

        if measuring {
            cost_sum += row.cost;
            backlog_sum += total as f64;
            for j in 0..r {
                queue_sum[j] += q[j];
                let lvl = q[j] as usize;
                if lvl >= level_hist[j].len() {
                    level_hist[j].resize(lvl + 1, 0);
                }
                level_hist[j][lvl] += 1;
            }
            if let Some(g) = &config.gamma_star {
                if q.iter().zip(g).any(|(a, b)| (a - b).abs() > margin) {
                    deviating += 1;
                }
            }
            if let Some(tr) = trace.as_mut() {
                tr.backlog.extend_from_slice(&q);
                tr.states.push(state);
                tr.actions.push(k);
            }
        }

        // serve
        for j in 0..r {
            departures[j].clear();
            buffers[j].serve_into(row.services[j] as u64, &mut ids, t, &mut departures[j]);
            visits[j].clear();
            for p in &departures[j] {
                if let Some(recs) = packets.as_mut() {
                    let visit = open_visit.remove(&p.id);
                    if let Some(i) = visit {
                        recs[i].dequeue_slot = Some(t);
                    }
                    visits[j].push(visit);
                }
                if p.is_null || p.hop_enqueue_slot < warmup {
                    continue;
                }
                let d = t - p.hop_enqueue_slot;
                hop[j].add(d);
                if let Some(acc) = bands[j].as_mut() {
                    acc.record_departure(p.entry_backlog as f64, d);
                }
            }
        }

        // route
        for a in arrivals.iter_mut() {
            a.clear();
        }
        for j in 0..r {
            let mut cursor = 0;
            for tr in row.transfers.iter().filter(|tr| tr.from == j) {
                let end = cursor + tr.count as usize;
                arrivals[tr.to].extend_from_slice(&departures[j][cursor..end]);
                cursor = end;
            }
            debug_assert!(is_sink[j] || cursor == departures[j].len());
            for (i, p) in departures[j].iter().enumerate().skip(cursor) {
                if p.is_null {
                    continue;
                }
                delivered += 1;
                let delay = t - p.birth_slot;
                if p.birth_slot >= warmup {
                    e2e.add(delay);
                }
                if let (Some(recs), Some(Some(v))) = (packets.as_mut(), visits[j].get(i)) {
                    recs[*v].end_to_end_delay = Some(delay);
                }
            }
        }
        for e in &row.exogenous {
            for _ in 0..e.count {
                arrivals[e.queue].push(Packet::new(ids.mint(), t));
                injected += 1;
            }
        }

        // insert
        for j in 0..r {
            if arrivals[j].is_empty() {
                continue;
            }
            let mut batch = std::mem::take(&mut arrivals[j]);
            batch.sort_by_key(|p| p.id);
            for p in batch.drain(..) {
                let id = p.id;
                let is_null = p.is_null;
                let discarded = buffers[j].push(p, t);
                let entry = buffers[j].data().back().map(|b| b.entry_backlog);
                let entry_backlog = match &discarded {
                    Some(d) => d.entry_backlog,
                    None => entry.unwrap_or(0),
                };
                if measuring {
                    band_arrivals[j] += 1;
                    if let Some(acc) = bands[j].as_mut() {
                        acc.record_arrival(entry_backlog as f64);
                    }
                }
                if discarded.is_some() && !is_null {
                    dropped += 1;
                }
                if let Some(recs) = packets.as_mut() {
                    if discarded.is_none() {
                        open_visit.insert(id, recs.len());
                    }
                    recs.push(PacketRecord {
                        packet_id: id,
                        queue_id: j,
                        enqueue_slot: t,
                        dequeue_slot: None,
                        entry_backlog,
                        is_null,
                        discarded: discarded.is_some(),
                        end_to_end_delay: None,
                    });
                }
            }
            arrivals[j] = batch;
        }

        state = sampler.next(state, &mut rng);
    }

    let undelivered: u64 = buffers.iter().map(|b| b.data().iter().filter(|p| !p.is_null).count() as u64).sum();
    let slots = (config.horizon - warmup) as f64;
    let delay = e2e.stats();
    let mut band_reports = Vec::with_capacity(r);
    for j in 0..r {
        band_reports.push(match &bands[j] {
            Some(acc) if band_arrivals[j] > 0 => Some(acc.finish(scn.delta_max(), band_arrivals[j] as f64 / slots)?),
            _ => None,
        });
    }
    let report = RunReport {
        scenario: scn.name().to_string(),
        v: config.v,
        discipline: config.discipline,
        seed: config.seed,
        horizon: config.horizon,
        warmup,
        avg_cost: cost_sum / slots,
        avg_backlog: backlog_sum / slots,
        avg_queue_backlog: queue_sum.iter().map(|s| s / slots).collect(),
        injected,
        delivered,
        undelivered,
        dropped,
        delay_mean: delay.mean,
        delay_p50: delay.p50,
        delay_p90: delay.p90,
        delay_p99: delay.p99,
        delay,
        per_queue_delay: hop.iter().map(Histogram::stats).collect(),
        band_margin: margin,
        deviation_fraction: config.gamma_star.as_ref().map(|_| deviating as f64 / slots),
        backlog_histogram: level_hist,
        band_reports,
    };
    Ok(RunOutput { report, trace, packets })
}

/// Fraction of trace slots where some queue is more than `band` from `gamma_star`.
pub fn deviation_fraction(trace: &BacklogTrace, gamma_star: &[f64], band: f64) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    let n = trace.deviations(gamma_star).iter().filter(|d| **d > band).count();
    n as f64 / trace.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractionFit {
    pub d_hat: f64,
    pub k_hat: f64,
    /// Least-squares slope of `ln P(dev > d + k m)` against `m`; `-inf` when
    /// the trace never leaves the smallest band.
    pub decay_slope: f64,
    /// `(m, tail fraction)` at the chosen pair.
    pub points: Vec<(f64, f64)>,
}

/// Minimum post-warmup trace length accepted by [`estimate_attraction`].
pub const MIN_ATTRACTION_TRACE: usize = 100_000;

/// Fits the tail `P(max_j |q_j - gamma_j| > D + K m)` of the trace.
///
/// Each `(D, K)` pair with at least three nonzero tail points is scored by the
/// squared error of `ln P = a - m`; the pair with the smallest error is kept
/// and its free least-squares slope is reported.
pub fn estimate_attraction(
    trace: &BacklogTrace,
    gamma_star: &[f64],
    d_grid: &[f64],
    k_grid: &[f64],
    m_points: &[f64],
) -> Result<AttractionFit, EngineError> {
    if trace.len() < MIN_ATTRACTION_TRACE {
        return Err(EngineError::InsufficientData(format!(
            "trace has {} slots, need at least {MIN_ATTRACTION_TRACE}",
            trace.len()
        )));
    }
    if d_grid.is_empty() || k_grid.is_empty() || m_points.len() < 3 {
        return Err(EngineError::InsufficientData("grids must be nonempty with at least 3 m points".into()));
    }
    let mut dev = trace.deviations(gamma_star);
    dev.sort_by(f64::total_cmp);
    let n = dev.len() as f64;
    let tail = |x: f64| (dev.len() - dev.partition_point(|d| *d <= x)) as f64 / n;

    let mut best: Option<(f64, f64, f64, Vec<(f64, f64)>)> = None;
    let mut any_tail = false;
    for &d in d_grid {
        for &k in k_grid {
            let pts: Vec<(f64, f64)> = m_points.iter().map(|&m| (m, tail(d + k * m))).collect();
            let pos: Vec<(f64, f64)> = pts.iter().copied().filter(|(_, p)| *p > 0.0).collect();
            any_tail |= !pos.is_empty();
            if pos.len() < 3 {
                continue;
            }
            let a = pos.iter().map(|(m, p)| p.ln() + m).sum::<f64>() / pos.len() as f64;
            let sse: f64 = pos.iter().map(|(m, p)| (p.ln() - a + m).powi(2)).sum();
            if best.as_ref().is_none_or(|b| sse < b.2) {
                best = Some((d, k, sse, pts));
            }
        }
    }
    match best {
        Some((d, k, _, pts)) => {
            let pos: Vec<(f64, f64)> = pts.iter().filter(|(_, p)| *p > 0.0).map(|(m, p)| (*m, p.ln())).collect();
            let (slope, _, _) = linear_fit(&pos);
            Ok(AttractionFit { d_hat: d, k_hat: k, decay_slope: slope, points: pts })
        }
        None if !any_tail => Ok(AttractionFit {
            d_hat: d_grid[0],
            k_hat: k_grid[0],
            decay_slope: f64::NEG_INFINITY,
            points: m_points.iter().map(|&m| (m, 0.0)).collect(),
        }),
        None => Err(EngineError::InsufficientData(
            "no (D, K) pair has three nonzero tail points; widen the grid".into(),
        )),
    }
}

/// Ordinary least squares `y = slope x + intercept`; returns `(slope, intercept, r2)`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub discipline: Discipline,
    pub delivered: u64,
    pub mean: Option<f64>,
    pub p50: Option<u64>,
    pub p90: Option<u64>,
    pub p99: Option<u64>,
    pub below_20: Option<f64>,
    pub below_100: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub lifo: ComparisonRow,
    pub fifo: ComparisonRow,
    /// FIFO mean delay over LIFO mean delay.
    pub ratio: Option<f64>,
}

fn comparison_row(r: &RunReport) -> ComparisonRow {
    ComparisonRow {
        discipline: r.discipline,
        delivered: r.delivered,
        mean: r.delay.mean,
        p50: r.delay.p50,
        p90: r.delay.p90,
        p99: r.delay.p99,
        below_20: r.delay.below_20,
        below_100: r.delay.below_100,
    }
}

pub fn delay_comparison(report_lifo: &RunReport, report_fifo: &RunReport) -> Result<ComparisonTable, EngineError> {
    let (a, b) = (report_lifo, report_fifo);
    if a.scenario != b.scenario || a.v != b.v || a.horizon != b.horizon || a.seed != b.seed {
        return Err(EngineError::Mismatch(format!(
            "({}, V={}, T={}, seed={}) vs ({}, V={}, T={}, seed={})",
            a.scenario, a.v, a.horizon, a.seed, b.scenario, b.v, b.horizon, b.seed
        )));
    }
    let ratio = match (b.delay.mean, a.delay.mean) {
        (Some(f), Some(l)) if l > 0.0 => Some(f / l),
        _ => None,
    };
    Ok(ComparisonTable { lifo: comparison_row(a), fifo: comparison_row(b), ratio })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_percentiles_are_nearest_rank() {
        let mut h = Histogram::default();
        for x in 1..=10 {
            h.add(x);
        }
        assert_eq!(h.mean(), Some(5.5));
        assert_eq!(h.quantile(0.5), Some(5));
        assert_eq!(h.quantile(0.9), Some(9));
        assert_eq!(h.quantile(0.99), Some(10));
        assert_eq!(h.fraction_below(4), Some(0.3));
        assert_eq!(Histogram::default().stats().mean, None);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|x| (x as f64, 3.0 * x as f64 - 2.0)).collect();
        let (s, b, r2) = linear_fit(&pts);
        assert!((s - 3.0).abs() < 1e-12 && (b + 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deviation_fraction_extremes() {
        let trace = BacklogTrace::from_rows(1, &[vec![1.0], vec![3.0], vec![2.0]]);
        assert_eq!(deviation_fraction(&trace, &[2.0], f64::INFINITY), 0.0);
        assert!((deviation_fraction(&trace, &[2.0], 0.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_trace_gives_sentinel_slope() {
        let trace = BacklogTrace::from_rows(2, &vec![vec![5.0, 7.0]; MIN_ATTRACTION_TRACE]);
        let fit = estimate_attraction(&trace, &[5.0, 7.0], &[0.0, 1.0], &[1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(fit.decay_slope, f64::NEG_INFINITY);
        let short = BacklogTrace::from_rows(1, &vec![vec![0.0]; 10]);
        assert!(matches!(
            estimate_attraction(&short, &[0.0], &[0.0], &[1.0], &[0.0, 1.0, 2.0]),
            Err(EngineError::InsufficientData(_))
        ));
    }
}
