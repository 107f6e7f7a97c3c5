//! Packet-level queue buffers.
//!
//! Every buffer follows `q(t+1) = max[q(t) - mu(t), 0] + A(t)` exactly. When
//! the allocated service exceeds the backlog, null packets are minted for the
//! shortfall (idle fill) and travel downstream like ordinary packets; they are
//! never counted in delay statistics.
//!
//! Under LIFO a packet keeps the same depth-from-bottom for its whole stay,
//! so `entry_backlog + 1` is the buffer location it occupies. The Little's
//! theorem check and the delay-band report rely on that.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QueueError {
    #[error("no departures; Theorem 1 inapplicable")]
    NoDepartures,
    #[error("lambda_min must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("band [{0}, {1}] is not well ordered")]
    BadBand(f64, f64),
    #[error("unknown discipline '{0}' (expected fifo, lifo or floating:<d_max>)")]
    UnknownDiscipline(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    Fifo,
    Lifo,
    /// Finite LIFO data queue of `d_max` packets atop a virtual counter.
    FloatingLifo { d_max: usize },
}

impl fmt::Display for Discipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Discipline::Fifo => write!(f, "fifo"),
            Discipline::Lifo => write!(f, "lifo"),
            Discipline::FloatingLifo { d_max } => write!(f, "floating:{d_max}"),
        }
    }
}

impl FromStr for Discipline {
    type Err = QueueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "fifo" => Ok(Discipline::Fifo),
            "lifo" => Ok(Discipline::Lifo),
            _ => lower
                .strip_prefix("floating:")
                .and_then(|d| d.parse::<usize>().ok())
                .filter(|&d| d > 0)
                .map(|d_max| Discipline::FloatingLifo { d_max })
                .ok_or_else(|| QueueError::UnknownDiscipline(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    /// Slot the packet entered the network.
    pub birth_slot: u64,
    /// Slot the packet entered its current queue.
    pub hop_enqueue_slot: u64,
    pub is_null: bool,
    /// Backlog observed when the packet was pushed into its current queue.
    pub entry_backlog: u64,
}

impl Packet {
    pub fn new(id: u64, birth_slot: u64) -> Self {
        Self { id, birth_slot, hop_enqueue_slot: birth_slot, is_null: false, entry_backlog: 0 }
    }

    pub fn null(id: u64, now: u64) -> Self {
        Self { id, birth_slot: now, hop_enqueue_slot: now, is_null: true, entry_backlog: 0 }
    }
}

/// Monotone packet id source shared by everything in one run.
#[derive(Clone, Debug, Default)]
pub struct PacketIds {
    next: u64,
}

impl PacketIds {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mint(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }

    pub fn minted(&self) -> u64 {
        self.next
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlotOutcome {
    /// Exactly `service` packets, null ones included, in service order.
    pub departed: Vec<Packet>,
    /// `now - hop_enqueue_slot` for each non-null departure.
    pub delays: Vec<u64>,
    /// Arrivals discarded by a full floating data queue.
    pub discarded: Vec<Packet>,
}

#[derive(Clone, Debug)]
pub struct QueueBuffer {
    discipline: Discipline,
    data: VecDeque<Packet>,
    virtual_count: u64,
    drops: u64,
    arrivals_total: u64,
    backlog_departures: u64,
}

impl QueueBuffer {
    pub fn new(discipline: Discipline) -> Self {
        Self {
            discipline,
            data: VecDeque::new(),
            virtual_count: 0,
            drops: 0,
            arrivals_total: 0,
            backlog_departures: 0,
        }
    }

    pub fn discipline(&self) -> Discipline {
        self.discipline
    }

    /// `|data| + virtual_count`; this is q_j(t).
    pub fn backlog_level(&self) -> u64 {
        self.data.len() as u64 + self.virtual_count
    }

    pub fn data(&self) -> &VecDeque<Packet> {
        &self.data
    }

    pub fn virtual_count(&self) -> u64 {
        self.virtual_count
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    /// Cumulative packets offered to this buffer (kept or discarded).
    pub fn arrivals_total(&self) -> u64 {
        self.arrivals_total
    }

    /// Cumulative services that reduced the backlog (data pops and virtual underflows).
    pub fn backlog_departures(&self) -> u64 {
        self.backlog_departures
    }

    /// Removes `service` packets into `out`: real data in discipline order,
    /// then virtual underflow nulls, then idle-fill nulls.
    pub fn serve_into(&mut self, service: u64, ids: &mut PacketIds, now: u64, out: &mut Vec<Packet>) {
        let take = service.min(self.backlog_level());
        for _ in 0..take {
            let popped = match self.discipline {
                Discipline::Fifo => self.data.pop_front(),
                Discipline::Lifo | Discipline::FloatingLifo { .. } => self.data.pop_back(),
            };
            match popped {
                Some(p) => out.push(p),
                None => {
                    debug_assert!(self.virtual_count > 0);
                    self.virtual_count -= 1;
                    out.push(Packet::null(ids.mint(), now));
                }
            }
        }
        self.backlog_departures += take;
        for _ in take..service {
            out.push(Packet::null(ids.mint(), now));
        }
    }

    /// Pushes one arrival. Returns it back if a full floating data queue discards it.
    pub fn push(&mut self, mut packet: Packet, now: u64) -> Option<Packet> {
        self.arrivals_total += 1;
        packet.hop_enqueue_slot = now;
        packet.entry_backlog = self.backlog_level();
        if let Discipline::FloatingLifo { d_max } = self.discipline {
            if self.data.len() >= d_max {
                self.virtual_count += 1;
                self.drops += 1;
                return Some(packet);
            }
        }
        self.data.push_back(packet);
        None
    }

    /// Inserts same-slot arrivals in ascending id order; returns discards.
    pub fn insert(&mut self, mut arrivals: Vec<Packet>, now: u64) -> Vec<Packet> {
        arrivals.sort_by_key(|p| p.id);
        arrivals.into_iter().filter_map(|p| self.push(p, now)).collect()
    }

    /// One slot: serve `service`, then insert `arrivals`.
    pub fn apply_slot(&mut self, service: u64, arrivals: Vec<Packet>, now: u64, ids: &mut PacketIds) -> SlotOutcome {
        let mut departed = Vec::with_capacity(service as usize);
        self.serve_into(service, ids, now, &mut departed);
        let delays = departed
            .iter()
            .filter(|p| !p.is_null)
            .map(|p| now - p.hop_enqueue_slot)
            .collect();
        let discarded = self.insert(arrivals, now);
        SlotOutcome { departed, delays, discarded }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LittleCheckInput {
    /// Inclusive range of 1-based buffer locations (the set B).
    pub buffer_slot_band: (u64, u64),
    /// N(t): cumulative arrivals into B, one sample per slot.
    pub arrival_count_trace: Vec<u64>,
    /// W_i for each job that departed from B.
    pub departure_delays: Vec<u64>,
    pub lambda_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LittleCheck {
    pub w_bar: f64,
    pub bound: f64,
    pub holds: bool,
    /// N(T) / T from the trace, for comparison against `lambda_min`.
    pub empirical_rate: Option<f64>,
}

/// A packet's stay in one queue, as needed for the Little's-theorem check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HopRecord {
    pub enqueue_slot: u64,
    pub dequeue_slot: Option<u64>,
    pub entry_backlog: u64,
}

impl LittleCheckInput {
    /// Builds the input from per-hop records of one queue over `[0, horizon)`.
    pub fn from_hops(hops: &[HopRecord], band: (u64, u64), horizon: u64, lambda_min: f64) -> Self {
        let in_band = |h: &&HopRecord| (band.0..=band.1).contains(&(h.entry_backlog + 1));
        let mut per_slot = vec![0u64; horizon as usize];
        let mut delays = Vec::new();
        for h in hops.iter().filter(in_band) {
            if let Some(slot) = per_slot.get_mut(h.enqueue_slot as usize) {
                *slot += 1;
            }
            if let Some(d) = h.dequeue_slot {
                delays.push(d - h.enqueue_slot);
            }
        }
        let mut acc = 0;
        let arrival_count_trace = per_slot
            .into_iter()
            .map(|n| {
                acc += n;
                acc
            })
            .collect();
        Self { buffer_slot_band: band, arrival_count_trace, departure_delays: delays, lambda_min }
    }
}

/// Average delay of departed jobs against `|B| / lambda_min`.
pub fn little_bound_check(input: &LittleCheckInput) -> Result<LittleCheck, QueueError> {
    if !(input.lambda_min > 0.0) {
        return Err(QueueError::NonPositiveRate(input.lambda_min));
    }
    if input.departure_delays.is_empty() {
        return Err(QueueError::NoDepartures);
    }
    let (lo, hi) = input.buffer_slot_band;
    if hi < lo {
        return Err(QueueError::BadBand(lo as f64, hi as f64));
    }
    let size = (hi - lo + 1) as f64;
    let w_bar = input.departure_delays.iter().map(|&w| w as f64).sum::<f64>() / input.departure_delays.len() as f64;
    let bound = size / input.lambda_min;
    let empirical_rate = input
        .arrival_count_trace
        .last()
        .map(|&n| n as f64 / input.arrival_count_trace.len() as f64);
    Ok(LittleCheck { w_bar, bound, holds: w_bar <= bound + 1e-9, empirical_rate })
}

/// One packet's visit to a queue for the delay-band report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRecord {
    pub entry_backlog: f64,
    pub delay: u64,
    pub departed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub q_low: f64,
    pub q_high: f64,
    /// lambda_j: all packets entering the queue.
    pub lambda: f64,
    /// Rate of packets that entered inside the band and departed.
    pub lambda_tilde: f64,
    pub mean_delay: Option<f64>,
    pub outside_fraction: f64,
    /// `(q_high - q_low + delta_max) / lambda_tilde`.
    pub w_bound: Option<f64>,
    pub total: u64,
    pub in_band_departed: u64,
    /// Set when no packet entered in band and departed.
    pub flagged: bool,
}

/// Streaming form of [`delay_band_report`], used inside the engine.
#[derive(Clone, Debug, PartialEq)]
pub struct BandAccumulator {
    q_low: f64,
    q_high: f64,
    total: u64,
    outside: u64,
    in_band_departed: u64,
    in_band_delay: u64,
}

impl BandAccumulator {
    pub fn new(q_low: f64, q_high: f64) -> Result<Self, QueueError> {
        if !(q_low <= q_high) || q_low < 0.0 {
            return Err(QueueError::BadBand(q_low, q_high));
        }
        Ok(Self { q_low, q_high, total: 0, outside: 0, in_band_departed: 0, in_band_delay: 0 })
    }

    pub fn contains(&self, entry_backlog: f64) -> bool {
        entry_backlog >= self.q_low && entry_backlog <= self.q_high
    }

    pub fn record_arrival(&mut self, entry_backlog: f64) {
        self.total += 1;
        if !self.contains(entry_backlog) {
            self.outside += 1;
        }
    }

    pub fn record_departure(&mut self, entry_backlog: f64, delay: u64) {
        if self.contains(entry_backlog) {
            self.in_band_departed += 1;
            self.in_band_delay += delay;
        }
    }

    pub fn finish(&self, delta_max: f64, observed_rate: f64) -> Result<BandReport, QueueError> {
        if !(observed_rate > 0.0) {
            return Err(QueueError::NonPositiveRate(observed_rate));
        }
        let total = self.total.max(1) as f64;
        let lambda_tilde = observed_rate * self.in_band_departed as f64 / total;
        let flagged = self.in_band_departed == 0;
        let mean_delay = (!flagged).then(|| self.in_band_delay as f64 / self.in_band_departed as f64);
        let w_bound = (!flagged).then(|| (self.q_high - self.q_low + delta_max) / lambda_tilde);
        Ok(BandReport {
            q_low: self.q_low,
            q_high: self.q_high,
            lambda: observed_rate,
            lambda_tilde,
            mean_delay,
            outside_fraction: self.outside as f64 / total,
            w_bound,
            total: self.total,
            in_band_departed: self.in_band_departed,
            flagged,
        })
    }
}

/// Rate and delay of packets that entered while the backlog was inside
/// `[q_low, q_high]` and departed, with the matching LIFO delay bound.
pub fn delay_band_report(
    records: &[BandRecord],
    band: (f64, f64),
    delta_max: f64,
    observed_rate: f64,
) -> Result<BandReport, QueueError> {
    let mut acc = BandAccumulator::new(band.0, band.1)?;
    for rec in records {
        acc.record_arrival(rec.entry_backlog);
        if rec.departed {
            acc.record_departure(rec.entry_backlog, rec.delay);
        }
    }
    acc.finish(delta_max, observed_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packets(ids: &mut PacketIds, n: usize, now: u64) -> Vec<Packet> {
        (0..n).map(|_| Packet::new(ids.mint(), now)).collect()
    }

    #[test]
    fn fifo_follows_queue_update() {
        let mut ids = PacketIds::new();
        let mut q = QueueBuffer::new(Discipline::Fifo);
        q.insert(packets(&mut ids, 5, 0), 0);
        let out = q.apply_slot(3, packets(&mut ids, 2, 1), 1, &mut ids);
        assert_eq!(q.backlog_level(), 4);
        assert_eq!(out.departed.iter().map(|p| p.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(out.delays, vec![1, 1, 1]);
    }

    #[test]
    fn lifo_serves_highest_id_of_a_batch_first() {
        let mut ids = PacketIds::new();
        let mut q = QueueBuffer::new(Discipline::Lifo);
        q.insert(packets(&mut ids, 3, 0), 0);
        let out = q.apply_slot(1, Vec::new(), 1, &mut ids);
        assert_eq!(out.departed[0].id, 2);
    }

    #[test]
    fn idle_fill_mints_nulls() {
        let mut ids = PacketIds::new();
        let mut q = QueueBuffer::new(Discipline::Lifo);
        q.insert(packets(&mut ids, 1, 0), 0);
        let out = q.apply_slot(3, Vec::new(), 2, &mut ids);
        assert_eq!(out.departed.len(), 3);
        assert_eq!(out.departed.iter().filter(|p| p.is_null).count(), 2);
        assert_eq!(out.delays, vec![2]);
        assert_eq!(q.backlog_level(), 0);
    }

    #[test]
    fn floating_full_data_queue_discards_arrival() {
        let mut ids = PacketIds::new();
        let mut q = QueueBuffer::new(Discipline::FloatingLifo { d_max: 2 });
        q.insert(packets(&mut ids, 2, 0), 0);
        let out = q.apply_slot(0, packets(&mut ids, 1, 1), 1, &mut ids);
        assert_eq!(q.drops(), 1);
        assert_eq!(q.virtual_count(), 1);
        assert_eq!(q.data().len(), 2);
        assert_eq!(out.discarded.len(), 1);
        assert_eq!(out.discarded[0].id, 2);
        assert_eq!(q.backlog_level(), 3);
    }

    #[test]
    fn floating_underflow_emits_nulls_from_virtual_backlog() {
        let mut ids = PacketIds::new();
        let mut q = QueueBuffer::new(Discipline::FloatingLifo { d_max: 1 });
        q.insert(packets(&mut ids, 3, 0), 0);
        assert_eq!((q.data().len(), q.virtual_count()), (1, 2));
        let out = q.apply_slot(2, Vec::new(), 1, &mut ids);
        assert!(!out.departed[0].is_null);
        assert!(out.departed[1].is_null);
        assert_eq!((q.data().len(), q.virtual_count()), (0, 1));
        assert_eq!(q.arrivals_total(), q.backlog_level() + q.backlog_departures());
    }

    #[test]
    fn discipline_round_trips_through_text() {
        for d in [Discipline::Fifo, Discipline::Lifo, Discipline::FloatingLifo { d_max: 12 }] {
            assert_eq!(d.to_string().parse::<Discipline>().unwrap(), d);
        }
        assert!("floating:0".parse::<Discipline>().is_err());
        assert!("priority".parse::<Discipline>().is_err());
    }

    #[test]
    fn little_check_single_job() {
        let input = LittleCheckInput {
            buffer_slot_band: (1, 1),
            arrival_count_trace: vec![1, 1],
            departure_delays: vec![1],
            lambda_min: 1e-6,
        };
        let res = little_bound_check(&input).unwrap();
        assert_eq!(res.w_bar, 1.0);
        assert!(res.bound >= 1e6 - 1e-3);
        assert!(res.holds);
    }

    #[test]
    fn little_check_needs_departures() {
        let input = LittleCheckInput {
            buffer_slot_band: (1, 1),
            arrival_count_trace: vec![],
            departure_delays: vec![],
            lambda_min: 1.0,
        };
        assert_eq!(little_bound_check(&input), Err(QueueError::NoDepartures));
    }

    #[test]
    fn band_covering_everything_keeps_full_rate() {
        let records: Vec<BandRecord> = (0..10)
            .map(|i| BandRecord { entry_backlog: i as f64, delay: 3, departed: true })
            .collect();
        let rep = delay_band_report(&records, (0.0, 100.0), 2.0, 0.5).unwrap();
        assert_eq!(rep.lambda_tilde, 0.5);
        assert_eq!(rep.mean_delay, Some(3.0));
        assert_eq!(rep.outside_fraction, 0.0);
    }

    #[test]
    fn empty_band_is_flagged() {
        let records = vec![BandRecord { entry_backlog: 50.0, delay: 3, departed: true }];
        let rep = delay_band_report(&records, (0.0, 10.0), 2.0, 1.0).unwrap();
        assert!(rep.flagged);
        assert_eq!(rep.lambda_tilde, 0.0);
        assert_eq!(rep.mean_delay, None);
        assert!(delay_band_report(&records, (5.0, 1.0), 2.0, 1.0).is_err());
    }
}
