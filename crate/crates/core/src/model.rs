//! Scenario description: the network-state Markov chain, per-state finite
//! action tables (cost, arrivals, services) and their validation.
//!
//! A [`ScenarioSpec`] is plain data as loaded from a file. [`Scenario`] is the
//! validated, immutable form every other module works with: it caches the
//! stationary distribution, flattened `cost` / `net = services - arrivals`
//! tables and, when the scenario declares a per-node factorization, the
//! per-factor partial tables used by the decomposed controller.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Row sums of a transition matrix must be within this of 1.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Fixed-point residual accepted for the stationary distribution.
pub const STATIONARY_RESIDUAL: f64 = 1e-10;
/// Policy distributions must sum to 1 within this.
pub const POLICY_SUM_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("transition matrix is not square: row {row} has {len} entries, expected {expected}")]
    Shape { row: usize, len: usize, expected: usize },
    #[error("chain has {labels} labels but {states} states")]
    Labels { labels: usize, states: usize },
    #[error("chain has no states")]
    Empty,
    #[error("transition row {row} has an invalid entry at column {col}: {value}")]
    BadProbability { row: usize, col: usize, value: f64 },
    #[error("transition row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("chain is reducible: states {states:?} are not mutually reachable with {anchor}")]
    Reducible { anchor: String, states: Vec<String> },
    #[error("chain is periodic with period {period}; cyclic classes {classes:?}")]
    Periodic { period: usize, classes: Vec<Vec<String>> },
    #[error("stationary distribution did not reach a fixed point (residual {residual:e})")]
    Stationary { residual: f64 },
    #[error("scenario has {actions} action lists for {states} chain states")]
    StateCount { actions: usize, states: usize },
    #[error("scenario failed validation: {0}")]
    Invalid(String),
    #[error("policy has {got} state entries, expected {expected}")]
    PolicyShape { got: usize, expected: usize },
    #[error("policy for state {state} has {got} entries, expected {expected}")]
    PolicyRowShape { state: usize, got: usize, expected: usize },
    #[error("policy for state {state} sums to {sum}, expected 1")]
    PolicySum { state: usize, sum: f64 },
    #[error("policy for state {state} has a negative probability")]
    PolicyNegative { state: usize },
}

/// Finite-state network-state process S(t).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub labels: Vec<String>,
    pub transition: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn new(labels: Vec<String>, transition: Vec<Vec<f64>>) -> Self {
        Self { labels, transition }
    }

    /// Chain with generated labels `s0, s1, ...`.
    pub fn unlabeled(transition: Vec<Vec<f64>>) -> Self {
        let labels = (0..transition.len()).map(|i| format!("s{i}")).collect();
        Self { labels, transition }
    }

    pub fn state_count(&self) -> usize {
        self.transition.len()
    }

    fn label(&self, i: usize) -> String {
        self.labels.get(i).cloned().unwrap_or_else(|| format!("s{i}"))
    }

    /// Shape, row-stochasticity, irreducibility and aperiodicity.
    pub fn check(&self) -> Result<(), ModelError> {
        let n = self.state_count();
        if n == 0 {
            return Err(ModelError::Empty);
        }
        if self.labels.len() != n {
            return Err(ModelError::Labels { labels: self.labels.len(), states: n });
        }
        for (row, probs) in self.transition.iter().enumerate() {
            if probs.len() != n {
                return Err(ModelError::Shape { row, len: probs.len(), expected: n });
            }
            for (col, &value) in probs.iter().enumerate() {
                if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                    return Err(ModelError::BadProbability { row, col, value });
                }
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ModelError::RowSum { row, sum });
            }
        }
        self.check_irreducible()?;
        self.check_aperiodic()
    }

    fn successors(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.transition[u]
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(v, _)| v)
    }

    fn check_irreducible(&self) -> Result<(), ModelError> {
        let n = self.state_count();
        let mut forward = vec![false; n];
        let mut backward = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        forward[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in self.successors(u) {
                if !forward[v] {
                    forward[v] = true;
                    queue.push_back(v);
                }
            }
        }
        queue.push_back(0);
        backward[0] = true;
        while let Some(v) = queue.pop_front() {
            for u in 0..n {
                if self.transition[u][v] > 0.0 && !backward[u] {
                    backward[u] = true;
                    queue.push_back(u);
                }
            }
        }
        let offending: Vec<String> = (0..n)
            .filter(|&i| !(forward[i] && backward[i]))
            .map(|i| self.label(i))
            .collect();
        if offending.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Reducible { anchor: self.label(0), states: offending })
        }
    }

    /// Period = gcd over support edges (u, v) of level(u) + 1 - level(v),
    /// with BFS levels from state 0. Requires irreducibility.
    fn check_aperiodic(&self) -> Result<(), ModelError> {
        let n = self.state_count();
        let mut level = vec![usize::MAX; n];
        level[0] = 0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for v in self.successors(u) {
                if level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let mut period = 0usize;
        for u in 0..n {
            for v in self.successors(u) {
                let diff = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
                period = gcd(period, diff);
            }
        }
        if period <= 1 {
            return Ok(());
        }
        let mut classes = vec![Vec::new(); period];
        for (i, &l) in level.iter().enumerate() {
            classes[l % period].push(self.label(i));
        }
        Err(ModelError::Periodic { period, classes })
    }

    /// Stationary distribution by power iteration. Assumes [`check`](Self::check) passed.
    pub fn stationary(&self) -> Result<Vec<f64>, ModelError> {
        let n = self.state_count();
        let mut pi = vec![1.0 / n as f64; n];
        let mut next = vec![0.0; n];
        for _ in 0..1_000_000 {
            self.step_distribution(&pi, &mut next);
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|x| *x /= total);
            let change: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            std::mem::swap(&mut pi, &mut next);
            if change < 1e-14 {
                break;
            }
        }
        self.step_distribution(&pi, &mut next);
        let residual = pi
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual > STATIONARY_RESIDUAL || pi.iter().any(|&p| p <= 0.0) {
            return Err(ModelError::Stationary { residual });
        }
        Ok(pi)
    }

    fn step_distribution(&self, pi: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (row, &mass) in self.transition.iter().zip(pi) {
            if mass == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(row) {
                *o += mass * p;
            }
        }
    }

    /// Kronecker product: the joint chain of two independent chains. The
    /// joint index is `self_index * other.state_count() + other_index`.
    pub fn product(&self, other: &MarkovChain) -> MarkovChain {
        let (n, m) = (self.state_count(), other.state_count());
        let mut labels = Vec::with_capacity(n * m);
        let mut transition = vec![vec![0.0; n * m]; n * m];
        for a in 0..n {
            for b in 0..m {
                labels.push(format!("{},{}", self.labels[a], other.labels[b]));
                let row = &mut transition[a * m + b];
                for c in 0..n {
                    for d in 0..m {
                        row[c * m + d] = self.transition[a][c] * other.transition[b][d];
                    }
                }
            }
        }
        MarkovChain { labels, transition }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Pre-computed cumulative rows for drawing S(t+1) given S(t).
#[derive(Clone, Debug)]
pub struct ChainSampler {
    cumulative: Vec<Vec<f64>>,
    last_positive: Vec<usize>,
}

impl ChainSampler {
    pub fn new(chain: &MarkovChain) -> Self {
        let cumulative = chain
            .transition
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|&p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        let last_positive = chain
            .transition
            .iter()
            .map(|row| row.iter().rposition(|&p| p > 0.0).unwrap_or(0))
            .collect();
        Self { cumulative, last_positive }
    }

    /// One uniform draw per call; index of the first cumulative entry above it.
    pub fn next<R: Rng + ?Sized>(&self, current: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let row = &self.cumulative[current];
        let j = row.partition_point(|&c| c <= u);
        j.min(self.last_positive[current])
    }
}

/// Draws the next network state; identical seeds give identical trajectories.
pub fn sample_next_state<R: Rng + ?Sized>(chain: &MarkovChain, current: usize, rng: &mut R) -> usize {
    ChainSampler::new(chain).next(current, rng)
}

/// Packets moved from one queue's service to another queue's arrivals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: usize,
    pub to: usize,
    pub count: u32,
}

/// Packets entering the network at a queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exogenous {
    pub queue: usize,
    pub count: u32,
}

/// One feasible action: its cost, the arrivals and services it induces, and
/// how those arrivals decompose into transfers and exogenous packets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRow {
    pub label: Option<String>,
    pub cost: f64,
    pub arrivals: Vec<f64>,
    pub services: Vec<f64>,
    pub transfers: Vec<Transfer>,
    pub exogenous: Vec<Exogenous>,
}

impl ActionRow {
    /// Row whose arrivals are all exogenous; fractional arrivals are left
    /// undecomposed and fail routing validation.
    pub fn new(cost: f64, arrivals: Vec<f64>, services: Vec<f64>) -> Self {
        let exogenous = arrivals
            .iter()
            .enumerate()
            .filter(|(_, a)| **a > 0.0 && a.fract() == 0.0)
            .map(|(queue, a)| Exogenous { queue, count: *a as u32 })
            .collect();
        Self { label: None, cost, arrivals, services, transfers: Vec::new(), exogenous }
    }
}

/// The feasible action set of one network state. `factors`, when present,
/// declares that the actions are the mixed-radix product of independent
/// per-node choices (factor 0 most significant).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateActions {
    pub actions: Vec<ActionRow>,
    pub factors: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub chain: MarkovChain,
    pub queue_count: usize,
    pub delta_max: f64,
    pub sink_queues: Vec<usize>,
    pub states: Vec<StateActions>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub stationary: Vec<f64>,
    /// All table entries are integers (packet-level simulation is exact).
    pub integral: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }
}

fn check(name: &'static str, problems: Vec<String>) -> Check {
    Check {
        name,
        passed: problems.is_empty(),
        detail: if problems.is_empty() {
            "ok".to_string()
        } else {
            let mut shown: Vec<String> = problems.iter().take(5).cloned().collect();
            if problems.len() > 5 {
                shown.push(format!("... {} more", problems.len() - 5));
            }
            shown.join("; ")
        },
    }
}

fn is_integer(x: f64) -> bool {
    x.fract() == 0.0 && x.abs() < 1e15
}

impl ScenarioSpec {
    /// Hard errors for chain defects; per-invariant pass/fail for the tables.
    pub fn validate(&self) -> Result<ValidationReport, ModelError> {
        self.chain.check()?;
        let stationary = self.chain.stationary()?;
        if self.states.len() != self.chain.state_count() {
            return Err(ModelError::StateCount {
                actions: self.states.len(),
                states: self.chain.state_count(),
            });
        }
        let r = self.queue_count;
        let mut nonempty = Vec::new();
        let mut shape = Vec::new();
        let mut sign = Vec::new();
        let mut bound = Vec::new();
        let mut routing = Vec::new();
        let mut factors = Vec::new();
        let mut integral = true;

        let mut sinks = Vec::new();
        if r == 0 {
            shape.push("queue_count must be positive".to_string());
        }
        if !(self.delta_max > 0.0 && self.delta_max.is_finite()) {
            bound.push(format!("delta_max {} must be positive", self.delta_max));
        }
        for &q in &self.sink_queues {
            if q >= r {
                sinks.push(format!("sink queue {q} out of range"));
            }
        }

        for (s, state) in self.states.iter().enumerate() {
            if state.actions.is_empty() {
                nonempty.push(format!("state {s} has no actions"));
                continue;
            }
            for (k, row) in state.actions.iter().enumerate() {
                if row.arrivals.len() != r || row.services.len() != r {
                    shape.push(format!("state {s} action {k}: vectors must have length {r}"));
                    continue;
                }
                let entries = std::iter::once(row.cost).chain(row.arrivals.iter().copied()).chain(row.services.iter().copied());
                for x in entries {
                    if !x.is_finite() || x < 0.0 {
                        sign.push(format!("state {s} action {k}: entry {x} must be a nonnegative number"));
                    } else if x > self.delta_max {
                        bound.push(format!("state {s} action {k}: entry {x} exceeds delta_max {}", self.delta_max));
                    }
                    integral &= is_integer(x);
                }
                routing.extend(self.routing_problems(s, k, row));
            }
            if let Some(sizes) = &state.factors {
                if let Err(e) = derive_state_factors(state, sizes, r) {
                    factors.push(format!("state {s}: {e}"));
                }
            }
        }

        let checks = vec![
            check("actions_nonempty", nonempty),
            check("vector_shapes", shape),
            check("nonnegative_entries", sign),
            check("delta_max_bound", bound),
            check("sink_queues", sinks),
            check("routing_consistency", routing),
            check("factorization", factors),
        ];
        Ok(ValidationReport { checks, stationary, integral })
    }

    fn routing_problems(&self, s: usize, k: usize, row: &ActionRow) -> Vec<String> {
        let r = self.queue_count;
        let mut problems = Vec::new();
        let mut inflow = vec![0.0; r];
        let mut outflow = vec![0.0; r];
        for t in &row.transfers {
            if t.from >= r || t.to >= r {
                problems.push(format!("state {s} action {k}: transfer {}->{} out of range", t.from, t.to));
                return problems;
            }
            outflow[t.from] += t.count as f64;
            inflow[t.to] += t.count as f64;
        }
        for e in &row.exogenous {
            if e.queue >= r {
                problems.push(format!("state {s} action {k}: exogenous queue {} out of range", e.queue));
                return problems;
            }
            inflow[e.queue] += e.count as f64;
        }
        for j in 0..r {
            if (inflow[j] - row.arrivals[j]).abs() > 1e-9 {
                problems.push(format!(
                    "state {s} action {k}: queue {j} arrivals {} != exogenous + transfers {}",
                    row.arrivals[j], inflow[j]
                ));
            }
            let is_sink = self.sink_queues.contains(&j);
            if is_sink {
                if outflow[j] > row.services[j] + 1e-9 {
                    problems.push(format!("state {s} action {k}: sink queue {j} forwards more than it serves"));
                }
            } else if (outflow[j] - row.services[j]).abs() > 1e-9 {
                problems.push(format!(
                    "state {s} action {k}: queue {j} serves {} but forwards {}",
                    row.services[j], outflow[j]
                ));
            }
        }
        problems
    }
}

/// Per-state factor tables: `objective(action) = base + sum of the chosen
/// option's partial in every factor`.
#[derive(Clone, Debug)]
pub struct StateFactors {
    pub sizes: Vec<usize>,
    pub strides: Vec<usize>,
    pub base_cost: f64,
    pub base_net: Vec<f64>,
    /// `options[f][o] = (cost, net)` relative to the base row.
    pub options: Vec<Vec<(f64, Vec<f64>)>>,
}

impl StateFactors {
    pub fn flat_index(&self, digits: &[usize]) -> usize {
        digits.iter().zip(&self.strides).map(|(d, s)| d * s).sum()
    }
}

fn strides(sizes: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; sizes.len()];
    for i in (0..sizes.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * sizes[i + 1];
    }
    strides
}

/// Recovers per-factor partial rows as differences from the all-zero action
/// and verifies every flat row is reproduced without cross terms.
fn derive_state_factors(state: &StateActions, sizes: &[usize], r: usize) -> Result<StateFactors, String> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err("factor sizes must be positive".into());
    }
    let product: usize = sizes.iter().product();
    if product != state.actions.len() {
        return Err(format!("factor sizes multiply to {product} but there are {} actions", state.actions.len()));
    }
    let strides = strides(sizes);
    let base = &state.actions[0];
    let net = |row: &ActionRow| -> Vec<f64> { row.services.iter().zip(&row.arrivals).map(|(m, a)| m - a).collect() };
    let base_net = net(base);
    let mut options = Vec::with_capacity(sizes.len());
    for (f, &size) in sizes.iter().enumerate() {
        let mut opts = Vec::with_capacity(size);
        for o in 0..size {
            let row = &state.actions[o * strides[f]];
            let d_net: Vec<f64> = net(row).iter().zip(&base_net).map(|(a, b)| a - b).collect();
            opts.push((row.cost - base.cost, d_net));
        }
        options.push(opts);
    }
    let tol = |x: f64| 1e-9 * (1.0 + x.abs());
    let mut digits = vec![0usize; sizes.len()];
    for (k, row) in state.actions.iter().enumerate() {
        let mut rem = k;
        for (d, s) in digits.iter_mut().zip(&strides) {
            *d = rem / s;
            rem %= s;
        }
        let mut cost = base.cost;
        let mut predicted = base_net.clone();
        for (f, &d) in digits.iter().enumerate() {
            let (c, n) = &options[f][d];
            cost += c;
            for j in 0..r {
                predicted[j] += n[j];
            }
        }
        let actual = net(row);
        let separable = (cost - row.cost).abs() <= tol(row.cost)
            && predicted.iter().zip(&actual).all(|(p, a)| (p - a).abs() <= tol(*a));
        if !separable {
            return Err(format!("not separable: action {k} has cross terms between factors"));
        }
    }
    Ok(StateFactors { sizes: sizes.to_vec(), strides, base_cost: base.cost, base_net, options })
}

/// Flattened `cost` and `net = services - arrivals` for every (state, action).
#[derive(Clone, Debug)]
struct Tables {
    offsets: Vec<usize>,
    cost: Vec<f64>,
    net: Vec<f64>,
    cost_int: Vec<i64>,
    net_int: Vec<i64>,
}

/// A validated scenario, immutable and shareable across runs.
#[derive(Clone, Debug)]
pub struct Scenario {
    spec: ScenarioSpec,
    stationary: Vec<f64>,
    integral: bool,
    tables: Tables,
    factors: Option<Vec<StateFactors>>,
}

impl Scenario {
    pub fn new(spec: ScenarioSpec) -> Result<Self, ModelError> {
        let report = spec.validate()?;
        if !report.passed() {
            return Err(ModelError::Invalid(report.failures().join(" | ")));
        }
        let r = spec.queue_count;
        let mut offsets = vec![0];
        let mut cost = Vec::new();
        let mut net = Vec::new();
        for state in &spec.states {
            for row in &state.actions {
                cost.push(row.cost);
                net.extend(row.services.iter().zip(&row.arrivals).map(|(m, a)| m - a));
            }
            offsets.push(cost.len());
        }
        debug_assert_eq!(net.len(), cost.len() * r);
        let (cost_int, net_int) = if report.integral {
            (cost.iter().map(|&x| x as i64).collect(), net.iter().map(|&x| x as i64).collect())
        } else {
            (Vec::new(), Vec::new())
        };
        let factors = if spec.states.iter().all(|s| s.factors.is_some()) {
            let derived = spec
                .states
                .iter()
                .map(|s| derive_state_factors(s, s.factors.as_ref().unwrap(), r))
                .collect::<Result<Vec<_>, _>>()
                .map_err(ModelError::Invalid)?;
            Some(derived)
        } else {
            None
        };
        Ok(Self {
            stationary: report.stationary,
            integral: report.integral,
            tables: Tables { offsets, cost, net, cost_int, net_int },
            factors,
            spec,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn queue_count(&self) -> usize {
        self.spec.queue_count
    }

    pub fn state_count(&self) -> usize {
        self.spec.chain.state_count()
    }

    pub fn delta_max(&self) -> f64 {
        self.spec.delta_max
    }

    /// Every table entry is an integer.
    pub fn integral(&self) -> bool {
        self.integral
    }

    pub fn action_count(&self, state: usize) -> usize {
        self.tables.offsets[state + 1] - self.tables.offsets[state]
    }

    pub fn row(&self, state: usize, action: usize) -> &ActionRow {
        &self.spec.states[state].actions[action]
    }

    pub fn cost(&self, state: usize, action: usize) -> f64 {
        self.tables.cost[self.tables.offsets[state] + action]
    }

    /// `services - arrivals` for one action.
    pub fn net(&self, state: usize, action: usize) -> &[f64] {
        let r = self.queue_count();
        let i = self.tables.offsets[state] + action;
        &self.tables.net[i * r..(i + 1) * r]
    }

    pub(crate) fn cost_int(&self, state: usize, action: usize) -> i64 {
        self.tables.cost_int[self.tables.offsets[state] + action]
    }

    pub(crate) fn net_int(&self, state: usize, action: usize) -> &[i64] {
        let r = self.queue_count();
        let i = self.tables.offsets[state] + action;
        &self.tables.net_int[i * r..(i + 1) * r]
    }

    /// Per-state factor tables when every state declares a factorization.
    pub fn factors(&self) -> Option<&[StateFactors]> {
        self.factors.as_deref()
    }
}

/// A stationary randomized policy: per state, a distribution over actions.
pub type Policy = Vec<Vec<f64>>;

/// Policy that always picks `choice[s]` in state `s`.
pub fn deterministic_policy(scenario: &Scenario, choice: &[usize]) -> Policy {
    (0..scenario.state_count())
        .map(|s| {
            let mut p = vec![0.0; scenario.action_count(s)];
            p[choice[s]] = 1.0;
            p
        })
        .collect()
}

/// Stationary average cost and drift `sum pi_s sum_k p_sk (A - mu)` of a
/// stationary randomized policy.
pub fn stationary_expectation(scenario: &Scenario, policy: &[Vec<f64>]) -> Result<(f64, Vec<f64>), ModelError> {
    let m = scenario.state_count();
    if policy.len() != m {
        return Err(ModelError::PolicyShape { got: policy.len(), expected: m });
    }
    let r = scenario.queue_count();
    let mut avg_cost = 0.0;
    let mut drift = vec![0.0; r];
    for (s, dist) in policy.iter().enumerate() {
        let n = scenario.action_count(s);
        if dist.len() != n {
            return Err(ModelError::PolicyRowShape { state: s, got: dist.len(), expected: n });
        }
        if dist.iter().any(|&p| p < 0.0) {
            return Err(ModelError::PolicyNegative { state: s });
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > POLICY_SUM_TOL {
            return Err(ModelError::PolicySum { state: s, sum });
        }
        let pi = scenario.stationary()[s];
        for (k, &p) in dist.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            avg_cost += pi * p * scenario.cost(s, k);
            for (d, n) in drift.iter_mut().zip(scenario.net(s, k)) {
                *d -= pi * p * n;
            }
        }
    }
    Ok((avg_cost, drift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_queue(transition: Vec<Vec<f64>>) -> ScenarioSpec {
        let n = transition.len();
        let mut row = ActionRow::new(0.0, vec![0.0], vec![1.0]);
        row.label = Some("serve".into());
        ScenarioSpec {
            name: "single".into(),
            chain: MarkovChain::unlabeled(transition),
            queue_count: 1,
            delta_max: 1.0,
            sink_queues: vec![0],
            states: vec![StateActions { actions: vec![row], factors: None }; n],
        }
    }

    #[test]
    fn identity_chain_of_one_state_is_valid() {
        let report = single_queue(vec![vec![1.0]]).validate().unwrap();
        assert!(report.passed());
        assert_eq!(report.stationary, vec![1.0]);
    }

    #[test]
    fn disconnected_chain_is_reducible() {
        let err = single_queue(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).validate().unwrap_err();
        match err {
            ModelError::Reducible { states, .. } => assert_eq!(states, vec!["s1".to_string()]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn alternating_chain_is_periodic() {
        let err = single_queue(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).validate().unwrap_err();
        assert!(matches!(err, ModelError::Periodic { period: 2, .. }));
    }

    #[test]
    fn row_sum_violation_names_row() {
        let err = single_queue(vec![vec![0.5, 0.5], vec![0.3, 0.6]]).validate().unwrap_err();
        assert!(matches!(err, ModelError::RowSum { row: 1, .. }));
    }

    #[test]
    fn stationary_is_fixed_point() {
        let chain = MarkovChain::unlabeled(vec![
            vec![0.5, 0.3, 0.2],
            vec![0.1, 0.6, 0.3],
            vec![0.4, 0.4, 0.2],
        ]);
        chain.check().unwrap();
        let pi = chain.stationary().unwrap();
        for j in 0..3 {
            let next: f64 = (0..3).map(|i| pi[i] * chain.transition[i][j]).sum();
            assert!((next - pi[j]).abs() < 1e-10);
        }
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_row_is_followed() {
        let chain = MarkovChain::unlabeled(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            assert_eq!(sample_next_state(&chain, 0, &mut rng), 1);
        }
    }

    #[test]
    fn fair_coin_frequency() {
        let chain = MarkovChain::unlabeled(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let sampler = ChainSampler::new(&chain);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let zeros = (0..n).filter(|_| sampler.next(0, &mut rng) == 0).count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.002);
    }

    #[test]
    fn product_chain_is_kronecker() {
        let a = MarkovChain::unlabeled(vec![vec![0.9, 0.1], vec![0.2, 0.8]]);
        let b = MarkovChain::unlabeled(vec![vec![0.3, 0.7], vec![0.3, 0.7]]);
        let ab = a.product(&b);
        assert_eq!(ab.state_count(), 4);
        // (0, 1) -> (1, 0)
        assert!((ab.transition[1][2] - 0.1 * 0.3).abs() < 1e-15);
        ab.check().unwrap();
        let pi = ab.stationary().unwrap();
        // independent components: pi(a, b) = pi_a * pi_b
        let pa = a.stationary().unwrap();
        assert!((pi[3] - pa[1] * 0.7).abs() < 1e-10);
    }

    #[test]
    fn cross_terms_are_not_separable() {
        let mut spec = single_queue(vec![vec![1.0]]);
        let rows = vec![
            ActionRow::new(0.0, vec![0.0], vec![0.0]),
            ActionRow::new(1.0, vec![0.0], vec![1.0]),
            ActionRow::new(1.0, vec![0.0], vec![1.0]),
            ActionRow::new(2.0, vec![0.0], vec![3.0]),
        ];
        spec.states[0] = StateActions { actions: rows, factors: Some(vec![2, 2]) };
        spec.sink_queues = vec![0];
        let report = spec.validate().unwrap();
        let f = report.checks.iter().find(|c| c.name == "factorization").unwrap();
        assert!(!f.passed);
        assert!(f.detail.contains("not separable"));
    }

    #[test]
    fn policy_must_sum_to_one() {
        let scn = Scenario::new(single_queue(vec![vec![1.0]])).unwrap();
        let err = stationary_expectation(&scn, &[vec![0.5]]).unwrap_err();
        assert!(matches!(err, ModelError::PolicySum { .. }));
        let (cost, drift) = stationary_expectation(&scn, &[vec![1.0]]).unwrap();
        assert_eq!(cost, 0.0);
        assert_eq!(drift, vec![-1.0]);
    }
}
