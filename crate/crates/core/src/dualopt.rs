//! Dual of the deterministic problem.
//!
//! `g(gamma) = sum_s pi_s min_k [V f(s, k) + gamma·(A - mu)(s, k)]` is a
//! pointwise minimum of affine functions, hence concave and polyhedral. It is
//! maximized over `gamma >= 0` by projected subgradient ascent, then polished
//! with column generation over deterministic per-state policies: the restricted
//! master LP's drift-row multipliers are the next dual iterate, and pricing is a
//! single evaluation of `g`.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lp::{self, Row, RowKind};
use crate::model::{ModelError, Policy, Scenario, stationary_expectation};

#[derive(Debug, thiserror::Error)]
pub enum DualError {
    #[error("multiplier vector has {got} entries, expected {expected}")]
    Shape { got: usize, expected: usize },
    #[error("multipliers must be finite and nonnegative")]
    Negative,
    #[error("V must be finite and nonnegative, got {0}")]
    BadV(f64),
    #[error("scenario infeasible for stability (best slack {eta:.3e})")]
    Infeasible { eta: f64 },
    #[error("linear program failed: {0}")]
    Lp(#[from] lp::LpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualEval {
    pub value: f64,
    /// `sum_s pi_s (A - mu)` at the minimizers.
    pub subgradient: Vec<f64>,
    pub minimizers: Vec<usize>,
}

/// Minimizing action of `V f - gamma·(mu - A)` in one state, lowest index on ties.
pub(crate) fn state_min(scn: &Scenario, state: usize, gamma: &[f64], v: f64) -> (usize, f64) {
    let eval = |cost: f64, net: &[f64]| v * cost - net.iter().zip(gamma).map(|(w, g)| w * g).sum::<f64>();
    if let Some(all) = scn.factors() {
        let f = &all[state];
        let mut total = eval(f.base_cost, &f.base_net);
        let mut digits = Vec::with_capacity(f.options.len());
        for opts in &f.options {
            let (mut bi, mut bv) = (0, f64::INFINITY);
            for (o, (c, net)) in opts.iter().enumerate() {
                let x = eval(*c, net);
                if x < bv {
                    bi = o;
                    bv = x;
                }
            }
            total += bv;
            digits.push(bi);
        }
        (f.flat_index(&digits), total)
    } else {
        let (mut bi, mut bv) = (0, f64::INFINITY);
        for k in 0..scn.action_count(state) {
            let x = eval(scn.cost(state, k), scn.net(state, k));
            if x < bv {
                bi = k;
                bv = x;
            }
        }
        (bi, bv)
    }
}

fn check_gamma(scn: &Scenario, gamma: &[f64], v: f64) -> Result<(), DualError> {
    if gamma.len() != scn.queue_count() {
        return Err(DualError::Shape { got: gamma.len(), expected: scn.queue_count() });
    }
    if gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(DualError::Negative);
    }
    if !v.is_finite() || v < 0.0 {
        return Err(DualError::BadV(v));
    }
    Ok(())
}

/// Evaluates `g(gamma)` with a supergradient and the per-state minimizers.
pub fn dual_value(scn: &Scenario, gamma: &[f64], v: f64) -> Result<DualEval, DualError> {
    check_gamma(scn, gamma, v)?;
    let pi = scn.stationary();
    let mut value = 0.0;
    let mut subgradient = vec![0.0; scn.queue_count()];
    let mut minimizers = Vec::with_capacity(pi.len());
    for (s, p) in pi.iter().enumerate() {
        let (k, x) = state_min(scn, s, gamma, v);
        value += p * x;
        for (g, w) in subgradient.iter_mut().zip(scn.net(s, k)) {
            *g -= p * w;
        }
        minimizers.push(k);
    }
    Ok(DualEval { value, subgradient, minimizers })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualOptions {
    /// Step constant `c` in `c / sqrt(k)`; defaults to delta_max.
    pub step_scale: Option<f64>,
    pub max_iters: usize,
    /// Relative gap between the master bound and `g` at which polishing stops.
    pub tol: f64,
    pub initial: Option<Vec<f64>>,
    pub polish: bool,
    pub max_polish_iters: usize,
    /// Random probes for the empirical sharpness constant; 0 disables it.
    pub probes: usize,
    pub seed: u64,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            step_scale: None,
            max_iters: 500,
            tol: 1e-9,
            initial: None,
            polish: true,
            max_polish_iters: 5000,
            probes: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub gamma_star: Vec<f64>,
    pub g_value: f64,
    pub iterations: usize,
    pub residual: f64,
    pub per_state_minimizers: Vec<usize>,
    pub converged: bool,
    #[serde(rename = "L_hat")]
    pub l_hat: Option<f64>,
}

/// A deterministic policy summarized by its stationary cost and drift.
struct Column {
    cost: f64,
    drift: Vec<f64>,
}

fn column(scn: &Scenario, choice: &[usize]) -> Column {
    let pi = scn.stationary();
    let mut cost = 0.0;
    let mut drift = vec![0.0; scn.queue_count()];
    for (s, (&k, p)) in choice.iter().zip(pi).enumerate() {
        cost += p * scn.cost(s, k);
        for (d, w) in drift.iter_mut().zip(scn.net(s, k)) {
            *d -= p * w;
        }
    }
    Column { cost, drift }
}

struct ColumnPool {
    seen: HashSet<Vec<usize>>,
    choices: Vec<Vec<usize>>,
    columns: Vec<Column>,
}

impl ColumnPool {
    fn new() -> Self {
        Self { seen: HashSet::new(), choices: Vec::new(), columns: Vec::new() }
    }

    fn add(&mut self, scn: &Scenario, choice: &[usize]) -> bool {
        if !self.seen.insert(choice.to_vec()) {
            return false;
        }
        self.columns.push(column(scn, choice));
        self.choices.push(choice.to_vec());
        true
    }
}

/// Maximizes `g` over `gamma >= 0`.
///
/// Without a feasible stability certificate `g` is unbounded above; the best
/// subgradient iterate is then returned with `converged = false`.
pub fn solve_dual(scn: &Scenario, v: f64, opts: &DualOptions) -> Result<DualSolution, DualError> {
    let r = scn.queue_count();
    let mut gamma = opts.initial.clone().unwrap_or_else(|| vec![0.0; r]);
    check_gamma(scn, &gamma, v)?;
    let c = opts.step_scale.unwrap_or(scn.delta_max());

    let mut pool = ColumnPool::new();
    let mut best = dual_value(scn, &gamma, v)?;
    let mut best_gamma = gamma.clone();
    let mut prev = best.value;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut current = best.clone();
    for k in 1..=opts.max_iters {
        iterations = k;
        pool.add(scn, &current.minimizers);
        if current.subgradient.iter().zip(&gamma).all(|(g, x)| *g == 0.0 || (*g < 0.0 && *x == 0.0)) {
            // zero projected supergradient: gamma is optimal
            converged = true;
            residual = 0.0;
            break;
        }
        let step = c / (k as f64).sqrt();
        for (x, g) in gamma.iter_mut().zip(&current.subgradient) {
            *x = (*x + step * g).max(0.0);
        }
        current = dual_value(scn, &gamma, v)?;
        residual = current.value - prev;
        prev = current.value;
        if current.value > best.value {
            best = current.clone();
            best_gamma = gamma.clone();
        }
    }

    if opts.polish && !converged {
        if let Ok(cert) = check_slackness(scn) {
            for choice in policy_support(&cert.policy) {
                pool.add(scn, &choice);
            }
            pool.add(scn, &best.minimizers);
            for it in 0..opts.max_polish_iters {
                iterations += 1;
                let (bound, duals) = solve_master(scn, &pool, v)?;
                let eval = dual_value(scn, &duals, v)?;
                let gap = bound - eval.value;
                residual = gap;
                if eval.value >= best.value || gap <= opts.tol * bound.abs().max(1.0) {
                    best = eval.clone();
                    best_gamma = duals.clone();
                }
                if gap <= opts.tol * bound.abs().max(1.0) {
                    converged = true;
                    break;
                }
                if !pool.add(scn, &eval.minimizers) {
                    log::warn!("column generation stalled after {it} iterations with gap {gap:.3e}");
                    break;
                }
            }
        }
    }

    let l_hat = if opts.probes > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let hi = 4.0 * v.max(1.0);
        let mut l = f64::INFINITY;
        for _ in 0..opts.probes {
            let probe: Vec<f64> = (0..r).map(|_| rng.gen_range(0.0..hi)).collect();
            let dist = probe.iter().zip(&best_gamma).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dist > 0.0 {
                l = l.min((best.value - dual_value(scn, &probe, v)?.value) / dist);
            }
        }
        l.is_finite().then_some(l)
    } else {
        None
    };

    Ok(DualSolution {
        gamma_star: best_gamma,
        g_value: best.value,
        iterations,
        residual,
        per_state_minimizers: best.minimizers,
        converged,
        l_hat,
    })
}

/// Restricted master `min sum_P lambda_P V F_P` s.t. `sum_P lambda_P D_P <= 0`,
/// `sum_P lambda_P = 1`. Returns its value and the drift-row multipliers.
fn solve_master(scn: &Scenario, pool: &ColumnPool, v: f64) -> Result<(f64, Vec<f64>), DualError> {
    let r = scn.queue_count();
    let n = pool.columns.len();
    let c: Vec<f64> = pool.columns.iter().map(|col| -v * col.cost).collect();
    let mut rows: Vec<Row> = (0..r)
        .map(|j| Row::new(pool.columns.iter().map(|col| col.drift[j]).collect(), RowKind::Le, 0.0))
        .collect();
    rows.push(Row::new(vec![1.0; n], RowKind::Eq, 1.0));
    let sol = lp::maximize(&c, &rows)?;
    let duals = sol.duals[..r].iter().map(|y| y.max(0.0)).collect();
    Ok((-sol.objective, duals))
}

fn policy_support(policy: &Policy) -> Vec<Vec<usize>> {
    // decompose a randomized policy into deterministic ones covering its support
    let widest = policy.iter().map(|row| row.iter().filter(|p| **p > 0.0).count()).max().unwrap_or(0);
    (0..widest)
        .map(|i| {
            policy
                .iter()
                .map(|row| {
                    let support: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
                    support[i.min(support.len() - 1)]
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlacknessCertificate {
    /// Per-state distribution over action indices.
    pub policy: Policy,
    pub eta: f64,
}

const SLACK_MARGIN: f64 = 1e-9;

/// Finds a stationary randomized policy maximizing the uniform drift margin
/// `eta`, with every drift component `<= -eta`.
pub fn check_slackness(scn: &Scenario) -> Result<SlacknessCertificate, DualError> {
    let r = scn.queue_count();
    let mut pool = ColumnPool::new();
    let uniform = vec![1.0 / r as f64; r];
    pool.add(scn, &dual_value(scn, &uniform, 0.0)?.minimizers);
    let idle = vec![0; scn.state_count()];
    pool.add(scn, &idle);

    let (eta, weights) = loop {
        // variables: lambda_P..., eta_plus, eta_minus
        let n = pool.columns.len();
        let mut c = vec![0.0; n + 2];
        c[n] = 1.0;
        c[n + 1] = -1.0;
        let mut rows: Vec<Row> = (0..r)
            .map(|j| {
                let mut coeffs: Vec<f64> = pool.columns.iter().map(|col| col.drift[j]).collect();
                coeffs.extend([1.0, -1.0]);
                Row::new(coeffs, RowKind::Le, 0.0)
            })
            .collect();
        let mut sum = vec![1.0; n];
        sum.extend([0.0, 0.0]);
        rows.push(Row::new(sum, RowKind::Eq, 1.0));
        let sol = lp::maximize(&c, &rows)?;
        let w: Vec<f64> = sol.duals[..r].iter().map(|y| y.max(0.0)).collect();
        let eta = sol.objective;
        // pricing: the policy maximizing w·(mu - A) under pi
        let eval = dual_value(scn, &w, 0.0)?;
        let best = -eval.value;
        if best <= eta + 1e-12 * eta.abs().max(1.0) || !pool.add(scn, &eval.minimizers) {
            break (eta, sol.x[..n].to_vec());
        }
    };

    if eta <= SLACK_MARGIN {
        return Err(DualError::Infeasible { eta });
    }
    let mut policy: Policy = (0..scn.state_count()).map(|s| vec![0.0; scn.action_count(s)]).collect();
    for (choice, lam) in pool.choices.iter().zip(&weights) {
        if *lam > 0.0 {
            for (s, &k) in choice.iter().enumerate() {
                policy[s][k] += lam;
            }
        }
    }
    for row in policy.iter_mut() {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    let (_, drift) = stationary_expectation(scn, &policy)?;
    let achieved = drift.iter().fold(f64::INFINITY, |m, d| m.min(-d));
    Ok(SlacknessCertificate { policy, eta: achieved.min(eta) })
}
