//! Auxiliary-variable controller for objectives of time-averaged attributes.
//!
//! Each slot picks `z` minimizing `V Cost(z) + H·z` over `[0, delta_max]^K`,
//! then the action maximizing `H·y(x) + sum_j q_j (mu_j - A_j)`, and updates
//! `H_k <- max[H_k - y_k, 0] + z_k`. Queues evolve numerically by
//! `q <- max[q - mu, 0] + A`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{ControlError, Decision};
use crate::engine::{EngineError, RunConfig};
use crate::model::{ChainSampler, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum AuxError {
    #[error("aux spec: {0}")]
    Spec(String),
    #[error("virtual backlog must be finite and nonnegative")]
    BadH,
    #[error("instability suspected: virtual backlog {h} exceeds {ceiling} at slot {slot}")]
    Unstable { slot: u64, h: f64, ceiling: f64 },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Closed catalog of per-coordinate objectives with exact minimizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// `Cost(z) = sum_k c_k z_k`.
    Linear { c: Vec<f64> },
    /// `Cost(z) = sum_k w_k (z_k - c_k)^2 / 2`.
    Quadratic { weights: Vec<f64>, centers: Vec<f64> },
    /// `Cost(z) = -sum_k a_k ln(1 + z_k)`, a utility written as a cost.
    LogSum { a: Vec<f64> },
}

impl Objective {
    pub fn dim(&self) -> usize {
        match self {
            Objective::Linear { c } => c.len(),
            Objective::Quadratic { weights, .. } => weights.len(),
            Objective::LogSum { a } => a.len(),
        }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            Objective::Linear { c } => c.iter().zip(z).map(|(c, z)| c * z).sum(),
            Objective::Quadratic { weights, centers } => {
                weights.iter().zip(centers).zip(z).map(|((w, c), z)| 0.5 * w * (z - c).powi(2)).sum()
            }
            Objective::LogSum { a } => -a.iter().zip(z).map(|(a, z)| a * z.ln_1p()).sum::<f64>(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxSpec {
    pub attribute_dim: usize,
    /// `attributes[s][k]` is the attribute vector `y` of action `k` in state `s`.
    pub attributes: Vec<Vec<Vec<f64>>>,
    pub objective: Objective,
    pub delta_max: f64,
}

impl AuxSpec {
    pub fn validate(&self, scn: &Scenario) -> Result<(), AuxError> {
        let k = self.attribute_dim;
        if k == 0 {
            return Err(AuxError::Spec("attribute_dim must be positive".into()));
        }
        if self.objective.dim() != k {
            return Err(AuxError::Spec(format!("objective has {} coordinates, expected {k}", self.objective.dim())));
        }
        if let Objective::Quadratic { weights, centers } = &self.objective {
            if centers.len() != k || weights.iter().any(|w| !(*w >= 0.0)) {
                return Err(AuxError::Spec("quadratic needs nonnegative weights and one center per coordinate".into()));
            }
        }
        if let Objective::LogSum { a } = &self.objective {
            if a.iter().any(|a| !(*a >= 0.0)) {
                return Err(AuxError::Spec("log_sum weights must be nonnegative".into()));
            }
        }
        if !(self.delta_max > 0.0) || self.delta_max != scn.delta_max() {
            return Err(AuxError::Spec(format!(
                "delta_max {} must match the scenario's {}",
                self.delta_max,
                scn.delta_max()
            )));
        }
        if self.attributes.len() != scn.state_count() {
            return Err(AuxError::Spec("attributes need one table per state".into()));
        }
        for (s, table) in self.attributes.iter().enumerate() {
            if table.len() != scn.action_count(s) {
                return Err(AuxError::Spec(format!("state {s}: attributes need one vector per action")));
            }
            for (a, y) in table.iter().enumerate() {
                if y.len() != k || y.iter().any(|v| !v.is_finite() || v.abs() > self.delta_max) {
                    return Err(AuxError::Spec(format!(
                        "state {s} action {a}: attribute vector must have {k} entries bounded by delta_max"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Exact minimizer of `V Cost(z) + h·z` over `[0, delta_max]^K`.
pub fn choose_aux(aux: &AuxSpec, h: &[f64], v: f64) -> Result<Vec<f64>, AuxError> {
    if h.len() != aux.attribute_dim || h.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(AuxError::BadH);
    }
    let hi = aux.delta_max;
    let z = match &aux.objective {
        Objective::Linear { c } => c.iter().zip(h).map(|(c, h)| if v * c + h < 0.0 { hi } else { 0.0 }).collect(),
        Objective::Quadratic { weights, centers } => weights
            .iter()
            .zip(centers)
            .zip(h)
            .map(|((w, c), h)| {
                let vw = v * w;
                if vw > 0.0 { (c - h / vw).clamp(0.0, hi) } else { 0.0 }
            })
            .collect(),
        Objective::LogSum { a } => a
            .iter()
            .zip(h)
            .map(|(a, h)| {
                let va = v * a;
                if va <= 0.0 {
                    0.0
                } else if *h == 0.0 {
                    hi
                } else {
                    (va / h - 1.0).clamp(0.0, hi)
                }
            })
            .collect(),
    };
    Ok(z)
}

/// Action maximizing `h·y(x) + sum_j q_j (mu_j - A_j)`; lowest index on ties.
pub fn aux_bp_decide(
    scn: &Scenario,
    aux: &AuxSpec,
    state: usize,
    backlog: &[f64],
    h: &[f64],
) -> Result<Decision, AuxError> {
    if state >= scn.state_count() {
        return Err(ControlError::State(state).into());
    }
    if backlog.len() != scn.queue_count() {
        return Err(ControlError::BacklogShape { got: backlog.len(), expected: scn.queue_count() }.into());
    }
    if backlog.iter().any(|q| !q.is_finite() || *q < 0.0) {
        return Err(ControlError::BadBacklog.into());
    }
    if h.len() != aux.attribute_dim || h.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(AuxError::BadH);
    }
    let (mut bi, mut bv, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in 0..scn.action_count(state) {
        let mut obj = 0.0;
        for (hk, yk) in h.iter().zip(&aux.attributes[state][k]) {
            obj += hk * yk;
        }
        for (q, w) in backlog.iter().zip(scn.net(state, k)) {
            obj += q * w;
        }
        if obj > bv {
            second = bv;
            bi = k;
            bv = obj;
        } else if obj > second {
            second = obj;
        }
    }
    Ok(Decision { action_index: bi, objective_value: bv, runner_up_gap: bv - second })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxReport {
    pub h_avg: Vec<f64>,
    pub h_final: Vec<f64>,
    pub h_max: Vec<f64>,
    pub z_bar: Vec<f64>,
    pub y_bar: Vec<f64>,
    pub objective_at_z_bar: f64,
    pub objective_at_y_bar: f64,
    pub avg_backlog: f64,
    pub slots: u64,
}

/// One replayable slot of an auxiliary run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxSlot {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

/// Runs the auxiliary controller; averages cover the whole horizon so the
/// bound `z_bar <= y_bar + H(T) / T` holds exactly.
pub fn aux_run(scn: &Scenario, aux: &AuxSpec, config: &RunConfig) -> Result<AuxReport, AuxError> {
    aux_run_traced(scn, aux, config, false).map(|(r, _)| r)
}

pub fn aux_run_traced(
    scn: &Scenario,
    aux: &AuxSpec,
    config: &RunConfig,
    record: bool,
) -> Result<(AuxReport, Vec<AuxSlot>), AuxError> {
    aux.validate(scn)?;
    if !(config.v >= 1.0) || config.horizon == 0 {
        return Err(EngineError::Config("aux run needs V >= 1 and a positive horizon".into()).into());
    }
    let r = scn.queue_count();
    let kdim = aux.attribute_dim;
    let ceiling = config.ceiling.map(|c| c as f64).unwrap_or(1e6 * (r + kdim) as f64);
    let sampler = ChainSampler::new(&scn.spec().chain);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q = vec![0.0; r];
    let mut h = vec![0.0; kdim];
    let mut h_sum = vec![0.0; kdim];
    let mut h_max = vec![0.0f64; kdim];
    let mut z_sum = vec![0.0; kdim];
    let mut y_sum = vec![0.0; kdim];
    let mut backlog_sum = 0.0;
    let mut slots = Vec::new();
    let mut state = 0;
    for t in 0..config.horizon {
        let z = choose_aux(aux, &h, config.v)?;
        let d = aux_bp_decide(scn, aux, state, &q, &h)?;
        let y = &aux.attributes[state][d.action_index];
        let row = scn.row(state, d.action_index);
        if record {
            slots.push(AuxSlot { h: h.clone(), z: z.clone(), y: y.clone() });
        }
        backlog_sum += q.iter().sum::<f64>();
        for k in 0..kdim {
            h_sum[k] += h[k];
            z_sum[k] += z[k];
            y_sum[k] += y[k];
            h[k] = (h[k] - y[k]).max(0.0) + z[k];
            h_max[k] = h_max[k].max(h[k]);
        }
        for j in 0..r {
            q[j] = (q[j] - row.services[j]).max(0.0) + row.arrivals[j];
        }
        let total = q.iter().chain(&h).sum::<f64>();
        if total > ceiling {
            return Err(AuxError::Unstable { slot: t, h: total, ceiling });
        }
        state = sampler.next(state, &mut rng);
    }
    let n = config.horizon as f64;
    let z_bar: Vec<f64> = z_sum.iter().map(|s| s / n).collect();
    let y_bar: Vec<f64> = y_sum.iter().map(|s| s / n).collect();
    let report = AuxReport {
        h_avg: h_sum.iter().map(|s| s / n).collect(),
        h_final: h,
        h_max,
        objective_at_z_bar: aux.objective.value(&z_bar),
        objective_at_y_bar: aux.objective.value(&y_bar.iter().map(|y| y.clamp(0.0, aux.delta_max)).collect::<Vec<_>>()),
        z_bar,
        y_bar,
        avg_backlog: backlog_sum / n,
        slots: config.horizon,
    };
    Ok((report, slots))
}
