//! Per-slot Backpressure decision: pick the action maximizing
//! `-V f(s, x) + sum_j q_j [mu_j(s, x) - A_j(s, x)]` by enumeration.
//!
//! The controller only ever sees the current state, the backlog vector and V.
//! When every table entry, every backlog and V are integers the objective is
//! evaluated in `i128`, so ties are exact and the lowest index wins.

use serde::{Deserialize, Serialize};

use crate::model::Scenario;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ControlError {
    #[error("state {0} out of range")]
    State(usize),
    #[error("state {0} has no actions")]
    NoActions(usize),
    #[error("backlog has {got} entries, expected {expected}")]
    BacklogShape { got: usize, expected: usize },
    #[error("backlog entries must be finite and nonnegative")]
    BadBacklog,
    #[error("V must be at least 1, got {0}")]
    BadV(f64),
    #[error("not separable: scenario declares no per-node factorization")]
    NotSeparable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action_index: usize,
    pub objective_value: f64,
    /// Best minus second-best objective; `inf` when there is a single action.
    pub runner_up_gap: f64,
}

fn check_inputs(scn: &Scenario, state: usize, backlog: &[f64], v: f64) -> Result<(), ControlError> {
    if state >= scn.state_count() {
        return Err(ControlError::State(state));
    }
    if scn.action_count(state) == 0 {
        return Err(ControlError::NoActions(state));
    }
    if backlog.len() != scn.queue_count() {
        return Err(ControlError::BacklogShape { got: backlog.len(), expected: scn.queue_count() });
    }
    if backlog.iter().any(|q| !q.is_finite() || *q < 0.0) {
        return Err(ControlError::BadBacklog);
    }
    if !(v >= 1.0) || !v.is_finite() {
        return Err(ControlError::BadV(v));
    }
    Ok(())
}

fn exact_ok(scn: &Scenario, backlog: &[f64], v: f64) -> bool {
    const LIMIT: f64 = 9.0e15;
    scn.integral() && v.fract() == 0.0 && v < LIMIT && backlog.iter().all(|q| q.fract() == 0.0 && *q < LIMIT)
}

/// Running argmax with lowest-index tie-break and runner-up tracking.
struct Best<T> {
    index: usize,
    value: Option<T>,
    second: Option<T>,
}

impl<T: Copy + PartialOrd> Best<T> {
    fn new() -> Self {
        Self { index: 0, value: None, second: None }
    }

    fn offer(&mut self, index: usize, value: T) {
        match self.value {
            Some(best) if value > best => {
                self.second = Some(best);
                self.value = Some(value);
                self.index = index;
            }
            Some(_) => {
                if self.second.is_none_or(|s| value > s) {
                    self.second = Some(value);
                }
            }
            None => {
                self.value = Some(value);
                self.index = index;
            }
        }
    }
}

/// Flat enumeration over the state's action list.
pub fn bp_decide(scn: &Scenario, state: usize, backlog: &[f64], v: f64) -> Result<Decision, ControlError> {
    check_inputs(scn, state, backlog, v)?;
    let n = scn.action_count(state);
    if exact_ok(scn, backlog, v) {
        let vi = v as i128;
        let mut best = Best::<i128>::new();
        for k in 0..n {
            let mut obj = -vi * scn.cost_int(state, k) as i128;
            for (q, w) in backlog.iter().zip(scn.net_int(state, k)) {
                obj += (*q as i128) * (*w as i128);
            }
            best.offer(k, obj);
        }
        let value = best.value.unwrap();
        Ok(Decision {
            action_index: best.index,
            objective_value: value as f64,
            runner_up_gap: best.second.map_or(f64::INFINITY, |s| (value - s) as f64),
        })
    } else {
        let mut best = Best::<f64>::new();
        for k in 0..n {
            best.offer(k, objective_f64(scn, state, k, backlog, v));
        }
        let value = best.value.unwrap();
        Ok(Decision {
            action_index: best.index,
            objective_value: value,
            runner_up_gap: best.second.map_or(f64::INFINITY, |s| value - s),
        })
    }
}

pub(crate) fn objective_f64(scn: &Scenario, state: usize, action: usize, backlog: &[f64], v: f64) -> f64 {
    let mut obj = -v * scn.cost(state, action);
    for (q, w) in backlog.iter().zip(scn.net(state, action)) {
        obj += q * w;
    }
    obj
}

/// Same decision as [`bp_decide`], maximizing each factor independently.
/// Cost is the sum, not the product, of per-factor option counts.
pub fn bp_decide_decomposed(scn: &Scenario, state: usize, backlog: &[f64], v: f64) -> Result<Decision, ControlError> {
    check_inputs(scn, state, backlog, v)?;
    let factors = &scn.factors().ok_or(ControlError::NotSeparable)?[state];
    let mut digits = Vec::with_capacity(factors.sizes.len());
    if exact_ok(scn, backlog, v) {
        let vi = v as i128;
        let eval = |cost: f64, net: &[f64]| -> i128 {
            let mut obj = -vi * cost as i128;
            for (q, w) in backlog.iter().zip(net) {
                obj += (*q as i128) * (*w as i128);
            }
            obj
        };
        let mut total = eval(factors.base_cost, &factors.base_net);
        let mut gap = i128::MAX;
        for opts in &factors.options {
            let mut best = Best::<i128>::new();
            for (o, (c, net)) in opts.iter().enumerate() {
                best.offer(o, eval(*c, net));
            }
            let value = best.value.unwrap();
            total += value;
            if let Some(s) = best.second {
                gap = gap.min(value - s);
            }
            digits.push(best.index);
        }
        Ok(Decision {
            action_index: factors.flat_index(&digits),
            objective_value: total as f64,
            runner_up_gap: if gap == i128::MAX { f64::INFINITY } else { gap as f64 },
        })
    } else {
        let eval = |cost: f64, net: &[f64]| -> f64 {
            let mut obj = -v * cost;
            for (q, w) in backlog.iter().zip(net) {
                obj += q * w;
            }
            obj
        };
        let mut total = eval(factors.base_cost, &factors.base_net);
        let mut gap = f64::INFINITY;
        for opts in &factors.options {
            let mut best = Best::<f64>::new();
            for (o, (c, net)) in opts.iter().enumerate() {
                best.offer(o, eval(*c, net));
            }
            let value = best.value.unwrap();
            total += value;
            if let Some(s) = best.second {
                gap = gap.min(value - s);
            }
            digits.push(best.index);
        }
        Ok(Decision { action_index: factors.flat_index(&digits), objective_value: total, runner_up_gap: gap })
    }
}

/// Uses the decomposed path whenever the scenario is factored.
pub fn decide(scn: &Scenario, state: usize, backlog: &[f64], v: f64) -> Result<Decision, ControlError> {
    if scn.factors().is_some() {
        bp_decide_decomposed(scn, state, backlog, v)
    } else {
        bp_decide(scn, state, backlog, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActionRow, MarkovChain, ScenarioSpec, StateActions};

    /// Two independent servers on two queues, 2x2 actions.
    fn two_servers(cost: [f64; 2]) -> Scenario {
        let mut actions = Vec::new();
        for x1 in 0..2 {
            for x2 in 0..2 {
                let c = cost[0] * x1 as f64 + cost[1] * x2 as f64;
                actions.push(ActionRow::new(c, vec![0.0, 0.0], vec![2.0 * x1 as f64, x2 as f64]));
            }
        }
        Scenario::new(ScenarioSpec {
            name: "two-servers".into(),
            chain: MarkovChain::unlabeled(vec![vec![1.0]]),
            queue_count: 2,
            delta_max: 4.0,
            sink_queues: vec![0, 1],
            states: vec![StateActions { actions, factors: Some(vec![2, 2]) }],
        })
        .unwrap()
    }

    #[test]
    fn zero_backlog_picks_idle() {
        let scn = two_servers([1.0, 1.0]);
        let d = bp_decide(&scn, 0, &[0.0, 0.0], 5.0).unwrap();
        assert_eq!(d.action_index, 0);
        assert_eq!(d.objective_value, 0.0);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let scn = two_servers([0.0, 0.0]);
        // zero cost, zero backlog: every action scores 0
        let d = bp_decide(&scn, 0, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(d.action_index, 0);
        assert_eq!(d.runner_up_gap, 0.0);
        let dd = bp_decide_decomposed(&scn, 0, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(dd, d);
    }

    #[test]
    fn decomposed_matches_flat_on_grid() {
        let scn = two_servers([1.0, 3.0]);
        for q1 in 0..20 {
            for q2 in 0..20 {
                for v in [1.0, 2.0, 7.0] {
                    let q = [q1 as f64, q2 as f64];
                    assert_eq!(bp_decide(&scn, 0, &q, v).unwrap(), bp_decide_decomposed(&scn, 0, &q, v).unwrap());
                }
            }
        }
    }

    #[test]
    fn fractional_inputs_use_float_path() {
        let scn = two_servers([1.0, 1.0]);
        let d = bp_decide(&scn, 0, &[0.75, 2.5], 1.0).unwrap();
        // x1: 2*0.75 - 1 = 0.5 > 0, x2: 2.5 - 1 > 0
        assert_eq!(d.action_index, 3);
        assert!((d.objective_value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let scn = two_servers([1.0, 1.0]);
        assert_eq!(bp_decide(&scn, 1, &[0.0, 0.0], 1.0), Err(ControlError::State(1)));
        assert_eq!(bp_decide(&scn, 0, &[0.0], 1.0), Err(ControlError::BacklogShape { got: 1, expected: 2 }));
        assert_eq!(bp_decide(&scn, 0, &[-1.0, 0.0], 1.0), Err(ControlError::BadBacklog));
        assert_eq!(bp_decide(&scn, 0, &[0.0, 0.0], 0.5), Err(ControlError::BadV(0.5)));
    }
}
