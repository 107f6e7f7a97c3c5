#![allow(dead_code)]

use bpsim_core::auxctrl::{AuxSpec, Objective};
use bpsim_core::model::Scenario;

fn as_int(x: f64) -> i128 {
    assert_eq!(x.fract(), 0.0, "oracle needs integral data, got {x}");
    x as i128
}

/// Brute-force `argmax_k -V f(s,k) + sum_j q_j (mu_j - A_j)` in exact integers.
pub fn naive_decide(scn: &Scenario, state: usize, backlog: &[u64], v: u64) -> (usize, i128) {
    let mut best: Option<(usize, i128)> = None;
    for k in 0..scn.action_count(state) {
        let row = scn.row(state, k);
        let mut val = -(v as i128) * as_int(row.cost);
        for j in 0..backlog.len() {
            val += backlog[j] as i128 * (as_int(row.services[j]) - as_int(row.arrivals[j]));
        }
        if best.is_none_or(|(_, b)| val > b) {
            best = Some((k, val));
        }
    }
    best.expect("state has actions")
}

/// Brute-force `argmax_k h·y(s,k) + sum_j q_j (mu_j - A_j)` in exact integers.
pub fn naive_aux_decide(scn: &Scenario, aux: &AuxSpec, state: usize, backlog: &[u64], h: &[u64]) -> (usize, i128) {
    let mut best: Option<(usize, i128)> = None;
    for k in 0..scn.action_count(state) {
        let row = scn.row(state, k);
        let mut val = 0i128;
        for (hk, yk) in h.iter().zip(&aux.attributes[state][k]) {
            val += *hk as i128 * as_int(*yk);
        }
        for j in 0..backlog.len() {
            val += backlog[j] as i128 * (as_int(row.services[j]) - as_int(row.arrivals[j]));
        }
        if best.is_none_or(|(_, b)| val > b) {
            best = Some((k, val));
        }
    }
    best.expect("state has actions")
}

/// Brute-force dual function: per state, minimum of `V f - gamma·(mu - A)`.
pub fn naive_dual(scn: &Scenario, gamma: &[f64], v: f64) -> f64 {
    let mut g = 0.0;
    for (s, p) in scn.stationary().iter().enumerate() {
        let mut best = f64::INFINITY;
        for k in 0..scn.action_count(s) {
            let row = scn.row(s, k);
            let mut val = v * row.cost;
            for j in 0..gamma.len() {
                val -= gamma[j] * (row.services[j] - row.arrivals[j]);
            }
            best = best.min(val);
        }
        g += p * best;
    }
    g
}

/// Per-coordinate objective of the auxiliary choice, `V Cost_k(z) + h z`.
pub fn aux_coord_objective(obj: &Objective, k: usize, z: f64, h: f64, v: f64) -> f64 {
    let cost = match obj {
        Objective::Linear { c } => c[k] * z,
        Objective::Quadratic { weights, centers } => 0.5 * weights[k] * (z - centers[k]).powi(2),
        Objective::LogSum { a } => -a[k] * z.ln_1p(),
    };
    v * cost + h * z
}

/// Minimizer of each coordinate over the grid `{0, step, 2 step, ..} ∩ [0, hi]`.
pub fn aux_grid_oracle(aux: &AuxSpec, h: &[f64], v: f64, step: f64) -> Vec<f64> {
    let n = (aux.delta_max / step).round() as usize;
    (0..aux.attribute_dim)
        .map(|k| {
            let mut best = (0.0, f64::INFINITY);
            for i in 0..=n {
                let z = (i as f64 * step).min(aux.delta_max);
                let val = aux_coord_objective(&aux.objective, k, z, h[k], v);
                if val < best.1 {
                    best = (z, val);
                }
            }
            best.0
        })
        .collect()
}

/// Least squares through the origin, `y ≈ c x`; returns the residual sum of squares.
pub fn origin_fit_sse(points: &[(f64, f64)]) -> f64 {
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let c = sxy / sxx;
    points.iter().map(|(x, y)| (y - c * x).powi(2)).sum()
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
