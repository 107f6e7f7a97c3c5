mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bpsim_core::dualopt::{check_slackness, dual_value, solve_dual, DualOptions};
use bpsim_core::engine::{estimate_attraction, run_with_traces, BacklogTrace, EngineError, RunConfig};
use bpsim_core::format::load_builtin;
use bpsim_core::lp::{maximize, Row, RowKind};
use bpsim_core::model::{deterministic_policy, stationary_expectation, Scenario};
use bpsim_core::queueing::{
    delay_band_report, little_bound_check, BandRecord, Discipline, HopRecord, LittleCheckInput, Packet, PacketIds,
    QueueBuffer,
};

fn scenario(name: &str) -> Scenario {
    load_builtin(name).unwrap().scenario
}

/// Every deterministic stationary policy as `(cost, drift)`.
fn all_columns(scn: &Scenario) -> Vec<(f64, Vec<f64>)> {
    let counts: Vec<usize> = (0..scn.state_count()).map(|s| scn.action_count(s)).collect();
    let mut choice = vec![0; counts.len()];
    let mut out = Vec::new();
    loop {
        out.push(stationary_expectation(scn, &deterministic_policy(scn, &choice)).unwrap());
        let mut i = 0;
        while i < choice.len() {
            choice[i] += 1;
            if choice[i] < counts[i] {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
        if i == choice.len() {
            return out;
        }
    }
}

#[test]
fn tandem_matches_its_description() {
    let scn = scenario("tandem");
    assert_eq!((scn.state_count(), scn.queue_count()), (3, 2));
    // state labels (R1, R2, CH1, CH2)
    let channels = [(2.0, 1.0), (2.0, 2.0), (1.0, 2.0)];
    let arrivals = [1.0, 1.0, 0.0];
    for s in 0..3 {
        assert_eq!(scn.action_count(s), 4);
        for k in 0..4 {
            let (x1, x2) = ((k / 2) as f64, (k % 2) as f64);
            let row = scn.row(s, k);
            assert_eq!(row.cost, x1 + x2);
            assert_eq!(row.services, vec![x1 * channels[s].0, x2 * channels[s].1]);
            assert_eq!(row.arrivals[0], arrivals[s]);
        }
    }
}

#[test]
fn multihop7_has_one_power_unit_per_node() {
    let scn = scenario("multihop7");
    assert_eq!(scn.queue_count(), 6);
    let factors = scn.factors().expect("multihop7 is factored");
    for (s, f) in factors.iter().enumerate() {
        // node options are idle plus one per outgoing link
        assert_eq!(f.sizes, vec![3, 2, 3, 2, 2, 2]);
        for k in 0..scn.action_count(s) {
            assert!(scn.cost(s, k) <= 6.0);
        }
    }
}

#[test]
fn dual_optimum_equals_primal_lp_over_all_policies() {
    let scn = scenario("tandem");
    let cols = all_columns(&scn);
    assert_eq!(cols.len(), 64);
    let r = scn.queue_count();
    for v in [20.0, 100.0] {
        let c: Vec<f64> = cols.iter().map(|(cost, _)| -v * cost).collect();
        let mut rows: Vec<Row> = (0..r).map(|j| Row::new(cols.iter().map(|(_, d)| d[j]).collect(), RowKind::Le, 0.0)).collect();
        rows.push(Row::new(vec![1.0; cols.len()], RowKind::Eq, 1.0));
        let primal = -maximize(&c, &rows).unwrap().objective;
        let sol = solve_dual(&scn, v, &DualOptions::default()).unwrap();
        assert!((sol.g_value - primal).abs() < 1e-7 * primal.abs());
        assert!((sol.gamma_star[0] / v - 1.5).abs() < 1e-9);
        assert!((sol.gamma_star[1] / v - 1.0).abs() < 1e-9);
        assert!(sol.converged);
    }
}

#[test]
fn slackness_certificate_achieves_its_margin() {
    for name in ["tandem", "multihop7"] {
        let scn = scenario(name);
        let cert = check_slackness(&scn).unwrap();
        let (_, drift) = stationary_expectation(&scn, &cert.policy).unwrap();
        assert!(cert.eta > 0.0);
        for d in drift {
            assert!(d <= -cert.eta + 1e-9, "{name}: drift {d} vs eta {}", cert.eta);
        }
    }
    let tandem = scenario("tandem");
    let cols = all_columns(&tandem);
    // best uniform margin by brute-force LP over every deterministic policy
    let n = cols.len();
    let mut c = vec![0.0; n];
    c.push(1.0);
    c.push(-1.0);
    let mut rows: Vec<Row> = (0..2)
        .map(|j| {
            let mut coeffs: Vec<f64> = cols.iter().map(|(_, d)| d[j]).collect();
            coeffs.extend([1.0, -1.0]);
            Row::new(coeffs, RowKind::Le, 0.0)
        })
        .collect();
    let mut ones = vec![1.0; n];
    ones.extend([0.0, 0.0]);
    rows.push(Row::new(ones, RowKind::Eq, 1.0));
    let best = maximize(&c, &rows).unwrap().objective;
    assert!((check_slackness(&tandem).unwrap().eta - best).abs() < 1e-9);
}

#[test]
fn dual_solution_dominates_random_probes() {
    let scn = scenario("multihop7");
    let v = 100.0;
    let sol = solve_dual(&scn, v, &DualOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2_000 {
        let g: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..400.0)).collect();
        assert!(dual_value(&scn, &g, v).unwrap().value <= sol.g_value + 1e-6 * sol.g_value.abs());
    }
    assert!(sol.l_hat.unwrap() > 0.0);
}

/// Trace whose deviation `|q - gamma|` is exponential with mean `k0`, so
/// `P(dev > D + k0 m) = e^{-D/k0} e^{-m}`.
fn laplace_trace(n: usize, k0: f64, gamma: f64, seed: u64) -> BacklogTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let e = -k0 * (1.0 - rng.gen::<f64>()).ln();
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            vec![gamma + sign * e]
        })
        .collect();
    BacklogTrace::from_rows(1, &rows)
}

#[test]
fn attraction_recovers_laplace_tail() {
    let trace = laplace_trace(200_000, 5.0, 100.0, 1);
    let m: Vec<f64> = (0..=8).map(f64::from).collect();
    let fit = estimate_attraction(&trace, &[100.0], &[0.0, 2.0, 5.0], &[1.0, 2.0, 5.0, 10.0], &m).unwrap();
    assert_eq!(fit.k_hat, 5.0);
    assert!((fit.decay_slope + 1.0).abs() < 0.05, "slope {}", fit.decay_slope);
    for &(mm, p) in &fit.points {
        let expect = (-(fit.d_hat + 5.0 * mm) / 5.0).exp();
        if expect > 1e-3 {
            assert!((p / expect - 1.0).abs() < 0.1, "m={mm}: {p} vs {expect}");
        }
    }
}

#[test]
fn attraction_needs_a_long_trace() {
    let trace = laplace_trace(1_000, 5.0, 10.0, 2);
    let err = estimate_attraction(&trace, &[10.0], &[0.0], &[1.0], &[0.0, 1.0, 2.0]).unwrap_err();
    assert!(matches!(err, EngineError::InsufficientData(_)));
}

#[test]
fn periodic_example_delays() {
    let mut fifo = QueueBuffer::new(Discipline::Fifo);
    let mut lifo = QueueBuffer::new(Discipline::Lifo);
    let mut ids = PacketIds::new();
    let (mut wf, mut wl) = (Vec::new(), Vec::new());
    for t in 0..100u64 {
        let n = if t == 0 { 2 } else { 1 };
        let batch: Vec<Packet> = (0..n).map(|_| Packet::new(ids.mint(), t)).collect();
        let mu = u64::from(t > 0);
        wf.extend(fifo.apply_slot(mu, batch.clone(), t, &mut ids).delays);
        wl.extend(lifo.apply_slot(mu, batch, t, &mut ids).delays);
        assert_eq!((fifo.backlog_level(), lifo.backlog_level()), (2, 2));
    }
    assert_eq!(wf[0], 1);
    assert!(wf[1..].iter().all(|&w| w == 2));
    assert!(wl.iter().all(|&w| w == 1));
    assert_eq!(lifo.data()[0].id, 0);
}

#[test]
fn little_bound_holds_for_fifo_bernoulli_queue() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ids = PacketIds::new();
    let mut q = QueueBuffer::new(Discipline::Fifo);
    let horizon = 100_000u64;
    let mut hops = Vec::new();
    let mut arrived = 0u64;
    for t in 0..horizon {
        let batch: Vec<Packet> = if rng.gen_bool(0.5) { vec![Packet::new(ids.mint(), t)] } else { Vec::new() };
        arrived += batch.len() as u64;
        let out = q.apply_slot(1, batch, t, &mut ids);
        for p in out.departed.iter().filter(|p| !p.is_null) {
            hops.push(HopRecord { enqueue_slot: p.hop_enqueue_slot, dequeue_slot: Some(t), entry_backlog: p.entry_backlog });
        }
    }
    let deepest = hops.iter().map(|h| h.entry_backlog + 1).max().unwrap();
    let lambda = arrived as f64 / horizon as f64;
    let check = little_bound_check(&LittleCheckInput::from_hops(&hops, (1, deepest), horizon, lambda)).unwrap();
    assert!(check.holds, "{check:?}");
    assert!((check.empirical_rate.unwrap() - lambda).abs() < 1e-3);
}

#[test]
fn band_report_matches_hand_count() {
    let records = vec![
        BandRecord { entry_backlog: 2.0, delay: 4, departed: true },
        BandRecord { entry_backlog: 5.0, delay: 2, departed: true },
        BandRecord { entry_backlog: 5.0, delay: 0, departed: false },
        BandRecord { entry_backlog: 9.0, delay: 7, departed: true },
    ];
    let rep = delay_band_report(&records, (3.0, 8.0), 2.0, 0.8).unwrap();
    assert_eq!(rep.total, 4);
    assert_eq!(rep.in_band_departed, 1);
    assert_eq!(rep.mean_delay, Some(2.0));
    assert_eq!(rep.lambda_tilde, 0.2);
    assert_eq!(rep.outside_fraction, 0.5);
    assert_eq!(rep.w_bound, Some((8.0 - 3.0 + 2.0) / 0.2));
}

#[test]
fn engine_packet_records_are_consistent() {
    let scn = scenario("tandem");
    let mut cfg = RunConfig::new(10.0, Discipline::Lifo, 5_000, 3);
    cfg.record_packets = true;
    let out = run_with_traces(&scn, &cfg).unwrap();
    let packets = out.packets.unwrap();
    for p in &packets {
        if let Some(d) = p.dequeue_slot {
            assert!(d > p.enqueue_slot);
        }
        if p.end_to_end_delay.is_some() {
            assert_eq!(p.queue_id, 1);
            assert!(!p.is_null);
        }
    }
    let delivered = packets.iter().filter(|p| p.end_to_end_delay.is_some() && p.enqueue_slot >= out.report.warmup).count();
    assert!(delivered > 0);
}
