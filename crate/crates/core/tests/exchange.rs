use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use udfwh::exchange::{
    decide_from_history, simulate_makespan, simulate_stream, Layout, OutBuffer, TargetRing, TransferCostModel,
};
use udfwh::ids::ProcessId;
use udfwh::scheduler::StatsStore;

fn layout() -> impl Strategy<Value = (u32, u32)> {
    (1u32..4, 1u32..5)
}

/// Pushes rows through an OutBuffer, acknowledging in a random order, and
/// returns what each target received.
fn pump_random(
    rows: &[(ProcessId, u32)],
    b: usize,
    q: usize,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<ProcessId, Vec<Vec<u32>>> {
    let mut buf = OutBuffer::new(b, q);
    let mut received: BTreeMap<ProcessId, Vec<Vec<u32>>> = BTreeMap::new();
    let mut in_flight: Vec<ProcessId> = Vec::new();
    let mut deliver = |sent: Vec<udfwh::exchange::BatchDescriptor<u32>>, in_flight: &mut Vec<ProcessId>| {
        for d in sent {
            assert!(d.rows.len() <= b);
            let got = received.entry(d.target).or_default();
            assert_eq!(d.seq as usize, got.len(), "batches arrive in emission order");
            got.push(d.rows);
            in_flight.push(d.target);
        }
    };
    if rows.is_empty() {
        assert!(buf.flush().is_empty());
    }
    let mut i = 0;
    while i < rows.len() || !buf.is_drained() {
        let ack = !in_flight.is_empty() && (i >= rows.len() || rng.gen_bool(0.4));
        if ack {
            let k = rng.gen_range(0..in_flight.len());
            let t = in_flight.swap_remove(k);
            let sent = buf.acknowledge(t);
            deliver(sent, &mut in_flight);
        } else if i < rows.len() {
            let (t, r) = rows[i];
            i += 1;
            let sent = buf.submit(t, [r]);
            deliver(sent, &mut in_flight);
            if i == rows.len() {
                let sent = buf.flush();
                deliver(sent, &mut in_flight);
            }
        }
        for t in in_flight.iter() {
            assert!(buf.outstanding(*t) <= q);
        }
    }
    received
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn round_robin_balance(n in 0u64..5000, (nodes, per) in layout(), cursor in 0usize..64) {
        let ring = TargetRing::new(Layout::new(nodes, per).processes());
        let ring = ring.clone().with_cursor(cursor % ring.len());
        let mut counts: BTreeMap<ProcessId, u64> = ring.targets().iter().map(|p| (*p, 0)).collect();
        for i in 0..n {
            *counts.get_mut(&ring.assign(i)).unwrap() += 1;
        }
        let max = counts.values().max().unwrap();
        let min = counts.values().min().unwrap();
        prop_assert!(max - min <= 1);
    }

    #[test]
    fn conservation_under_backpressure(
        seed in any::<u64>(),
        n in 0usize..400,
        b in 1usize..16,
        q in prop::sample::select(vec![1usize, 2, 8]),
        (nodes, per) in layout(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets = Layout::new(nodes, per).processes();
        let rows: Vec<(ProcessId, u32)> = (0..n as u32).map(|r| (*targets.choose(&mut rng).unwrap(), r)).collect();
        let received = pump_random(&rows, b, q, &mut rng);
        let mut expected: BTreeMap<ProcessId, Vec<u32>> = BTreeMap::new();
        for (t, r) in &rows {
            expected.entry(*t).or_default().push(*r);
        }
        let flat: BTreeMap<ProcessId, Vec<u32>> =
            received.into_iter().map(|(t, bs)| (t, bs.into_iter().flatten().collect())).collect();
        prop_assert_eq!(flat, expected);
    }

    #[test]
    fn stream_matches_closed_form(
        parts in prop::collection::vec(1u64..300, 1..10),
        (nodes, per) in layout(),
        per_row in 0.0f64..3.0,
        enabled in any::<bool>(),
        b in 1u64..64,
        q in prop::sample::select(vec![1usize, 2, 8]),
        remote_ms in 0.0f64..20.0,
        ser in 0u32..20,
    ) {
        let procs = Layout::new(nodes, per).processes();
        let cost = TransferCostModel { remote_batch_ms: remote_ms, ser_us_per_row: ser as f64 };
        let closed = simulate_makespan(&parts, &procs, per_row, enabled, b, &cost);
        let stream = simulate_stream(&parts, &procs, per_row, enabled, b, q, &cost);
        prop_assert_eq!(stream.makespan_us, closed.makespan_us);
        prop_assert_eq!(&stream.busy_us, &closed.busy_us);
        let total: usize = stream.received.values().map(Vec::len).sum();
        prop_assert_eq!(total as u64, parts.iter().sum::<u64>());
        let mut all: Vec<u64> = stream.received.values().flatten().copied().collect();
        all.sort_unstable();
        prop_assert!(all.iter().enumerate().all(|(i, &r)| r == i as u64));
    }

    #[test]
    fn zero_overhead_dominance(
        parts in prop::collection::vec(1u64..500, 1..12),
        (nodes, per) in layout(),
        per_row in 0.01f64..5.0,
        b in 1u64..200,
    ) {
        let procs = Layout::new(nodes, per).processes();
        let zero = TransferCostModel::zero();
        let on = simulate_makespan(&parts, &procs, per_row, true, b, &zero);
        let off = simulate_makespan(&parts, &procs, per_row, false, b, &zero);
        prop_assert!(on.makespan_us <= off.makespan_us);
    }

    #[test]
    fn overhead_bound(
        parts in prop::collection::vec(1u64..500, 1..12),
        (nodes, per) in layout(),
        per_row in 0.01f64..5.0,
        b in 1u64..200,
        remote_ms in 0u32..30,
        ser in 0u32..30,
    ) {
        let procs = Layout::new(nodes, per).processes();
        let cost = TransferCostModel { remote_batch_ms: remote_ms as f64, ser_us_per_row: ser as f64 };
        let on = simulate_makespan(&parts, &procs, per_row, true, b, &cost);
        let ideal = simulate_makespan(&parts, &procs, per_row, true, b, &TransferCostModel::zero());
        let p = on.busiest();
        let bound = ideal.makespan_us + on.remote_batches[&p] * remote_ms as u64 * 1000 + on.rows[&p] * ser as u64;
        prop_assert!(on.makespan_us <= bound);
    }

    #[test]
    fn gate_threshold(history in prop::collection::vec(0.0f64..10.0, 0..30), k in 1usize..15, t in 0.01f64..10.0) {
        let d = decide_from_history(&history, k, t);
        if history.is_empty() {
            prop_assert!(!d.enabled);
        }
        if d.enabled {
            prop_assert!(d.per_row_ms_estimate >= t);
        }
    }
}

#[test]
fn balance_on_ten_thousand_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10_000 {
        let n: u64 = rng.gen_range(0..2000);
        let m: u32 = rng.gen_range(1..33);
        let ring = TargetRing::new(Layout::new(1, m).processes());
        let mut counts = vec![0u64; m as usize];
        for i in 0..n {
            counts[ring.assign(i).process as usize] += 1;
        }
        assert!(
            counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1,
            "n={n} m={m}"
        );
    }
}

#[test]
fn gate_is_off_without_history() {
    let store = StatsStore::new(10);
    assert!(!udfwh::exchange::decide(&store, "q", 10, 0.5).enabled);
    store.record_per_row_ms("q", 2.0);
    assert!(udfwh::exchange::decide(&store, "q", 10, 1.0).enabled);
    assert!(!udfwh::exchange::decide(&store, "q", 10, 2.5).enabled);
}
