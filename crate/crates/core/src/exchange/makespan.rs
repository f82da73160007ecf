use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, ProcessId};

use super::ring::{nodes_of, TargetRing};
use super::OutBuffer;

/// Cost of moving a batch to a process on another node. Local sends are free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferCostModel {
    pub remote_batch_ms: f64,
    pub ser_us_per_row: f64,
}

impl TransferCostModel {
    pub fn zero() -> Self {
        Self {
            remote_batch_ms: 0.0,
            ser_us_per_row: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.remote_batch_ms >= 0.0
            && self.ser_us_per_row >= 0.0
            && self.remote_batch_ms.is_finite()
            && self.ser_us_per_row.is_finite()
    }

    /// Receiver-side overhead in virtual microseconds for one batch.
    pub fn batch_cost_us(&self, remote: bool, rows: u64) -> u64 {
        if !remote {
            return 0;
        }
        ms_to_us(self.remote_batch_ms) + (self.ser_us_per_row * rows as f64).round() as u64
    }
}

impl Default for TransferCostModel {
    fn default() -> Self {
        Self {
            remote_batch_ms: 10.0,
            ser_us_per_row: 10.0,
        }
    }
}

pub fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

/// Number of `i` in `[lo, hi)` with `i mod m == j`.
fn count_congruent(lo: u64, hi: u64, j: u64, m: u64) -> u64 {
    let below = |x: u64| x / m + u64::from(x % m > j);
    below(hi) - below(lo)
}

/// Which process each row of each partition goes to, as row counts per
/// (source node, target). Partition `p` lives on the `p mod k`-th node of the
/// query's processes. Disabled: rows stay on that node, dealt round-robin over
/// its local processes with a cursor that continues across partitions.
/// Enabled: row `i` of the concatenated stream goes to `ring.assign(i)`.
pub fn flows(partition_sizes: &[u64], processes: &[ProcessId], enabled: bool) -> BTreeMap<(NodeId, ProcessId), u64> {
    let ring = TargetRing::new(processes.to_vec());
    let nodes = nodes_of(ring.targets());
    let mut out = BTreeMap::new();
    let mut add = |k: (NodeId, ProcessId), n: u64| {
        if n > 0 {
            *out.entry(k).or_insert(0) += n;
        }
    };
    if enabled {
        let m = ring.len() as u64;
        let mut start = 0u64;
        for (p, &size) in partition_sizes.iter().enumerate() {
            let src = nodes[p % nodes.len()];
            for (j, &t) in ring.targets().iter().enumerate() {
                add((src, t), count_congruent(start, start + size, j as u64, m));
            }
            start += size;
        }
    } else {
        let mut cursor: BTreeMap<NodeId, u64> = BTreeMap::new();
        for (p, &size) in partition_sizes.iter().enumerate() {
            let src = nodes[p % nodes.len()];
            let local: Vec<ProcessId> = ring.targets().iter().copied().filter(|t| t.node == src).collect();
            let m = local.len() as u64;
            let c = cursor.entry(src).or_insert(0);
            for (j, &t) in local.iter().enumerate() {
                add((src, t), count_congruent(*c, *c + size, j as u64, m));
            }
            *c += size;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MakespanReport {
    pub busy_us: BTreeMap<ProcessId, u64>,
    pub rows: BTreeMap<ProcessId, u64>,
    pub remote_batches: BTreeMap<ProcessId, u64>,
    pub makespan_us: u64,
}

impl MakespanReport {
    pub fn makespan_ms(&self) -> f64 {
        self.makespan_us as f64 / 1000.0
    }

    /// The process that determines the makespan (first on ties).
    pub fn busiest(&self) -> ProcessId {
        let max = self.makespan_us;
        *self.busy_us.iter().find(|(_, &b)| b == max).expect("non-empty").0
    }
}

/// Closed-form per-process busy time: rows times per-row cost, plus transfer
/// overhead for every remote batch received. Batches are cut per
/// (source node, target) stream, so each stream contributes `ceil(rows / B)`.
pub fn simulate_makespan(
    partition_sizes: &[u64],
    processes: &[ProcessId],
    per_row_ms: f64,
    enabled: bool,
    batch_rows: u64,
    cost: &TransferCostModel,
) -> MakespanReport {
    assert!(!partition_sizes.is_empty(), "need at least one partition");
    assert!(batch_rows >= 1);
    let per_row_us = ms_to_us(per_row_ms);
    let mut busy: BTreeMap<ProcessId, u64> = processes.iter().map(|p| (*p, 0)).collect();
    let mut rows: BTreeMap<ProcessId, u64> = busy.clone();
    let mut remote: BTreeMap<ProcessId, u64> = busy.clone();
    for ((src, t), n) in flows(partition_sizes, processes, enabled) {
        *rows.get_mut(&t).expect("known target") += n;
        *busy.get_mut(&t).expect("known target") += n * per_row_us;
        if src != t.node {
            let full = n / batch_rows;
            let tail = n % batch_rows;
            let mut extra = full * cost.batch_cost_us(true, batch_rows);
            if tail > 0 {
                extra += cost.batch_cost_us(true, tail);
            }
            *busy.get_mut(&t).expect("known target") += extra;
            *remote.get_mut(&t).expect("known target") += full + u64::from(tail > 0);
        }
    }
    let makespan_us = busy.values().copied().max().unwrap_or(0);
    MakespanReport {
        busy_us: busy,
        rows,
        remote_batches: remote,
        makespan_us,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchCompletion {
    pub time_us: u64,
    pub target: ProcessId,
    pub source: NodeId,
    pub seq: u64,
    pub rows: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamReport {
    pub makespan_us: u64,
    pub busy_us: BTreeMap<ProcessId, u64>,
    /// Global row indices received per target, in processing order.
    pub received: BTreeMap<ProcessId, Vec<u64>>,
    /// Every batch, ordered by completion time then target.
    pub completions: Vec<BatchCompletion>,
}

struct InFlight {
    source: NodeId,
    seq: u64,
    rows: Vec<u64>,
}

/// Event-driven run of the same model: one `OutBuffer` per source node, an
/// instantaneous producer, receivers that process batches serially, and an
/// acknowledgment to the sending buffer when each batch completes.
pub fn simulate_stream(
    partition_sizes: &[u64],
    processes: &[ProcessId],
    per_row_ms: f64,
    enabled: bool,
    batch_rows: u64,
    max_outstanding: usize,
    cost: &TransferCostModel,
) -> StreamReport {
    assert!(!partition_sizes.is_empty(), "need at least one partition");
    let ring = TargetRing::new(processes.to_vec());
    let nodes = nodes_of(ring.targets());
    let per_row_us = ms_to_us(per_row_ms);

    let mut buffers: BTreeMap<NodeId, OutBuffer<u64>> = nodes
        .iter()
        .map(|n| (*n, OutBuffer::new(batch_rows as usize, max_outstanding)))
        .collect();
    let mut inbox: BTreeMap<ProcessId, VecDeque<InFlight>> =
        ring.targets().iter().map(|t| (*t, VecDeque::new())).collect();
    let deliver = |inbox: &mut BTreeMap<ProcessId, VecDeque<InFlight>>,
                   source: NodeId,
                   sent: Vec<super::BatchDescriptor<u64>>| {
        for d in sent {
            inbox.get_mut(&d.target).expect("known target").push_back(InFlight {
                source,
                seq: d.seq,
                rows: d.rows,
            });
        }
    };

    // Producer: emits every row at time zero.
    let mut row = 0u64;
    let mut local_cursor: BTreeMap<NodeId, usize> = BTreeMap::new();
    for (p, &size) in partition_sizes.iter().enumerate() {
        let src = nodes[p % nodes.len()];
        let local: Vec<ProcessId> = ring.targets().iter().copied().filter(|t| t.node == src).collect();
        for _ in 0..size {
            let target = if enabled {
                ring.assign(row)
            } else {
                let c = local_cursor.entry(src).or_insert(0);
                let t = local[*c % local.len()];
                *c += 1;
                t
            };
            let sent = buffers.get_mut(&src).expect("source buffer").submit(target, [row]);
            deliver(&mut inbox, src, sent);
            row += 1;
        }
    }
    for (&src, buf) in buffers.iter_mut() {
        let sent = buf.flush();
        deliver(&mut inbox, src, sent);
    }

    let mut busy: BTreeMap<ProcessId, u64> = ring.targets().iter().map(|t| (*t, 0)).collect();
    let mut received: BTreeMap<ProcessId, Vec<u64>> = ring.targets().iter().map(|t| (*t, Vec::new())).collect();
    let mut running: BTreeMap<ProcessId, InFlight> = BTreeMap::new();
    let mut events: BinaryHeap<Reverse<(u64, ProcessId)>> = BinaryHeap::new();
    let mut completions = Vec::new();

    let start_next = |t: ProcessId,
                      now: u64,
                      inbox: &mut BTreeMap<ProcessId, VecDeque<InFlight>>,
                      running: &mut BTreeMap<ProcessId, InFlight>,
                      busy: &mut BTreeMap<ProcessId, u64>,
                      events: &mut BinaryHeap<Reverse<(u64, ProcessId)>>| {
        if let Some(b) = inbox.get_mut(&t).expect("known target").pop_front() {
            let n = b.rows.len() as u64;
            let d = cost.batch_cost_us(b.source != t.node, n) + n * per_row_us;
            *busy.get_mut(&t).expect("known target") += d;
            events.push(Reverse((now + d, t)));
            running.insert(t, b);
        }
    };

    for &t in ring.targets() {
        start_next(t, 0, &mut inbox, &mut running, &mut busy, &mut events);
    }
    let mut makespan_us = 0;
    while let Some(Reverse((now, t))) = events.pop() {
        makespan_us = now;
        let done = running.remove(&t).expect("running batch");
        completions.push(BatchCompletion {
            time_us: now,
            target: t,
            source: done.source,
            seq: done.seq,
            rows: done.rows.len() as u64,
        });
        received
            .get_mut(&t)
            .expect("known target")
            .extend_from_slice(&done.rows);
        let sent = buffers.get_mut(&done.source).expect("source buffer").acknowledge(t);
        deliver(&mut inbox, done.source, sent);
        start_next(t, now, &mut inbox, &mut running, &mut busy, &mut events);
    }
    debug_assert!(buffers.values().all(OutBuffer::is_drained));
    StreamReport {
        makespan_us,
        busy_us: busy,
        received,
        completions,
    }
}

#[cfg(test)]
mod tests {
    use super::super::Layout;
    use super::*;

    fn layout(n: u32, p: u32) -> Vec<ProcessId> {
        Layout::new(n, p).processes()
    }

    #[test]
    fn skewed_baseline() {
        let r = simulate_makespan(
            &[700, 100, 100, 100],
            &layout(2, 2),
            5.0,
            false,
            1024,
            &TransferCostModel::zero(),
        );
        assert_eq!(r.rows[&ProcessId::new(0, 0)], 400);
        assert_eq!(r.makespan_us, 2_000_000);
    }

    #[test]
    fn redistributed_zero_cost() {
        let r = simulate_makespan(
            &[700, 100, 100, 100],
            &layout(2, 2),
            5.0,
            true,
            1024,
            &TransferCostModel::zero(),
        );
        assert!(r.rows.values().all(|&n| n == 250));
        assert_eq!(r.makespan_us, 1_250_000);
    }

    #[test]
    fn single_process_either_way() {
        let procs = layout(1, 1);
        let c = TransferCostModel::default();
        let a = simulate_makespan(&[123], &procs, 2.0, false, 10, &c);
        let b = simulate_makespan(&[123], &procs, 2.0, true, 10, &c);
        assert_eq!(a.makespan_us, b.makespan_us);
        assert_eq!(a.makespan_us, 246_000);
    }

    #[test]
    fn remote_overhead_is_per_batch() {
        // 2 nodes x 1 proc, one partition on node 0: odd rows cross to node 1.
        let c = TransferCostModel {
            remote_batch_ms: 10.0,
            ser_us_per_row: 10.0,
        };
        let r = simulate_makespan(&[250], &layout(2, 1), 1.0, true, 100, &c);
        let n1 = ProcessId::new(1, 0);
        assert_eq!(r.rows[&n1], 125);
        assert_eq!(r.remote_batches[&n1], 2);
        assert_eq!(r.busy_us[&n1], 125_000 + 2 * 10_000 + 1250);
        assert_eq!(r.busy_us[&ProcessId::new(0, 0)], 125_000);
    }

    #[test]
    fn counting() {
        assert_eq!(count_congruent(0, 10, 0, 4), 3);
        assert_eq!(count_congruent(0, 10, 3, 4), 2);
        assert_eq!(count_congruent(5, 6, 1, 4), 1);
        assert_eq!(count_congruent(5, 5, 1, 4), 0);
    }

    #[test]
    fn stream_matches_closed_form() {
        let c = TransferCostModel::default();
        for enabled in [false, true] {
            for q in [1, 2, 8] {
                let parts = [857, 373, 230, 162, 124, 100, 83, 71];
                let a = simulate_makespan(&parts, &layout(2, 4), 5.0, enabled, 100, &c);
                let s = simulate_stream(&parts, &layout(2, 4), 5.0, enabled, 100, q, &c);
                assert_eq!(a.busy_us, s.busy_us);
                assert_eq!(a.makespan_us, s.makespan_us);
                let total: usize = s.received.values().map(Vec::len).sum();
                assert_eq!(total, 2000);
            }
        }
    }

    #[test]
    fn stream_preserves_per_source_order() {
        let s = simulate_stream(&[40, 30], &layout(2, 2), 1.0, true, 7, 2, &TransferCostModel::default());
        for t in s.received.keys() {
            let mut last: BTreeMap<NodeId, u64> = BTreeMap::new();
            for c in s.completions.iter().filter(|c| c.target == *t) {
                if let Some(prev) = last.insert(c.source, c.seq) {
                    assert_eq!(c.seq, prev + 1);
                }
            }
        }
    }
}
