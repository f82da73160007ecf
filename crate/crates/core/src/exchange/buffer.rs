use std::collections::{BTreeMap, VecDeque};

use crate::ids::ProcessId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchDescriptor<T> {
    pub target: ProcessId,
    /// Per-target emission sequence, starting at 0.
    pub seq: u64,
    pub rows: Vec<T>,
}

#[derive(Debug)]
struct TargetQueue<T> {
    pending: VecDeque<T>,
    outstanding: VecDeque<u64>,
    next_seq: u64,
}

impl<T> Default for TargetQueue<T> {
    fn default() -> Self {
        Self {
            pending: VecDeque::new(),
            outstanding: VecDeque::new(),
            next_seq: 0,
        }
    }
}

/// Per-target send buffers. A batch holds at most `batch_rows` rows and at
/// most `max_outstanding` sent batches per target may await acknowledgment.
/// Partial batches go out only after `flush`.
#[derive(Debug)]
pub struct OutBuffer<T> {
    batch_rows: usize,
    max_outstanding: usize,
    closed: bool,
    targets: BTreeMap<ProcessId, TargetQueue<T>>,
}

impl<T> OutBuffer<T> {
    /// `max_outstanding = usize::MAX` disables backpressure.
    pub fn new(batch_rows: usize, max_outstanding: usize) -> Self {
        assert!(batch_rows >= 1 && max_outstanding >= 1, "B and Q must be >= 1");
        Self {
            batch_rows,
            max_outstanding,
            closed: false,
            targets: BTreeMap::new(),
        }
    }

    pub fn batch_rows(&self) -> usize {
        self.batch_rows
    }

    pub fn max_outstanding(&self) -> usize {
        self.max_outstanding
    }

    fn pump(&mut self, target: ProcessId, out: &mut Vec<BatchDescriptor<T>>) {
        let (b, q, closed) = (self.batch_rows, self.max_outstanding, self.closed);
        let Some(tq) = self.targets.get_mut(&target) else {
            return;
        };
        while tq.outstanding.len() < q && (tq.pending.len() >= b || (closed && !tq.pending.is_empty())) {
            let n = b.min(tq.pending.len());
            let rows: Vec<T> = tq.pending.drain(..n).collect();
            let seq = tq.next_seq;
            tq.next_seq += 1;
            tq.outstanding.push_back(seq);
            out.push(BatchDescriptor { target, seq, rows });
        }
    }

    pub fn submit(&mut self, target: ProcessId, rows: impl IntoIterator<Item = T>) -> Vec<BatchDescriptor<T>> {
        assert!(!self.closed, "submit after flush");
        self.targets.entry(target).or_default().pending.extend(rows);
        let mut out = Vec::new();
        self.pump(target, &mut out);
        out
    }

    /// Acknowledges the oldest outstanding batch for `target`, returning any
    /// batches that became sendable. No-op when nothing is outstanding.
    pub fn acknowledge(&mut self, target: ProcessId) -> Vec<BatchDescriptor<T>> {
        let mut out = Vec::new();
        if let Some(tq) = self.targets.get_mut(&target) {
            if tq.outstanding.pop_front().is_some() {
                self.pump(target, &mut out);
            }
        }
        out
    }

    /// Marks end of stream and emits whatever the outstanding bound allows,
    /// including partial batches.
    pub fn flush(&mut self) -> Vec<BatchDescriptor<T>> {
        self.closed = true;
        let mut out = Vec::new();
        let ids: Vec<ProcessId> = self.targets.keys().copied().collect();
        for t in ids {
            self.pump(t, &mut out);
        }
        out
    }

    pub fn outstanding(&self, target: ProcessId) -> usize {
        self.targets.get(&target).map_or(0, |t| t.outstanding.len())
    }

    pub fn pending_rows(&self, target: ProcessId) -> usize {
        self.targets.get(&target).map_or(0, |t| t.pending.len())
    }

    /// Batches sent but not yet acknowledged, summed over targets.
    pub fn total_outstanding(&self) -> usize {
        self.targets.values().map(|t| t.outstanding.len()).sum()
    }

    /// Flushed, nothing pending and nothing outstanding.
    pub fn is_drained(&self) -> bool {
        self.closed
            && self
                .targets
                .values()
                .all(|t| t.pending.is_empty() && t.outstanding.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T0: ProcessId = ProcessId { node: 0, process: 0 };

    #[test]
    fn full_batches_then_flush() {
        let mut b = OutBuffer::new(100, usize::MAX);
        let sent = b.submit(T0, 0..250);
        assert_eq!(sent.len(), 2);
        assert!(sent.iter().all(|d| d.rows.len() == 100));
        assert_eq!(b.pending_rows(T0), 50);
        let rest = b.flush();
        assert_eq!(rest.len(), 1);
        assert_eq!(rest[0].rows, (200..250).collect::<Vec<_>>());
        assert_eq!(rest[0].seq, 2);
    }

    #[test]
    fn outstanding_bound() {
        let mut b = OutBuffer::new(10, 1);
        let sent = b.submit(T0, 0..20);
        assert_eq!(sent.len(), 1);
        assert_eq!(b.pending_rows(T0), 10);
        let next = b.acknowledge(T0);
        assert_eq!(next.len(), 1);
        assert_eq!(next[0].rows[0], 10);
        assert!(b.acknowledge(T0).is_empty());
        assert!(b.acknowledge(T0).is_empty());
    }

    #[test]
    fn empty_flush() {
        let mut b: OutBuffer<u32> = OutBuffer::new(10, 2);
        assert!(b.flush().is_empty());
        assert!(b.is_drained());
    }

    #[test]
    fn partial_held_by_bound_after_flush() {
        let mut b = OutBuffer::new(4, 1);
        assert_eq!(b.submit(T0, 0..6).len(), 1);
        assert!(b.flush().is_empty());
        let tail = b.acknowledge(T0);
        assert_eq!(tail[0].rows, vec![4, 5]);
        assert!(!b.is_drained());
        b.acknowledge(T0);
        assert!(b.is_drained());
    }
}
