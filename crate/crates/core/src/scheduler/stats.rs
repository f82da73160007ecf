use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use crate::ids::QueryId;

use super::SchedulerError;

#[derive(Debug)]
struct Running {
    key: String,
    max_bytes: u64,
}

#[derive(Debug, Default)]
struct Inner {
    mem: HashMap<String, VecDeque<u64>>,
    per_row_ms: HashMap<String, VecDeque<f64>>,
    running: HashMap<QueryId, Running>,
}

/// Per query key: the last `k_max` finalized peak-memory values and the last
/// `k_max` per-row execution times, newest last.
#[derive(Debug)]
pub struct StatsStore {
    k_max: usize,
    inner: Mutex<Inner>,
}

fn push_bounded<T>(ring: &mut VecDeque<T>, v: T, k_max: usize) {
    ring.push_back(v);
    while ring.len() > k_max {
        ring.pop_front();
    }
}

impl StatsStore {
    pub fn new(k_max: usize) -> Self {
        assert!(k_max >= 1, "k_max must be at least 1");
        Self {
            k_max,
            inner: Mutex::new(Inner::default()),
        }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("stats lock")
    }

    /// Opens a running-max slot for `query_id`.
    pub fn begin_query(&self, query_key: &str, query_id: QueryId) {
        self.lock().running.insert(
            query_id,
            Running {
                key: query_key.to_string(),
                max_bytes: 0,
            },
        );
    }

    pub fn record_sample(&self, query_key: &str, query_id: QueryId, mem_bytes: u64) -> Result<(), SchedulerError> {
        let mut inner = self.lock();
        match inner.running.get_mut(&query_id) {
            Some(r) if r.key == query_key => {
                r.max_bytes = r.max_bytes.max(mem_bytes);
                Ok(())
            }
            _ => Err(SchedulerError::UnknownQuery(query_id)),
        }
    }

    pub fn running_max(&self, query_id: QueryId) -> Option<u64> {
        self.lock().running.get(&query_id).map(|r| r.max_bytes)
    }

    /// Moves the running max into the key's ring and closes the slot.
    pub fn finalize_execution(&self, query_key: &str, query_id: QueryId) -> Result<u64, SchedulerError> {
        let mut inner = self.lock();
        match inner.running.get(&query_id) {
            Some(r) if r.key == query_key => {}
            _ => return Err(SchedulerError::UnknownQuery(query_id)),
        }
        let r = inner.running.remove(&query_id).expect("checked above");
        let k_max = self.k_max;
        push_bounded(inner.mem.entry(r.key).or_default(), r.max_bytes, k_max);
        Ok(r.max_bytes)
    }

    /// Closes the slot without recording anything, for runs that never executed.
    pub fn discard(&self, query_id: QueryId) -> Option<u64> {
        self.lock().running.remove(&query_id).map(|r| r.max_bytes)
    }

    pub fn record_per_row_ms(&self, query_key: &str, per_row_ms: f64) {
        assert!(
            per_row_ms >= 0.0 && per_row_ms.is_finite(),
            "per-row time must be finite and >= 0"
        );
        let k_max = self.k_max;
        push_bounded(
            self.lock().per_row_ms.entry(query_key.to_string()).or_default(),
            per_row_ms,
            k_max,
        );
    }

    pub fn mem_history(&self, query_key: &str) -> Vec<u64> {
        self.lock()
            .mem
            .get(query_key)
            .map(|r| r.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn per_row_history(&self, query_key: &str) -> Vec<f64> {
        self.lock()
            .per_row_ms
            .get(query_key)
            .map(|r| r.iter().copied().collect())
            .unwrap_or_default()
    }

    /// Seeds a memory history directly, as if each value had been finalized.
    pub fn push_mem(&self, query_key: &str, bytes: u64) {
        let k_max = self.k_max;
        push_bounded(self.lock().mem.entry(query_key.to_string()).or_default(), bytes, k_max);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_max() {
        let s = StatsStore::new(10);
        s.begin_query("q", 1);
        assert_eq!(s.running_max(1), Some(0));
        for v in [10, 50, 30] {
            s.record_sample("q", 1, v).unwrap();
        }
        assert_eq!(s.running_max(1), Some(50));
        s.record_sample("q", 1, 70).unwrap();
        assert_eq!(s.running_max(1), Some(70));
        assert!(s.mem_history("q").is_empty());
    }

    #[test]
    fn ring_drops_oldest() {
        let s = StatsStore::new(2);
        for (id, v) in [(1, 5), (2, 6), (3, 7)] {
            s.begin_query("q", id);
            s.record_sample("q", id, v).unwrap();
            s.finalize_execution("q", id).unwrap();
            if id == 1 {
                assert_eq!(s.mem_history("q").len(), 1);
            }
        }
        assert_eq!(s.mem_history("q"), vec![6, 7]);
    }

    #[test]
    fn unknown_query() {
        let s = StatsStore::new(2);
        assert_eq!(s.record_sample("q", 9, 1), Err(SchedulerError::UnknownQuery(9)));
        assert_eq!(s.finalize_execution("q", 9), Err(SchedulerError::UnknownQuery(9)));
        s.begin_query("q", 9);
        assert_eq!(s.record_sample("other", 9, 1), Err(SchedulerError::UnknownQuery(9)));
        s.finalize_execution("q", 9).unwrap();
        assert_eq!(s.finalize_execution("q", 9), Err(SchedulerError::UnknownQuery(9)));
    }

    #[test]
    fn concurrent_samples_merge_to_max() {
        let s = StatsStore::new(4);
        s.begin_query("q", 1);
        std::thread::scope(|scope| {
            for t in 0..8u64 {
                let s = &s;
                scope.spawn(move || {
                    for i in 0..100 {
                        s.record_sample("q", 1, t * 1000 + i).unwrap();
                    }
                });
            }
        });
        assert_eq!(s.finalize_execution("q", 1).unwrap(), 7099);
    }
}
