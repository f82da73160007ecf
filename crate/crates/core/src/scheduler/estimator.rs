use serde::{Deserialize, Serialize};

use super::{SchedulerError, StatsStore};

pub const MIB: u64 = 1 << 20;

/// Fixed-point scale for P and F. Both are quantized to millionths so the
/// final ceiling is computed in exact integer arithmetic.
const SCALE: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateSource {
    History,
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub bytes: u64,
    pub source: EstimateSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    pub k: usize,
    pub p: f64,
    pub f: f64,
    pub default_bytes: u64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            k: 10,
            p: 95.0,
            f: 1.2,
            default_bytes: 512 * MIB,
        }
    }
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        let bad = |m: String| Err(SchedulerError::InvalidParams(m));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if !(self.p > 0.0 && self.p <= 100.0) {
            return bad(format!("p must be in (0, 100], got {}", self.p));
        }
        if !(self.f >= 1.0 && self.f.is_finite()) {
            return bad(format!("f must be finite and >= 1, got {}", self.f));
        }
        if self.default_bytes == 0 {
            return bad("default_bytes must be > 0".into());
        }
        Ok(())
    }
}

/// How a query's reservation is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum EstimatorPolicy {
    Dynamic(EstimatorParams),
    /// Every query reserves the same amount regardless of history.
    Static {
        bytes: u64,
    },
}

impl Default for EstimatorPolicy {
    fn default() -> Self {
        EstimatorPolicy::Dynamic(EstimatorParams::default())
    }
}

impl EstimatorPolicy {
    pub fn estimate(&self, store: &StatsStore, query_key: &str) -> Result<MemoryEstimate, SchedulerError> {
        match *self {
            EstimatorPolicy::Dynamic(p) => estimate(store, query_key, p.k, p.p, p.f, p.default_bytes),
            EstimatorPolicy::Static { bytes } if bytes > 0 => Ok(MemoryEstimate {
                bytes,
                source: EstimateSource::Default,
            }),
            EstimatorPolicy::Static { .. } => Err(SchedulerError::InvalidParams("static bytes must be > 0".into())),
        }
    }
}

fn to_fixed(x: f64) -> u128 {
    (x * SCALE as f64).round() as u128
}

/// 1-based nearest-rank index `ceil(p/100 * n)`, clamped to `1..=n`.
pub fn nearest_rank(p: f64, n: usize) -> usize {
    assert!(n > 0);
    let num = to_fixed(p) * n as u128;
    let den = 100 * SCALE;
    (num.div_ceil(den) as usize).clamp(1, n)
}

/// `ceil(f * v)` with f quantized to millionths.
pub fn scale_ceil(f: f64, v: u64) -> u64 {
    let x = (to_fixed(f) * v as u128).div_ceil(SCALE);
    u64::try_from(x).unwrap_or(u64::MAX)
}

/// F times the nearest-rank P-th percentile of the last `k` values.
pub fn estimate_from_history(history: &[u64], k: usize, p: f64, f: f64) -> Option<u64> {
    let window = &history[history.len().saturating_sub(k)..];
    if window.is_empty() {
        return None;
    }
    let mut sorted = window.to_vec();
    sorted.sort_unstable();
    let idx = nearest_rank(p, sorted.len());
    Some(scale_ceil(f, sorted[idx - 1]).max(1))
}

pub fn estimate(
    store: &StatsStore,
    query_key: &str,
    k: usize,
    p: f64,
    f: f64,
    default_bytes: u64,
) -> Result<MemoryEstimate, SchedulerError> {
    EstimatorParams { k, p, f, default_bytes }.validate()?;
    Ok(match estimate_from_history(&store.mem_history(query_key), k, p, f) {
        Some(bytes) => MemoryEstimate {
            bytes,
            source: EstimateSource::History,
        },
        None => MemoryEstimate {
            bytes: default_bytes,
            source: EstimateSource::Default,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_vector() {
        let s = StatsStore::new(10);
        for mb in (90..=135).step_by(5) {
            s.push_mem("q", mb * MIB);
        }
        let e = estimate(&s, "q", 10, 95.0, 1.2, 512 * MIB).unwrap();
        assert_eq!(e.bytes, 162 * MIB);
        assert_eq!(e.source, EstimateSource::History);
    }

    #[test]
    fn single_value_and_default() {
        let s = StatsStore::new(10);
        assert_eq!(
            estimate(&s, "q", 10, 95.0, 1.2, 7).unwrap(),
            MemoryEstimate {
                bytes: 7,
                source: EstimateSource::Default
            }
        );
        s.push_mem("q", 100 * MIB);
        assert_eq!(estimate(&s, "q", 10, 95.0, 1.2, 7).unwrap().bytes, 120 * MIB);
    }

    #[test]
    fn window_is_last_k() {
        let s = StatsStore::new(10);
        for v in [1000, 1, 2, 3] {
            s.push_mem("q", v);
        }
        assert_eq!(estimate(&s, "q", 3, 100.0, 1.0, 9).unwrap().bytes, 3);
        assert_eq!(estimate(&s, "q", 4, 100.0, 1.0, 9).unwrap().bytes, 1000);
    }

    #[test]
    fn ranks() {
        assert_eq!(nearest_rank(95.0, 10), 10);
        assert_eq!(nearest_rank(90.0, 10), 9);
        assert_eq!(nearest_rank(90.0, 3), 3);
        assert_eq!(nearest_rank(75.0, 4), 3);
        assert_eq!(nearest_rank(0.001, 4), 1);
        assert_eq!(nearest_rank(100.0, 1), 1);
    }

    #[test]
    fn zero_history_still_positive() {
        assert_eq!(estimate_from_history(&[0, 0], 10, 95.0, 1.2), Some(1));
    }

    #[test]
    fn rejects_bad_params() {
        let s = StatsStore::new(1);
        for (k, p, f) in [
            (0, 95.0, 1.2),
            (1, 0.0, 1.2),
            (1, 100.5, 1.2),
            (1, 95.0, 0.9),
            (1, f64::NAN, 1.2),
        ] {
            assert!(estimate(&s, "q", k, p, f, 1).is_err());
        }
    }

    #[test]
    fn static_policy_ignores_history() {
        let s = StatsStore::new(10);
        s.push_mem("q", 5000);
        let e = EstimatorPolicy::Static { bytes: 110 }.estimate(&s, "q").unwrap();
        assert_eq!(e.bytes, 110);
    }
}
