use serde::Serialize;

use crate::scheduler::StatsStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RedistributionDecision {
    pub enabled: bool,
    pub per_row_ms_estimate: f64,
    pub threshold_ms: f64,
}

impl RedistributionDecision {
    pub fn forced(enabled: bool, threshold_ms: f64) -> Self {
        Self {
            enabled,
            per_row_ms_estimate: 0.0,
            threshold_ms,
        }
    }
}

/// Median of the values; mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn decide_from_history(history: &[f64], k: usize, threshold_ms: f64) -> RedistributionDecision {
    assert!(k >= 1, "k must be >= 1");
    assert!(threshold_ms > 0.0, "threshold must be > 0");
    let window = &history[history.len().saturating_sub(k)..];
    match median(window) {
        Some(m) => RedistributionDecision {
            enabled: m >= threshold_ms,
            per_row_ms_estimate: m,
            threshold_ms,
        },
        None => RedistributionDecision::forced(false, threshold_ms),
    }
}

pub fn decide(store: &StatsStore, query_key: &str, k: usize, threshold_ms: f64) -> RedistributionDecision {
    decide_from_history(&store.per_row_history(query_key), k, threshold_ms)
}
