//! Historical stats, the K/P/F memory estimator, FIFO admission onto nodes,
//! and per-query memory-limit enforcement.

mod admission;
mod estimator;
mod stats;

use thiserror::Error;

use crate::ids::QueryId;

pub use admission::{admit, enforce_limit, Admission, LimitCheck, NodeState, QueueEntry, Scheduler};
pub use estimator::{
    estimate, estimate_from_history, nearest_rank, scale_ceil, EstimateSource, EstimatorParams, EstimatorPolicy,
    MemoryEstimate, MIB,
};
pub use stats::StatsStore;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("unknown query {0}")]
    UnknownQuery(QueryId),
    #[error("estimate of {estimate_bytes} bytes exceeds the largest node ({max_capacity_bytes} bytes)")]
    EstimateExceedsAnyNode {
        estimate_bytes: u64,
        max_capacity_bytes: u64,
    },
    #[error("invalid estimator parameters: {0}")]
    InvalidParams(String),
}
