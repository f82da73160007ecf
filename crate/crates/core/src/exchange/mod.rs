//! Skew mitigation: a threshold gate on historical per-row time, round-robin
//! assignment over every interpreter process, bounded per-target send buffers,
//! and a makespan model with an event-driven twin.

mod buffer;
mod gate;
mod makespan;
mod ring;

use serde::{Deserialize, Serialize};

pub use buffer::{BatchDescriptor, OutBuffer};
pub use gate::{decide, decide_from_history, median, RedistributionDecision};
pub use makespan::{
    flows, ms_to_us, simulate_makespan, simulate_stream, BatchCompletion, MakespanReport, StreamReport,
    TransferCostModel,
};
pub use ring::{assign, nodes_of, Layout, TargetRing};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeConfig {
    pub threshold_ms: f64,
    pub batch_rows: u64,
    pub max_outstanding: usize,
    pub remote_batch_ms: f64,
    pub ser_us_per_row: f64,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        Self {
            threshold_ms: 1.0,
            batch_rows: 1024,
            max_outstanding: 2,
            remote_batch_ms: 10.0,
            ser_us_per_row: 10.0,
        }
    }
}

impl ExchangeConfig {
    pub fn cost(&self) -> TransferCostModel {
        TransferCostModel {
            remote_batch_ms: self.remote_batch_ms,
            ser_us_per_row: self.ser_us_per_row,
        }
    }
}
