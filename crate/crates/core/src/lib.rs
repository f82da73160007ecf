//! Deterministic desk-scale model of a UDF execution engine running inside a
//! virtual warehouse: package environments with layered caches, memory-aware
//! admission, sandbox policy checks, and skew-aware row redistribution.

pub mod batch;
pub mod exchange;
pub mod expr;
pub mod ids;
pub mod packages;
pub mod plan;
pub mod presets;
pub mod protocol;
pub mod sandbox;
pub mod scheduler;
pub mod skew;
pub mod udf;
pub mod value;
pub mod warehouse;

pub use batch::{Batch, BatchError, Field, Schema};
pub use value::{Value, ValueKind};

use thiserror::Error;

/// Any failure the library reports, for callers that do not care which layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Plan(#[from] plan::PlanError),
    #[error(transparent)]
    Exec(#[from] plan::ExecError),
    #[error(transparent)]
    Udf(#[from] udf::UdfError),
    #[error(transparent)]
    Package(#[from] packages::PackageError),
    #[error(transparent)]
    Scheduler(#[from] scheduler::SchedulerError),
    #[error(transparent)]
    Sandbox(#[from] sandbox::SandboxError),
    #[error(transparent)]
    Config(#[from] warehouse::ConfigError),
    #[error(transparent)]
    Warehouse(#[from] warehouse::WarehouseError),
    #[error(transparent)]
    Protocol(#[from] protocol::ProtocolError),
    #[error(transparent)]
    Skew(#[from] skew::SkewError),
}
