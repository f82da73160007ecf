//! Package dependency resolution and the caching layers in front of it:
//! a global solver cache (request set → closure) and a per-warehouse
//! environment cache (closure → environment, package → binary, LRU-evicted).

mod env_cache;
mod manifest;
mod resolver;
mod solver_cache;
mod version;

use serde::Serialize;
use thiserror::Error;

pub use env_cache::{
    evict_lru, prefetch, prepare_environment, recycle_warehouse, BinaryKey, CostModel, EnvCacheSnapshot,
    EnvironmentCache, InitBreakdown, PreparedEnvironment,
};
pub use manifest::{ManifestEntry, PackageRequest, RepositoryManifest};
pub use resolver::{resolve, Pin, ResolvedClosure};
pub use solver_cache::{solver_lookup_or_resolve, RequestKey, SolverCache};
pub use version::{Constraint, Version};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PackageError {
    #[error("invalid version `{0}`")]
    InvalidVersion(String),
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("unknown package `{0}`")]
    UnknownPackage(String),
    #[error("no conflict-free assignment satisfies [{0}]")]
    Unresolvable(String),
    #[error("package {package} ({size_bytes} bytes) exceeds binary cache capacity {capacity_bytes}")]
    CapacityExceeded {
        package: String,
        size_bytes: u64,
        capacity_bytes: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheCounters {
    pub hits: u64,
    pub misses: u64,
}

impl CacheCounters {
    pub fn lookups(&self) -> u64 {
        self.hits + self.misses
    }

    /// Hits over lookups; 0 with no lookups.
    pub fn hit_rate(&self) -> f64 {
        match self.lookups() {
            0 => 0.0,
            n => self.hits as f64 / n as f64,
        }
    }
}
