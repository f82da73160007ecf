//! Per-warehouse environment cache: assembled environments keyed by closure
//! plus a byte-bounded LRU of individual package binaries.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::manifest::RepositoryManifest;
use super::resolver::ResolvedClosure;
use super::version::Version;
use super::{CacheCounters, PackageError};

pub type BinaryKey = (String, Version);

/// Virtual-time costs of environment preparation, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub base_ms: u64,
    pub solve_ms: u64,
    pub per_package_ms: u64,
    pub env_load_ms: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            base_ms: 40,
            solve_ms: 3500,
            per_package_ms: 50,
            env_load_ms: 60,
        }
    }
}

/// Where the initialization time of one query went.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct InitBreakdown {
    pub base_ms: u64,
    pub solve_ms: u64,
    pub fetch_ms: u64,
    pub env_load_ms: u64,
    pub fetched_packages: usize,
    pub cached_packages: usize,
    pub solver_hit: bool,
    pub env_hit: bool,
}

impl InitBreakdown {
    pub fn total_ms(&self) -> u64 {
        self.base_ms + self.solve_ms + self.fetch_ms + self.env_load_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedEnvironment {
    pub env_id: u64,
    pub init_latency_ms: u64,
    pub breakdown: InitBreakdown,
}

/// Byte-bounded LRU keyed by (name, version).
#[derive(Debug, Clone, Default)]
struct LruBytes {
    capacity: u64,
    used: u64,
    tick: u64,
    entries: HashMap<BinaryKey, (u64, u64)>,
    order: BTreeMap<u64, BinaryKey>,
}

impl LruBytes {
    fn new(capacity: u64) -> Self {
        Self {
            capacity,
            ..Default::default()
        }
    }

    fn contains(&self, key: &BinaryKey) -> bool {
        self.entries.contains_key(key)
    }

    /// Marks as most recently used; false when absent.
    fn touch(&mut self, key: &BinaryKey) -> bool {
        let Some((tick, _)) = self.entries.get_mut(key) else {
            return false;
        };
        self.order.remove(tick);
        self.tick += 1;
        *tick = self.tick;
        self.order.insert(self.tick, key.clone());
        true
    }

    fn evict_for(&mut self, incoming: u64) -> Vec<BinaryKey> {
        let mut evicted = Vec::new();
        while self.capacity.saturating_sub(self.used) < incoming {
            let Some((_, key)) = self.order.pop_first() else {
                break;
            };
            let (_, size) = self.entries.remove(&key).expect("order and entries agree");
            self.used -= size;
            evicted.push(key);
        }
        evicted
    }

    fn insert(&mut self, key: BinaryKey, size: u64) {
        debug_assert!(self.used + size <= self.capacity);
        self.tick += 1;
        self.order.insert(self.tick, key.clone());
        self.entries.insert(key, (self.tick, size));
        self.used += size;
    }

    fn lru_order(&self) -> Vec<BinaryKey> {
        self.order.values().cloned().collect()
    }

    fn clear(&mut self) {
        self.entries.clear();
        self.order.clear();
        self.used = 0;
    }
}

#[derive(Debug, Clone)]
struct EnvRecord {
    id: u64,
    members: Vec<BinaryKey>,
}

#[derive(Debug)]
struct EnvState {
    envs: HashMap<String, EnvRecord>,
    binaries: LruBytes,
    next_env: u64,
    env: CacheCounters,
    binary: CacheCounters,
}

impl EnvState {
    fn evict(&mut self, incoming: u64) -> Vec<BinaryKey> {
        let evicted = self.binaries.evict_for(incoming);
        if !evicted.is_empty() {
            self.envs.retain(|_, e| !e.members.iter().any(|m| evicted.contains(m)));
        }
        evicted
    }

    fn admit(&mut self, key: BinaryKey, size: u64) -> Result<Vec<BinaryKey>, PackageError> {
        if size > self.binaries.capacity {
            return Err(PackageError::CapacityExceeded {
                package: format!("{}@{}", key.0, key.1),
                size_bytes: size,
                capacity_bytes: self.binaries.capacity,
            });
        }
        let evicted = self.evict(size);
        self.binaries.insert(key, size);
        Ok(evicted)
    }
}

/// Observable contents, for before/after comparisons.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvCacheSnapshot {
    pub environments: BTreeMap<String, u64>,
    /// Least recently used first.
    pub binaries: Vec<BinaryKey>,
    pub used_bytes: u64,
}

/// Per-warehouse cache of assembled environments and package binaries.
#[derive(Debug)]
pub struct EnvironmentCache {
    state: Mutex<EnvState>,
}

impl EnvironmentCache {
    pub fn new(capacity_bytes: u64) -> Self {
        Self {
            state: Mutex::new(EnvState {
                envs: HashMap::new(),
                binaries: LruBytes::new(capacity_bytes),
                next_env: 1,
                env: CacheCounters::default(),
                binary: CacheCounters::default(),
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, EnvState> {
        self.state.lock().expect("environment cache lock")
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.lock().binaries.capacity
    }

    pub fn used_bytes(&self) -> u64 {
        self.lock().binaries.used
    }

    pub fn env_counters(&self) -> CacheCounters {
        self.lock().env
    }

    pub fn binary_counters(&self) -> CacheCounters {
        self.lock().binary
    }

    pub fn contains_binary(&self, name: &str, version: &Version) -> bool {
        self.lock().binaries.contains(&(name.to_string(), version.clone()))
    }

    pub fn contains_environment(&self, closure: &ResolvedClosure) -> bool {
        self.lock().envs.contains_key(&closure.key())
    }

    /// Marks a binary as most recently used; false when absent.
    pub fn touch(&self, name: &str, version: &Version) -> bool {
        self.lock().binaries.touch(&(name.to_string(), version.clone()))
    }

    /// Inserts a binary (evicting as needed) or touches it when present.
    pub fn insert_binary(
        &self,
        name: &str,
        version: &Version,
        size_bytes: u64,
    ) -> Result<Vec<BinaryKey>, PackageError> {
        let mut s = self.lock();
        let key = (name.to_string(), version.clone());
        if s.binaries.touch(&key) {
            return Ok(Vec::new());
        }
        s.admit(key, size_bytes)
    }

    /// Evicts least-recently-used binaries until `incoming_bytes` fit, and
    /// drops every environment that lost a member.
    pub fn evict_lru(&self, incoming_bytes: u64) -> Vec<BinaryKey> {
        self.lock().evict(incoming_bytes)
    }

    /// Loads the closure's environment when cached, otherwise assembles it
    /// from cached binaries plus fresh fetches.
    pub fn prepare_environment(
        &self,
        closure: &ResolvedClosure,
        cost: &CostModel,
        solver_hit: bool,
    ) -> Result<PreparedEnvironment, PackageError> {
        let mut s = self.lock();
        let mut breakdown = InitBreakdown {
            base_ms: cost.base_ms,
            solve_ms: if solver_hit { 0 } else { cost.solve_ms },
            env_load_ms: cost.env_load_ms,
            solver_hit,
            ..Default::default()
        };
        let key = closure.key();
        if let Some(env) = s.envs.get(&key).cloned() {
            s.env.hits += 1;
            for m in &env.members {
                s.binaries.touch(m);
            }
            breakdown.env_hit = true;
            breakdown.cached_packages = env.members.len();
            return Ok(PreparedEnvironment {
                env_id: env.id,
                init_latency_ms: breakdown.total_ms(),
                breakdown,
            });
        }
        s.env.misses += 1;
        if let Some(p) = closure.pins().iter().find(|p| p.size_bytes > s.binaries.capacity) {
            return Err(PackageError::CapacityExceeded {
                package: format!("{}@{}", p.name, p.version),
                size_bytes: p.size_bytes,
                capacity_bytes: s.binaries.capacity,
            });
        }
        let members: Vec<BinaryKey> = closure
            .pins()
            .iter()
            .map(|p| (p.name.clone(), p.version.clone()))
            .collect();
        for (pin, key) in closure.pins().iter().zip(&members) {
            if s.binaries.touch(key) {
                s.binary.hits += 1;
                breakdown.cached_packages += 1;
            } else {
                s.binary.misses += 1;
                breakdown.fetched_packages += 1;
                s.admit(key.clone(), pin.size_bytes)?;
            }
        }
        breakdown.fetch_ms = cost.per_package_ms * breakdown.fetched_packages as u64;
        let id = s.next_env;
        s.next_env += 1;
        // Only register the environment if assembling it did not evict any of its own members.
        if members.iter().all(|m| s.binaries.contains(m)) {
            s.envs.insert(key, EnvRecord { id, members });
        }
        Ok(PreparedEnvironment {
            env_id: id,
            init_latency_ms: breakdown.total_ms(),
            breakdown,
        })
    }

    /// Warms the binary cache with popular packages before any query runs.
    /// Returns the warm-up latency: `per_package_ms` for each package fetched.
    pub fn prefetch(
        &self,
        popular: &[(String, Version)],
        manifest: &RepositoryManifest,
        cost: &CostModel,
    ) -> Result<u64, PackageError> {
        let mut sizes = Vec::with_capacity(popular.len());
        for (name, version) in popular {
            let entry = manifest
                .entry(name, version)
                .ok_or_else(|| PackageError::UnknownPackage(format!("{name}@{version}")))?;
            sizes.push(entry.size_bytes);
        }
        let mut s = self.lock();
        let mut fetched = 0u64;
        for ((name, version), size) in popular.iter().zip(sizes) {
            let key = (name.clone(), version.clone());
            if !s.binaries.touch(&key) {
                s.admit(key, size)?;
                fetched += 1;
            }
        }
        Ok(cost.per_package_ms * fetched)
    }

    /// Empties both maps; counters are cumulative and survive.
    pub fn recycle(&self) {
        let mut s = self.lock();
        s.envs.clear();
        s.binaries.clear();
    }

    pub fn snapshot(&self) -> EnvCacheSnapshot {
        let s = self.lock();
        EnvCacheSnapshot {
            environments: s.envs.iter().map(|(k, e)| (k.clone(), e.id)).collect(),
            binaries: s.binaries.lru_order(),
            used_bytes: s.binaries.used,
        }
    }
}

pub fn prepare_environment(
    closure: &ResolvedClosure,
    cache: &EnvironmentCache,
    cost: &CostModel,
    solver_hit: bool,
) -> Result<PreparedEnvironment, PackageError> {
    cache.prepare_environment(closure, cost, solver_hit)
}

pub fn evict_lru(cache: &EnvironmentCache, incoming_bytes: u64) -> Vec<BinaryKey> {
    cache.evict_lru(incoming_bytes)
}

pub fn prefetch(
    popular: &[(String, Version)],
    cache: &EnvironmentCache,
    manifest: &RepositoryManifest,
    cost: &CostModel,
) -> Result<u64, PackageError> {
    cache.prefetch(popular, manifest, cost)
}

pub fn recycle_warehouse(cache: &EnvironmentCache) {
    cache.recycle()
}
