use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::manifest::{PackageRequest, RepositoryManifest};
use super::resolver::{resolve, ResolvedClosure};
use super::{CacheCounters, PackageError};

/// Order-insensitive identity of a request set: sorted by (name, constraint),
/// duplicates removed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestKey(Vec<PackageRequest>);

impl RequestKey {
    pub fn new(requests: &[PackageRequest]) -> Self {
        let mut v = requests.to_vec();
        v.sort();
        v.dedup();
        Self(v)
    }

    pub fn requests(&self) -> &[PackageRequest] {
        &self.0
    }
}

impl fmt::Display for RequestKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(PackageRequest::to_string).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Global map from request sets to resolved closures. Failed resolutions
/// are never inserted.
#[derive(Debug, Default)]
pub struct SolverCache {
    map: Mutex<HashMap<RequestKey, Arc<ResolvedClosure>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl SolverCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the cached closure for the request set, resolving and
    /// inserting it on a miss. Exactly one counter moves per call.
    pub fn lookup_or_resolve(
        &self,
        requests: &[PackageRequest],
        manifest: &RepositoryManifest,
    ) -> Result<(Arc<ResolvedClosure>, bool), PackageError> {
        let key = RequestKey::new(requests);
        if let Some(found) = self.map.lock().expect("solver cache lock").get(&key).cloned() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok((found, true));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let closure = Arc::new(resolve(key.requests(), manifest)?);
        // A concurrent miss on the same key may have inserted first; keep that one.
        let winner = self
            .map
            .lock()
            .expect("solver cache lock")
            .entry(key)
            .or_insert(closure)
            .clone();
        Ok((winner, false))
    }

    pub fn counters(&self) -> CacheCounters {
        CacheCounters {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("solver cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Free-function form of [`SolverCache::lookup_or_resolve`].
pub fn solver_lookup_or_resolve(
    requests: &[PackageRequest],
    manifest: &RepositoryManifest,
    cache: &SolverCache,
) -> Result<(Arc<ResolvedClosure>, bool), PackageError> {
    cache.lookup_or_resolve(requests, manifest)
}
