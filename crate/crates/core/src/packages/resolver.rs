use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::manifest::{PackageRequest, RepositoryManifest};
use super::version::{Constraint, Version};
use super::PackageError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Pin {
    pub name: String,
    pub version: Version,
    pub size_bytes: u64,
}

/// A conflict-free dependency closure: one version per name, sorted by name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize)]
pub struct ResolvedClosure {
    pins: Vec<Pin>,
}

impl ResolvedClosure {
    pub fn pins(&self) -> &[Pin] {
        &self.pins
    }

    pub fn len(&self) -> usize {
        self.pins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pins.is_empty()
    }

    pub fn version_of(&self, name: &str) -> Option<&Version> {
        self.pins.iter().find(|p| p.name == name).map(|p| &p.version)
    }

    /// Stable identity used as the environment-cache key, e.g. `A@1.0,B@2.0`.
    pub fn key(&self) -> String {
        let parts: Vec<String> = self.pins.iter().map(|p| format!("{}@{}", p.name, p.version)).collect();
        parts.join(",")
    }

    /// True when every request and every pinned dependency is met by a pin.
    pub fn satisfies(&self, requests: &[PackageRequest], manifest: &RepositoryManifest) -> bool {
        let met = |r: &PackageRequest| self.version_of(&r.name).is_some_and(|v| r.constraint.allows(v));
        let names_unique = self.pins.windows(2).all(|w| w[0].name < w[1].name);
        names_unique
            && requests.iter().all(met)
            && self.pins.iter().all(|p| {
                manifest
                    .entry(&p.name, &p.version)
                    .is_some_and(|e| e.dependencies.iter().all(met))
            })
    }
}

impl fmt::Display for ResolvedClosure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.key())
    }
}

/// Depth-first backtracking resolver. Undecided names are visited in name
/// order and candidate versions highest-first, so the result is a pure
/// function of the requests and the manifest.
pub fn resolve(requests: &[PackageRequest], manifest: &RepositoryManifest) -> Result<ResolvedClosure, PackageError> {
    let mut constraints: BTreeMap<&str, Vec<&Constraint>> = BTreeMap::new();
    for r in requests {
        if !manifest.contains(&r.name) {
            return Err(PackageError::UnknownPackage(r.name.clone()));
        }
        constraints.entry(r.name.as_str()).or_default().push(&r.constraint);
    }
    let pins = search(manifest, &BTreeMap::new(), &constraints).ok_or_else(|| {
        let list: Vec<String> = requests.iter().map(PackageRequest::to_string).collect();
        PackageError::Unresolvable(list.join(", "))
    })?;
    Ok(ResolvedClosure {
        pins: pins
            .into_iter()
            .map(|(name, version)| Pin {
                size_bytes: manifest.entry(name, version).map_or(0, |e| e.size_bytes),
                name: name.to_string(),
                version: version.clone(),
            })
            .collect(),
    })
}

fn search<'m>(
    manifest: &'m RepositoryManifest,
    pins: &BTreeMap<&'m str, &'m Version>,
    constraints: &BTreeMap<&'m str, Vec<&'m Constraint>>,
) -> Option<BTreeMap<&'m str, &'m Version>> {
    let Some((&name, wanted)) = constraints.iter().find(|(n, _)| !pins.contains_key(*n)) else {
        return Some(pins.clone());
    };
    for version in manifest.versions(name).rev() {
        if !wanted.iter().all(|c| c.allows(version)) {
            continue;
        }
        let entry = manifest.entry(name, version).expect("listed version has an entry");
        let conflicts = entry
            .dependencies
            .iter()
            .any(|d| pins.get(d.name.as_str()).is_some_and(|p| !d.constraint.allows(p)));
        if conflicts {
            continue;
        }
        let mut next_pins = pins.clone();
        next_pins.insert(name, version);
        let mut next_constraints = constraints.clone();
        for d in &entry.dependencies {
            next_constraints.entry(d.name.as_str()).or_default().push(&d.constraint);
        }
        if let Some(found) = search(manifest, &next_pins, &next_constraints) {
            return Some(found);
        }
    }
    None
}
