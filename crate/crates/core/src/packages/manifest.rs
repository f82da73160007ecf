use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::version::{Constraint, Version};
use super::PackageError;

/// A package name plus version constraint, as referenced by user code or by
/// a manifest dependency.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PackageRequest {
    pub name: String,
    pub constraint: Constraint,
}

impl PackageRequest {
    pub fn new(name: &str, constraint: Constraint) -> Result<Self, PackageError> {
        if name.is_empty() {
            return Err(PackageError::InvalidConstraint("empty package name".into()));
        }
        Ok(Self {
            name: name.to_string(),
            constraint,
        })
    }

    pub fn any(name: &str) -> Self {
        Self::new(name, Constraint::Any).expect("non-empty name")
    }
}

impl fmt::Display for PackageRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.constraint {
            Constraint::Any => f.write_str(&self.name),
            ref c => write!(f, "{}{c}", self.name),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RequestRepr {
    name: String,
    #[serde(default = "any_op")]
    op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<String>,
}

fn any_op() -> String {
    "any".to_string()
}

impl Serialize for PackageRequest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RequestRepr {
            name: self.name.clone(),
            op: self.constraint.op().to_string(),
            version: self.constraint.version().map(Version::to_string),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PackageRequest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = RequestRepr::deserialize(d)?;
        let c = Constraint::from_op(&r.op, r.version.as_deref()).map_err(serde::de::Error::custom)?;
        PackageRequest::new(&r.name, c).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dependencies: Vec<PackageRequest>,
    pub size_bytes: u64,
}

/// The central package repository: every available (name, version) with its
/// dependencies and binary size.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RepositoryManifest {
    entries: BTreeMap<String, BTreeMap<Version, ManifestEntry>>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    packages: Vec<ManifestFileEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFileEntry {
    name: String,
    version: Version,
    size_bytes: u64,
    #[serde(default)]
    deps: Vec<PackageRequest>,
}

impl RepositoryManifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry without validation; call [`validate`](Self::validate)
    /// once the manifest is complete.
    pub fn insert(&mut self, name: &str, version: Version, size_bytes: u64, dependencies: Vec<PackageRequest>) {
        self.entries.entry(name.to_string()).or_default().insert(
            version,
            ManifestEntry {
                dependencies,
                size_bytes,
            },
        );
    }

    /// Builder form of [`insert`](Self::insert) taking a version string.
    pub fn with(mut self, name: &str, version: &str, size_bytes: u64, deps: Vec<PackageRequest>) -> Self {
        self.insert(name, version.parse().expect("valid version"), size_bytes, deps);
        self
    }

    pub fn validate(&self) -> Result<(), PackageError> {
        for (name, versions) in &self.entries {
            if name.is_empty() {
                return Err(PackageError::InvalidManifest("empty package name".into()));
            }
            for (version, entry) in versions {
                for dep in &entry.dependencies {
                    if dep.name == *name {
                        return Err(PackageError::InvalidManifest(format!(
                            "{name}@{version} depends on itself"
                        )));
                    }
                    if !self.entries.contains_key(&dep.name) {
                        return Err(PackageError::InvalidManifest(format!(
                            "{name}@{version} depends on unknown package `{}`",
                            dep.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Available versions of a package, ascending.
    pub fn versions(&self, name: &str) -> impl DoubleEndedIterator<Item = &Version> {
        self.entries.get(name).into_iter().flat_map(|m| m.keys())
    }

    pub fn entry(&self, name: &str, version: &Version) -> Option<&ManifestEntry> {
        self.entries.get(name).and_then(|m| m.get(version))
    }

    pub fn from_json(text: &str) -> Result<Self, PackageError> {
        let file: ManifestFile =
            serde_json::from_str(text).map_err(|e| PackageError::InvalidManifest(e.to_string()))?;
        let mut m = Self::new();
        for p in file.packages {
            if m.entry(&p.name, &p.version).is_some() {
                return Err(PackageError::InvalidManifest(format!(
                    "duplicate entry {}@{}",
                    p.name, p.version
                )));
            }
            m.insert(&p.name, p.version, p.size_bytes, p.deps);
        }
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let packages = self
            .entries
            .iter()
            .flat_map(|(name, versions)| {
                versions.iter().map(move |(v, e)| ManifestFileEntry {
                    name: name.clone(),
                    version: v.clone(),
                    size_bytes: e.size_bytes,
                    deps: e.dependencies.clone(),
                })
            })
            .collect();
        serde_json::to_string_pretty(&ManifestFile { packages }).expect("manifest serializes")
    }

    pub fn load(path: &Path) -> Result<Self, PackageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PackageError::InvalidManifest(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
