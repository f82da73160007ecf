use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::PackageError;

/// Dotted integer version. Comparison is componentwise with missing
/// components treated as zero, so `1.0 == 1.0.0`.
#[derive(Debug, Clone)]
pub struct Version(Vec<u32>);

impl Version {
    pub fn new(parts: Vec<u32>) -> Self {
        assert!(!parts.is_empty(), "a version has at least one component");
        Self(parts)
    }

    pub fn parts(&self) -> &[u32] {
        &self.0
    }

    fn trimmed(&self) -> &[u32] {
        let end = self.0.iter().rposition(|p| *p != 0).map_or(0, |i| i + 1);
        &self.0[..end]
    }
}

impl FromStr for Version {
    type Err = PackageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts = s
            .split('.')
            .map(|p| p.parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| PackageError::InvalidVersion(s.to_string()))?;
        if parts.is_empty() {
            return Err(PackageError::InvalidVersion(s.to_string()));
        }
        Ok(Self(parts))
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        f.write_str(&parts.join("."))
    }
}

impl PartialEq for Version {
    fn eq(&self, other: &Self) -> bool {
        self.trimmed() == other.trimmed()
    }
}

impl Eq for Version {}

impl Hash for Version {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.trimmed().hash(state);
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        let n = self.0.len().max(other.0.len());
        for i in 0..n {
            let a = self.0.get(i).copied().unwrap_or(0);
            let b = other.0.get(i).copied().unwrap_or(0);
            match a.cmp(&b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Version constraint of a package request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Constraint {
    Any,
    Exact(Version),
    AtLeast(Version),
    LessThan(Version),
}

impl Constraint {
    pub fn allows(&self, v: &Version) -> bool {
        match self {
            Constraint::Any => true,
            Constraint::Exact(x) => v == x,
            Constraint::AtLeast(x) => v >= x,
            Constraint::LessThan(x) => v < x,
        }
    }

    /// Wire operator: `any`, `==`, `>=` or `<`.
    pub fn op(&self) -> &'static str {
        match self {
            Constraint::Any => "any",
            Constraint::Exact(_) => "==",
            Constraint::AtLeast(_) => ">=",
            Constraint::LessThan(_) => "<",
        }
    }

    pub fn version(&self) -> Option<&Version> {
        match self {
            Constraint::Any => None,
            Constraint::Exact(v) | Constraint::AtLeast(v) | Constraint::LessThan(v) => Some(v),
        }
    }

    pub fn from_op(op: &str, version: Option<&str>) -> Result<Self, PackageError> {
        let need = |v: Option<&str>| -> Result<Version, PackageError> {
            v.ok_or_else(|| PackageError::InvalidConstraint(format!("operator `{op}` needs a version")))?
                .parse()
        };
        match op {
            "any" => Ok(Constraint::Any),
            "==" => Ok(Constraint::Exact(need(version)?)),
            ">=" => Ok(Constraint::AtLeast(need(version)?)),
            "<" => Ok(Constraint::LessThan(need(version)?)),
            other => Err(PackageError::InvalidConstraint(format!("unknown operator `{other}`"))),
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.version() {
            None => f.write_str("*"),
            Some(v) => write!(f, "{}{v}", self.op()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> Version {
        s.parse().unwrap()
    }

    #[test]
    fn componentwise_ordering() {
        assert!(v("1.10") > v("1.9"));
        assert!(v("2") > v("1.99.99"));
        assert_eq!(v("1.0"), v("1"));
        assert_eq!(v("1.0").cmp(&v("1.0.0")), Ordering::Equal);
        assert!(v("1.0.1") > v("1"));
    }

    #[test]
    fn rejects_malformed() {
        assert!("1..2".parse::<Version>().is_err());
        assert!("".parse::<Version>().is_err());
        assert!("a.b".parse::<Version>().is_err());
    }

    #[test]
    fn constraints() {
        assert!(Constraint::AtLeast(v("1.0")).allows(&v("1.0")));
        assert!(!Constraint::LessThan(v("2.0")).allows(&v("2")));
        assert!(Constraint::Exact(v("1.0")).allows(&v("1")));
        assert!(Constraint::Any.allows(&v("0.1")));
        assert!(Constraint::from_op(">=", None).is_err());
        assert!(Constraint::from_op("~=", Some("1.0")).is_err());
        assert_eq!(Constraint::from_op("<", Some("2.0")).unwrap().to_string(), "<2.0");
    }
}
