use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SandboxError;

/// One predicate over a named syscall argument. A missing argument, or a
/// non-numeric value for a range clause, fails the clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Clause {
    Prefix {
        arg: String,
        value: String,
    },
    Exact {
        arg: String,
        value: String,
    },
    /// Inclusive bounds.
    Range {
        arg: String,
        min: f64,
        max: f64,
    },
}

impl Clause {
    pub fn holds(&self, args: &BTreeMap<String, String>) -> bool {
        match self {
            Clause::Prefix { arg, value } => args.get(arg).is_some_and(|a| a.starts_with(value.as_str())),
            Clause::Exact { arg, value } => args.get(arg).is_some_and(|a| a == value),
            Clause::Range { arg, min, max } => args
                .get(arg)
                .and_then(|a| a.trim().parse::<f64>().ok())
                .is_some_and(|x| x >= *min && x <= *max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyscallRule {
    Allow,
    Deny,
    /// Allowed only when every clause holds.
    Conditional(Vec<Clause>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Allow,
    Deny,
}

/// Allowlist of syscalls. Names without a rule are denied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyscallPolicy {
    rules: BTreeMap<String, SyscallRule>,
}

impl SyscallPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rule(mut self, name: &str, rule: SyscallRule) -> Self {
        self.rules.insert(name.to_string(), rule);
        self
    }

    pub fn allow(self, names: &[&str]) -> Self {
        names.iter().fold(self, |p, n| p.with_rule(n, SyscallRule::Allow))
    }

    pub fn rule(&self, name: &str) -> Option<&SyscallRule> {
        self.rules.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }

    /// Pure decision, no logging.
    pub fn decide(&self, name: &str, args: &BTreeMap<String, String>) -> Decision {
        match self.rules.get(name) {
            Some(SyscallRule::Allow) => Decision::Allow,
            Some(SyscallRule::Conditional(clauses)) if clauses.iter().all(|c| c.holds(args)) => Decision::Allow,
            _ => Decision::Deny,
        }
    }

    pub(super) fn from_entries(entries: Vec<SyscallEntry>) -> Result<Self, SandboxError> {
        let mut rules = BTreeMap::new();
        for e in entries {
            let rule = match (e.action.as_str(), e.condition) {
                ("allow", None) => SyscallRule::Allow,
                ("allow", Some(c)) => SyscallRule::Conditional(c.into_vec()),
                ("deny", None) => SyscallRule::Deny,
                ("deny", Some(_)) => {
                    return Err(SandboxError::InvalidPolicy(format!(
                        "syscall `{}`: deny rules take no condition",
                        e.name
                    )))
                }
                (other, _) => {
                    return Err(SandboxError::InvalidPolicy(format!(
                        "syscall `{}`: unknown action `{other}`",
                        e.name
                    )))
                }
            };
            if rules.insert(e.name.clone(), rule).is_some() {
                return Err(SandboxError::InvalidPolicy(format!(
                    "duplicate rule for syscall `{}`",
                    e.name
                )));
            }
        }
        Ok(Self { rules })
    }

    pub(super) fn to_entries(&self) -> Vec<SyscallEntry> {
        self.rules
            .iter()
            .map(|(name, rule)| {
                let (action, condition) = match rule {
                    SyscallRule::Allow => ("allow", None),
                    SyscallRule::Deny => ("deny", None),
                    SyscallRule::Conditional(c) => ("allow", Some(OneOrMany::Many(c.clone()))),
                };
                SyscallEntry {
                    name: name.clone(),
                    action: action.to_string(),
                    condition,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub(super) enum OneOrMany {
    One(Clause),
    Many(Vec<Clause>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<Clause> {
        match self {
            OneOrMany::One(c) => vec![c],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(super) struct SyscallEntry {
    pub name: String,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<OneOrMany>,
}
