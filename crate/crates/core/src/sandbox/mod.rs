//! Policy model of the sandbox defense layers: a syscall allowlist with
//! conditional rules, a default-deny egress allowlist, the supervisor denial
//! log, and per-query resource budgets bound to sandbox handles.

mod egress;
mod lifecycle;
mod log;
mod syscall;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ProcessId, QueryId};

pub use egress::{EgressPolicy, EgressRule};
pub use lifecycle::{SandboxHandle, SandboxInfo, SandboxManager, TeardownReport};
pub use log::{DenialEvent, DenialKind, SupervisorLog};
pub use syscall::{Clause, Decision, SyscallPolicy, SyscallRule};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SandboxError {
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid resource budget: {0}")]
    InvalidBudget(String),
    #[error("sandbox {0} already torn down")]
    AlreadyTornDown(u64),
    #[error("unknown sandbox {0}")]
    UnknownSandbox(u64),
}

/// What an executing UDF declares it is about to do.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Intent {
    Syscall {
        name: String,
        #[serde(default)]
        args: BTreeMap<String, String>,
    },
    Egress {
        host: String,
        port: u16,
    },
}

impl Intent {
    pub fn syscall(name: &str, args: &[(&str, &str)]) -> Self {
        Intent::Syscall {
            name: name.to_string(),
            args: args.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn egress(host: &str, port: u16) -> Self {
        Intent::Egress {
            host: host.to_string(),
            port,
        }
    }
}

/// Who is asking, and when, for the denial log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalContext {
    pub timestamp_us: u64,
    pub query_id: QueryId,
    pub process_id: ProcessId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceBudget {
    pub memory_bytes: u64,
    pub cpu_ms: u64,
}

impl ResourceBudget {
    pub fn new(memory_bytes: u64, cpu_ms: u64) -> Result<Self, SandboxError> {
        if memory_bytes == 0 || cpu_ms == 0 {
            return Err(SandboxError::InvalidBudget(format!(
                "memory_bytes={memory_bytes} cpu_ms={cpu_ms}; both must be > 0"
            )));
        }
        Ok(Self { memory_bytes, cpu_ms })
    }
}

pub fn evaluate_syscall(
    policy: &SyscallPolicy,
    call_name: &str,
    args: &BTreeMap<String, String>,
    log: &SupervisorLog,
    ctx: EvalContext,
) -> Decision {
    let d = policy.decide(call_name, args);
    if d == Decision::Deny {
        log.append(
            ctx.timestamp_us,
            ctx.query_id,
            ctx.process_id,
            DenialKind::Syscall,
            call_name.to_string(),
            args.clone(),
        );
    }
    d
}

pub fn evaluate_egress(
    policy: &EgressPolicy,
    host: &str,
    port: u16,
    log: &SupervisorLog,
    ctx: EvalContext,
) -> Decision {
    if policy.allows(host, port) {
        return Decision::Allow;
    }
    log.append(
        ctx.timestamp_us,
        ctx.query_id,
        ctx.process_id,
        DenialKind::Egress,
        format!("{host}:{port}"),
        BTreeMap::new(),
    );
    Decision::Deny
}

/// Both policy layers, as loaded from a policy file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SandboxPolicy {
    pub syscalls: SyscallPolicy,
    pub egress: EgressPolicy,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    #[serde(default)]
    syscalls: Vec<syscall::SyscallEntry>,
    #[serde(default)]
    egress: Vec<String>,
}

impl SandboxPolicy {
    pub fn evaluate(&self, intent: &Intent, log: &SupervisorLog, ctx: EvalContext) -> Decision {
        match intent {
            Intent::Syscall { name, args } => evaluate_syscall(&self.syscalls, name, args, log, ctx),
            Intent::Egress { host, port } => evaluate_egress(&self.egress, host, *port, log, ctx),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SandboxError> {
        let file: PolicyFile = serde_json::from_str(text).map_err(|e| SandboxError::InvalidPolicy(e.to_string()))?;
        Ok(Self {
            syscalls: SyscallPolicy::from_entries(file.syscalls)?,
            egress: EgressPolicy::new(file.egress.iter().map(|e| e.parse()).collect::<Result<_, _>>()?),
        })
    }

    pub fn to_json(&self) -> String {
        let file = PolicyFile {
            syscalls: self.syscalls.to_entries(),
            egress: self.egress.rules().iter().map(ToString::to_string).collect(),
        };
        serde_json::to_string_pretty(&file).expect("policy serializes")
    }

    pub fn load(path: &Path) -> Result<Self, SandboxError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SandboxError::InvalidPolicy(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Illustrative default: ordinary I/O and memory calls, file opens under
    /// the scratch and environment roots, no network.
    pub fn default_policy() -> Self {
        let under = |root: &str| {
            SyscallRule::Conditional(vec![Clause::Prefix {
                arg: "path".into(),
                value: root.into(),
            }])
        };
        let syscalls = SyscallPolicy::new()
            .allow(&[
                "read",
                "write",
                "close",
                "fstat",
                "lseek",
                "mmap",
                "munmap",
                "brk",
                "futex",
                "clock_gettime",
                "getrandom",
                "exit_group",
            ])
            .with_rule("open", under("/tmp/"))
            .with_rule("openat", under("/tmp/"))
            .with_rule(
                "mprotect",
                SyscallRule::Conditional(vec![Clause::Range {
                    arg: "prot".into(),
                    min: 0.0,
                    max: 3.0,
                }]),
            );
        Self {
            syscalls,
            egress: EgressPolicy::default(),
        }
    }
}
