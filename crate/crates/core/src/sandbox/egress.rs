use std::fmt;
use std::str::FromStr;

use super::SandboxError;

/// `host:port` or `*.domain:port`. The wildcard stands for exactly one
/// leading label, so `*.example.com` matches `api.example.com` but neither
/// `example.com` nor `a.b.example.com`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgressRule {
    wildcard: bool,
    host: String,
    port: u16,
}

impl EgressRule {
    pub fn matches(&self, host: &str, port: u16) -> bool {
        if port != self.port {
            return false;
        }
        let host = host.to_ascii_lowercase();
        if !self.wildcard {
            return host == self.host;
        }
        match host.strip_suffix(self.host.as_str()).and_then(|h| h.strip_suffix('.')) {
            Some(label) => !label.is_empty() && !label.contains('.'),
            None => false,
        }
    }
}

impl FromStr for EgressRule {
    type Err = SandboxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| SandboxError::InvalidPolicy(format!("egress entry `{s}`: {why}"));
        let (host, port) = s.rsplit_once(':').ok_or_else(|| bad("missing port"))?;
        let port: u16 = port.parse().map_err(|_| bad("port must be 1..65535"))?;
        if port == 0 {
            return Err(bad("port must be 1..65535"));
        }
        let (wildcard, host) = match host.strip_prefix("*.") {
            Some(rest) => (true, rest),
            None => (false, host),
        };
        if host.is_empty() || host.contains('*') || host.split('.').any(str::is_empty) {
            return Err(bad("malformed host pattern"));
        }
        Ok(Self {
            wildcard,
            host: host.to_ascii_lowercase(),
            port,
        })
    }
}

impl fmt::Display for EgressRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.wildcard {
            write!(f, "*.{}:{}", self.host, self.port)
        } else {
            write!(f, "{}:{}", self.host, self.port)
        }
    }
}

/// Default-deny egress allowlist.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EgressPolicy {
    allowed: Vec<EgressRule>,
}

impl EgressPolicy {
    pub fn new(allowed: Vec<EgressRule>) -> Self {
        Self { allowed }
    }

    pub fn parse(entries: &[&str]) -> Result<Self, SandboxError> {
        Ok(Self::new(entries.iter().map(|e| e.parse()).collect::<Result<_, _>>()?))
    }

    pub fn rules(&self) -> &[EgressRule] {
        &self.allowed
    }

    pub fn allows(&self, host: &str, port: u16) -> bool {
        self.allowed.iter().any(|r| r.matches(host, port))
    }
}
