use std::fmt;

use serde::{Deserialize, Serialize};

pub type QueryId = u64;
pub type NodeId = u32;

/// An interpreter process: the node it runs on plus a per-node process number.
/// Orders by node first, which is the round-robin ring order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProcessId {
    pub node: NodeId,
    pub process: u32,
}

impl ProcessId {
    pub fn new(node: NodeId, process: u32) -> Self {
        Self { node, process }
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}p{}", self.node, self.process)
    }
}
