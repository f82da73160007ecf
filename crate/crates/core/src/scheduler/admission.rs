use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use crate::ids::{NodeId, QueryId};

use super::{MemoryEstimate, SchedulerError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeState {
    pub node_id: NodeId,
    pub capacity_bytes: u64,
    pub reservations: BTreeMap<QueryId, u64>,
}

impl NodeState {
    pub fn new(node_id: NodeId, capacity_bytes: u64) -> Self {
        Self {
            node_id,
            capacity_bytes,
            reservations: BTreeMap::new(),
        }
    }

    pub fn reserved_bytes(&self) -> u64 {
        self.reservations.values().sum()
    }

    pub fn free_bytes(&self) -> u64 {
        self.capacity_bytes - self.reserved_bytes()
    }

    pub fn is_idle(&self) -> bool {
        self.reservations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QueueEntry {
    pub query_id: QueryId,
    pub estimate: MemoryEstimate,
    pub enqueue_time_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Placed(NodeId),
    Queued,
}

/// Node with the most free capacity that still fits `bytes`; lowest id on ties.
fn best_fit(nodes: &[NodeState], bytes: u64) -> Option<usize> {
    nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.free_bytes() >= bytes)
        .max_by(|(_, a), (_, b)| a.free_bytes().cmp(&b.free_bytes()).then(b.node_id.cmp(&a.node_id)))
        .map(|(i, _)| i)
}

/// Places the query or appends it to the FIFO queue. A non-empty queue
/// blocks new arrivals even if they would fit.
pub fn admit(
    query_id: QueryId,
    est: MemoryEstimate,
    nodes: &mut [NodeState],
    queue: &mut VecDeque<QueueEntry>,
    now_us: u64,
) -> Result<Admission, SchedulerError> {
    let max_cap = nodes.iter().map(|n| n.capacity_bytes).max().unwrap_or(0);
    if est.bytes > max_cap {
        return Err(SchedulerError::EstimateExceedsAnyNode {
            estimate_bytes: est.bytes,
            max_capacity_bytes: max_cap,
        });
    }
    if queue.is_empty() {
        if let Some(i) = best_fit(nodes, est.bytes) {
            nodes[i].reservations.insert(query_id, est.bytes);
            return Ok(Admission::Placed(nodes[i].node_id));
        }
    }
    queue.push_back(QueueEntry {
        query_id,
        estimate: est,
        enqueue_time_us: now_us,
    });
    Ok(Admission::Queued)
}

/// One logical scheduler: node reservations plus the admission queue.
#[derive(Debug, Clone)]
pub struct Scheduler {
    nodes: Vec<NodeState>,
    queue: VecDeque<QueueEntry>,
}

impl Scheduler {
    pub fn new(nodes: usize, capacity_bytes: u64) -> Self {
        Self {
            nodes: (0..nodes as NodeId)
                .map(|i| NodeState::new(i, capacity_bytes))
                .collect(),
            queue: VecDeque::new(),
        }
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn queue(&self) -> impl Iterator<Item = &QueueEntry> {
        self.queue.iter()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn admit(&mut self, query_id: QueryId, est: MemoryEstimate, now_us: u64) -> Result<Admission, SchedulerError> {
        admit(query_id, est, &mut self.nodes, &mut self.queue, now_us)
    }

    pub fn node_of(&self, query_id: QueryId) -> Option<NodeId> {
        self.nodes
            .iter()
            .find(|n| n.reservations.contains_key(&query_id))
            .map(|n| n.node_id)
    }

    pub fn reservation(&self, query_id: QueryId) -> Option<u64> {
        self.nodes.iter().find_map(|n| n.reservations.get(&query_id).copied())
    }

    /// Drops the query's reservation. Call `drain` afterwards.
    pub fn release(&mut self, query_id: QueryId) -> Result<NodeId, SchedulerError> {
        for n in &mut self.nodes {
            if n.reservations.remove(&query_id).is_some() {
                return Ok(n.node_id);
            }
        }
        Err(SchedulerError::UnknownQuery(query_id))
    }

    /// Places queued entries head-first, stopping at the first that does not fit.
    pub fn drain(&mut self) -> Vec<(QueueEntry, NodeId)> {
        let mut placed = Vec::new();
        while let Some(head) = self.queue.front() {
            let Some(i) = best_fit(&self.nodes, head.estimate.bytes) else {
                break;
            };
            let head = self.queue.pop_front().expect("front exists");
            self.nodes[i].reservations.insert(head.query_id, head.estimate.bytes);
            placed.push((head, self.nodes[i].node_id));
        }
        placed
    }

    pub fn node(&self, node_id: NodeId) -> Option<&NodeState> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    /// Reservation conservation on every node.
    pub fn check_conservation(&self) -> bool {
        self.nodes.iter().all(|n| n.reserved_bytes() <= n.capacity_bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitCheck {
    Ok,
    OomKilled,
}

pub fn enforce_limit(_query_id: QueryId, limit_bytes: u64, observed_bytes: u64) -> LimitCheck {
    if observed_bytes > limit_bytes {
        LimitCheck::OomKilled
    } else {
        LimitCheck::Ok
    }
}
