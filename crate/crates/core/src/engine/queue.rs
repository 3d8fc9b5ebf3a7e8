use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use crate::kernel::EntityId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{0}` already has a pending wake-up")]
pub struct AlreadyPending(pub String);

/// Min-heap of wake-ups ordered by `(wake_time, seq)`; each entity has at
/// most one pending entry.
#[derive(Debug, Clone, Default)]
pub struct WakeQueue {
    heap: BinaryHeap<Reverse<(u64, u64, EntityId)>>,
    pending: BTreeSet<EntityId>,
    next_seq: u64,
}

impl WakeQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues `entity` at `time` with the next tiebreak sequence number.
    pub fn push(&mut self, time: u64, entity: EntityId) -> Result<u64, AlreadyPending> {
        let seq = self.next_seq;
        self.push_with_seq(time, seq, entity)?;
        Ok(seq)
    }

    /// Queues with an explicit tiebreak; later automatic sequence numbers
    /// continue above it.
    pub fn push_with_seq(&mut self, time: u64, seq: u64, entity: EntityId) -> Result<(), AlreadyPending> {
        if !self.pending.insert(entity.clone()) {
            return Err(AlreadyPending(entity.to_string()));
        }
        self.next_seq = self.next_seq.max(seq + 1);
        self.heap.push(Reverse((time, seq, entity)));
        Ok(())
    }

    pub fn pop(&mut self) -> Option<(u64, u64, EntityId)> {
        let Reverse(entry) = self.heap.pop()?;
        self.pending.remove(&entry.2);
        Some(entry)
    }

    pub fn peek(&self) -> Option<&(u64, u64, EntityId)> {
        self.heap.peek().map(|Reverse(entry)| entry)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Pending entries in pop order.
    pub fn entries(&self) -> Vec<(u64, u64, EntityId)> {
        let mut entries: Vec<_> = self.heap.iter().map(|Reverse(e)| e.clone()).collect();
        entries.sort();
        entries
    }
}
