use rand::Rng;

use crate::error::{Error, Result};

/// One environment step as stored for learning and for KL data sets.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub state: Vec<f64>,
    pub action: f64,
    /// Unscaled reward.
    pub reward: f64,
    pub next: Vec<f64>,
    pub step: usize,
}

/// Fixed-capacity ring buffer; the oldest record goes first when full.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<TransitionRecord>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Stores `record` and returns its slot.
    pub fn push(&mut self, record: TransitionRecord) -> usize {
        if self.items.len() < self.capacity {
            self.items.push(record);
            self.items.len() - 1
        } else {
            let slot = self.cursor;
            self.items[slot] = record;
            self.cursor = (self.cursor + 1) % self.capacity;
            slot
        }
    }

    pub fn get(&self, slot: usize) -> &TransitionRecord {
        &self.items[slot]
    }

    /// Records from oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &TransitionRecord> {
        let (new, old) = self.items.split_at(self.cursor);
        old.iter().chain(new.iter())
    }

    /// Slots of the stored records, in storage order.
    pub fn slots(&self) -> std::ops::Range<usize> {
        0..self.items.len()
    }

    /// Distinct slots drawn uniformly; `None` until `batch` records exist.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<usize>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some(rand::seq::index::sample(rng, self.items.len(), batch).into_vec())
    }
}
