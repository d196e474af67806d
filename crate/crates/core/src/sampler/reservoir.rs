use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ReplayBuffer;
use crate::sample::Sample;

/// Uniform reservoir (algorithm R): after `n >= capacity` offers, every
/// offered item is retained with probability `capacity / n`.
#[derive(Debug, Clone)]
pub struct ReservoirMemory {
    capacity: usize,
    seen: u64,
    slots: Vec<Sample>,
    rng: ChaCha8Rng,
}

impl ReservoirMemory {
    pub fn new(capacity: usize, seed: u64) -> Self {
        ReservoirMemory {
            capacity,
            seen: 0,
            slots: Vec::with_capacity(capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    /// Offer one sample. Returns whichever sample left the buffer: the
    /// replaced slot, the rejected arrival, or `None` while filling.
    pub fn offer(&mut self, sample: Sample) -> Option<Sample> {
        self.seen += 1;
        if self.slots.len() < self.capacity {
            self.slots.push(sample);
            return None;
        }
        let j = self.rng.random_range(0..self.seen);
        if (j as usize) < self.capacity {
            Some(std::mem::replace(&mut self.slots[j as usize], sample))
        } else {
            Some(sample)
        }
    }

    pub fn contains(&self, id: u64) -> bool {
        self.slots.iter().any(|s| s.id == id)
    }
}

impl ReplayBuffer for ReservoirMemory {
    fn len(&self) -> usize {
        self.slots.len()
    }

    fn samples(&self) -> Box<dyn Iterator<Item = &Sample> + '_> {
        Box::new(self.slots.iter())
    }
}
