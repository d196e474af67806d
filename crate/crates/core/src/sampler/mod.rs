//! Episodic memory partitioned by noisy label, with debiasing eviction.
//!
//! Insertion is two-phase once the memory is full: [`EpisodicMemory::insert`]
//! appends the arrival tentatively (size becomes `capacity + 1`) and
//! [`EpisodicMemory::debias_evict`] must then remove the highest-scoring
//! member of the largest group. The arrival is itself eligible, so a
//! high-loss sample can be rejected immediately.
//!
//! Tie-breaks are fixed so that eviction is a pure function of the memory
//! contents and the score map: among equally large groups the smallest class
//! index is chosen, and among equal scores the smallest (oldest) id goes.

mod reservoir;

use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{Sample, SampleId};

pub use reservoir::ReservoirMemory;

/// Read access shared by every buffer the harness can train on.
pub trait ReplayBuffer {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn samples(&self) -> Box<dyn Iterator<Item = &Sample> + '_>;

    /// Fraction of stored samples whose noisy label equals the true label.
    fn clean_ratio(&self) -> Result<f64> {
        let len = self.len();
        if len == 0 {
            return Err(Error::EmptyMemory);
        }
        let clean = self.samples().filter(|s| s.is_clean()).count();
        Ok(clean as f64 / len as f64)
    }

    /// Stored count per noisy label, indexed by class.
    fn label_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for s in self.samples() {
            counts[s.noisy_label] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    StoredDirectly,
    /// The sample was appended past capacity; `debias_evict` must run next.
    EvictionRequired,
}

/// One line of the memory debug dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: SampleId,
    pub noisy_label: usize,
    pub true_label: usize,
    pub group_position: usize,
}

#[derive(Debug, Clone)]
pub struct EpisodicMemory {
    capacity: usize,
    groups: Vec<Vec<Sample>>,
    size: usize,
    stored: HashSet<SampleId>,
    last_id: Option<SampleId>,
    pending: Option<SampleId>,
}

impl EpisodicMemory {
    pub fn new(capacity: usize, num_classes: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("memory capacity must be positive".into()));
        }
        if num_classes == 0 {
            return Err(Error::InvalidConfig("number of classes must be positive".into()));
        }
        Ok(EpisodicMemory {
            capacity,
            groups: vec![Vec::new(); num_classes],
            size: 0,
            stored: HashSet::with_capacity(capacity + 1),
            last_id: None,
            pending: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_classes(&self) -> usize {
        self.groups.len()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_full(&self) -> bool {
        self.size >= self.capacity
    }

    /// Id of the tentatively inserted sample awaiting eviction, if any.
    pub fn pending(&self) -> Option<SampleId> {
        self.pending
    }

    pub fn group(&self, class: usize) -> &[Sample] {
        self.groups.get(class).map_or(&[], Vec::as_slice)
    }

    pub fn group_size(&self, class: usize) -> usize {
        self.group(class).len()
    }

    /// Size of every group, indexed by class; empty groups report 0.
    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.stored.contains(&id)
    }

    pub fn insert(&mut self, sample: Sample) -> Result<InsertOutcome> {
        if let Some(id) = self.pending {
            return Err(Error::Protocol(format!(
                "insert while sample {id} is awaiting eviction"
            )));
        }
        let num_classes = self.groups.len();
        if sample.noisy_label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: sample.noisy_label,
                num_classes,
            });
        }
        if self.stored.contains(&sample.id) {
            return Err(Error::DuplicateId(sample.id));
        }
        if let Some(last) = self.last_id {
            if sample.id <= last {
                return Err(Error::IdOutOfOrder {
                    id: sample.id,
                    last,
                });
            }
        }

        let outcome = if self.size < self.capacity {
            InsertOutcome::StoredDirectly
        } else {
            self.pending = Some(sample.id);
            InsertOutcome::EvictionRequired
        };
        self.last_id = Some(sample.id);
        self.stored.insert(sample.id);
        self.groups[sample.noisy_label].push(sample);
        self.size += 1;
        Ok(outcome)
    }

    /// The group eviction draws from: the largest, lowest class index on ties.
    pub fn eviction_group(&self) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for (class, group) in self.groups.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            if best.is_none_or(|(_, len)| group.len() > len) {
                best = Some((class, group.len()));
            }
        }
        best.map(|(class, _)| class)
    }

    /// Remove the highest-scoring member of the largest group.
    ///
    /// `scores` must cover every member of the group returned by
    /// [`eviction_group`](Self::eviction_group); extra entries are ignored.
    pub fn debias_evict(&mut self, scores: &HashMap<SampleId, f64>) -> Result<Sample> {
        if self.size != self.capacity + 1 {
            return Err(Error::Protocol(format!(
                "eviction requires size {} but memory holds {}",
                self.capacity + 1,
                self.size
            )));
        }
        let class = self
            .eviction_group()
            .ok_or_else(|| Error::Protocol("no group to evict from".into()))?;

        let group = &self.groups[class];
        let mut victim: Option<(usize, f64)> = None;
        for (pos, s) in group.iter().enumerate() {
            let score = *scores.get(&s.id).ok_or(Error::IncompleteScores(s.id))?;
            // Group order is id-ascending, so a strict comparison keeps the
            // oldest sample among equal scores.
            if victim.is_none_or(|(_, best)| score > best) {
                victim = Some((pos, score));
            }
        }
        let (pos, _) = victim.expect("selected group is non-empty");

        let evicted = self.groups[class].remove(pos);
        self.stored.remove(&evicted.id);
        self.size -= 1;
        self.pending = None;
        Ok(evicted)
    }

    pub fn clean_ratio(&self) -> Result<f64> {
        ReplayBuffer::clean_ratio(self)
    }

    /// Samples in class order, insertion order within a class.
    pub fn iter(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.groups.iter().flatten()
    }

    pub fn records(&self) -> Vec<MemoryRecord> {
        self.groups
            .iter()
            .flat_map(|group| {
                group.iter().enumerate().map(|(pos, s)| MemoryRecord {
                    id: s.id,
                    noisy_label: s.noisy_label,
                    true_label: s.true_label,
                    group_position: pos,
                })
            })
            .collect()
    }

    /// Line-delimited JSON dump of the memory state, one record per sample.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for record in self.records() {
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn check_invariants(&self) {
        assert_eq!(self.size, self.groups.iter().map(Vec::len).sum::<usize>());
        assert_eq!(self.size, self.stored.len());
        for (class, group) in self.groups.iter().enumerate() {
            assert!(group.iter().all(|s| s.noisy_label == class));
            assert!(group.windows(2).all(|w| w[0].id < w[1].id));
        }
        if self.pending.is_none() {
            assert!(self.size <= self.capacity);
        } else {
            assert_eq!(self.size, self.capacity + 1);
        }
    }
}

impl ReplayBuffer for EpisodicMemory {
    fn len(&self) -> usize {
        self.size
    }

    fn samples(&self) -> Box<dyn Iterator<Item = &Sample> + '_> {
        Box::new(self.iter())
    }
}
