//! Episodic-memory sampling for data streams with noisy labels and fuzzy
//! task boundaries.
//!
//! Samples arriving from the stream are grouped by their (possibly wrong)
//! label. Once the memory is full, each arrival triggers an eviction from the
//! largest label group: the member with the highest mean loss under a set of
//! test-time augmentations is dropped. The result is a buffer that stays
//! class-balanced and prefers samples whose label agrees with the model.
//!
//! Module map:
//!
//! - [`sampler`]: grouped episodic memory, debiasing eviction, reservoir baseline
//! - [`scoring`]: augmentation policies and mean augmentation loss
//! - [`learner`]: softmax regression trained by streaming SGD
//! - [`streamgen`]: synthetic task streams with label noise
//! - [`harness`]: experiment runner, metrics and reporting

pub mod error;
pub mod harness;
pub mod learner;
pub mod sample;
pub mod sampler;
pub mod scoring;
pub mod streamgen;

pub use error::{Error, Result};
pub use learner::OnlineModel;
pub use sample::{Sample, SampleId};
pub use sampler::{EpisodicMemory, InsertOutcome, ReplayBuffer, ReservoirMemory};
pub use scoring::{AugmentationPolicySet, LossValue, PolicyConfig};
pub use streamgen::{NoiseType, Stream, StreamSpec};
