use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SampleId = u64;

/// One stream item: features plus the label the stream claims.
///
/// `true_label` is carried for evaluation only. Nothing in the sampler,
/// scorer or learner reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: SampleId,
    pub features: Vec<f64>,
    pub noisy_label: usize,
    pub true_label: usize,
}

impl Sample {
    pub fn new(id: SampleId, features: Vec<f64>, noisy_label: usize, true_label: usize) -> Self {
        Sample {
            id,
            features,
            noisy_label,
            true_label,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.noisy_label == self.true_label
    }

    pub fn validate(&self, num_classes: usize, dim: usize) -> Result<()> {
        for label in [self.noisy_label, self.true_label] {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
        }
        if self.features.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: self.features.len(),
            });
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature(self.id));
        }
        Ok(())
    }
}
