//! Test-time augmentation scoring.
//!
//! A sample's score is the mean cross-entropy of the model over a fixed set
//! of feature-space augmentations, evaluated against the sample's noisy
//! label. Every policy draws its randomness from `(seed, policy key, sample
//! id)` alone, so a score does not depend on evaluation order or thread.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{cross_entropy, OnlineModel};
use crate::sample::{Sample, SampleId};

/// Cross-entropy in nats. Always finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LossValue(f64);

impl LossValue {
    pub fn new(value: f64) -> Option<Self> {
        (value.is_finite() && value >= 0.0).then_some(LossValue(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Identity,
    /// Additive Gaussian noise, `scale` times the per-dimension feature std.
    Jitter { scale: f64 },
    /// Zero each coordinate independently with probability `rate`.
    Dropout { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    /// Feeds the per-sample RNG; stays with the policy if the set is reordered.
    pub key: u64,
}

/// How many policies to build and how strong they are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Total number of policies, identity included.
    pub count: usize,
    pub jitter_scale: f64,
    pub dropout_rate: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            count: 8,
            jitter_scale: 0.1,
            dropout_rate: 0.1,
        }
    }
}

impl PolicyConfig {
    /// Identity first, then jitters and dropouts splitting the remainder
    /// (jitters take the odd one): 8 gives 1 + 4 + 3.
    pub fn policies(&self) -> Result<Vec<Policy>> {
        if self.count == 0 {
            return Err(Error::InvalidConfig("at least one augmentation policy is required".into()));
        }
        if !(self.jitter_scale >= 0.0 && self.jitter_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "jitter scale must be finite and non-negative, got {}",
                self.jitter_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must lie in [0, 1], got {}",
                self.dropout_rate
            )));
        }
        let rest = self.count - 1;
        let jitters = rest.div_ceil(2);
        let kinds = std::iter::once(PolicyKind::Identity)
            .chain(std::iter::repeat_n(
                PolicyKind::Jitter { scale: self.jitter_scale },
                jitters,
            ))
            .chain(std::iter::repeat_n(
                PolicyKind::Dropout { rate: self.dropout_rate },
                rest - jitters,
            ));
        Ok(kinds
            .enumerate()
            .map(|(key, kind)| Policy { kind, key: key as u64 })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicySet {
    policies: Vec<Policy>,
    seed: u64,
    feature_std: Vec<f64>,
}

impl AugmentationPolicySet {
    /// `feature_std` is the per-dimension spread that jitter scales against;
    /// its length fixes the feature dimension.
    pub fn new(config: &PolicyConfig, seed: u64, feature_std: Vec<f64>) -> Result<Self> {
        Self::from_policies(config.policies()?, seed, feature_std)
    }

    pub fn from_policies(policies: Vec<Policy>, seed: u64, feature_std: Vec<f64>) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::InvalidConfig("at least one augmentation policy is required".into()));
        }
        if feature_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidConfig("feature std must be finite and non-negative".into()));
        }
        Ok(AugmentationPolicySet {
            policies,
            seed,
            feature_std,
        })
    }

    pub fn count(&self) -> usize {
        self.policies.len()
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.feature_std.len()
    }

    pub fn apply_policy(&self, index: usize, x: &[f64], sample_id: SampleId) -> Result<Vec<f64>> {
        let policy = self.policies.get(index).ok_or(Error::PolicyOutOfRange {
            index,
            count: self.policies.len(),
        })?;
        if x.len() != self.feature_std.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_std.len(),
                actual: x.len(),
            });
        }
        let mut out = x.to_vec();
        match policy.kind {
            PolicyKind::Identity => {}
            PolicyKind::Jitter { scale } => {
                if scale != 0.0 {
                    let mut rng = policy_rng(self.seed, policy.key, sample_id);
                    for (v, std) in out.iter_mut().zip(&self.feature_std) {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += z * scale * std;
                    }
                }
            }
            PolicyKind::Dropout { rate } => {
                if rate > 0.0 {
                    let mut rng = policy_rng(self.seed, policy.key, sample_id);
                    for v in out.iter_mut() {
                        if rng.random::<f64>() < rate {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Loss of `model` on every augmented view of `sample`, in policy order.
    pub fn policy_losses(&self, sample: &Sample, model: &OnlineModel) -> Result<Vec<f64>> {
        if sample.noisy_label >= model.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: sample.noisy_label,
                num_classes: model.num_classes(),
            });
        }
        (0..self.policies.len())
            .map(|i| {
                let view = self.apply_policy(i, &sample.features, sample.id)?;
                let logits = model.logits(&view)?;
                if logits.iter().any(|z| !z.is_finite()) {
                    return Err(Error::NonFiniteOutput { policy: i });
                }
                Ok(cross_entropy(&logits, sample.noisy_label))
            })
            .collect()
    }
}

/// Mean augmentation loss of `sample` under `model`.
pub fn tta_mean_loss(
    sample: &Sample,
    model: &OnlineModel,
    policies: &AugmentationPolicySet,
) -> Result<LossValue> {
    let losses = policy_losses_checked(sample, model, policies)?;
    let mean = mean_of(&losses);
    LossValue::new(mean).ok_or(Error::NonFiniteOutput { policy: 0 })
}

fn policy_losses_checked(
    sample: &Sample,
    model: &OnlineModel,
    policies: &AugmentationPolicySet,
) -> Result<Vec<f64>> {
    let losses = policies.policy_losses(sample, model)?;
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFiniteOutput { policy: i });
    }
    Ok(losses)
}

/// Order-independent mean: values are sorted, then folded as a running mean.
///
/// The running form returns `v` exactly for `n` copies of `v` and never
/// leaves `[min, max]`.
pub fn mean_of(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut mean = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        mean += (v - mean) / (i + 1) as f64;
    }
    mean
}

/// Scores for every member of `group`, keyed by sample id.
pub fn score_group(
    group: &[Sample],
    model: &OnlineModel,
    policies: &AugmentationPolicySet,
) -> Result<HashMap<SampleId, f64>> {
    group
        .iter()
        .map(|s| Ok((s.id, tta_mean_loss(s, model, policies)?.get())))
        .collect()
}

/// Population standard deviation of each feature dimension.
pub fn feature_std<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut n = 0.0;
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    for row in rows {
        n += 1.0;
        for j in 0..dim {
            let delta = row[j] - mean[j];
            mean[j] += delta / n;
            m2[j] += delta * (row[j] - mean[j]);
        }
    }
    if n == 0.0 {
        return vec![0.0; dim];
    }
    m2.into_iter().map(|v| (v / n).sqrt()).collect()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn policy_rng(seed: u64, key: u64, sample_id: SampleId) -> ChaCha8Rng {
    let h = splitmix64(splitmix64(splitmix64(seed) ^ key) ^ sample_id);
    ChaCha8Rng::seed_from_u64(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn model(c: usize, d: usize, seed: u64) -> OnlineModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = OnlineModel::zeros(c, d, 0.1).unwrap();
        let p: Vec<f64> = (0..c * d + c).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.set_params(&p).unwrap();
        m
    }

    fn default_set(d: usize, seed: u64) -> AugmentationPolicySet {
        AugmentationPolicySet::new(&PolicyConfig::default(), seed, vec![1.0; d]).unwrap()
    }

    #[test]
    fn default_catalogue_is_identity_four_jitters_three_dropouts() {
        let p = PolicyConfig::default().policies().unwrap();
        assert_eq!(p.len(), 8);
        assert_eq!(p[0].kind, PolicyKind::Identity);
        let jitters = p.iter().filter(|p| matches!(p.kind, PolicyKind::Jitter { .. })).count();
        let dropouts = p.iter().filter(|p| matches!(p.kind, PolicyKind::Dropout { .. })).count();
        assert_eq!((jitters, dropouts), (4, 3));
        let single = PolicyConfig { count: 1, ..Default::default() }.policies().unwrap();
        assert_eq!(single.len(), 1);
        assert!(PolicyConfig { count: 0, ..Default::default() }.policies().is_err());
    }

    #[test]
    fn identity_returns_input() {
        let set = default_set(3, 1);
        let x = [1.5, -0.25, 3.0];
        assert_eq!(set.apply_policy(0, &x, 42).unwrap(), x);
    }

    #[test]
    fn zero_noise_jitter_returns_input() {
        let policies = vec![Policy { kind: PolicyKind::Jitter { scale: 0.0 }, key: 0 }];
        let set = AugmentationPolicySet::from_policies(policies, 9, vec![2.0; 3]).unwrap();
        let x = [1.5, -0.25, 3.0];
        assert_eq!(set.apply_policy(0, &x, 42).unwrap(), x);
    }

    #[test]
    fn policies_replay_bit_identically() {
        let set = default_set(5, 77);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        for i in 0..set.count() {
            let a = set.apply_policy(i, &x, 1234).unwrap();
            let b = set.apply_policy(i, &x, 1234).unwrap();
            assert_eq!(a.len(), 5);
            assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
        // Different ids see different noise.
        assert_ne!(set.apply_policy(1, &x, 1).unwrap(), set.apply_policy(1, &x, 2).unwrap());
    }

    #[test]
    fn apply_policy_errors() {
        let set = default_set(2, 0);
        assert!(matches!(set.apply_policy(8, &[0.0, 0.0], 0), Err(Error::PolicyOutOfRange { .. })));
        assert!(matches!(set.apply_policy(0, &[0.0], 0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn single_identity_policy_equals_plain_loss() {
        let m = model(4, 3, 2);
        let set = AugmentationPolicySet::new(&PolicyConfig { count: 1, ..Default::default() }, 0, vec![1.0; 3])
            .unwrap();
        let s = Sample::new(3, vec![0.4, -1.0, 2.0], 2, 2);
        let plain = m.loss(&s.features, 2).unwrap();
        assert_eq!(tta_mean_loss(&s, &m, &set).unwrap().get(), plain);
    }

    #[test]
    fn mean_of_two_losses() {
        assert!((mean_of(&[0.2, 0.4]) - 0.3).abs() <= 1e-15);
        assert_eq!(mean_of(&[0.7; 8]), 0.7);
    }

    #[test]
    fn all_identity_equals_plain_loss_exactly() {
        let m = model(5, 4, 8);
        let policies = (0..8).map(|key| Policy { kind: PolicyKind::Identity, key }).collect();
        let set = AugmentationPolicySet::from_policies(policies, 3, vec![1.0; 4]).unwrap();
        let s = Sample::new(0, vec![0.3, 0.1, -0.7, 1.1], 4, 1);
        assert_eq!(tta_mean_loss(&s, &m, &set).unwrap().get(), m.loss(&s.features, 4).unwrap());
    }

    #[test]
    fn non_finite_output_names_the_policy() {
        let mut m = OnlineModel::zeros(2, 1, 0.1).unwrap();
        m.set_params(&[f64::MAX, -f64::MAX, 0.0, 0.0]).unwrap();
        let policies = vec![
            Policy { kind: PolicyKind::Dropout { rate: 1.0 }, key: 0 },
            Policy { kind: PolicyKind::Identity, key: 1 },
        ];
        let set = AugmentationPolicySet::from_policies(policies, 0, vec![1.0]).unwrap();
        let s = Sample::new(0, vec![4.0], 0, 0);
        assert!(matches!(tta_mean_loss(&s, &m, &set), Err(Error::NonFiniteOutput { policy: 1 })));
    }

    #[test]
    fn uniform_prediction_scores_ln_c() {
        let m = OnlineModel::zeros(7, 3, 0.1).unwrap();
        let set = default_set(3, 5);
        let s = Sample::new(9, vec![1.0, 2.0, 3.0], 6, 6);
        assert!((tta_mean_loss(&s, &m, &set).unwrap().get() - 7f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn feature_std_matches_two_pass() {
        let rows = [vec![1.0, 10.0], vec![3.0, 10.0], vec![5.0, 10.0]];
        let std = feature_std(rows.iter().map(Vec::as_slice), 2);
        assert!((std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(std[1], 0.0);
    }

    proptest! {
        #[test]
        fn mean_lies_between_extremes(
            seed in any::<u64>(),
            id in any::<u64>(),
            label in 0usize..4,
            x in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let m = model(4, 6, seed);
            let set = default_set(6, seed);
            let s = Sample::new(id, x, label, label);
            let losses = set.policy_losses(&s, &m).unwrap();
            let mean = tta_mean_loss(&s, &m, &set).unwrap().get();
            let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= mean && mean <= hi);
        }

        #[test]
        fn reordering_policies_keeps_the_mean(seed in any::<u64>(), id in any::<u64>()) {
            let m = model(3, 5, seed ^ 1);
            let set = default_set(5, seed);
            let mut shuffled = set.policies().to_vec();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let other = AugmentationPolicySet::from_policies(shuffled, seed, vec![1.0; 5]).unwrap();
            let s = Sample::new(id, vec![0.5, -0.5, 1.0, 2.0, -1.5], 1, 1);
            let a = tta_mean_loss(&s, &m, &set).unwrap().get();
            let b = tta_mean_loss(&s, &m, &other).unwrap().get();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }
}
