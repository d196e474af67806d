use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::PolicyConfig;
use crate::streamgen::{even_split, NoiseType, StreamSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ntd,
    Reservoir,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Ntd => "ntd",
            SamplerKind::Reservoir => "reservoir",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ntd" => Ok(SamplerKind::Ntd),
            "reservoir" => Ok(SamplerKind::Reservoir),
            other => Err(Error::InvalidConfig(format!("unknown sampler {other:?}"))),
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(SamplerKind),
    Many(Vec<SamplerKind>),
}

fn samplers_de<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<SamplerKind>, D::Error> {
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

/// Every knob of one experiment, as flat keys.
///
/// The defaults are a desk-sized version of a 10-class, 5-task benchmark
/// with a 500-sample memory and batch size 16.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub num_tasks: usize,
    pub samples_per_task: usize,
    /// Explicit task class sets; empty means an even contiguous split.
    pub classes_per_task: Vec<Vec<usize>>,
    pub boundary_fuzz: f64,
    pub noise_type: NoiseType,
    pub noise_rate: f64,
    pub class_spread: f64,
    pub mean_radius: f64,
    pub min_separation: f64,

    pub memory_size: usize,
    pub batch_size: usize,
    pub tta_count: usize,
    pub tta_jitter_scale: f64,
    pub tta_dropout_rate: f64,
    pub online_lr: f64,
    pub memory_lr: f64,
    pub mem_epochs: usize,
    /// Train on memory once after the last task instead of after each task.
    pub defer_memory_training: bool,

    #[serde(deserialize_with = "samplers_de")]
    pub sampler: Vec<SamplerKind>,
    pub seeds: Vec<u64>,
    pub test_size: usize,
    /// Run trials on the rayon pool.
    pub parallel: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            num_classes: 10,
            feature_dim: 32,
            num_tasks: 5,
            samples_per_task: 2000,
            classes_per_task: Vec::new(),
            boundary_fuzz: 0.1,
            noise_type: NoiseType::Sym,
            noise_rate: 0.4,
            class_spread: 0.25,
            mean_radius: 1.0,
            min_separation: 4.0,
            memory_size: 500,
            batch_size: 16,
            tta_count: 8,
            tta_jitter_scale: 0.1,
            tta_dropout_rate: 0.1,
            online_lr: 0.05,
            memory_lr: 0.01,
            mem_epochs: 32,
            defer_memory_training: false,
            sampler: vec![SamplerKind::Ntd],
            seeds: vec![1, 2, 3],
            test_size: 2000,
            parallel: true,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn stream_spec(&self, seed: u64) -> StreamSpec {
        let classes_per_task = if self.classes_per_task.is_empty() {
            even_split(self.num_classes, self.num_tasks)
        } else {
            self.classes_per_task.clone()
        };
        StreamSpec {
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            samples_per_task: self.samples_per_task,
            num_tasks: self.num_tasks,
            classes_per_task,
            boundary_fuzz: self.boundary_fuzz,
            noise_type: self.noise_type,
            noise_rate: self.noise_rate,
            seed,
            class_spread: self.class_spread,
            mean_radius: self.mean_radius,
            min_separation: self.min_separation,
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            count: self.tta_count,
            jitter_scale: self.tta_jitter_scale,
            dropout_rate: self.tta_dropout_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.memory_size == 0 {
            return bad("memory_size must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.mem_epochs == 0 {
            return bad("mem_epochs must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.sampler.is_empty() {
            return bad("at least one sampler is required");
        }
        if self.samples_per_task == 0 {
            return bad("samples_per_task must be at least 1");
        }
        for (name, lr) in [("online_lr", self.online_lr), ("memory_lr", self.memory_lr)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative")));
            }
        }
        if self.test_size < self.num_classes {
            return bad("test_size must be at least num_classes");
        }
        self.policy_config().policies()?;
        self.stream_spec(0).validate()
    }
}
