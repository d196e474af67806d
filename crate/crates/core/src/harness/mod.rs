//! Experiment runner: one trial per `(sampler, seed)` pair, each replaying
//! the full protocol of online learning, memory construction, memory
//! training and clean test evaluation.

mod config;
mod metrics;
mod report;

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::learner::{train_on_memory, Example, MemoryTraining, OnlineModel};
use crate::sample::Sample;
use crate::sampler::{EpisodicMemory, InsertOutcome, ReplayBuffer, ReservoirMemory};
use crate::scoring::{feature_std, score_group, AugmentationPolicySet};
use crate::streamgen::{generate_with, make_test_set_with, ClassGenerator};

pub use config::{ExperimentConfig, SamplerKind};
pub use metrics::{aggregate, peak_rss_kib, Metrics, Stat, TaskTrace, WallTime};
pub use report::{
    report, summary, ComparisonRow, ErrorRecord, ResultsDocument, TrialResult,
};

// Salts separating the RNG streams derived from one trial seed.
const MODEL_SALT: u64 = 0x6d6f_6465_6c00;
const POLICY_SALT: u64 = 0x7474_6100;
const RESERVOIR_SALT: u64 = 0x7265_7300;
const MEMORY_SALT: u64 = 0x6d65_6d00;

fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The memory a trial fills.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Buffer {
    Ntd(EpisodicMemory),
    Reservoir(ReservoirMemory),
}

impl Buffer {
    pub fn as_replay(&self) -> &dyn ReplayBuffer {
        match self {
            Buffer::Ntd(m) => m,
            Buffer::Reservoir(r) => r,
        }
    }

    /// Offer one stream sample. Returns true when some sample left memory.
    pub fn offer(
        &mut self,
        sample: Sample,
        model: &OnlineModel,
        policies: &AugmentationPolicySet,
    ) -> Result<bool> {
        match self {
            Buffer::Ntd(memory) => ntd_offer(memory, sample, model, policies),
            Buffer::Reservoir(r) => Ok(r.offer(sample).is_some()),
        }
    }
}

/// Insert into the memory and, if it overflows, evict by mean augmentation
/// loss from the largest group. Only that group is scored.
pub fn ntd_offer(
    memory: &mut EpisodicMemory,
    sample: Sample,
    model: &OnlineModel,
    policies: &AugmentationPolicySet,
) -> Result<bool> {
    match memory.insert(sample)? {
        InsertOutcome::StoredDirectly => Ok(false),
        InsertOutcome::EvictionRequired => {
            let class = memory
                .eviction_group()
                .ok_or_else(|| Error::Protocol("overfull memory has no groups".into()))?;
            let scores = score_group(memory.group(class), model, policies)?;
            memory.debias_evict(&scores)?;
            Ok(true)
        }
    }
}

fn examples(samples: &[Sample]) -> Vec<Example<'_>> {
    samples
        .iter()
        .map(|s| (s.features.as_slice(), s.noisy_label))
        .collect()
}

/// Run one seed of one sampler end to end.
pub fn run_trial(config: &ExperimentConfig, sampler: SamplerKind, seed: u64) -> Result<Metrics> {
    config.validate()?;
    let started = Instant::now();

    let spec = config.stream_spec(seed);
    let generator = ClassGenerator::for_spec(&spec)?;
    let stream = generate_with(&spec, &generator)?;
    let test = make_test_set_with(&spec, &generator, config.test_size)?;

    let std = feature_std(
        stream.samples.iter().map(|s| s.features.as_slice()),
        spec.feature_dim,
    );
    let policies = AugmentationPolicySet::new(
        &config.policy_config(),
        derive_seed(seed, POLICY_SALT),
        std,
    )?;
    let mut model = OnlineModel::new(
        spec.num_classes,
        spec.feature_dim,
        config.online_lr,
        derive_seed(seed, MODEL_SALT),
    )?;
    let mut buffer = match sampler {
        SamplerKind::Ntd => Buffer::Ntd(EpisodicMemory::new(config.memory_size, spec.num_classes)?),
        SamplerKind::Reservoir => Buffer::Reservoir(ReservoirMemory::new(
            config.memory_size,
            derive_seed(seed, RESERVOIR_SALT),
        )),
    };

    let test_examples = examples(&test);
    let mut wall = WallTime::default();
    let mut traces = Vec::with_capacity(spec.num_tasks);
    let mut evictions = 0u64;
    let mut seen_classes: Vec<usize> = Vec::new();

    for (t, task) in stream.tasks().enumerate() {
        let online = Instant::now();
        let mut loss_sum = 0.0;
        for batch in task.chunks(config.batch_size) {
            loss_sum += model.sgd_step(&examples(batch))? * batch.len() as f64;
            for s in batch {
                if buffer.offer(s.clone(), &model, &policies)? {
                    evictions += 1;
                }
            }
        }
        wall.online_learning += online.elapsed().as_secs_f64();

        let last = t + 1 == stream.num_tasks();
        let memory_final_loss = if !config.defer_memory_training || last {
            let usage = Instant::now();
            let opts = MemoryTraining {
                epochs: config.mem_epochs,
                batch_size: config.batch_size,
                learning_rate: config.memory_lr,
                seed: derive_seed(seed, MEMORY_SALT.wrapping_add(t as u64)),
            };
            let trace = train_on_memory(&mut model, buffer.as_replay(), &opts)?;
            wall.episodic_memory_usage += usage.elapsed().as_secs_f64();
            trace.last().copied()
        } else {
            None
        };

        seen_classes.extend_from_slice(&spec.classes_per_task[t]);
        let seen: Vec<Example<'_>> = test_examples
            .iter()
            .copied()
            .filter(|(_, y)| seen_classes.contains(y))
            .collect();
        traces.push(TaskTrace {
            task: t,
            online_mean_loss: loss_sum / task.len() as f64,
            memory_final_loss,
            test_accuracy: model.accuracy(&test_examples)?,
            seen_class_accuracy: model.accuracy(&seen)?,
            memory_clean_ratio: buffer.as_replay().clean_ratio()?,
        });
    }

    let memory = buffer.as_replay();
    let last = traces.last().ok_or(Error::EmptyMemory)?;
    let metrics = Metrics {
        last_test_accuracy: last.test_accuracy,
        last_memory_clean_ratio: memory.clean_ratio()?,
        group_size_histogram: memory.label_histogram(spec.num_classes),
        evictions,
        tasks: traces,
        wall_time: WallTime {
            overall: started.elapsed().as_secs_f64(),
            ..wall
        },
        peak_rss_kib: peak_rss_kib(),
    };
    Ok(metrics)
}

/// Same protocol with a uniform reservoir in place of the grouped memory.
pub fn run_baseline_reservoir(config: &ExperimentConfig, seed: u64) -> Result<Metrics> {
    run_trial(config, SamplerKind::Reservoir, seed)
}

/// Run every configured sampler over every seed and aggregate.
///
/// A failing trial is recorded and does not stop the others; only an
/// invalid configuration fails the whole run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsDocument> {
    config.validate()?;
    let jobs: Vec<(SamplerKind, u64)> = config
        .sampler
        .iter()
        .flat_map(|&s| config.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let run = |&(sampler, seed): &(SamplerKind, u64)| {
        let outcome = run_trial(config, sampler, seed);
        TrialResult::new(sampler, seed, outcome)
    };
    let trials: Vec<TrialResult> = if config.parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };
    Ok(ResultsDocument::new(config.clone(), trials))
}
