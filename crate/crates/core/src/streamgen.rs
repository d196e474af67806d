//! Synthetic class-incremental streams with label noise.
//!
//! Each class is an isotropic Gaussian blob. Tasks own disjoint class sets
//! and follow each other in order. Around every task switch there is a
//! cross-fade window of `2 * boundary_fuzz * samples_per_task` samples in
//! which the chance of drawing from the outgoing task falls linearly from 1
//! to 0.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{Sample, SampleId};

const GENERATOR_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseType {
    #[serde(alias = "symmetric")]
    Sym,
    #[serde(alias = "asymmetric")]
    Asym,
}

impl std::str::FromStr for NoiseType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sym" | "symmetric" => Ok(NoiseType::Sym),
            "asym" | "asymmetric" => Ok(NoiseType::Asym),
            other => Err(Error::InvalidConfig(format!("unknown noise type {other:?}"))),
        }
    }
}

impl std::fmt::Display for NoiseType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseType::Sym => "sym",
            NoiseType::Asym => "asym",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_task: usize,
    pub num_tasks: usize,
    pub classes_per_task: Vec<Vec<usize>>,
    pub boundary_fuzz: f64,
    pub noise_type: NoiseType,
    pub noise_rate: f64,
    pub seed: u64,
    /// Per-dimension std of every class blob.
    pub class_spread: f64,
    /// Distance of class means from the origin before any widening.
    pub mean_radius: f64,
    /// Minimum distance between class means, in units of `class_spread`.
    pub min_separation: f64,
}

impl StreamSpec {
    /// Classes split into contiguous, near-equal task sets; noise-free,
    /// hard boundaries.
    pub fn new(
        num_classes: usize,
        feature_dim: usize,
        num_tasks: usize,
        samples_per_task: usize,
    ) -> Self {
        StreamSpec {
            num_classes,
            feature_dim,
            samples_per_task,
            num_tasks,
            classes_per_task: even_split(num_classes, num_tasks),
            boundary_fuzz: 0.0,
            noise_type: NoiseType::Sym,
            noise_rate: 0.0,
            seed: 0,
            class_spread: 0.25,
            mean_radius: 1.0,
            min_separation: 4.0,
        }
    }

    pub fn with_noise(mut self, noise_type: NoiseType, noise_rate: f64) -> Self {
        self.noise_type = noise_type;
        self.noise_rate = noise_rate;
        self
    }

    pub fn with_fuzz(mut self, boundary_fuzz: f64) -> Self {
        self.boundary_fuzz = boundary_fuzz;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_len(&self) -> usize {
        self.num_tasks * self.samples_per_task
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_classes == 0 || self.feature_dim == 0 {
            return bad("need at least one class and one feature dimension".into());
        }
        if self.num_tasks == 0 {
            return bad("need at least one task".into());
        }
        if self.classes_per_task.len() != self.num_tasks {
            return bad(format!(
                "{} class sets given for {} tasks",
                self.classes_per_task.len(),
                self.num_tasks
            ));
        }
        let mut seen = vec![false; self.num_classes];
        for (t, set) in self.classes_per_task.iter().enumerate() {
            if set.is_empty() {
                return bad(format!("task {t} has no classes"));
            }
            for &c in set {
                if c >= self.num_classes {
                    return bad(format!("task {t} lists class {c} >= {}", self.num_classes));
                }
                if std::mem::replace(&mut seen[c], true) {
                    return bad(format!("class {c} appears in more than one task"));
                }
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return bad(format!("class {c} belongs to no task"));
        }
        if !(0.0..0.5).contains(&self.boundary_fuzz) {
            return bad(format!("boundary fuzz must lie in [0, 0.5), got {}", self.boundary_fuzz));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise rate must lie in [0, 1], got {}", self.noise_rate));
        }
        for (name, v) in [
            ("class_spread", self.class_spread),
            ("mean_radius", self.mean_radius),
            ("min_separation", self.min_separation),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    pub fn task_of_class(&self, class: usize) -> Option<usize> {
        self.classes_per_task.iter().position(|set| set.contains(&class))
    }

    /// Asymmetric flip target: the next class in the owning task's set,
    /// wrapping around.
    pub fn successor(&self, class: usize) -> usize {
        let Some(task) = self.task_of_class(class) else {
            return class;
        };
        let set = &self.classes_per_task[task];
        let pos = set.iter().position(|&c| c == class).expect("class is in its task");
        set[(pos + 1) % set.len()]
    }

    /// Width of the half-window on each side of a task switch.
    pub fn fuzz_half_width(&self) -> usize {
        (self.boundary_fuzz * self.samples_per_task as f64).floor() as usize
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Contiguous partition of `0..num_classes` into `parts` sets whose sizes
/// differ by at most one. Empty sets appear when `parts > num_classes`.
pub fn even_split(num_classes: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return Vec::new();
    }
    let base = num_classes / parts;
    let extra = num_classes % parts;
    let mut next = 0;
    (0..parts)
        .map(|t| {
            let len = base + usize::from(t < extra);
            let set = (next..next + len).collect();
            next += len;
            set
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassGenerator {
    pub means: Vec<Vec<f64>>,
    pub spread: f64,
}

impl ClassGenerator {
    /// Means on a sphere of `mean_radius`, rejection-sampled to be at least
    /// `min_separation * class_spread` apart. The radius widens by 10% after
    /// every 200 rejected draws so small dimensions still terminate.
    pub fn for_spec(spec: &StreamSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = spec.rng(GENERATOR_STREAM);
        let min_dist = spec.min_separation * spec.class_spread;
        let mut radius = spec.mean_radius;
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
        let mut rejected = 0usize;
        while means.len() < spec.num_classes {
            let dir: Vec<f64> = (0..spec.feature_dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let candidate: Vec<f64> = dir.iter().map(|v| v / norm * radius).collect();
            if means.iter().all(|m| distance(m, &candidate) >= min_dist) {
                means.push(candidate);
            } else {
                rejected += 1;
                if rejected.is_multiple_of(200) {
                    radius *= 1.1;
                }
            }
        }
        Ok(ClassGenerator {
            means,
            spread: spec.class_spread,
        })
    }

    pub fn draw<R: Rng>(&self, class: usize, rng: &mut R) -> Vec<f64> {
        self.means[class]
            .iter()
            .map(|m| m + self.spread * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Corrupt `true_label` according to the stream's noise model.
///
/// Symmetric noise replaces the label, with probability `noise_rate`, by one
/// of the other `C - 1` classes chosen uniformly. Asymmetric noise replaces
/// it by its fixed successor within the owning task.
pub fn inject_noise<R: Rng>(true_label: usize, spec: &StreamSpec, rng: &mut R) -> usize {
    let flip = rng.random::<f64>() < spec.noise_rate;
    if !flip {
        return true_label;
    }
    match spec.noise_type {
        NoiseType::Sym => {
            if spec.num_classes < 2 {
                return true_label;
            }
            let other = rng.random_range(0..spec.num_classes - 1);
            if other >= true_label {
                other + 1
            } else {
                other
            }
        }
        NoiseType::Asym => spec.successor(true_label),
    }
}

/// A generated training stream, ids `0..len` in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub samples_per_task: usize,
    pub samples: Vec<Sample>,
}

impl Stream {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.samples.len().div_ceil(self.samples_per_task.max(1))
    }

    /// The stream cut into its nominal task spans.
    pub fn tasks(&self) -> impl Iterator<Item = &[Sample]> + '_ {
        self.samples.chunks(self.samples_per_task.max(1))
    }

    pub fn task_index(&self, position: usize) -> usize {
        position / self.samples_per_task.max(1)
    }

    pub fn records(&self) -> impl Iterator<Item = StreamRecord> + '_ {
        self.samples.iter().enumerate().map(|(i, s)| StreamRecord {
            id: s.id,
            features: s.features.clone(),
            noisy_label: s.noisy_label,
            true_label: s.true_label,
            task_index: self.task_index(i),
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for record in self.records() {
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuild a stream from records. Task indices must be non-decreasing and
    /// every task except the last must have the same length.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut samples = Vec::new();
        let mut task_lens: Vec<usize> = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StreamRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
            match rec.task_index.cmp(&task_lens.len()) {
                std::cmp::Ordering::Less if rec.task_index + 1 == task_lens.len() => {
                    *task_lens.last_mut().expect("non-empty") += 1;
                }
                std::cmp::Ordering::Equal => task_lens.push(1),
                _ => {
                    return Err(Error::Parse(format!(
                        "line {}: task index {} out of sequence",
                        n + 1,
                        rec.task_index
                    )))
                }
            }
            samples.push(Sample::new(rec.id, rec.features, rec.noisy_label, rec.true_label));
        }
        let samples_per_task = task_lens.first().copied().unwrap_or(0);
        let (last, full) = task_lens.split_last().unwrap_or((&0, &[]));
        if full.iter().any(|&l| l != samples_per_task) || *last > samples_per_task {
            return Err(Error::Parse(format!("uneven task lengths {task_lens:?}")));
        }
        Ok(Stream {
            samples_per_task,
            samples,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub id: SampleId,
    pub features: Vec<f64>,
    pub noisy_label: usize,
    pub true_label: usize,
    pub task_index: usize,
}

/// Task whose classes a sample at `position` is drawn from.
fn source_task<R: Rng>(spec: &StreamSpec, position: usize, rng: &mut R) -> usize {
    let spt = spec.samples_per_task;
    let task = position / spt;
    let pos = position % spt;
    let half = spec.fuzz_half_width();
    if half == 0 {
        return task;
    }
    // Offset into the 2*half window around the switch, with the outgoing task.
    let window = if pos >= spt - half && task + 1 < spec.num_tasks {
        Some((pos - (spt - half), task))
    } else if pos < half && task > 0 {
        Some((half + pos, task - 1))
    } else {
        None
    };
    match window {
        Some((offset, outgoing)) => {
            let p_outgoing = 1.0 - (offset as f64 + 0.5) / (2 * half) as f64;
            if rng.random::<f64>() < p_outgoing {
                outgoing
            } else {
                outgoing + 1
            }
        }
        None => task,
    }
}

pub fn generate_stream(spec: &StreamSpec) -> Result<Stream> {
    let generator = ClassGenerator::for_spec(spec)?;
    generate_with(spec, &generator)
}

pub fn generate_with(spec: &StreamSpec, generator: &ClassGenerator) -> Result<Stream> {
    spec.validate()?;
    let mut rng = spec.rng(TRAIN_STREAM);
    let samples = (0..spec.total_len())
        .map(|i| {
            let task = source_task(spec, i, &mut rng);
            let set = &spec.classes_per_task[task];
            let class = set[rng.random_range(0..set.len())];
            let features = generator.draw(class, &mut rng);
            let noisy = inject_noise(class, spec, &mut rng);
            Sample::new(i as SampleId, features, noisy, class)
        })
        .collect();
    Ok(Stream {
        samples_per_task: spec.samples_per_task,
        samples,
    })
}

/// Clean, class-stratified held-out samples from the same generators.
///
/// Every class gets `size / C` samples (the first `size % C` classes one
/// more), in shuffled order. Ids continue after the training stream so they
/// stay unique within a run.
pub fn make_test_set(spec: &StreamSpec, size: usize) -> Result<Vec<Sample>> {
    let generator = ClassGenerator::for_spec(spec)?;
    make_test_set_with(spec, &generator, size)
}

pub fn make_test_set_with(
    spec: &StreamSpec,
    generator: &ClassGenerator,
    size: usize,
) -> Result<Vec<Sample>> {
    use rand::seq::SliceRandom;

    spec.validate()?;
    if size < spec.num_classes {
        return Err(Error::InvalidConfig(format!(
            "test set of {size} cannot cover {} classes",
            spec.num_classes
        )));
    }
    let mut rng = spec.rng(TEST_STREAM);
    let mut labels: Vec<usize> = (0..size).map(|i| i % spec.num_classes).collect();
    labels.shuffle(&mut rng);
    let first_id = spec.total_len() as SampleId;
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, class)| {
            let features = generator.draw(class, &mut rng);
            Sample::new(first_id + i as SampleId, features, class, class)
        })
        .collect())
}
