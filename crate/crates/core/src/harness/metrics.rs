use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Wall-clock seconds spent in each stage of one trial.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WallTime {
    /// Streaming SGD plus memory insertion and eviction.
    pub online_learning: f64,
    /// Training on memory contents.
    pub episodic_memory_usage: f64,
    /// Everything, including stream generation and evaluation.
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub task: usize,
    pub online_mean_loss: f64,
    /// Final-epoch loss of memory training, when it ran after this task.
    pub memory_final_loss: Option<f64>,
    /// Accuracy over all classes.
    pub test_accuracy: f64,
    /// Accuracy restricted to classes of tasks seen so far.
    pub seen_class_accuracy: f64,
    pub memory_clean_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub last_test_accuracy: f64,
    pub last_memory_clean_ratio: f64,
    /// Stored count per noisy label at the end of the stream.
    pub group_size_histogram: Vec<usize>,
    /// Samples dropped by the sampler (evicted or rejected on arrival).
    pub evictions: u64,
    pub tasks: Vec<TaskTrace>,
    pub wall_time: WallTime,
    /// Peak resident set of the whole process, when the platform reports it.
    pub peak_rss_kib: Option<u64>,
}

impl Metrics {
    pub fn group_gap(&self) -> usize {
        let max = self.group_size_histogram.iter().max().copied().unwrap_or(0);
        let min = self.group_size_histogram.iter().min().copied().unwrap_or(0);
        max - min
    }

    /// Scalar metrics that get aggregated across seeds.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("last_test_accuracy", self.last_test_accuracy),
            ("last_memory_clean_ratio", self.last_memory_clean_ratio),
            ("group_gap", self.group_gap() as f64),
            ("evictions", self.evictions as f64),
            ("wall_time.online_learning", self.wall_time.online_learning),
            ("wall_time.episodic_memory_usage", self.wall_time.episodic_memory_usage),
            ("wall_time.overall", self.wall_time.overall),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Stat { mean, std, n })
    }
}

pub fn aggregate<'a>(metrics: impl IntoIterator<Item = &'a Metrics>) -> BTreeMap<String, Stat> {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in metrics {
        for (name, v) in m.scalars() {
            columns.entry(name.to_string()).or_default().push(v);
        }
    }
    columns
        .into_iter()
        .filter_map(|(k, v)| Stat::of(&v).map(|s| (k, s)))
        .collect()
}

/// Peak resident set size from `/proc/self/status`.
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}
