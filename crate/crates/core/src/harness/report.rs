use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SamplerKind};
use super::metrics::{aggregate, Metrics, Stat, WallTime};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        ErrorRecord {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub sampler: SamplerKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

impl TrialResult {
    pub fn new(sampler: SamplerKind, seed: u64, outcome: Result<Metrics>) -> Self {
        let (metrics, error) = match outcome {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(ErrorRecord::from(&e))),
        };
        TrialResult {
            sampler,
            seed,
            metrics,
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    #[serde(flatten)]
    pub by_sampler: BTreeMap<String, Stat>,
}

/// Everything one run produces: the config echo, per-trial metrics, and
/// mean and sample std per sampler and metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    /// sampler -> metric -> stat, over successful trials.
    pub aggregate: BTreeMap<String, BTreeMap<String, Stat>>,
    /// One row per metric, present when more than one sampler ran.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparison: Vec<ComparisonRow>,
}

impl ResultsDocument {
    pub fn new(config: ExperimentConfig, trials: Vec<TrialResult>) -> Self {
        let mut doc = ResultsDocument {
            config,
            trials,
            aggregate: BTreeMap::new(),
            comparison: Vec::new(),
        };
        doc.recompute();
        doc
    }

    fn recompute(&mut self) {
        self.aggregate.clear();
        for sampler in &self.config.sampler {
            let stats = aggregate(
                self.trials
                    .iter()
                    .filter(|t| t.sampler == *sampler)
                    .filter_map(|t| t.metrics.as_ref()),
            );
            if !stats.is_empty() {
                self.aggregate.insert(sampler.name().to_string(), stats);
            }
        }
        self.comparison.clear();
        if self.aggregate.len() > 1 {
            let mut rows: BTreeMap<String, BTreeMap<String, Stat>> = BTreeMap::new();
            for (sampler, stats) in &self.aggregate {
                for (metric, stat) in stats {
                    rows.entry(metric.clone())
                        .or_default()
                        .insert(sampler.clone(), *stat);
                }
            }
            self.comparison = rows
                .into_iter()
                .map(|(metric, by_sampler)| ComparisonRow { metric, by_sampler })
                .collect();
        }
    }

    pub fn stat(&self, sampler: SamplerKind, metric: &str) -> Option<Stat> {
        self.aggregate.get(sampler.name())?.get(metric).copied()
    }

    pub fn metrics_for(&self, sampler: SamplerKind) -> impl Iterator<Item = &Metrics> + '_ {
        self.trials
            .iter()
            .filter(move |t| t.sampler == sampler)
            .filter_map(|t| t.metrics.as_ref())
    }

    pub fn failed(&self) -> impl Iterator<Item = &TrialResult> + '_ {
        self.trials.iter().filter(|t| t.error.is_some())
    }

    /// Zero every wall-clock and resident-memory field so two runs of the
    /// same config compare equal.
    pub fn strip_timing(&mut self) {
        for m in self.trials.iter_mut().filter_map(|t| t.metrics.as_mut()) {
            m.wall_time = WallTime::default();
            m.peak_rss_kib = None;
        }
        self.recompute();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Write the results document to `path` as pretty JSON.
pub fn report(doc: &ResultsDocument, path: &Path) -> Result<()> {
    if doc.trials.is_empty() {
        return Err(Error::InvalidConfig("nothing to report".into()));
    }
    let mut text = doc.to_json();
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One-line machine-readable digest: aggregates plus failed trials.
pub fn summary(doc: &ResultsDocument) -> serde_json::Value {
    let failed: Vec<_> = doc
        .failed()
        .map(|t| serde_json::json!({ "sampler": t.sampler, "seed": t.seed, "error": t.error }))
        .collect();
    serde_json::json!({
        "aggregate": doc.aggregate,
        "failed_trials": failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::TaskTrace;

    fn metrics(acc: f64) -> Metrics {
        Metrics {
            last_test_accuracy: acc,
            last_memory_clean_ratio: 0.875,
            group_size_histogram: vec![3, 2],
            evictions: 4,
            tasks: vec![TaskTrace {
                task: 0,
                online_mean_loss: 0.1 + acc / 3.0,
                memory_final_loss: Some(0.3),
                test_accuracy: acc,
                seen_class_accuracy: acc,
                memory_clean_ratio: 0.875,
            }],
            wall_time: WallTime { online_learning: 0.1, episodic_memory_usage: 0.2, overall: 0.5 },
            peak_rss_kib: Some(1000),
        }
    }

    fn doc(samplers: Vec<SamplerKind>, accs: &[f64]) -> ResultsDocument {
        let config = ExperimentConfig { sampler: samplers.clone(), ..Default::default() };
        let trials = samplers
            .iter()
            .flat_map(|&s| {
                accs.iter()
                    .enumerate()
                    .map(move |(i, &a)| TrialResult::new(s, i as u64, Ok(metrics(a))))
            })
            .collect();
        ResultsDocument::new(config, trials)
    }

    #[test]
    fn single_seed_reports_zero_std() {
        let d = doc(vec![SamplerKind::Ntd], &[0.5]);
        let s = d.stat(SamplerKind::Ntd, "last_test_accuracy").unwrap();
        assert_eq!((s.mean, s.std), (0.5, 0.0));
        assert!(d.comparison.is_empty());
    }

    #[test]
    fn three_seeds_use_sample_std() {
        let d = doc(vec![SamplerKind::Ntd], &[0.5, 0.6, 0.7]);
        let s = d.stat(SamplerKind::Ntd, "last_test_accuracy").unwrap();
        assert!((s.mean - 0.6).abs() < 1e-12);
        assert!((s.std - 0.1).abs() < 1e-12);
    }

    #[test]
    fn comparison_appears_with_two_samplers() {
        let d = doc(vec![SamplerKind::Ntd, SamplerKind::Reservoir], &[0.5, 0.7]);
        let row = d.comparison.iter().find(|r| r.metric == "last_test_accuracy").unwrap();
        assert_eq!(row.by_sampler.len(), 2);
    }

    #[test]
    fn emitted_file_parses_back_exactly() {
        let d = doc(vec![SamplerKind::Ntd, SamplerKind::Reservoir], &[0.1 + 0.2, 1.0 / 3.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.json");
        report(&d, &path).unwrap();
        assert_eq!(ResultsDocument::load(&path).unwrap(), d);
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let d = doc(vec![SamplerKind::Ntd], &[0.5]);
        let err = report(&d, Path::new("/nonexistent-dir/x/results.json")).unwrap_err();
        assert_eq!(err.kind(), "io");
    }

    #[test]
    fn strip_timing_clears_clock_fields() {
        let mut d = doc(vec![SamplerKind::Ntd], &[0.5, 0.6]);
        d.strip_timing();
        let m = d.trials[0].metrics.as_ref().unwrap();
        assert_eq!(m.wall_time, WallTime::default());
        assert_eq!(d.stat(SamplerKind::Ntd, "wall_time.overall").unwrap().mean, 0.0);
    }
}
