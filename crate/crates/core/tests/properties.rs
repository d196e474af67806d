use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use ntd::harness::{ExperimentConfig, Buffer};
use ntd::learner::{Example, OnlineModel};
use ntd::sampler::{EpisodicMemory, InsertOutcome, ReplayBuffer, ReservoirMemory};
use ntd::streamgen::{generate_stream, inject_noise, NoiseType, StreamSpec};
use ntd::Sample;

fn gap(sizes: &[usize]) -> usize {
    sizes.iter().max().unwrap() - sizes.iter().min().unwrap()
}

#[test]
fn grouped_memory_is_at_least_as_balanced_as_reservoir() {
    let (k, classes) = (50, 5);
    let n = 20 * k;
    let mut ntd_total = 0;
    let mut reservoir_total = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();

        let mut memory = EpisodicMemory::new(k, classes).unwrap();
        let mut reservoir = ReservoirMemory::new(k, seed);
        for (id, &label) in labels.iter().enumerate() {
            let s = Sample::new(id as u64, vec![], label, label);
            reservoir.offer(s.clone());
            if memory.insert(s).unwrap() == InsertOutcome::EvictionRequired {
                let scores: HashMap<_, _> = memory.iter().map(|s| (s.id, rng.random::<f64>())).collect();
                memory.debias_evict(&scores).unwrap();
            }
        }
        let ntd_gap = gap(&memory.group_sizes());
        let reservoir_gap = gap(&reservoir.label_histogram(classes));
        assert!(ntd_gap <= 1, "seed {seed}: gap {ntd_gap}");
        assert!(ntd_gap <= reservoir_gap, "seed {seed}: {ntd_gap} > {reservoir_gap}");
        ntd_total += ntd_gap;
        reservoir_total += reservoir_gap;
    }
    assert!(ntd_total < reservoir_total);
}

#[test]
fn symmetric_flip_targets_are_uniform() {
    let classes = 10;
    let spec = StreamSpec::new(classes, 2, 5, 10).with_noise(NoiseType::Sym, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    // Offsets (noisy - true) mod C over the C - 1 possible targets.
    let mut counts = vec![0usize; classes - 1];
    let draws = 100_000;
    for i in 0..draws {
        let y = i % classes;
        let noisy = inject_noise(y, &spec, &mut rng);
        assert_ne!(noisy, y);
        counts[(noisy + classes - y) % classes - 1] += 1;
    }
    let expected = draws as f64 / (classes - 1) as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((classes - 2) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat}, p = {p}");
}

#[test]
fn symmetric_targets_given_each_true_class_are_uniform() {
    let classes = 4;
    let spec = StreamSpec::new(classes, 2, 2, 10).with_noise(NoiseType::Sym, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = vec![vec![0usize; classes]; classes];
    for i in 0..100_000 {
        let y = i % classes;
        counts[y][inject_noise(y, &spec, &mut rng)] += 1;
    }
    for (y, row) in counts.iter().enumerate() {
        let flipped: Vec<usize> = (0..classes).filter(|&c| c != y).map(|c| row[c]).collect();
        let total: usize = flipped.iter().sum();
        let expected = total as f64 / (classes - 1) as f64;
        let stat: f64 = flipped.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((classes - 2) as f64).unwrap().cdf(stat);
        assert!(p > 0.01, "class {y}: p = {p}");
    }
}

#[test]
fn asymmetric_stream_flips_land_on_successors() {
    let spec = StreamSpec::new(10, 4, 5, 1000)
        .with_noise(NoiseType::Asym, 0.4)
        .with_fuzz(0.1)
        .with_seed(12);
    let stream = generate_stream(&spec).unwrap();
    let mut flips = 0;
    for s in &stream.samples {
        if !s.is_clean() {
            flips += 1;
            assert_eq!(s.noisy_label, spec.successor(s.true_label));
            assert_eq!(spec.task_of_class(s.noisy_label), spec.task_of_class(s.true_label));
        }
    }
    assert!((flips as f64 / 5000.0 - 0.4).abs() < 0.03);
}

#[test]
fn hard_boundaries_cover_exactly_each_task() {
    let mut spec = StreamSpec::new(9, 3, 3, 600).with_seed(4);
    spec.classes_per_task = vec![vec![4, 0, 7], vec![1, 8, 2], vec![3, 5, 6]];
    let stream = generate_stream(&spec).unwrap();
    for (t, task) in stream.tasks().enumerate() {
        let mut labels: Vec<usize> = task.iter().map(|s| s.true_label).collect();
        labels.sort_unstable();
        labels.dedup();
        let mut want = spec.classes_per_task[t].clone();
        want.sort_unstable();
        assert_eq!(labels, want);
    }
}

#[test]
fn paired_samplers_consume_the_same_stream() {
    let config = ExperimentConfig::default();
    let a = generate_stream(&config.stream_spec(2)).unwrap();
    let b = generate_stream(&config.stream_spec(2)).unwrap();
    let (mut ja, mut jb) = (Vec::new(), Vec::new());
    a.write_jsonl(&mut ja).unwrap();
    b.write_jsonl(&mut jb).unwrap();
    assert_eq!(ja, jb);

    // Both buffers see every item in order and end up at capacity.
    let spec = config.stream_spec(2);
    let model = OnlineModel::zeros(spec.num_classes, spec.feature_dim, 0.1).unwrap();
    let policies =
        ntd::AugmentationPolicySet::new(&config.policy_config(), 0, vec![1.0; spec.feature_dim]).unwrap();
    let mut ntd = Buffer::Ntd(EpisodicMemory::new(config.memory_size, spec.num_classes).unwrap());
    let mut reservoir = Buffer::Reservoir(ReservoirMemory::new(config.memory_size, 0));
    for s in a.samples.iter().take(2000) {
        ntd.offer(s.clone(), &model, &policies).unwrap();
        reservoir.offer(s.clone(), &model, &policies).unwrap();
    }
    assert_eq!(ntd.as_replay().len(), config.memory_size);
    assert_eq!(reservoir.as_replay().len(), config.memory_size);
}

#[test]
fn training_is_bit_reproducible() {
    let spec = StreamSpec::new(6, 8, 3, 300).with_noise(NoiseType::Sym, 0.3).with_seed(3);
    let run = || {
        let stream = generate_stream(&spec).unwrap();
        let mut model = OnlineModel::new(6, 8, 0.05, 17).unwrap();
        for batch in stream.samples.chunks(16) {
            let ex: Vec<Example<'_>> =
                batch.iter().map(|s| (s.features.as_slice(), s.noisy_label)).collect();
            model.sgd_step(&ex).unwrap();
        }
        model.params()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
