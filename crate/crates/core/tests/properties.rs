mod common;

use common::*;
use growtas::checkpoint::Checkpoint;
use growtas::data::Dataset;
use growtas::evo::{crossover, mutate};
use growtas::experiments::{sample_dominated, token_cosines};
use growtas::kernel::AdamWConfig;
use growtas::report::{StudyRecord, StudyReport, Summary};
use growtas::space::sample_uniform;
use growtas::{Architecture, SearchSpace, SeededRng, SliceMap, SupernetWeights, Tensor};
use proptest::prelude::*;

fn pair(space: &SearchSpace, seed: u64) -> (Architecture, Architecture) {
    let mut rng = SeededRng::new(seed);
    let big = space.sample(None, &mut rng).unwrap();
    let small = sample_dominated(space, &big, &mut rng);
    (small, big)
}

fn offsets_outside(w: &SupernetWeights, map: &SliceMap) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, p) in w.params().iter().enumerate() {
        let shape = p.value.shape().to_vec();
        for off in 0..p.value.len() {
            if !map.covers(i, &shape, off) {
                out.push((i, off));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn dominated_slices_are_contained(seed in any::<u64>()) {
        let space = SearchSpace::lab();
        let (small, big) = pair(&space, seed);
        prop_assert!(small.dominated_by(&big));
        prop_assert!(SliceMap::of(&space, &small).is_subset_of(&SliceMap::of(&space, &big)));
        prop_assert!(space.param_count(&small) <= space.param_count(&big));
    }

    #[test]
    fn subspace_membership_is_monotone(seed in any::<u64>()) {
        let space = SearchSpace::lab();
        let partition = lab_partition(&space);
        let mut rng = SeededRng::new(seed);
        let k = 1 + rng.below(partition.k());
        let arch = sample_uniform(&space, &partition, k, &mut rng).unwrap();
        prop_assert!(space.contains(&arch));
        for j in k..=partition.k() {
            prop_assert!(partition.member(&arch, j));
        }
        prop_assert!(partition.subspace_of(&arch) <= k);
    }

    #[test]
    fn reads_ignore_entries_outside_the_slice(seed in any::<u64>()) {
        let space = SearchSpace::lab();
        let mut rng = SeededRng::new(seed);
        let arch = space.sample(None, &mut rng).unwrap();
        let w = SupernetWeights::init(&space, &mut rng, 0.2).unwrap();
        let task = small_task(2, 1, 1);
        let (x, _) = first_records(&task.train, 1);
        let before = w.logits(&arch, &x).unwrap();
        let mut scrambled = w.clone();
        let map = scrambled.slice(&arch);
        for (i, off) in offsets_outside(&w, &map) {
            scrambled.params_mut()[i].value.data_mut()[off] = rng.normal() * 100.0;
        }
        let after = scrambled.logits(&arch, &x).unwrap();
        prop_assert_eq!(before.data(), after.data());
    }

    #[test]
    fn train_step_writes_only_inside_the_slice(seed in any::<u64>()) {
        let space = SearchSpace::lab();
        let mut rng = SeededRng::new(seed);
        let arch = space.sample(None, &mut rng).unwrap();
        let mut w = SupernetWeights::init(&space, &mut rng, 0.2).unwrap();
        let task = small_task(2, 1, 1);
        let (x, labels) = first_records(&task.train, 2);
        let warm = space.max_arch();
        w.train_step(&warm, &x, &labels, &AdamWConfig::default(), None).unwrap();
        let before = w.clone();
        w.train_step(&arch, &x, &labels, &AdamWConfig::default(), None).unwrap();
        let map = w.slice(&arch);
        for (i, off) in offsets_outside(&w, &map) {
            let (a, b) = (&before.params()[i], &w.params()[i]);
            prop_assert_eq!(a.value.data()[off].to_bits(), b.value.data()[off].to_bits());
            prop_assert_eq!(a.m.data()[off].to_bits(), b.m.data()[off].to_bits());
            prop_assert_eq!(a.v.data()[off].to_bits(), b.v.data()[off].to_bits());
        }
    }

    #[test]
    fn frozen_entries_stay_put(seed in any::<u64>()) {
        let space = SearchSpace::lab();
        let mut rng = SeededRng::new(seed);
        let (frozen, arch) = pair(&space, seed ^ 0x5555);
        let mut w = SupernetWeights::init(&space, &mut rng, 0.2).unwrap();
        let task = small_task(2, 1, 1);
        let (x, labels) = first_records(&task.train, 2);
        let map = SliceMap::of(&space, &frozen);
        let before = w.clone();
        w.train_step(&arch, &x, &labels, &AdamWConfig::default(), Some(&map)).unwrap();
        for (i, (a, b)) in before.params().iter().zip(w.params()).enumerate() {
            let shape = a.value.shape().to_vec();
            for off in 0..a.value.len() {
                if map.covers(i, &shape, off) {
                    prop_assert_eq!(a.value.data()[off].to_bits(), b.value.data()[off].to_bits());
                    prop_assert_eq!(a.m.data()[off].to_bits(), b.m.data()[off].to_bits());
                }
            }
        }
    }

    #[test]
    fn encoding_round_trips(seed in any::<u64>()) {
        let space = SearchSpace::lab();
        let arch = space.sample(None, &mut SeededRng::new(seed)).unwrap();
        let back: Architecture = arch.to_string().parse().unwrap();
        prop_assert_eq!(&back, &arch);
        prop_assert_eq!(back.fingerprint(), arch.fingerprint());
    }

    #[test]
    fn mutation_and_crossover_stay_on_the_grid(seed in any::<u64>(), prob in 0.0f64..=1.0) {
        let space = SearchSpace::lab();
        let mut rng = SeededRng::new(seed);
        let a = space.sample(None, &mut rng).unwrap();
        let b = space.sample(None, &mut rng).unwrap();
        let m = mutate(&a, &space, prob, &mut rng);
        prop_assert!(space.contains(&m), "mutant {} off grid", m);
        let c = crossover(&a, &b, &mut rng);
        prop_assert!(space.contains(&c), "child {} off grid", c);
        prop_assert!(c.embed_dim == a.embed_dim || c.embed_dim == b.embed_dim);
    }

    #[test]
    fn summaries_match_recomputation(values in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
        let records: Vec<StudyRecord> = values
            .iter()
            .enumerate()
            .map(|(i, v)| StudyRecord {
                group: format!("g{}", i % 3),
                key: i as u64,
                arch: String::new(),
                params: 0,
                value: *v,
                aux: 0.0,
                note: String::new(),
            })
            .collect();
        let report = StudyReport::new("p", "0123456789abcdef", records);
        prop_assert!(report.summary_consistent());
        for (group, s) in &report.summary {
            let vals: Vec<f64> = report.records_in(group).map(|r| r.value).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            prop_assert!((s.mean - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
            prop_assert!(s.min <= s.mean + 1e-9 && s.mean <= s.max + 1e-9);
            prop_assert_eq!(Some(*s), Summary::of(&vals));
        }
    }

    #[test]
    fn cosines_are_bounded(seed in any::<u64>(), rows in 1usize..6, ca in 1usize..6, cb in 1usize..6) {
        let mut rng = SeededRng::new(seed);
        let a = random_tensor(&[rows, ca], &mut rng);
        let b = random_tensor(&[rows, cb], &mut rng);
        for c in token_cosines(&a, &b).unwrap() {
            prop_assert!((-1.0..=1.0).contains(&c));
        }
        for c in token_cosines(&a, &a).unwrap() {
            prop_assert!((c - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), counter in any::<u64>(), epoch in 0usize..100) {
        let space = SearchSpace::lab();
        let mut rng = SeededRng::new(seed);
        let mut w = SupernetWeights::init(&space, &mut rng, 0.02).unwrap();
        w.epoch = epoch;
        w.step = counter % 1000;
        for p in w.params_mut() {
            for v in p.m.data_mut() {
                *v = rng.normal();
            }
        }
        let c = Checkpoint::new("0123456789abcdef", w, SeededRng::from_state(seed, counter)).unwrap();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.weights, c.weights);
        prop_assert_eq!(back.rng.state(), (seed, counter));
    }

    #[test]
    fn datasets_round_trip(seed in any::<u64>(), n in 0usize..20, classes in 2usize..6) {
        let mut rng = SeededRng::new(seed);
        let inputs: Vec<f64> = (0..n * 3 * 2).map(|_| rng.normal()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        let d = Dataset::new(3, 2, classes, inputs, labels).unwrap();
        let back = Dataset::from_bytes(&d.to_bytes()).unwrap();
        prop_assert_eq!(&back, &d);
        let x: &Tensor = &d.batch(&(0..n).collect::<Vec<_>>()).0;
        prop_assert_eq!(x.len(), n * 6);
    }
}
