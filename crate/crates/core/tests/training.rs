mod common;

use common::*;
use growtas::checkpoint::Checkpoint;
use growtas::experiments::best_in_subspace;
use growtas::scheduler::{
    build_freeze_mask, finetune_plus, train_grow_tas, train_grow_tas_until, train_uniform, FinetuneConfig, Schedule,
};
use growtas::{SearchSpace, SeededRng, SubspacePartition, SupernetWeights};

#[test]
fn single_stage_is_uniform_training() {
    let space = SearchSpace::lab();
    let task = small_task(128, 1, 1);
    let init = SupernetWeights::init(&space, &mut SeededRng::new(2), 0.02).unwrap();
    let cfg = lab_train_config();
    let (mut a, mut b) = (init.clone(), init);
    let (mut log_a, mut log_b) = (Vec::new(), Vec::new());
    let partition = SubspacePartition::single(&space);
    let schedule = Schedule::new(vec![0, 3]).unwrap();
    train_grow_tas(&mut a, &partition, &schedule, &task.train, &cfg, &mut SeededRng::new(9), &mut log_a).unwrap();
    train_uniform(&mut b, 3, &task.train, &cfg, &mut SeededRng::new(9), &mut log_b).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(a, b);
}

#[test]
fn log_never_leaves_the_scheduled_stage() {
    let space = SearchSpace::lab();
    let partition = lab_partition(&space);
    let task = small_task(256, 1, 1);
    let schedule = Schedule::two_stage(3, 6).unwrap();
    let mut w = SupernetWeights::init(&space, &mut SeededRng::new(4), 0.02).unwrap();
    let mut log = Vec::new();
    train_grow_tas(&mut w, &partition, &schedule, &task.train, &lab_train_config(), &mut SeededRng::new(5), &mut log)
        .unwrap();
    assert_eq!(log.len(), 6 * 8);
    for entry in &log {
        assert_eq!(entry.stage, schedule.stage_at(entry.epoch).unwrap());
        assert!(partition.member(&entry.arch, entry.stage), "{} in epoch {}", entry.arch, entry.epoch);
        assert!(entry.loss.is_finite());
    }
    assert!(log.iter().any(|e| e.stage == 2 && !partition.member(&e.arch, 1)));
}

#[test]
fn progressive_training_favours_the_first_subspace() {
    let space = SearchSpace::toy();
    let partition = toy_partition(&space);
    let task = small_task(1024, 512, 16);
    let mut sums = (0.0, 0.0);
    for seed in 1..=3 {
        let (grow, uniform) = toy_pair(&task, 20, 10, seed);
        let g = best_in_subspace(&grow, &partition, 1, &task.val, 256).unwrap().1.accuracy;
        let u = best_in_subspace(&uniform, &partition, 1, &task.val, 256).unwrap().1.accuracy;
        println!("seed {seed}: growtas {g:.4} uniform {u:.4}");
        sums.0 += g;
        sums.1 += u;
    }
    assert!(sums.0 >= sums.1, "growtas {:.4} vs uniform {:.4}", sums.0 / 3.0, sums.1 / 3.0);
}

#[test]
fn zero_epoch_finetune_is_identity() {
    let space = SearchSpace::toy();
    let partition = toy_partition(&space);
    let task = small_task(64, 1, 1);
    let w = SupernetWeights::init(&space, &mut SeededRng::new(3), 0.02).unwrap();
    let mut tuned = w.clone();
    let mask = build_freeze_mask(&space, &partition).unwrap();
    let cfg = lab_train_config();
    let ft = FinetuneConfig::from_training(&cfg, 0);
    let mut log = Vec::new();
    finetune_plus(&mut tuned, &partition, &mask, &ft, &cfg, &task.train, &mut SeededRng::new(1), &mut log).unwrap();
    assert_eq!(tuned, w);
    assert!(log.is_empty());
}

#[test]
fn finetune_keeps_the_first_subspace_and_helps_the_rest() {
    let space = SearchSpace::toy();
    let partition = toy_partition(&space);
    let task = small_task(1024, 512, 16);
    let (x, _) = first_records(&task.val, 64);
    let first: Vec<_> = space.enumerate(64).unwrap().filter(|a| partition.member(a, 1)).collect();
    let mut gains = 0.0;
    for seed in 1..=3 {
        let (mut w, _) = toy_pair(&task, 20, 10, seed);
        let before_logits: Vec<_> = first.iter().map(|a| w.logits(a, &x).unwrap()).collect();
        let before = mean_outside_first(&w, &partition, &task.val);
        let mask = build_freeze_mask(&space, &partition).unwrap();
        let cfg = lab_train_config();
        let ft = FinetuneConfig::from_training(&cfg, 6);
        let mut log = Vec::new();
        finetune_plus(&mut w, &partition, &mask, &ft, &cfg, &task.train, &mut SeededRng::new(seed).fork(3), &mut log)
            .unwrap();
        assert!(log.iter().all(|e| !partition.member(&e.arch, 1)));
        for (a, old) in first.iter().zip(&before_logits) {
            let new = w.logits(a, &x).unwrap();
            assert!(new.data().iter().zip(old.data()).all(|(p, q)| p.to_bits() == q.to_bits()), "{a} changed");
        }
        let after = mean_outside_first(&w, &partition, &task.val);
        println!("seed {seed}: outside-first mean {before:.4} -> {after:.4}");
        gains += after - before;
    }
    assert!(gains >= 0.0, "mean change {:.4}", gains / 3.0);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let space = SearchSpace::lab();
    let partition = lab_partition(&space);
    let task = small_task(128, 1, 1);
    let schedule = Schedule::new(vec![0, 5, 10]).unwrap();
    let cfg = lab_train_config();
    let init = SupernetWeights::init(&space, &mut SeededRng::new(8), 0.02).unwrap();

    let mut straight = init.clone();
    let mut rng = SeededRng::new(80);
    let mut log_straight = Vec::new();
    train_grow_tas(&mut straight, &partition, &schedule, &task.train, &cfg, &mut rng, &mut log_straight).unwrap();
    let full = Checkpoint::new("00000000000000aa", straight, rng).unwrap().to_bytes();

    let mut half = init;
    let mut rng = SeededRng::new(80);
    let mut log = Vec::new();
    train_grow_tas_until(&mut half, &partition, &schedule, &task.train, &cfg, &mut rng, &mut log, 5).unwrap();
    let saved = Checkpoint::new("00000000000000aa", half, rng).unwrap().to_bytes();
    let restored = Checkpoint::from_bytes(&saved).unwrap();
    let (mut w, mut rng) = (restored.weights, restored.rng);
    train_grow_tas(&mut w, &partition, &schedule, &task.train, &cfg, &mut rng, &mut log).unwrap();
    let resumed = Checkpoint::new("00000000000000aa", w, rng).unwrap().to_bytes();

    assert_eq!(log, log_straight);
    assert!(resumed == full, "resumed checkpoint differs from the uninterrupted one");
}
