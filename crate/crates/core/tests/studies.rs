mod common;

use common::*;
use growtas::config::RunConfig;
use growtas::experiments::{
    accuracy_distribution_study, grow_crop_study, reference_archs, train_references, transition_ablation,
    StudySettings,
};
use growtas::scheduler::train_fixed;
use growtas::task::{generate_task, TaskParams};
use growtas::{SearchSpace, SeededRng, SubspacePartition, SupernetWeights};

fn short_settings(epochs: usize) -> StudySettings {
    StudySettings { train: lab_train_config(), init_scale: 0.02, epochs, eval_batch: 256 }
}

fn trained_min_arch_accuracy(params: &TaskParams, epochs: usize) -> f64 {
    let space = SearchSpace::lab();
    let task = generate_task(params).unwrap();
    let arch = space.min_arch();
    let mut w = SupernetWeights::init(&space, &mut SeededRng::new(1), 0.02).unwrap();
    train_fixed(&mut w, &arch, epochs, &task.train, &lab_train_config(), &mut SeededRng::new(2)).unwrap();
    w.evaluate(&arch, &task.test, 256).unwrap().accuracy
}

#[test]
fn default_maximal_subnet_learns_the_task() {
    let cfg = RunConfig::default();
    let task = cfg.datasets().unwrap();
    let settings = cfg.study_settings();
    let arch = cfg.space.max_arch();
    let mut w = SupernetWeights::init(&cfg.space, &mut cfg.stream(1), settings.init_scale).unwrap();
    train_fixed(&mut w, &arch, settings.epochs, &task.train, &settings.train, &mut cfg.stream(2)).unwrap();
    let acc = w.evaluate(&arch, &task.test, 256).unwrap().accuracy;
    assert!(acc >= 0.9, "maximal subnet test accuracy {acc}");
}

#[test]
fn wide_separation_is_easy_and_none_is_chance() {
    let easy = TaskParams { separation: 6.0, noise: 0.3, train_size: 1024, test_size: 512, ..lab_task() };
    let acc = trained_min_arch_accuracy(&easy, 20);
    assert!(acc >= 0.98, "easy task accuracy {acc}");
    let hard = TaskParams { separation: 1e-6, noise: 1.0, train_size: 256, test_size: 2048, ..lab_task() };
    let acc = trained_min_arch_accuracy(&hard, 8);
    assert!((acc - 0.25).abs() <= 4.0 * (0.25f64 * 0.75 / 2048.0).sqrt(), "indistinct task accuracy {acc}");
}

#[test]
fn single_sample_summary_is_the_sample() {
    let space = SearchSpace::toy();
    let task = small_task(1, 1, 64);
    let w = SupernetWeights::init(&space, &mut SeededRng::new(1), 0.02).unwrap();
    let report = accuracy_distribution_study(&w, u64::MAX, 1, &task.test, 32, &mut SeededRng::new(2), "h").unwrap();
    assert_eq!(report.records.len(), 1);
    let s = report.group("sample").unwrap();
    assert_eq!((s.count, s.mean, s.min, s.max, s.std), (1, report.records[0].value, s.mean, s.mean, 0.0));
}

#[test]
fn studies_repeat_bit_for_bit() {
    let space = SearchSpace::toy();
    let partition = toy_partition(&space);
    let task = small_task(128, 64, 128);
    let settings = short_settings(2);
    let run = || {
        let (small, large) = reference_archs(&space, &partition).unwrap();
        let refs = train_references(&space, &small, &large, &task, &settings, 4).unwrap();
        grow_crop_study(&refs, &task, 5, &settings, &mut SeededRng::new(6), "0123456789abcdef").unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    assert!(a.summary_consistent());
    for group in ["small_ref", "grown", "large_ref", "cropped"] {
        assert!(a.group(group).is_some(), "missing {group}");
    }
}

#[test]
fn ablation_grid_and_boundary_flag() {
    let space = SearchSpace::toy();
    let partition = toy_partition(&space);
    let task = small_task(64, 64, 64);
    let settings = short_settings(4);
    let mut cfg = RunConfig::default();
    cfg.study.search_population = 8;
    cfg.study.search_generations = 2;
    let mut ablation = cfg.ablation_settings().unwrap();
    ablation.t1_values = vec![1, 3];
    ablation.param_limits = vec![1500, 2500, 4000];
    let report = transition_ablation(&space, &partition, &task, &settings, &ablation, 1, "h").unwrap();
    assert_eq!(report.records.len(), 2 * 3);
    for t1 in [1, 3] {
        let keys: Vec<u64> = report.records_in(&format!("t1={t1}")).map(|r| r.key).collect();
        assert_eq!(keys, vec![1500, 2500, 4000]);
    }
    assert!(report.records_in("t1=3").all(|r| r.note.contains("single epoch")));
    assert!(report.records_in("t1=1").all(|r| r.note.is_empty()));
    assert!(report.records.iter().all(|r| r.params <= r.key));
    ablation.t1_values = vec![4];
    assert!(transition_ablation(&space, &partition, &task, &settings, &ablation, 1, "h").is_err());
    let single = SubspacePartition::single(&space);
    ablation.t1_values = vec![2];
    assert!(transition_ablation(&space, &single, &task, &settings, &ablation, 1, "h").is_err());
}

#[test]
fn later_transition_does_not_hurt_the_smallest_limit() {
    let mut cfg = RunConfig::default();
    cfg.study.t1_values = vec![15, 45];
    cfg.study.param_limits = vec![1500];
    let task = cfg.datasets().unwrap();
    let partition = cfg.partition().unwrap();
    let mut early = 0.0;
    let mut late = 0.0;
    for seed in 1..=3 {
        cfg.seed = seed;
        let report = transition_ablation(
            &cfg.space,
            &partition,
            &task,
            &cfg.study_settings(),
            &cfg.ablation_settings().unwrap(),
            seed,
            &cfg.config_hash(),
        )
        .unwrap();
        let e = report.records_in("t1=15").next().unwrap().value;
        let l = report.records_in("t1=45").next().unwrap().value;
        println!("seed {seed}: t1=15 {e:.4} t1=45 {l:.4}");
        early += e;
        late += l;
    }
    assert!(late >= early, "t1=45 mean {:.4} below t1=15 mean {:.4}", late / 3.0, early / 3.0);
}
