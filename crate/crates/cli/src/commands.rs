use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use growtas::checkpoint::Checkpoint;
use growtas::config::RunConfig;
use growtas::data::{export_dataset, Dataset};
use growtas::evo::{search, SupernetEvaluator};
use growtas::experiments::{
    accuracy_distribution_study, cossim_study, distribution_comparison, grow_crop_study, reference_archs,
    train_references, transition_ablation,
};
use growtas::report::{read_config_stamp, search_history_csv, step_log_csv};
use growtas::scheduler::{build_freeze_mask, finetune_plus, train_grow_tas_until, train_uniform};
use growtas::task::SyntheticTask;
use growtas::{Architecture, Error, Result, SupernetWeights};

use crate::{Cli, Command, Split, StudyKind};

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn split<'a>(task: &'a SyntheticTask, which: Split) -> &'a Dataset {
    match which {
        Split::Train => &task.train,
        Split::Val => &task.val,
        Split::Test => &task.test,
    }
}

fn load_checkpoint(path: &Path, hash: &str, allow_mismatch: bool) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.verify_config(hash, allow_mismatch)?;
    Ok(ckpt)
}

fn write_log(path: &Path, hash: &str, log: &[growtas::scheduler::StepLog], append: bool) -> Result<()> {
    if append && path.exists() {
        let mut f = OpenOptions::new().append(true).open(path)?;
        f.write_all(&step_log_csv(hash, log, false)?)?;
    } else {
        std::fs::write(path, step_log_csv(hash, log, true)?)?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let hash = cfg.config_hash();
    let out = cfg.out.clone();
    match cli.command {
        Command::Train { baseline, resume, stop_at, allow_config_mismatch } => {
            let task = cfg.datasets()?;
            let (partition, schedule) = (cfg.partition()?, cfg.schedule()?);
            let total = schedule.total_epochs();
            let (mut weights, mut rng) = match &resume {
                Some(path) => {
                    let c = load_checkpoint(path, &hash, allow_config_mismatch)?;
                    (c.weights, c.rng)
                }
                None => (
                    SupernetWeights::init(&cfg.space, &mut cfg.stream(1), cfg.train.init_scale)?,
                    cfg.stream(2),
                ),
            };
            let stop = stop_at.unwrap_or(total).min(total);
            let mut log = Vec::new();
            let train = cfg.train_config();
            if baseline {
                train_uniform(&mut weights, stop, &task.train, &train, &mut rng, &mut log)?;
            } else {
                train_grow_tas_until(&mut weights, &partition, &schedule, &task.train, &train, &mut rng, &mut log, stop)?;
            }
            std::fs::create_dir_all(&out)?;
            let stem = if baseline { "uniform" } else { "supernet" };
            let log_stem = if baseline { "uniform_log" } else { "train_log" };
            write_log(&out.join(format!("{log_stem}_{hash}.csv")), &hash, &log, resume.is_some())?;
            let path = out.join(format!("{stem}_{hash}.ckpt"));
            Checkpoint::new(&hash, weights.clone(), rng)?.save(&path)?;
            println!("epoch {} of {total}, {} steps; checkpoint {}", weights.epoch, weights.step, path.display());
        }
        Command::FinetunePlus { checkpoint, allow_config_mismatch } => {
            let task = cfg.datasets()?;
            let partition = cfg.partition()?;
            let c = load_checkpoint(&checkpoint, &hash, allow_config_mismatch)?;
            let mut weights = c.weights;
            let mask = build_freeze_mask(&cfg.space, &partition)?;
            let mut rng = cfg.stream(3);
            let mut log = Vec::new();
            let train = cfg.train_config();
            finetune_plus(&mut weights, &partition, &mask, &cfg.finetune_config(), &train, &task.train, &mut rng, &mut log)?;
            std::fs::create_dir_all(&out)?;
            write_log(&out.join(format!("finetune_log_{hash}.csv")), &hash, &log, false)?;
            let path = out.join(format!("supernet_plus_{hash}.ckpt"));
            Checkpoint::new(&hash, weights, rng)?.save(&path)?;
            println!("frozen slice {}; {} steps; checkpoint {}", mask.frozen_arch, log.len(), path.display());
        }
        Command::Search { checkpoint, constraint, population, generations, split: which, allow_config_mismatch } => {
            let task = cfg.datasets()?;
            let c = load_checkpoint(&checkpoint, &hash, allow_config_mismatch)?;
            let limit = constraint.or(cfg.evo.max_params).unwrap_or(u64::MAX);
            let mut evo = cfg.evo_config(limit)?;
            evo.population_size = population.unwrap_or(evo.population_size);
            evo.generations = generations.unwrap_or(evo.generations);
            evo.parent_count = evo.parent_count.min(evo.population_size);
            let evaluator =
                SupernetEvaluator { weights: &c.weights, data: split(&task, which), batch_size: cfg.study.eval_batch };
            let outcome = search(&cfg.space, &evaluator, &evo)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join(format!("search_{hash}.csv")), search_history_csv(&hash, &outcome.history)?)?;
            let test = c.weights.evaluate(&outcome.best.arch, &task.test, cfg.study.eval_batch)?;
            println!(
                "{} generations x {} population, {} evaluations",
                evo.generations, evo.population_size, outcome.evaluations
            );
            println!(
                "best {} params={} search_acc={:.4} test_acc={:.4}",
                outcome.best.arch, outcome.best.params, outcome.best.accuracy, test.accuracy
            );
        }
        Command::Eval { checkpoint, arch, split: which, allow_config_mismatch } => {
            let task = cfg.datasets()?;
            let c = load_checkpoint(&checkpoint, &hash, allow_config_mismatch)?;
            let arch: Architecture = arch.parse()?;
            let r = c.weights.evaluate(&arch, split(&task, which), cfg.study.eval_batch)?;
            println!(
                "{arch} params={} accuracy={:.6} loss={:.6}",
                cfg.space.param_count(&arch),
                r.accuracy,
                r.loss
            );
        }
        Command::Enumerate { list } => {
            let space = &cfg.space;
            let (min, max) = (space.min_arch(), space.max_arch());
            println!("architectures {}", space.count());
            println!("min {} params {}", min, space.param_count(&min));
            println!("max {} params {}", max, space.param_count(&max));
            if list {
                std::fs::create_dir_all(&out)?;
                let mut bytes = format!("# config {hash}\narch,params\n").into_bytes();
                for a in space.enumerate(1 << 24)? {
                    bytes.extend(format!("{a},{}\n", space.param_count(&a)).as_bytes());
                }
                std::fs::write(out.join(format!("enumerate_{hash}.csv")), bytes)?;
            }
        }
        Command::Study { kind, checkpoint, constraint, allow_config_mismatch } => {
            let task = cfg.datasets()?;
            let partition = cfg.partition()?;
            let settings = cfg.study_settings();
            let report = match kind {
                StudyKind::GrowCrop | StudyKind::Cossim => {
                    let (small, large) = reference_archs(&cfg.space, &partition)?;
                    let refs = train_references(&cfg.space, &small, &large, &task, &settings, cfg.seed)?;
                    let mut rng = cfg.stream(5);
                    if kind == StudyKind::GrowCrop {
                        grow_crop_study(&refs, &task, cfg.study.n_variants, &settings, &mut rng, &hash)?
                    } else {
                        cossim_study(&refs, &task, cfg.study.cossim_variants, &settings, &mut rng, &hash)?
                    }
                }
                StudyKind::Dist => {
                    let limit = constraint.or(cfg.study.constraint).unwrap_or(u64::MAX);
                    match checkpoint {
                        Some(path) => {
                            let c = load_checkpoint(&path, &hash, allow_config_mismatch)?;
                            let mut rng = cfg.stream(5);
                            accuracy_distribution_study(
                                &c.weights,
                                limit,
                                cfg.study.n_samples,
                                &task.test,
                                settings.eval_batch,
                                &mut rng,
                                &hash,
                            )?
                        }
                        None => distribution_comparison(
                            &cfg.space,
                            &partition,
                            &cfg.schedule()?,
                            &task,
                            &settings,
                            limit,
                            cfg.study.n_samples,
                            cfg.seed,
                            &hash,
                        )?,
                    }
                }
                StudyKind::AblateT1 => transition_ablation(
                    &cfg.space,
                    &partition,
                    &task,
                    &settings,
                    &cfg.ablation_settings()?,
                    cfg.seed,
                    &hash,
                )?,
            };
            let path = report.write(&out)?;
            print!("{}", report.summary_text());
            println!("wrote {}", path.display());
        }
        Command::InspectCheckpoint { path } => {
            let bytes = std::fs::read(&path)?;
            let stamped = if bytes.starts_with(growtas::checkpoint::MAGIC) {
                let c = Checkpoint::from_bytes(&bytes)?;
                let w = &c.weights;
                let values: usize = w.params().iter().map(|p| p.value.len()).sum();
                let (seed, counter) = c.rng.state();
                println!("format GTAS v{}", growtas::checkpoint::VERSION);
                println!("config {}", c.config_hash);
                println!("epoch {} step {}", w.epoch, w.step);
                println!("rng seed {seed:#018x} counter {counter}");
                println!("tensors {} values {values}", w.params().len());
                println!("space max {} ({} architectures)", w.space().max_arch(), w.space().count());
                c.config_hash
            } else {
                let stamp = read_config_stamp(&bytes)?;
                println!("config {stamp}");
                stamp
            };
            if cli.common.config.is_some() {
                if stamped != hash {
                    return Err(Error::HashMismatch { found: stamped, expected: hash });
                }
                println!("config hash verified");
            }
        }
        Command::ExportTask => {
            let task = cfg.datasets()?;
            std::fs::create_dir_all(&out)?;
            for (name, d) in [("train", &task.train), ("val", &task.val), ("test", &task.test)] {
                export_dataset(d, &out.join(format!("{name}.bin")))?;
            }
            println!(
                "wrote {} / {} / {} records to {}",
                task.train.len(),
                task.val.len(),
                task.test.len(),
                out.display()
            );
        }
    }
    Ok(())
}
