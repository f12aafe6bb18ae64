//! Run configuration: a TOML file whose sections all have defaults (the
//! lab setup) and reject unknown keys. `config_hash` is the first 16 hex
//! digits of the SHA-256 of the canonical JSON form, with `out` excluded.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::import_dataset;
use crate::error::{Error, Result};
use crate::evo::EvoConfig;
use crate::experiments::{AblationSettings, StudySettings};
use crate::kernel::AdamWConfig;
use crate::rng::SeededRng;
use crate::scheduler::{FinetuneConfig, Schedule, TrainConfig};
use crate::space::{SearchSpace, StageCap, SubspacePartition};
use crate::task::{generate_task, SyntheticTask, TaskParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; init, training, fine-tuning and search use forks of it.
    pub seed: u64,
    pub out: PathBuf,
    /// Directory with `train.bin`, `val.bin`, `test.bin` replacing the
    /// synthetic task.
    pub data_dir: Option<PathBuf>,
    pub space: SearchSpace,
    pub partition: Vec<StageCap>,
    pub schedule: ScheduleSection,
    pub train: TrainSection,
    pub finetune: FinetuneSection,
    pub evo: EvoSection,
    pub task: TaskParams,
    pub study: StudySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// `0 = T_0 < T_1 < ... < T_K`, `T_K` the total epoch count.
    pub transitions: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub init_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub epochs: usize,
    /// Epochs at the full fine-tuning rate before the cosine decay;
    /// defaults to half of `epochs`.
    pub constant_epochs: Option<usize>,
    /// Defaults to `train.lr / 20`.
    pub lr: Option<f64>,
    /// Defaults to `lr / 5`.
    pub min_lr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoSection {
    pub population_size: usize,
    pub generations: usize,
    pub parent_count: usize,
    pub mutation_prob: f64,
    /// Parameter limit when `--constraint` is not given; unlimited if absent.
    pub max_params: Option<u64>,
    pub memoize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    /// Epochs for standalone references and for each supernet run.
    pub epochs: usize,
    pub eval_batch: usize,
    pub n_variants: usize,
    pub cossim_variants: usize,
    pub n_samples: usize,
    /// Parameter constraint for the distribution study; unlimited if absent.
    pub constraint: Option<u64>,
    pub t1_values: Vec<usize>,
    pub param_limits: Vec<u64>,
    pub finetune_epochs: usize,
    /// Search budget inside the ablation.
    pub search_population: usize,
    pub search_generations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            data_dir: None,
            space: SearchSpace::lab(),
            partition: vec![
                StageCap { max_embed: 12, max_mlp_ratio: 1.5 },
                StageCap { max_embed: 16, max_mlp_ratio: 2.0 },
            ],
            schedule: ScheduleSection::default(),
            train: TrainSection::default(),
            finetune: FinetuneSection::default(),
            evo: EvoSection::default(),
            task: TaskParams::default(),
            study: StudySection::default(),
        }
    }
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace::lab()
    }
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { transitions: vec![0, 30, 60] }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            lr: 3e-3,
            min_lr: 6e-5,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            batch_size: 32,
            init_scale: crate::supernet::DEFAULT_INIT_SCALE,
        }
    }
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self { epochs: 10, constant_epochs: None, lr: None, min_lr: None }
    }
}

impl Default for EvoSection {
    fn default() -> Self {
        let e = EvoConfig::with_limit(u64::MAX, 0);
        Self {
            population_size: e.population_size,
            generations: e.generations,
            parent_count: e.parent_count,
            mutation_prob: e.mutation_prob,
            max_params: None,
            memoize: true,
        }
    }
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            seq_len: 8,
            input_dim: 8,
            num_classes: 4,
            components: 2,
            separation: 2.0,
            noise: 1.0,
            symmetric: true,
            train_size: 1024,
            val_size: 512,
            test_size: 2048,
            seed: 1,
        }
    }
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            epochs: 60,
            eval_batch: 256,
            n_variants: 100,
            cossim_variants: 20,
            n_samples: 200,
            constraint: None,
            t1_values: vec![15, 30, 45, 59],
            param_limits: vec![1_500, 2_500, 4_000],
            finetune_epochs: 0,
            search_population: 20,
            search_generations: 5,
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{key} must be positive and finite, got {v}")))
    }
}

fn nonzero(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::Config(format!("{key} must be at least 1")))
    } else {
        Ok(())
    }
}

impl RunConfig {
    /// Parses and validates a TOML file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        let partition = self.partition()?;
        let schedule = self.schedule()?;
        if schedule.k() != partition.k() {
            return Err(Error::Config(format!(
                "schedule.transitions defines {} stages but partition has {}",
                schedule.k(),
                partition.k()
            )));
        }
        let t = &self.train;
        positive("train.lr", t.lr)?;
        if !(t.min_lr >= 0.0 && t.min_lr <= t.lr) {
            return Err(Error::Config(format!("train.min_lr must lie in [0, train.lr], got {}", t.min_lr)));
        }
        for (key, b) in [("train.beta1", t.beta1), ("train.beta2", t.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{key} must lie in [0, 1), got {b}")));
            }
        }
        positive("train.eps", t.eps)?;
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return Err(Error::Config(format!("train.weight_decay must be non-negative, got {}", t.weight_decay)));
        }
        nonzero("train.batch_size", t.batch_size)?;
        if !(t.init_scale >= 0.0 && t.init_scale.is_finite()) {
            return Err(Error::Config(format!("train.init_scale must be non-negative, got {}", t.init_scale)));
        }
        if self.finetune.constant_epochs.is_some_and(|c| c > self.finetune.epochs) {
            return Err(Error::Config("finetune.constant_epochs exceeds finetune.epochs".into()));
        }
        if let Some(lr) = self.finetune.lr {
            positive("finetune.lr", lr)?;
        }
        if let Some(min_lr) = self.finetune.min_lr {
            if !(min_lr >= 0.0 && min_lr.is_finite()) {
                return Err(Error::Config(format!("finetune.min_lr must be non-negative, got {min_lr}")));
            }
        }
        self.evo_config(u64::MAX)?;
        self.task.validate()?;
        for (key, a, b) in [
            ("task.seq_len", self.task.seq_len, self.space.seq_len),
            ("task.input_dim", self.task.input_dim, self.space.input_dim),
            ("task.num_classes", self.task.num_classes, self.space.num_classes),
        ] {
            if a != b {
                return Err(Error::Config(format!("{key} = {a} does not match space.{} = {b}", &key[5..])));
            }
        }
        let s = &self.study;
        nonzero("study.epochs", s.epochs)?;
        nonzero("study.eval_batch", s.eval_batch)?;
        nonzero("study.n_variants", s.n_variants)?;
        nonzero("study.cossim_variants", s.cossim_variants)?;
        nonzero("study.n_samples", s.n_samples)?;
        nonzero("study.search_population", s.search_population)?;
        nonzero("study.search_generations", s.search_generations)?;
        for &t1 in &s.t1_values {
            if t1 == 0 || t1 >= s.epochs {
                return Err(Error::Config(format!("study.t1_values: {t1} is not inside (0, study.epochs)")));
            }
        }
        Ok(())
    }

    /// Hash of everything except `out`.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn search_space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn partition(&self) -> Result<SubspacePartition> {
        SubspacePartition::new(&self.space, self.partition.clone())
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.schedule.transitions.clone())
            .map_err(|e| Error::Config(format!("schedule.transitions: {e}")))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            optim: AdamWConfig { lr: t.lr, beta1: t.beta1, beta2: t.beta2, eps: t.eps, weight_decay: t.weight_decay },
            min_lr: t.min_lr,
            batch_size: t.batch_size,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        let base = FinetuneConfig::from_training(&self.train_config(), self.finetune.epochs);
        let lr = self.finetune.lr.unwrap_or(base.lr);
        FinetuneConfig {
            epochs: self.finetune.epochs,
            constant_epochs: self.finetune.constant_epochs.unwrap_or(base.constant_epochs),
            lr,
            min_lr: self.finetune.min_lr.unwrap_or(lr / 5.0),
        }
    }

    /// Search settings with `max_params` replacing the configured limit.
    pub fn evo_config(&self, max_params: u64) -> Result<EvoConfig> {
        let e = &self.evo;
        let cfg = EvoConfig {
            population_size: e.population_size,
            generations: e.generations,
            parent_count: e.parent_count,
            mutation_prob: e.mutation_prob,
            max_params,
            seed: self.stream(4).next_u64(),
            memoize: e.memoize,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Generator for named purposes: 1 init, 2 training, 3 fine-tuning,
    /// 4 search, 5 studies.
    pub fn stream(&self, purpose: u64) -> SeededRng {
        SeededRng::new(self.seed).fork(purpose)
    }

    pub fn study_settings(&self) -> StudySettings {
        StudySettings {
            train: self.train_config(),
            init_scale: self.train.init_scale,
            epochs: self.study.epochs,
            eval_batch: self.study.eval_batch,
        }
    }

    pub fn ablation_settings(&self) -> Result<AblationSettings> {
        let evo = EvoConfig {
            population_size: self.study.search_population,
            generations: self.study.search_generations,
            parent_count: self.evo.parent_count.min(self.study.search_population),
            ..self.evo_config(u64::MAX)?
        };
        Ok(AblationSettings {
            t1_values: self.study.t1_values.clone(),
            param_limits: self.study.param_limits.clone(),
            finetune_epochs: self.study.finetune_epochs,
            evo,
        })
    }

    /// The synthetic task, or the imported splits when `data_dir` is set.
    pub fn datasets(&self) -> Result<SyntheticTask> {
        let Some(dir) = &self.data_dir else {
            return generate_task(&self.task);
        };
        let load = |name: &str| import_dataset(&dir.join(format!("{name}.bin")));
        let task = SyntheticTask { params: self.task, train: load("train")?, val: load("val")?, test: load("test")? };
        for d in [&task.train, &task.val, &task.test] {
            if d.seq_len() != self.space.seq_len
                || d.input_dim() != self.space.input_dim
                || d.num_classes() != self.space.num_classes
            {
                return Err(Error::Config(format!(
                    "data_dir: dataset geometry ({}, {}, {}) does not match the space",
                    d.seq_len(),
                    d.input_dim(),
                    d.num_classes()
                )));
            }
        }
        Ok(task)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = RunConfig::parse("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("learning_rate")), "{err}");
    }

    #[test]
    fn invalid_value_names_its_key() {
        let err = RunConfig::parse("[train]\nlr = -1.0\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("train.lr")), "{err}");
        let err = RunConfig::parse("[task]\nseparation = 0.0\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("task.separation")), "{err}");
        let err = RunConfig::parse("[schedule]\ntransitions = [0, 10, 20, 30]\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("schedule.transitions")), "{err}");
    }

    #[test]
    fn hash_ignores_out_but_not_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed += 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }

    #[test]
    fn toml_round_trip() {
        let mut a = RunConfig::default();
        a.evo.max_params = Some(5000);
        a.finetune.lr = Some(1e-4);
        let b = RunConfig::parse(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn finetune_defaults_follow_training_rate() {
        let c = RunConfig::default().finetune_config();
        assert!((c.lr - 3e-3 / 20.0).abs() < 1e-18);
        assert!((c.min_lr - c.lr / 5.0).abs() < 1e-18);
    }
}
