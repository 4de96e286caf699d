//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::{PipelineConfig, PseudoLabelPolicy, SelfTraining, TaskKind, TaskSpec, TrainConfig};
use crate::data::{generate_domain_pair, load_pair, DomainPair, DomainSpec, PairCounts};
use crate::discriminator::DiscTrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::sampling::{Budget, ScoringStrategy};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Existing dataset pair; generated from the fields below when absent.
    pub dir: Option<PathBuf>,
    /// Target shift strength in [0, 1].
    pub shift: f64,
    /// Share of source frames drawn from the target settings.
    pub rho: f64,
    pub source_frames: usize,
    pub target_train_frames: usize,
    pub target_test_frames: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let c = PairCounts::default();
        DataConfig {
            dir: None,
            shift: 0.8,
            rho: 0.3,
            source_frames: c.source,
            target_train_frames: c.target_train,
            target_test_frames: c.target_test,
        }
    }
}

impl DataConfig {
    pub fn counts(&self) -> PairCounts {
        PairCounts { source: self.source_frames, target_train: self.target_train_frames, target_test: self.target_test_frames }
    }

    pub fn generate(&self, seed: u64) -> Result<DomainPair> {
        generate_domain_pair(&DomainSpec::source(), &DomainSpec::target(self.shift), self.counts(), self.rho, seed)
    }

    /// Loads `dir` when set, otherwise generates the pair.
    pub fn obtain(&self, seed: u64) -> Result<DomainPair> {
        match &self.dir {
            Some(dir) => load_pair(dir),
            None => self.generate(seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub strategy: ScoringStrategy,
    pub target_strategy: Option<ScoringStrategy>,
    pub source_budget: Budget,
    pub target_budget: Budget,
    pub apl_budget: Budget,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        let t = TaskSpec::default();
        SamplingConfig {
            strategy: t.strategy,
            target_strategy: t.target_strategy,
            source_budget: t.source_budget,
            target_budget: t.target_budget,
            apl_budget: t.apl_budget,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub target_fraction: f64,
    pub self_training: SelfTraining,
    pub fusion: bool,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let t = TaskSpec::default();
        TaskConfig {
            kind: t.task,
            target_fraction: t.target_fraction,
            self_training: t.self_training,
            fusion: t.fusion,
            seed: t.seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub source: TrainConfig,
    pub fine_tune: TrainConfig,
    pub self_train: TrainConfig,
    pub pseudo: PseudoLabelPolicy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Target budgets for `run --sweep`.
    pub sweep: Vec<Budget>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub discriminator: DiscTrainConfig,
    pub sampling: SamplingConfig,
    pub task: TaskConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            discriminator: DiscTrainConfig::default(),
            sampling: SamplingConfig::default(),
            task: TaskConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!("config version {} (expected {CONFIG_VERSION})", cfg.version)));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.data.shift) || !(0.0..=1.0).contains(&self.data.rho) {
            return Err(Error::Config("data.shift and data.rho must lie in [0, 1]".into()));
        }
        if self.model.classes != DomainSpec::source().num_classes() && self.data.dir.is_none() {
            return Err(Error::Config("generated data has 6 classes; set model.classes accordingly".into()));
        }
        self.task_spec().validate()?;
        self.pipeline().validate()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.task.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.task.seed
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            task: self.task.kind,
            target_fraction: self.task.target_fraction,
            source_budget: self.sampling.source_budget,
            target_budget: self.sampling.target_budget,
            apl_budget: self.sampling.apl_budget,
            strategy: self.sampling.strategy,
            target_strategy: self.sampling.target_strategy,
            self_training: self.task.self_training,
            fusion: self.task.fusion,
            seed: self.task.seed,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            model: self.model.clone(),
            source: self.train.source.clone(),
            fine_tune: self.train.fine_tune.clone(),
            self_train: self.train.self_train.clone(),
            discriminator: self.discriminator.clone(),
            pseudo: self.train.pseudo.clone(),
        }
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serialises")))
    }

    /// `<out>/<hash16>-s<seed>`.
    pub fn run_dir(&self, out: &Path) -> PathBuf {
        out.join(format!("{}-s{}", &self.hash()[..16], self.seed()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("version = 1").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn sections_parse() {
        let text = r#"
version = 1
[data]
shift = 0.5
[model]
features = 8
[sampling]
strategy = "two_d_only"
source_budget = 12
target_budget = 0.1
[task]
kind = "ufda"
target_fraction = 0.05
[train.source]
iterations = 10
[eval]
sweep = [0.01, 0.05, 3]
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.data.shift, 0.5);
        assert_eq!(cfg.model.features, 8);
        assert_eq!(cfg.sampling.source_budget, Budget::Count(12));
        assert_eq!(cfg.sampling.target_budget, Budget::Fraction(0.1));
        assert_eq!(cfg.task_spec().task, TaskKind::Ufda);
        assert_eq!(cfg.train.source.iterations, 10);
        assert_eq!(cfg.train.fine_tune, TrainConfig::default());
        assert_eq!(cfg.eval.sweep.len(), 3);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in [
            "version = 2",
            "version = 1\n[task]\nkind = \"ufda\"\ntarget_fraction = 0.0",
            "version = 1\n[task]\nkind = \"ada\"\nself_training = \"pl\"",
            "version = 1\n[train.source]\nlr = 0.0",
            "version = 1\n[model]\nunknown = 3",
            "version = 1\n[data]\nshift = 2.0",
            "not toml at all [",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_tracks_content_and_seed() {
        let a = RunConfig::default();
        let b = a.clone().with_seed(7);
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        let dir = b.run_dir(Path::new("/tmp/out"));
        assert!(dir.to_string_lossy().ends_with("-s7"));
        assert_eq!(dir.file_name().unwrap().len(), 16 + 3);
    }
}
