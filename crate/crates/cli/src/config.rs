//! Experiment configuration: a TOML file with one section per pipeline stage.
//!
//! Unknown keys are rejected by name. Sections only carry what a config can
//! sensibly fix in advance; anything derived from the data (image shape,
//! class count) is resolved at load time. Command-line flags override single
//! keys, and the fully-resolved config is persisted into every output
//! directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ule_core::crafting::{AugSpec, CraftSpec, Variant};
use ule_core::data::{self, ImageDataset};
use ule_core::evaluation::{AttackKind, AttackSpec};
use ule_core::exploiter::{AtSpec, EarlyStopSpec, ExploiterSpec, ScheduleSpec};
use ule_core::mitigations::{Transform, TransformStack};
use ule_core::models::{Arch, ModelSpec, Normalization};
use ule_core::{Error, Result};

/// Name of the environment variable that points at the dataset root when the
/// config does not fix one.
pub const DATA_ROOT_ENV: &str = "ULE_DATA_DIR";

fn default_true() -> bool {
    true
}

fn default_epsilon() -> f64 {
    8.0 / 255.0
}

fn default_eval_batch() -> usize {
    256
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Seed for a single run. Mutually exclusive with `seeds`.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Seeds for repeated runs (one output subdirectory per seed).
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Accepted for the record; execution is single-threaded and seeded, so
    /// runs are deterministic either way.
    #[serde(default = "default_true")]
    pub deterministic: bool,
    pub dataset: DatasetCfg,
    #[serde(default)]
    pub craft: Option<CraftCfg>,
    #[serde(default)]
    pub exploiter: Option<ExploiterCfg>,
    #[serde(default)]
    pub eval: Option<EvalCfg>,
    #[serde(default)]
    pub matrix: Option<MatrixCfg>,
    #[serde(default)]
    pub mix: Option<MixCfg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetCfg {
    /// `cifar10-train`, `synthetic-3class`, ... (see the data module).
    pub name: String,
    /// Dataset root directory; falls back to $ULE_DATA_DIR, then `./data`.
    #[serde(default)]
    pub root: Option<PathBuf>,
    /// Held-out split name; inferred from `name` when omitted.
    #[serde(default)]
    pub test_name: Option<String>,
    /// Optional stratified subset of the training split.
    #[serde(default)]
    pub fraction: Option<f64>,
    /// Optional stratified subset of the test split.
    #[serde(default)]
    pub test_fraction: Option<f64>,
}

impl DatasetCfg {
    pub fn root(&self) -> PathBuf {
        self.root.clone().unwrap_or_else(|| {
            std::env::var_os(DATA_ROOT_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
        })
    }

    pub fn test_name(&self) -> String {
        self.test_name.clone().unwrap_or_else(|| {
            if self.name.ends_with("-train") {
                self.name.replace("-train", "-test")
            } else {
                format!("{}-test", self.name)
            }
        })
    }

    /// Load train and test splits, applying the configured subsets.
    pub fn load(&self, seed: u64) -> Result<(ImageDataset, ImageDataset)> {
        let root = self.root();
        let mut train = data::load_dataset(&self.name, &root)?;
        let mut test = data::load_dataset(&self.test_name(), &root)?;
        if let Some(f) = self.fraction {
            train = data::subset(&train, f, seed)?;
        }
        if let Some(f) = self.test_fraction {
            test = data::subset(&test, f, seed)?;
        }
        Ok((train, test))
    }
}

/// Model description without the data-derived fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCfg {
    pub arch: Arch,
    /// "cifar10", "centered", or omitted (chosen from the dataset name).
    #[serde(default)]
    pub normalization: Option<String>,
    /// Weight-init seed; derived from the run seed when omitted.
    #[serde(default)]
    pub init_seed: Option<u64>,
}

impl ModelCfg {
    fn normalization(&self, dataset_name: &str) -> Result<Normalization> {
        match self.normalization.as_deref() {
            Some("cifar10") => Ok(Normalization::cifar10()),
            Some("centered") => Ok(Normalization::centered()),
            Some(other) => Err(Error::Config(format!(
                "unknown normalization preset `{other}` (expected `cifar10` or `centered`)"
            ))),
            None if dataset_name.starts_with("cifar10") => Ok(Normalization::cifar10()),
            None => Ok(Normalization::centered()),
        }
    }

    pub fn to_spec(&self, ds: &ImageDataset, dataset_name: &str, run_seed: u64) -> Result<ModelSpec> {
        let spec = ModelSpec {
            arch: self.arch,
            class_count: ds.class_count,
            input_shape: ds.image_shape(),
            normalization: self.normalization(dataset_name)?,
            init_seed: self.init_seed.unwrap_or(run_seed.wrapping_add(1)),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CraftCfg {
    pub variant: Variant,
    pub model: ModelCfg,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub inner_steps: Option<usize>,
    #[serde(default)]
    pub inner_step_size: Option<f64>,
    #[serde(default)]
    pub outer_steps: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub stop_error: Option<f64>,
    #[serde(default)]
    pub max_rounds: Option<usize>,
    #[serde(default)]
    pub augment_outer: Option<bool>,
    #[serde(default)]
    pub restart_each_round: Option<bool>,
    #[serde(default)]
    pub outer_lr: Option<f64>,
    #[serde(default)]
    pub momentum: Option<f64>,
    #[serde(default)]
    pub aug: Option<AugSpec>,
}

impl CraftCfg {
    pub fn to_spec(&self, ds: &ImageDataset, dataset_name: &str, seed: u64) -> Result<CraftSpec> {
        let model = self.model.to_spec(ds, dataset_name, seed)?;
        let mut spec = CraftSpec::standard(self.variant, model, self.epsilon, seed);
        if let Some(v) = self.inner_steps {
            spec.inner_steps = v;
        }
        if let Some(v) = self.inner_step_size {
            spec.inner_step_size = v;
        }
        if let Some(v) = self.outer_steps {
            spec.outer_steps = v;
        }
        if let Some(v) = self.batch_size {
            spec.batch_size = v;
        }
        if let Some(v) = self.stop_error {
            spec.stop_error = v;
        }
        if let Some(v) = self.max_rounds {
            spec.max_rounds = v;
        }
        if let Some(v) = self.augment_outer {
            spec.augment_outer = v;
        }
        if let Some(v) = self.restart_each_round {
            spec.restart_each_round = v;
        }
        if let Some(v) = self.outer_lr {
            spec.outer_lr = v;
        }
        if let Some(v) = self.momentum {
            spec.momentum = v;
        }
        if let Some(aug) = self.aug {
            spec.aug = Some(aug);
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialCfg {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub step_size: Option<f64>,
}

impl AdversarialCfg {
    pub fn to_spec(&self) -> AtSpec {
        let mut spec = AtSpec::pgd7(self.epsilon);
        if let Some(v) = self.steps {
            spec.steps = v;
        }
        if let Some(v) = self.step_size {
            spec.step_size = v;
        }
        spec
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploiterCfg {
    pub model: ModelCfg,
    /// Input pipeline; defaults to the standard crop + flip augmentation.
    #[serde(default)]
    pub transforms: Option<Vec<Transform>>,
    #[serde(default)]
    pub adversarial: Option<AdversarialCfg>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub momentum: Option<f64>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    /// Fraction of the training set carved off as a validation split. Only
    /// meaningful together with `early_stop_patience`.
    #[serde(default)]
    pub validation_fraction: Option<f64>,
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
}

impl ExploiterCfg {
    pub fn to_spec(&self, ds: &ImageDataset, dataset_name: &str, seed: u64) -> Result<ExploiterSpec> {
        let model = self.model.to_spec(ds, dataset_name, seed)?;
        let mut spec = ExploiterSpec::standard(model, seed);
        if let Some(t) = &self.transforms {
            spec.transforms = TransformStack::new(t.clone())?;
        }
        if let Some(at) = &self.adversarial {
            spec.adversarial = Some(at.to_spec());
        }
        if let Some(v) = self.epochs {
            spec.epochs = v;
        }
        if let Some(v) = self.batch_size {
            spec.batch_size = v;
        }
        if let Some(v) = self.lr {
            spec.lr = v;
        }
        if let Some(s) = &self.schedule {
            spec.schedule = s.clone();
        }
        if let Some(v) = self.momentum {
            spec.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            spec.weight_decay = v;
        }
        if let Some(p) = self.early_stop_patience {
            if self.validation_fraction.is_none() {
                return Err(Error::Config(
                    "early_stop_patience requires validation_fraction".into(),
                ));
            }
            spec.early_stop = Some(EarlyStopSpec { patience: p });
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackCfg {
    pub kind: AttackKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub random_start: Option<bool>,
}

impl AttackCfg {
    pub fn to_spec(&self) -> Result<AttackSpec> {
        let mut spec = match self.kind {
            AttackKind::Fgsm => AttackSpec::fgsm(self.epsilon),
            AttackKind::Pgd => AttackSpec::pgd20(self.epsilon),
        };
        if let Some(v) = self.steps {
            spec.steps = v;
        }
        if let Some(v) = self.step_size {
            spec.step_size = v;
        }
        if let Some(v) = self.random_start {
            spec.random_start = v;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCfg {
    #[serde(default)]
    pub attacks: Vec<AttackCfg>,
    #[serde(default = "default_eval_batch")]
    pub batch_size: usize,
    /// Also emit the perturbation profile when a bank is provided.
    #[serde(default = "default_true")]
    pub profile: bool,
}

impl Default for EvalCfg {
    fn default() -> Self {
        EvalCfg { attacks: Vec::new(), batch_size: default_eval_batch(), profile: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankRef {
    pub arch: Arch,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixCfg {
    /// Pre-crafted banks, labeled by the architecture that crafted them.
    pub banks: Vec<BankRef>,
    /// Architectures to train on each bank.
    pub exploiters: Vec<Arch>,
    /// Restrict to one pipeline; both standard and grayscale run when omitted.
    #[serde(default)]
    pub gray: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixCfg {
    /// Fraction of the official training split kept as the original data.
    pub original_fraction: f64,
    /// Added data sizes, as fractions of the official training split.
    pub added_fractions: Vec<f64>,
    pub uleo_bank: PathBuf,
    pub grayaug_bank: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed.is_some() && self.seeds.is_some() {
            return Err(Error::Config("set either `seed` or `seeds`, not both".into()));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(Error::Config("`seeds` must not be empty".into()));
            }
            let unique: HashSet<u64> = seeds.iter().copied().collect();
            if unique.len() != seeds.len() {
                return Err(Error::Config("`seeds` contains duplicates".into()));
            }
        }
        for (label, f) in [
            ("dataset.fraction", self.dataset.fraction),
            ("dataset.test_fraction", self.dataset.test_fraction),
        ] {
            if let Some(f) = f {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Config(format!("{label} must lie in (0,1], got {f}")));
                }
            }
        }
        if let Some(ex) = &self.exploiter {
            if let Some(f) = ex.validation_fraction {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::Config(format!(
                        "exploiter.validation_fraction must lie in (0,1), got {f}"
                    )));
                }
            }
        }
        if let Some(mix) = &self.mix {
            if !(mix.original_fraction > 0.0 && mix.original_fraction < 1.0) {
                return Err(Error::Config(format!(
                    "mix.original_fraction must lie in (0,1), got {}",
                    mix.original_fraction
                )));
            }
            if mix.added_fractions.is_empty() {
                return Err(Error::Config("mix.added_fractions must not be empty".into()));
            }
            for &f in &mix.added_fractions {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::Config(format!(
                        "mix.added_fractions entries must lie in (0,1), got {f}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The seeds to run: `seeds` if set, else the single `seed`, else 0.
    pub fn run_seeds(&self) -> Vec<u64> {
        match (&self.seeds, self.seed) {
            (Some(s), _) => s.clone(),
            (None, Some(s)) => vec![s],
            (None, None) => vec![0],
        }
    }

    /// Persist the fully-resolved config into an output directory.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize resolved config: {e}")))?;
        std::fs::write(dir.join("config.toml"), text)?;
        Ok(())
    }

    pub fn require_craft(&self) -> Result<&CraftCfg> {
        self.craft
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a [craft] section".into()))
    }

    pub fn require_exploiter(&self) -> Result<&ExploiterCfg> {
        self.exploiter
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs an [exploiter] section".into()))
    }

    pub fn require_matrix(&self) -> Result<&MatrixCfg> {
        self.matrix
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a [matrix] section".into()))
    }

    pub fn require_mix(&self) -> Result<&MixCfg> {
        self.mix
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a [mix] section".into()))
    }
}

/// Single-key overrides supplied on the command line. Each one replaces the
/// corresponding config value before anything runs.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub data_root: Option<PathBuf>,
    pub fraction: Option<f64>,
    pub epsilon: Option<f64>,
    pub variant: Option<Variant>,
    pub epochs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
            cfg.seeds = None;
        }
        if let Some(root) = &self.data_root {
            cfg.dataset.root = Some(root.clone());
        }
        if let Some(f) = self.fraction {
            cfg.dataset.fraction = Some(f);
        }
        if let Some(eps) = self.epsilon {
            if let Some(craft) = cfg.craft.as_mut() {
                craft.epsilon = eps;
            }
            if let Some(eval) = cfg.eval.as_mut() {
                for attack in &mut eval.attacks {
                    attack.epsilon = eps;
                }
            }
            if cfg.craft.is_none() && cfg.eval.is_none() {
                return Err(Error::Config(
                    "--epsilon has no [craft] or [eval] section to apply to".into(),
                ));
            }
        }
        if let Some(variant) = self.variant {
            match cfg.craft.as_mut() {
                Some(craft) => craft.variant = variant,
                None => {
                    return Err(Error::Config("--variant has no [craft] section to apply to".into()))
                }
            }
        }
        if let Some(epochs) = self.epochs {
            match cfg.exploiter.as_mut() {
                Some(ex) => ex.epochs = Some(epochs),
                None => {
                    return Err(Error::Config(
                        "--epochs has no [exploiter] section to apply to".into(),
                    ))
                }
            }
        }
        cfg.validate()
    }
}
