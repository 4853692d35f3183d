//! Experiment configuration and the end-to-end run: split, PU pretraining,
//! oracles, and joint optimization into a run directory.
//!
//! Configs are JSON. A user file only needs `dataset` and whatever it wants
//! to change; everything else comes from a dataset-dependent preset, and the
//! merged result is deserialized strictly so misspelled keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cgan::{GanConfig, GanVariant, VariantName};
use crate::datasets::{
    load_image_dataset, make_pu_split, make_synthetic_gaussian, relabel_for_split, FeatureShape, ImageDatasetName,
    LabeledDataset, OracleClassifier, PUDataset, SplitSpec, SyntheticSpec, UnlabeledDist,
};
use crate::error::{Error, Result};
use crate::metrics::{train_oracle_classifier, OracleTrainConfig};
use crate::nn::{Activation, Architecture, ConvSpec, MlpSpec, OptimizerConfig};
use crate::pu::{pretrain_pu, pu_log_csv, PURiskConfig, PretrainConfig, PuEpochLog, ScoreFunction};
use crate::trainer::{load_checkpoint, EvalConfig, MetricRow, RunDir, Seeds, Trainer, TrainingSchedule};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    Image { name: ImageDatasetName },
}

impl DatasetConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetConfig::Synthetic(_) => "synthetic",
            DatasetConfig::Image { name } => name.as_str(),
        }
    }

    pub fn shape(&self) -> FeatureShape {
        match self {
            DatasetConfig::Synthetic(s) => FeatureShape::Vector { dim: s.dim },
            DatasetConfig::Image { name } => match name {
                ImageDatasetName::Mnist | ImageDatasetName::FashionMnist => FeatureShape::Image {
                    channels: 1,
                    height: 28,
                    width: 28,
                },
                ImageDatasetName::Cifar10 => FeatureShape::Image {
                    channels: 3,
                    height: 32,
                    width: 32,
                },
            },
        }
    }

    /// Source classes used as positives when the config names none.
    pub fn default_positive_classes(&self) -> Vec<usize> {
        match self {
            DatasetConfig::Synthetic(s) => (0..s.k).collect(),
            DatasetConfig::Image { name } => match name {
                ImageDatasetName::Mnist | ImageDatasetName::FashionMnist => (0..5).collect(),
                // airplane, automobile, ship, truck
                ImageDatasetName::Cifar10 => vec![0, 1, 8, 9],
            },
        }
    }

    pub fn load(&self, data_root: Option<&Path>) -> Result<(LabeledDataset, Option<OracleClassifier>)> {
        match self {
            DatasetConfig::Synthetic(spec) => {
                let (base, oracle) = make_synthetic_gaussian(spec)?;
                Ok((base, Some(oracle)))
            }
            DatasetConfig::Image { name } => {
                let root = data_root.ok_or_else(|| {
                    Error::Config(format!("{} needs a data root", name.as_str()))
                })?;
                Ok((load_image_dataset(*name, root)?, None))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub arch: Architecture,
    pub pretrain: PretrainConfig,
}

/// Trained reference classifiers for image datasets. The synthetic world
/// uses its analytic nearest-mean rule instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Classifier over the split's classes, for generator label accuracy.
    pub label_oracle: Option<OracleTrainConfig>,
    /// Classifier over all source classes, for the inception score.
    pub is_classifier: Option<OracleTrainConfig>,
    /// Where trained oracles are cached between runs.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
    pub variant: VariantName,
    pub classifier: ClassifierConfig,
    pub gan: GanConfig,
    pub schedule: TrainingSchedule,
    pub eval: EvalConfig,
    pub oracle: OracleConfig,
    pub output_dir: PathBuf,
}

fn mlp(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Architecture {
    Architecture::Mlp(MlpSpec {
        input_dim,
        hidden,
        output_dim,
        activation: Activation::LeakyRelu { slope: 0.1 },
        normalize: false,
    })
}

fn conv_for(shape: &FeatureShape, classes: usize) -> Architecture {
    match *shape {
        FeatureShape::Image {
            channels,
            height,
            width,
        } => Architecture::Conv(ConvSpec::six_layer(height, width, channels, classes)),
        FeatureShape::Vector { dim } => mlp(dim, vec![64, 64], classes),
    }
}

fn oracle_preset(name: ImageDatasetName, shape: &FeatureShape, classes: usize, target: f64, seed: u64) -> OracleTrainConfig {
    OracleTrainConfig {
        arch: conv_for(shape, classes),
        target_accuracy: target,
        max_epochs: if name == ImageDatasetName::Cifar10 { 30 } else { 10 },
        batch_size: 64,
        optimizer: OptimizerConfig::adam(1e-3),
        seed,
    }
}

impl ExperimentConfig {
    /// Defaults for a dataset and positive-class choice.
    pub fn preset(dataset: DatasetConfig, positive_classes: Vec<usize>) -> Self {
        let k = positive_classes.len();
        let shape = dataset.shape();
        let synthetic = matches!(dataset, DatasetConfig::Synthetic(_));
        let (arch, pretrain_epochs, gan) = if synthetic {
            (
                mlp(shape.len(), vec![64, 64], k + 1),
                100,
                // Toy scale: the generator must travel several standard
                // deviations from the origin, which 1e-4 makes very slow.
                GanConfig {
                    latent_dim: 16,
                    generator_hidden: vec![64, 64],
                    discriminator_hidden: vec![64, 64],
                    generator_optimizer: OptimizerConfig::adam(3e-3),
                    discriminator_optimizer: OptimizerConfig::adam(3e-3),
                    ..GanConfig::default()
                },
            )
        } else {
            let latent_dim = if shape.len() == 3 * 32 * 32 { 256 } else { 128 };
            (conv_for(&shape, k + 1), 20, GanConfig { latent_dim, ..GanConfig::default() })
        };
        let oracle = match &dataset {
            DatasetConfig::Synthetic(_) => OracleConfig {
                label_oracle: None,
                is_classifier: None,
                cache_dir: None,
            },
            DatasetConfig::Image { name } => {
                let (label_target, is_target) = match name {
                    ImageDatasetName::Mnist => (0.99, 0.99),
                    ImageDatasetName::FashionMnist => (0.98, 0.91),
                    ImageDatasetName::Cifar10 => (0.90, 0.90),
                };
                OracleConfig {
                    label_oracle: Some(oracle_preset(*name, &shape, k + 1, label_target, 101)),
                    is_classifier: Some(oracle_preset(*name, &shape, 10, is_target, 102)),
                    cache_dir: Some(PathBuf::from("oracles")),
                }
            }
        };
        let eval = EvalConfig {
            is_samples: if synthetic { 0 } else { 10_000 },
            ..EvalConfig::default()
        };
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            split: SplitSpec {
                positive_classes,
                positive_rate: 0.01,
                unlabeled_dist: UnlabeledDist::Type1,
                unlabeled_size: None,
                seed: 0,
            },
            variant: VariantName::CniCgan,
            classifier: ClassifierConfig {
                arch,
                pretrain: PretrainConfig {
                    risk: PURiskConfig::default(),
                    epochs: pretrain_epochs,
                    batch_size: 64,
                    seed: 0,
                },
            },
            gan,
            schedule: TrainingSchedule {
                outer_rounds: if synthetic { 30 } else { 50 },
                ..TrainingSchedule::default()
            },
            eval,
            oracle,
            output_dir: PathBuf::from("runs").join(dataset.name()),
            dataset,
        }
    }

    /// Parses a possibly partial config, filling gaps from the preset.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        Self::from_value(user)
    }

    pub fn from_value(user: Value) -> Result<Self> {
        let obj = user
            .as_object()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        match obj.get("schema_version").and_then(Value::as_u64) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(Error::Config(format!("unsupported schema_version {v}"))),
            None => return Err(Error::Config("missing schema_version".into())),
        }
        let dataset: DatasetConfig = serde_json::from_value(
            obj.get("dataset")
                .cloned()
                .ok_or_else(|| Error::Config("missing dataset".into()))?,
        )
        .map_err(|e| Error::Config(format!("dataset: {e}")))?;
        let positive_classes = match obj.get("split").and_then(|s| s.get("positive_classes")) {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("positive_classes: {e}")))?,
            None => dataset.default_positive_classes(),
        };
        let mut merged = serde_json::to_value(Self::preset(dataset, positive_classes))?;
        deep_merge(&mut merged, user);
        let config: ExperimentConfig =
            serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn k(&self) -> usize {
        self.split.positive_classes.len()
    }

    pub fn gan_variant(&self) -> GanVariant {
        GanVariant::standard(self.variant)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema_version {}", self.schema_version)));
        }
        let k = self.k();
        if k == 0 {
            return Err(Error::Config("no positive classes".into()));
        }
        if !(self.split.positive_rate > 0.0 && self.split.positive_rate <= 1.0) {
            return Err(Error::Config(format!(
                "positive_rate must lie in (0, 1], got {}",
                self.split.positive_rate
            )));
        }
        if let DatasetConfig::Synthetic(s) = &self.dataset {
            if self.split.positive_classes != (0..s.k).collect::<Vec<_>>() {
                return Err(Error::Config("synthetic positives must be classes 0..k in order".into()));
            }
        }
        if self.classifier.arch.output_dim() != k + 1 {
            return Err(Error::Config(format!(
                "classifier emits {} scores but the split has {} classes",
                self.classifier.arch.output_dim(),
                k + 1
            )));
        }
        if let Some(pi) = self.classifier.pretrain.risk.pi_p {
            if !(pi > 0.0 && pi < 1.0) {
                return Err(Error::Config(format!("pi_p must lie in (0, 1), got {pi}")));
            }
        }
        self.classifier.pretrain.risk.optimizer.validate()?;
        let variant = self.gan_variant();
        variant.validate()?;
        self.gan.validate()?;
        self.schedule.validate(&variant)?;
        if self.eval.is_samples > 0 && (self.eval.is_splits == 0 || self.eval.is_samples % self.eval.is_splits != 0) {
            return Err(Error::Config("is_samples must be a positive multiple of is_splits".into()));
        }
        Ok(())
    }

    /// The config with every optional value made explicit, as persisted.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.schedule = c.schedule.resolved(&c.gan_variant());
        if c.split.unlabeled_size.is_none() {
            if let DatasetConfig::Synthetic(s) = &c.dataset {
                c.split.unlabeled_size = Some(s.n_per_class * (s.k + 1));
            }
        }
        if let DatasetConfig::Synthetic(s) = &mut c.dataset {
            s.n_test_per_class.get_or_insert(s.n_per_class);
        }
        c
    }
}

/// Recursively overlays `user` onto `base`. Objects merge key by key, except
/// that tagged enums switching variant are replaced whole.
pub fn deep_merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            let kind_changed = matches!((b.get("kind"), u.get("kind")), (Some(x), Some(y)) if x != y);
            let variant_changed = b.len() == 1
                && u.len() == 1
                && b.keys().next() != u.keys().next()
                && u.values().all(Value::is_object);
            if kind_changed || variant_changed {
                *b = u;
                return;
            }
            for (key, value) in u {
                match b.get_mut(&key) {
                    Some(slot) => deep_merge(slot, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub data_root: Option<PathBuf>,
    /// Continue from the latest checkpoint in the output directory.
    pub resume: bool,
}

#[derive(Debug)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub history: Vec<MetricRow>,
    pub pretrain_log: Vec<PuEpochLog>,
}

/// Builds the PU split and both reference classifiers for a config.
pub fn prepare_data(
    config: &ExperimentConfig,
    data_root: Option<&Path>,
) -> Result<(PUDataset, Option<OracleClassifier>, Option<OracleClassifier>)> {
    let (base, analytic) = config.dataset.load(data_root)?;
    let data = make_pu_split(&base, &config.split)?;
    data.validate()?;
    if let Some(o) = analytic {
        return Ok((data, Some(o), None));
    }
    let label_oracle = match &config.oracle.label_oracle {
        Some(oc) => {
            let relabeled = relabel_for_split(&base, &config.split.positive_classes)?;
            Some(cached_oracle(config, "label", &relabeled, oc)?)
        }
        None => None,
    };
    let is_classifier = match &config.oracle.is_classifier {
        Some(oc) if config.eval.is_samples > 0 => Some(cached_oracle(config, "is", &base, oc)?),
        _ => None,
    };
    Ok((data, label_oracle, is_classifier))
}

fn cached_oracle(
    config: &ExperimentConfig,
    role: &str,
    data: &LabeledDataset,
    oc: &OracleTrainConfig,
) -> Result<OracleClassifier> {
    let path = config.oracle.cache_dir.as_ref().map(|dir| {
        let classes: Vec<String> = config.split.positive_classes.iter().map(|c| c.to_string()).collect();
        let tag = if role == "label" { classes.join("-") } else { "all".into() };
        dir.join(format!("{}_{role}_{tag}_seed{}.json", config.dataset.name(), oc.seed))
    });
    if let Some(p) = path.as_ref().filter(|p| p.is_file()) {
        let text = std::fs::read_to_string(p)?;
        let oracle: OracleClassifier =
            serde_json::from_str(&text).map_err(|e| Error::load(p, e.to_string()))?;
        if oracle.num_classes() == data.num_classes {
            return Ok(oracle);
        }
        log::warn!("ignoring cached oracle {} with the wrong class count", p.display());
    }
    let oracle = train_oracle_classifier(data, oc)?;
    if let Some(p) = path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&p, serde_json::to_string(&oracle)?)?;
    }
    Ok(oracle)
}

/// Runs one experiment into `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let resolved = config.resolved();
    let dir = RunDir::create(&config.output_dir)?;
    std::fs::write(dir.root.join("config.json"), serde_json::to_string_pretty(&resolved)?)?;

    let (data, oracle, is_classifier) = prepare_data(config, options.data_root.as_deref())?;
    let variant = config.gan_variant();
    let trainer = Trainer::new(
        &data,
        variant,
        resolved.schedule.clone(),
        config.gan.clone(),
        config.eval.clone(),
    )?
    .with_oracle(oracle.as_ref())
    .with_is_classifier(is_classifier.as_ref())
    .with_run_dir(Some(dir.clone()));

    let resume_from = if options.resume { dir.latest_checkpoint() } else { None };
    let (mut state, pretrain_log) = match resume_from {
        Some(round) => {
            log::info!("resuming from round {round}");
            (load_checkpoint(&dir.checkpoint_dir(round))?, Vec::new())
        }
        None => {
            let init = ScoreFunction::new(config.classifier.arch.clone(), config.classifier.pretrain.seed);
            let outcome = pretrain_pu(&data, init, &config.classifier.pretrain)?;
            std::fs::write(dir.root.join("pu_log.csv"), pu_log_csv(&outcome.log))?;
            if let Some(step) = outcome.diverged_at {
                log::warn!("PU pretraining diverged at step {step}; kept the last finite parameters");
            }
            let state = trainer.init_state(outcome.classifier, config.classifier.pretrain.risk.optimizer)?;
            (state, outcome.log)
        }
    };
    trainer.joint_optimize(&mut state)?;
    Ok(RunSummary {
        run_dir: dir.root,
        history: state.history,
        pretrain_log,
    })
}

/// Deterministic per-stream seeds for a single base seed; a convenience for
/// configs and tests that vary one number.
pub fn seeds_for(base: u64) -> Seeds {
    Seeds::derived(base)
}
