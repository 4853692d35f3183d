//! Alternating optimization: GAN rounds with confusion-matrix tracking, a PU
//! augmentation step after each round, per-round evaluation and checkpoints.
//!
//! Every stochastic choice draws from one of several independent streams
//! (data indices, latent codes and labels, label corruption, penalty
//! interpolation, augmentation), so that switching a feature off never shifts
//! the draws of another.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, Var};
use crate::cgan::{
    build_variant, d_step_loss, g_step_loss, AuxState, Corruption, DBatch, GBatch, GStepInputs, GanConfig,
    GanNetworks, GanVariant, LabelSource, VariantName,
};
use crate::datasets::{FeatureShape, Label, PUDataset, OracleClassifier};
use crate::error::{Error, Result};
use crate::metrics::{generator_label_accuracy, inception_score, pu_accuracy, MetricContext};
use crate::noise::{delta_from_predictions, ConfusionMatrix, TransitionMatrix};
use crate::nn::{Optimizer, OptimizerConfig};
use crate::pu::{cross_entropy_var, ClassifierCheckpoint, ScoreFunction};

/// Seeds of the independent random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Network initialization.
    pub init: u64,
    /// Real-minibatch indices.
    pub data: u64,
    /// Latent codes and intended labels of the GAN steps.
    pub latent: u64,
    pub corruption: u64,
    pub gradient_penalty: u64,
    pub augment: u64,
    /// Base of the per-round evaluation streams.
    pub eval: u64,
}

impl Seeds {
    pub fn derived(base: u64) -> Self {
        let s = |i: u64| base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i);
        Seeds {
            init: s(1),
            data: s(2),
            latent: s(3),
            corruption: s(4),
            gradient_penalty: s(5),
            augment: s(6),
            eval: s(7),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub window: usize,
    /// Minimum range of test accuracy, in percentage points, over the window.
    pub min_delta_points: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSchedule {
    /// `M`.
    pub batch_size: usize,
    /// `L`.
    pub inner_steps: usize,
    /// `L0`: confusion updates run at inner steps `l >= L0` (1-based).
    pub warmup: usize,
    pub outer_rounds: usize,
    /// PU augmentation steps after each GAN round. Defaults to 1 for variants
    /// that generate the negative class and 0 otherwise.
    pub aug_steps_per_round: Option<usize>,
    /// Keep the confusion matrix at the identity.
    pub freeze_confusion: bool,
    pub early_stop: Option<EarlyStop>,
    pub seeds: Seeds,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            batch_size: 64,
            inner_steps: 200,
            warmup: 5,
            outer_rounds: 50,
            aug_steps_per_round: None,
            freeze_confusion: false,
            early_stop: Some(EarlyStop {
                window: 5,
                min_delta_points: 0.1,
            }),
            seeds: Seeds::derived(0),
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self, variant: &GanVariant) -> Result<()> {
        if self.batch_size == 0 || self.inner_steps == 0 || self.warmup == 0 {
            return Err(Error::Config("batch_size, inner_steps and warmup must be positive".into()));
        }
        if self.warmup > self.inner_steps {
            log::warn!(
                "warmup {} exceeds inner_steps {}; the confusion matrix will stay at the identity",
                self.warmup,
                self.inner_steps
            );
        }
        if let Some(n) = self.aug_steps_per_round {
            if n > 0 && !variant.can_augment() {
                return Err(Error::Config(format!(
                    "{} generates only positive classes and cannot augment the classifier",
                    variant.name
                )));
            }
        }
        if let Some(es) = &self.early_stop {
            if es.window == 0 || !(es.min_delta_points >= 0.0) {
                return Err(Error::Config("early_stop needs a positive window and min_delta_points >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn aug_steps(&self, variant: &GanVariant) -> usize {
        self.aug_steps_per_round
            .unwrap_or(if variant.can_augment() { 1 } else { 0 })
    }

    /// Copy with every optional field made explicit.
    pub fn resolved(&self, variant: &GanVariant) -> Self {
        TrainingSchedule {
            aug_steps_per_round: Some(self.aug_steps(variant)),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Generated samples per class for the oracle transition matrix.
    pub n_per_class: usize,
    /// Generated samples for the inception score; 0 skips it.
    pub is_samples: usize,
    pub is_splits: usize,
    /// Samples per class row in the per-round sample grid; 0 skips it.
    pub grid_columns: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_per_class: 1000,
            is_samples: 10_000,
            is_splits: 10,
            grid_columns: 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RngStreams {
    pub data: ChaCha8Rng,
    pub latent: ChaCha8Rng,
    pub corruption: ChaCha8Rng,
    pub gradient_penalty: ChaCha8Rng,
    pub augment: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seeds: &Seeds) -> Self {
        RngStreams {
            data: ChaCha8Rng::seed_from_u64(seeds.data),
            latent: ChaCha8Rng::seed_from_u64(seeds.latent),
            corruption: ChaCha8Rng::seed_from_u64(seeds.corruption),
            gradient_penalty: ChaCha8Rng::seed_from_u64(seeds.gradient_penalty),
            augment: ChaCha8Rng::seed_from_u64(seeds.augment),
        }
    }
}

/// One row of `metrics.csv`. Missing metrics are left blank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub outer_round: usize,
    pub variant: String,
    pub pu_test_acc: f64,
    pub gen_label_acc: Option<f64>,
    pub trace_mean: Option<f64>,
    pub is_mean: Option<f64>,
    pub is_std: Option<f64>,
    pub wallclock: f64,
}

pub const METRICS_HEADER: &str = "outer_round,variant,pu_test_acc,gen_label_acc,trace_mean,is_mean,is_std,wallclock";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3}\n",
            r.outer_round,
            r.variant,
            r.pu_test_acc,
            opt_cell(r.gen_label_acc),
            opt_cell(r.trace_mean),
            opt_cell(r.is_mean),
            opt_cell(r.is_std),
            r.wallclock
        ));
    }
    s
}

/// Losses of one inner GAN step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub d_objective: f64,
    pub d_penalty: f64,
    pub g_adversarial: f64,
    pub aux_surrogate: Option<f64>,
    pub aux_hard: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainEvent {
    DiscriminatorStep { step: u64 },
    GeneratorStep { step: u64 },
    ConfusionUpdate { step: u64 },
}

/// Everything that evolves during joint optimization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunState {
    pub classifier: ScoreFunction,
    pub classifier_opt: Optimizer,
    pub gan: GanNetworks,
    pub g_opt: Optimizer,
    pub d_opt: Optimizer,
    /// RCGAN-U's matrix optimizer; same configuration as the generator's.
    pub m_opt: Option<Optimizer>,
    pub confusion: ConfusionMatrix,
    pub aux: AuxState,
    pub rngs: RngStreams,
    pub outer_round: usize,
    pub gan_step: u64,
    pub history: Vec<MetricRow>,
    pub losses: Vec<StepRecord>,
    /// Oracle transition matrix of the latest evaluation.
    pub last_pg: Option<TransitionMatrix>,
}

pub struct Trainer<'a> {
    pub data: &'a PUDataset,
    pub variant: GanVariant,
    pub schedule: TrainingSchedule,
    pub gan_config: GanConfig,
    pub eval: EvalConfig,
    /// Reference classifier for generator label accuracy and `P^g`.
    pub oracle: Option<&'a OracleClassifier>,
    /// Classifier whose posteriors feed the inception score.
    pub is_classifier: Option<&'a OracleClassifier>,
    pub run_dir: Option<RunDir>,
    pool: Array2<f64>,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(
        data: &'a PUDataset,
        variant: GanVariant,
        schedule: TrainingSchedule,
        gan_config: GanConfig,
        eval: EvalConfig,
    ) -> Result<Self> {
        variant.validate()?;
        gan_config.validate()?;
        schedule.validate(&variant)?;
        let pool = match variant.label_source {
            LabelSource::TruePositiveLabels => data.positives.features.clone(),
            LabelSource::PuPredictedLabels => data.all_features(),
        };
        if pool.nrows() == 0 {
            return Err(Error::Argument("empty training pool".into()));
        }
        Ok(Trainer {
            data,
            variant,
            schedule,
            gan_config,
            eval,
            oracle: None,
            is_classifier: None,
            run_dir: None,
            pool,
            started: Instant::now(),
        })
    }

    pub fn with_oracle(mut self, oracle: Option<&'a OracleClassifier>) -> Self {
        self.oracle = oracle;
        self
    }

    pub fn with_is_classifier(mut self, classifier: Option<&'a OracleClassifier>) -> Self {
        self.is_classifier = classifier;
        self
    }

    pub fn with_run_dir(mut self, dir: Option<RunDir>) -> Self {
        self.run_dir = dir;
        self
    }

    pub fn classes(&self) -> usize {
        self.variant.generated_classes(self.data.k)
    }

    /// Fresh state around a pretrained classifier.
    pub fn init_state(&self, classifier: ScoreFunction, classifier_opt: OptimizerConfig) -> Result<RunState> {
        if classifier.num_classes() != self.data.num_classes() {
            return Err(Error::Argument("classifier does not cover the split's classes".into()));
        }
        let gan = build_variant(
            &self.variant,
            &self.data.shape,
            self.data.k,
            &self.gan_config,
            self.schedule.seeds.init,
        )?;
        let classes = gan.classes();
        let m_opt = gan
            .learnable_confusion
            .as_ref()
            .map(|_| Optimizer::new(self.gan_config.generator_optimizer));
        Ok(RunState {
            classifier,
            classifier_opt: Optimizer::new(classifier_opt),
            gan,
            g_opt: Optimizer::new(self.gan_config.generator_optimizer),
            d_opt: Optimizer::new(self.gan_config.discriminator_optimizer),
            m_opt,
            confusion: ConfusionMatrix::identity(classes, self.gan_config.lambda)?,
            aux: AuxState::new(classes, self.gan_config.lambda),
            rngs: RngStreams::new(&self.schedule.seeds),
            outer_round: 0,
            gan_step: 0,
            history: Vec::new(),
            losses: Vec::new(),
            last_pg: None,
        })
    }

    /// Labels paired with the real pool: true labels of the positives, or
    /// the classifier's hard predictions on all training data.
    fn pool_labels(&self, st: &RunState) -> Vec<Label> {
        match self.variant.label_source {
            LabelSource::TruePositiveLabels => self.data.positives.labels.clone(),
            LabelSource::PuPredictedLabels => st.classifier.predict(&self.pool),
        }
    }

    fn uniform_labels(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<Label> {
        let classes = self.classes();
        (0..n).map(|_| rng.random_range(0..classes)).collect()
    }

    /// `L` iterations of: discriminator step, generator step, and from step
    /// `L0` on a confusion-matrix update. The classifier stays frozen.
    pub fn run_inner_gan_loop(&self, st: &mut RunState) -> Result<Vec<TrainEvent>> {
        let labels = self.pool_labels(st);
        let m = self.schedule.batch_size;
        let phi = self.gan_config.phi;
        let mut events = Vec::with_capacity(3 * self.schedule.inner_steps);
        for l in 1..=self.schedule.inner_steps {
            st.gan_step += 1;
            let step = st.gan_step;
            let nonfinite = |stage: &str| Error::NonFinite {
                stage: stage.into(),
                step,
            };

            // Discriminator.
            let idx: Vec<usize> = (0..m).map(|_| st.rngs.data.random_range(0..self.pool.nrows())).collect();
            let z = st.gan.generator.sample_latent(&mut st.rngs.latent, m);
            let y = self.uniform_labels(&mut st.rngs.latent, m);
            let fake_labels = st.gan.fake_label_rows(&y, &st.confusion, None, &mut st.rngs.corruption);
            let gp_eps: Vec<f64> = if phi.uses_gradient_penalty() {
                (0..m).map(|_| st.rngs.gradient_penalty.random::<f64>()).collect()
            } else {
                Vec::new()
            };
            let batch = DBatch {
                real_x: self.pool.select(Axis(0), &idx),
                real_labels: idx.iter().map(|&i| labels[i]).collect(),
                z,
                y,
                fake_labels,
                gp_eps,
            };
            let d_params = st.gan.discriminator.params.bind();
            let d_loss = d_step_loss(&st.gan, &d_params, &batch, phi, self.gan_config.gp_coefficient)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => nonfinite("discriminator"),
                    other => other,
                })?;
            let d_grads = values(grad(&d_loss.target, &d_params, false));
            st.d_opt.step(&mut st.gan.discriminator.params, &d_grads);
            if !st.gan.discriminator.params.all_finite() {
                return Err(nonfinite("discriminator"));
            }
            events.push(TrainEvent::DiscriminatorStep { step });

            // Generator.
            let z = st.gan.generator.sample_latent(&mut st.rngs.latent, m);
            let y = self.uniform_labels(&mut st.rngs.latent, m);
            let g_params = st.gan.generator.params.bind();
            let d_frozen = st.gan.discriminator.params.freeze();
            let m_params = st.gan.learnable_confusion.as_ref().map(|lc| lc.params.bind());
            let fake_labels =
                st.gan
                    .fake_label_rows(&y, &st.confusion, m_params.as_deref(), &mut st.rngs.corruption);
            let batch = GBatch {
                z: z.clone(),
                y: y.clone(),
                fake_labels,
            };
            let inputs = GStepInputs {
                g_params: &g_params,
                d_params: &d_frozen,
                classifier: &st.classifier,
                phi,
                beta: self.gan_config.beta,
                kappa: self.gan_config.kappa,
                aux_state: &st.aux,
            };
            let g_loss = g_step_loss(&st.gan, &inputs, &batch).map_err(|e| match e {
                Error::NonFinite { .. } => nonfinite("generator"),
                other => other,
            })?;
            let mut wrt = g_params.clone();
            if let Some(mp) = &m_params {
                wrt.extend(mp.iter().cloned());
            }
            let mut grads = values(grad(&g_loss.target, &wrt, false));
            let m_grads = grads.split_off(g_params.len());
            st.g_opt.step(&mut st.gan.generator.params, &grads);
            if let (Some(lc), Some(opt)) = (st.gan.learnable_confusion.as_mut(), st.m_opt.as_mut()) {
                opt.step(&mut lc.params, &m_grads);
            }
            if !st.gan.generator.params.all_finite() {
                return Err(nonfinite("generator"));
            }
            if let Some(aux) = &g_loss.aux {
                st.aux.observe(&y, aux);
            }
            st.losses.push(StepRecord {
                step,
                d_objective: d_loss.objective,
                d_penalty: d_loss.penalty,
                g_adversarial: g_loss.adversarial,
                aux_surrogate: g_loss.aux.as_ref().map(|a| a.value),
                aux_hard: g_loss.aux.as_ref().map(|a| a.hard_value),
            });
            events.push(TrainEvent::GeneratorStep { step });

            // Confusion matrix, on this step's (z, y) with the updated G.
            if l >= self.schedule.warmup
                && self.variant.corruption == Corruption::EmaMatrix
                && !self.schedule.freeze_confusion
            {
                let x = st.gan.generator.generate(&z, &y);
                let predicted = st.classifier.predict(&x);
                let delta = delta_from_predictions(&y, &predicted, &st.confusion)?;
                st.confusion = st.confusion.updated(&delta)?;
                events.push(TrainEvent::ConfusionUpdate { step });
            }
        }
        Ok(events)
    }

    /// Descends the classifier's cross-entropy on generated samples against
    /// their intended labels. Returns the pre-step losses.
    pub fn augment_pu(&self, st: &mut RunState) -> Result<Vec<f64>> {
        let steps = self.schedule.aug_steps(&self.variant);
        let mut out = Vec::with_capacity(steps);
        if steps == 0 {
            return Ok(out);
        }
        if !self.variant.can_augment() {
            return Err(Error::Config(format!("{} cannot augment the classifier", self.variant.name)));
        }
        let m = self.schedule.batch_size;
        for _ in 0..steps {
            let z = st.gan.generator.sample_latent(&mut st.rngs.augment, m);
            let y = self.uniform_labels(&mut st.rngs.augment, m);
            let x = st.gan.generator.generate(&z, &y);
            let bound = st.classifier.params.bind();
            let ce = cross_entropy_var(&st.classifier.forward(&bound, &Var::constant(x)), &y);
            if !ce.item().is_finite() {
                return Err(Error::NonFinite {
                    stage: "augmentation".into(),
                    step: st.gan_step,
                });
            }
            out.push(ce.item());
            let grads = values(grad(&ce, &bound, false));
            st.classifier_opt.step(&mut st.classifier.params, &grads);
        }
        Ok(out)
    }

    fn eval_rng(&self, round: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(
            self.schedule
                .seeds
                .eval
                .wrapping_add((round as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)),
        )
    }

    /// Metrics of the current state; a pure function of the state and round.
    pub fn evaluate(&self, st: &RunState, round: usize) -> Result<(MetricRow, Option<TransitionMatrix>)> {
        let ctx = MetricContext {
            round,
            variant: self.variant.name.to_string(),
            dataset: self.data.name.clone(),
            positive_rate: self.data.positive_rate,
        };
        let pu = pu_accuracy(&st.classifier, &self.data.test, &ctx)?;
        let mut rng = self.eval_rng(round);
        let (gla, pg) = match self.oracle {
            Some(o) if self.eval.n_per_class > 0 => {
                let (rec, pg) = generator_label_accuracy(&st.gan.generator, o, self.eval.n_per_class, &mut rng, &ctx)?;
                (Some(rec.value), Some(pg))
            }
            _ => (None, None),
        };
        let (is_mean, is_std) = match self.is_classifier {
            Some(c) if self.eval.is_samples > 0 => {
                let rec = inception_score(
                    &st.gan.generator,
                    c,
                    self.eval.is_samples,
                    self.eval.is_splits,
                    &mut rng,
                    &ctx,
                )?;
                (Some(rec.value), Some(rec.dispersion))
            }
            _ => (None, None),
        };
        let row = MetricRow {
            outer_round: round,
            variant: self.variant.name.to_string(),
            pu_test_acc: pu.value,
            gen_label_acc: gla,
            trace_mean: pg.as_ref().map(|p| p.trace_mean()),
            is_mean,
            is_std,
            wallclock: self.started.elapsed().as_secs_f64(),
        };
        Ok((row, pg))
    }

    fn record_round(&self, st: &mut RunState) -> Result<()> {
        let (row, pg) = self.evaluate(st, st.outer_round)?;
        log::info!(
            "{} round {}: pu acc {:.4} gen label acc {:?}",
            self.variant.name,
            row.outer_round,
            row.pu_test_acc,
            row.gen_label_acc
        );
        st.history.push(row);
        st.last_pg = pg;
        if let Some(dir) = &self.run_dir {
            dir.write_metrics(&st.history)?;
            dir.save_checkpoint(st)?;
            if self.eval.grid_columns > 0 {
                let mut rng = self.eval_rng(st.outer_round);
                rng.set_stream(1);
                dir.write_samples(st, &self.data.shape, self.eval.grid_columns, &mut rng)?;
            }
        }
        Ok(())
    }

    fn should_stop(&self, history: &[MetricRow]) -> bool {
        let Some(es) = &self.schedule.early_stop else {
            return false;
        };
        let rounds: Vec<f64> = history
            .iter()
            .filter(|r| r.outer_round > 0)
            .map(|r| 100.0 * r.pu_test_acc)
            .collect();
        if rounds.len() < es.window {
            return false;
        }
        let tail = &rounds[rounds.len() - es.window..];
        let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo < es.min_delta_points
    }

    /// Alternates GAN rounds and augmentation until the round budget is spent
    /// or accuracy stops moving. Resumes from `st.outer_round`.
    pub fn joint_optimize(&self, st: &mut RunState) -> Result<()> {
        if st.history.is_empty() {
            self.record_round(st)?;
        }
        while st.outer_round < self.schedule.outer_rounds {
            if let Err(e) = self.run_round(st) {
                return Err(self.abort(e, st.outer_round));
            }
            st.outer_round += 1;
            self.record_round(st)?;
            if self.should_stop(&st.history) {
                log::info!("accuracy settled; stopping after round {}", st.outer_round);
                break;
            }
        }
        Ok(())
    }

    fn run_round(&self, st: &mut RunState) -> Result<()> {
        self.run_inner_gan_loop(st)?;
        self.augment_pu(st)?;
        Ok(())
    }

    fn abort(&self, e: Error, last_round: usize) -> Error {
        let reason = e.to_string();
        log::error!("training aborted: {reason}");
        let checkpoint = self.run_dir.as_ref().map(|d| d.checkpoint_dir(last_round));
        if let Some(d) = &self.run_dir {
            let _ = d.mark_aborted(&reason, checkpoint.as_deref());
        }
        Error::Aborted { reason, checkpoint }
    }
}

fn values(vars: Vec<Var>) -> Vec<Array2<f64>> {
    vars.into_iter().map(|v| v.value().clone()).collect()
}

pub const RUN_STATE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GanCheckpoint {
    format_version: u32,
    variant: VariantName,
    networks: GanNetworks,
    confusion: ConfusionMatrix,
    gan_step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainerCheckpoint {
    format_version: u32,
    outer_round: usize,
    gan_step: u64,
    classifier_opt: Optimizer,
    g_opt: Optimizer,
    d_opt: Optimizer,
    m_opt: Option<Optimizer>,
    aux: AuxState,
    rngs: RngStreams,
    history: Vec<MetricRow>,
    losses: Vec<StepRecord>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))
}

/// Layout of a run directory:
///
/// ```text
/// config.json  metrics.csv  pu_log.csv
/// checkpoints/round_{n}/{classifier,gan,trainer}.json
/// samples/round_{n}.png (or .csv for vector data)
/// ```
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join("checkpoints"))?;
        std::fs::create_dir_all(root.join("samples"))?;
        Ok(RunDir { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(Error::load(&root, "not a run directory"));
        }
        Ok(RunDir { root })
    }

    pub fn checkpoint_dir(&self, round: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("round_{round}"))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn write_metrics(&self, rows: &[MetricRow]) -> Result<()> {
        std::fs::write(self.metrics_path(), metrics_csv(rows))?;
        Ok(())
    }

    pub fn save_checkpoint(&self, st: &RunState) -> Result<PathBuf> {
        let dir = self.checkpoint_dir(st.outer_round);
        std::fs::create_dir_all(&dir)?;
        write_json(
            &dir.join("classifier.json"),
            &ClassifierCheckpoint::from_classifier(&st.classifier, Some("../../pu_log.csv".into())),
        )?;
        write_json(
            &dir.join("gan.json"),
            &GanCheckpoint {
                format_version: RUN_STATE_VERSION,
                variant: st.gan.variant.name,
                networks: st.gan.clone(),
                confusion: st.confusion.clone(),
                gan_step: st.gan_step,
            },
        )?;
        write_json(
            &dir.join("trainer.json"),
            &TrainerCheckpoint {
                format_version: RUN_STATE_VERSION,
                outer_round: st.outer_round,
                gan_step: st.gan_step,
                classifier_opt: st.classifier_opt.clone(),
                g_opt: st.g_opt.clone(),
                d_opt: st.d_opt.clone(),
                m_opt: st.m_opt.clone(),
                aux: st.aux.clone(),
                rngs: st.rngs.clone(),
                history: st.history.clone(),
                losses: st.losses.clone(),
            },
        )?;
        std::fs::write(dir.join("confusion.txt"), st.confusion.to_text())?;
        if let Some(pg) = &st.last_pg {
            if pg.entries.nrows() == pg.entries.ncols() {
                std::fs::write(dir.join("pg.txt"), pg.to_text())?;
            }
        }
        Ok(dir)
    }

    /// Highest round with a complete checkpoint.
    pub fn latest_checkpoint(&self) -> Option<usize> {
        let entries = std::fs::read_dir(self.root.join("checkpoints")).ok()?;
        entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                e.file_name()
                    .to_str()
                    .and_then(|n| n.strip_prefix("round_"))
                    .and_then(|n| n.parse::<usize>().ok())
            })
            .filter(|&r| self.checkpoint_dir(r).join("trainer.json").is_file())
            .max()
    }

    pub fn load_checkpoint(&self, round: usize) -> Result<RunState> {
        load_checkpoint(&self.checkpoint_dir(round))
    }

    pub fn mark_aborted(&self, reason: &str, checkpoint: Option<&Path>) -> Result<()> {
        let body = format!(
            "{reason}\nlast checkpoint: {}\n",
            checkpoint.map(|p| p.display().to_string()).unwrap_or_else(|| "none".into())
        );
        std::fs::write(self.root.join("ABORTED"), body)?;
        Ok(())
    }

    pub fn write_samples<R: Rng + ?Sized>(
        &self,
        st: &RunState,
        shape: &FeatureShape,
        columns: usize,
        rng: &mut R,
    ) -> Result<()> {
        let classes = st.gan.classes();
        let labels: Vec<Label> = (0..classes).flat_map(|c| std::iter::repeat_n(c, columns)).collect();
        let x = st.gan.generator.sample(rng, &labels);
        let stem = self.root.join("samples").join(format!("round_{}", st.outer_round));
        match shape {
            FeatureShape::Image { .. } => {
                // Rows from index K on hold the negative class.
                let k = st.classifier.num_classes() - 1;
                let negative_from = (classes > k).then_some(k);
                crate::report::write_sample_grid(&stem.with_extension("png"), &x, shape, classes, columns, negative_from)?;
                crate::report::write_grid_manifest(&stem.with_extension("json"), classes, columns, negative_from)?;
            }
            FeatureShape::Vector { .. } => {
                let mut s = String::from("label");
                for d in 0..x.ncols() {
                    s.push_str(&format!(",x{d}"));
                }
                s.push('\n');
                for (row, &y) in x.rows().into_iter().zip(&labels) {
                    let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    s.push_str(&format!("{y},{}\n", vals.join(",")));
                }
                std::fs::write(stem.with_extension("csv"), s)?;
            }
        }
        Ok(())
    }
}

/// Rebuilds a run state from `checkpoints/round_{n}/`.
pub fn load_checkpoint(dir: &Path) -> Result<RunState> {
    let classifier = read_json::<ClassifierCheckpoint>(&dir.join("classifier.json"))?.into_classifier()?;
    let gan: GanCheckpoint = read_json(&dir.join("gan.json"))?;
    let tr: TrainerCheckpoint = read_json(&dir.join("trainer.json"))?;
    if gan.format_version != RUN_STATE_VERSION || tr.format_version != RUN_STATE_VERSION {
        return Err(Error::load(dir, "unsupported checkpoint version"));
    }
    if gan.gan_step != tr.gan_step {
        return Err(Error::load(dir, "checkpoint files disagree on the step counter"));
    }
    gan.networks.variant.validate()?;
    Ok(RunState {
        classifier,
        classifier_opt: tr.classifier_opt,
        gan: gan.networks,
        g_opt: tr.g_opt,
        d_opt: tr.d_opt,
        m_opt: tr.m_opt,
        confusion: gan.confusion,
        aux: tr.aux,
        rngs: tr.rngs,
        outer_round: tr.outer_round,
        gan_step: tr.gan_step,
        history: tr.history,
        losses: tr.losses,
        last_pg: None,
    })
}
