//! Conditional generator and discriminator, the adversarial objectives with
//! the auxiliary trace loss, and the four model variants that share them.
//!
//! Labels enter both networks as row vectors of width `classes`: one-hot for
//! hard labels, a confusion-matrix row for RCGAN-U's soft corruption.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, NoGradGuard, Var};
use crate::datasets::{FeatureShape, Label};
use crate::error::{Error, Result};
use crate::noise::{corrupt_label, ConfusionMatrix};
use crate::nn::{argmax_rows, one_hot, Activation, MlpSpec, OptimizerConfig, Params};
use crate::pu::ScoreFunction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantName {
    #[serde(rename = "CGAN-P")]
    CganP,
    #[serde(rename = "CGAN-A")]
    CganA,
    #[serde(rename = "RCGAN-U")]
    RcganU,
    #[serde(rename = "CNI-CGAN")]
    CniCgan,
}

impl VariantName {
    pub const ALL: [VariantName; 4] = [VariantName::CganP, VariantName::CganA, VariantName::RcganU, VariantName::CniCgan];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantName::CganP => "CGAN-P",
            VariantName::CganA => "CGAN-A",
            VariantName::RcganU => "RCGAN-U",
            VariantName::CniCgan => "CNI-CGAN",
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', ' '], "-");
        match norm.as_str() {
            "cgan-p" => Ok(VariantName::CganP),
            "cgan-a" => Ok(VariantName::CganA),
            "rcgan-u" => Ok(VariantName::RcganU),
            "cni-cgan" | "ours" => Ok(VariantName::CniCgan),
            _ => Err(Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    TruePositiveLabels,
    PuPredictedLabels,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    None,
    LearnableMatrix,
    EmaMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassesGenerated {
    K,
    KPlusOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanVariant {
    pub name: VariantName,
    pub label_source: LabelSource,
    pub corruption: Corruption,
    pub classes_generated: ClassesGenerated,
    pub aux_loss_enabled: bool,
}

impl GanVariant {
    pub fn standard(name: VariantName) -> Self {
        use ClassesGenerated::*;
        use Corruption as C;
        use LabelSource::*;
        let (label_source, corruption, classes_generated, aux_loss_enabled) = match name {
            VariantName::CganP => (TruePositiveLabels, C::None, K, false),
            VariantName::CganA => (PuPredictedLabels, C::None, KPlusOne, false),
            VariantName::RcganU => (PuPredictedLabels, C::LearnableMatrix, KPlusOne, false),
            VariantName::CniCgan => (PuPredictedLabels, C::EmaMatrix, KPlusOne, true),
        };
        GanVariant {
            name,
            label_source,
            corruption,
            classes_generated,
            aux_loss_enabled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = GanVariant::standard(self.name);
        if *self != expected {
            return Err(Error::Config(format!(
                "{} requires {expected:?}, got {self:?}",
                self.name
            )));
        }
        Ok(())
    }

    /// Number of labels the generator is conditioned on.
    pub fn generated_classes(&self, k: usize) -> usize {
        match self.classes_generated {
            ClassesGenerated::K => k,
            ClassesGenerated::KPlusOne => k + 1,
        }
    }

    /// Whether the generator emits the negative class and can therefore feed
    /// the `K + 1`-way classifier.
    pub fn can_augment(&self) -> bool {
        self.classes_generated == ClassesGenerated::KPlusOne
    }
}

/// The measuring function of the adversarial objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    /// `phi = log` on a sigmoid-bounded discriminator.
    Probabilistic,
    /// `phi = identity` on an unbounded critic with a gradient penalty.
    #[default]
    WassersteinGp,
}

impl FromStr for PhiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probabilistic" => Ok(PhiKind::Probabilistic),
            "wasserstein_gp" => Ok(PhiKind::WassersteinGp),
            other => Err(Error::Config(format!("unknown measuring function {other:?}"))),
        }
    }
}

impl PhiKind {
    /// `phi(D(x, y))` per row, from raw scores.
    pub fn real_term(&self, scores: &Var) -> Var {
        match self {
            PhiKind::Probabilistic => -&(-scores).softplus(),
            PhiKind::WassersteinGp => scores.clone(),
        }
    }

    /// `phi(1 - D(x, y))` per row, from raw scores.
    pub fn fake_term(&self, scores: &Var) -> Var {
        match self {
            PhiKind::Probabilistic => -&scores.softplus(),
            PhiKind::WassersteinGp => (-scores).add_scalar(1.0),
        }
    }

    pub fn uses_gradient_penalty(&self) -> bool {
        *self == PhiKind::WassersteinGp
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

impl OutputActivation {
    pub fn for_shape(shape: &FeatureShape) -> Self {
        match shape {
            FeatureShape::Image { .. } => OutputActivation::Sigmoid,
            FeatureShape::Vector { .. } => OutputActivation::Identity,
        }
    }

    fn apply(&self, x: Var) -> Var {
        match self {
            OutputActivation::Sigmoid => x.sigmoid(),
            OutputActivation::Identity => x,
        }
    }
}

const GEN_CHUNK: usize = 512;

/// `G(z, y)`: an MLP on the concatenation of the latent code and label row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub latent_dim: usize,
    pub classes: usize,
    pub net: MlpSpec,
    pub output: OutputActivation,
    pub params: Params,
}

impl Generator {
    pub fn output_dim(&self) -> usize {
        self.net.output_dim
    }

    pub fn forward(&self, params: &[Var], z: &Var, labels: &Var) -> Var {
        let input = Var::concat_cols(&[z.clone(), labels.clone()]);
        self.output.apply(self.net.forward(params, &input))
    }

    pub fn sample_latent<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, self.latent_dim), || StandardNormal.sample(rng))
    }

    /// Generated rows for hard labels, without recording a graph.
    pub fn generate(&self, z: &Array2<f64>, labels: &[Label]) -> Array2<f64> {
        assert_eq!(z.nrows(), labels.len());
        let _ng = NoGradGuard::new();
        let params = self.params.freeze();
        let mut out = Array2::zeros((labels.len(), self.output_dim()));
        let mut start = 0;
        while start < labels.len() {
            let end = (start + GEN_CHUNK).min(labels.len());
            let zc = Var::constant(z.slice(ndarray::s![start..end, ..]).to_owned());
            let yc = Var::constant(one_hot(&labels[start..end], self.classes));
            out.slice_mut(ndarray::s![start..end, ..])
                .assign(self.forward(&params, &zc, &yc).value());
            start = end;
        }
        out
    }

    /// Draws fresh latent codes and generates one row per label.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, labels: &[Label]) -> Array2<f64> {
        let z = self.sample_latent(rng, labels.len());
        self.generate(&z, labels)
    }
}

/// `D(x, y)`: raw score per row; instance-normalized hidden layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub classes: usize,
    pub net: MlpSpec,
    pub params: Params,
}

impl Discriminator {
    pub fn forward(&self, params: &[Var], x: &Var, labels: &Var) -> Var {
        let input = Var::concat_cols(&[x.clone(), labels.clone()]);
        self.net.forward(params, &input)
    }
}

/// RCGAN-U's unknown confusion matrix, parameterized row-wise by a softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnableConfusion {
    pub params: Params,
}

impl LearnableConfusion {
    pub fn near_identity(classes: usize, diagonal_logit: f64) -> Self {
        let logits = Array2::from_shape_fn((classes, classes), |(i, j)| if i == j { diagonal_logit } else { 0.0 });
        LearnableConfusion {
            params: Params::new(vec![logits]),
        }
    }

    pub fn matrix_var(&self, params: &[Var]) -> Var {
        params[0].softmax_rows()
    }

    pub fn matrix(&self) -> Array2<f64> {
        let _ng = NoGradGuard::new();
        self.matrix_var(&self.params.freeze()).value().clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub phi: PhiKind,
    pub gp_coefficient: f64,
    pub beta: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub generator_optimizer: OptimizerConfig,
    pub discriminator_optimizer: OptimizerConfig,
    /// Diagonal logit of RCGAN-U's initial matrix; off-diagonals start at 0.
    pub rcgan_diagonal_logit: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            latent_dim: 128,
            generator_hidden: vec![256, 512],
            discriminator_hidden: vec![512, 256],
            phi: PhiKind::WassersteinGp,
            gp_coefficient: 10.0,
            beta: 5.0,
            kappa: 0.75,
            lambda: 0.99,
            generator_optimizer: OptimizerConfig::adam(1e-4),
            discriminator_optimizer: OptimizerConfig::adam(1e-4),
            rcgan_diagonal_logit: 10.0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::Config(format!("kappa must lie in (0, 1), got {}", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.gp_coefficient >= 0.0) {
            return Err(Error::Config("gp_coefficient must be >= 0".into()));
        }
        self.generator_optimizer.validate()?;
        self.discriminator_optimizer.validate()
    }
}

/// Networks of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanNetworks {
    pub variant: GanVariant,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub learnable_confusion: Option<LearnableConfusion>,
}

impl GanNetworks {
    pub fn classes(&self) -> usize {
        self.generator.classes
    }

    /// Label rows shown to the discriminator for generated samples.
    ///
    /// `learnable` carries RCGAN-U's bound matrix parameters; when absent its
    /// current matrix is used as a constant.
    pub fn fake_label_rows<R: Rng + ?Sized>(
        &self,
        y: &[Label],
        confusion: &ConfusionMatrix,
        learnable: Option<&[Var]>,
        rng: &mut R,
    ) -> Var {
        let n = self.classes();
        match self.variant.corruption {
            Corruption::None => Var::constant(one_hot(y, n)),
            Corruption::EmaMatrix => {
                let noisy: Vec<Label> = y.iter().map(|&l| corrupt_label(l, confusion, rng)).collect();
                Var::constant(one_hot(&noisy, n))
            }
            Corruption::LearnableMatrix => {
                let lc = self.learnable_confusion.as_ref().expect("RCGAN-U carries a matrix");
                let m = match learnable {
                    Some(p) => lc.matrix_var(p),
                    None => Var::constant(lc.matrix()),
                };
                Var::constant(one_hot(y, n)).matmul(&m)
            }
        }
    }
}

/// Builds a variant's networks for a feature shape and `k` positive classes.
pub fn build_variant(
    variant: &GanVariant,
    shape: &FeatureShape,
    k: usize,
    config: &GanConfig,
    seed: u64,
) -> Result<GanNetworks> {
    variant.validate()?;
    config.validate()?;
    if k == 0 {
        return Err(Error::Config("need at least one positive class".into()));
    }
    let classes = variant.generated_classes(k);
    let dim = shape.len();
    let generator_net = MlpSpec {
        input_dim: config.latent_dim + classes,
        hidden: config.generator_hidden.clone(),
        output_dim: dim,
        activation: Activation::Relu,
        normalize: false,
    };
    let discriminator_net = MlpSpec {
        input_dim: dim + classes,
        hidden: config.discriminator_hidden.clone(),
        output_dim: 1,
        activation: Activation::LeakyRelu { slope: 0.2 },
        normalize: true,
    };
    let mut g_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let generator = Generator {
        latent_dim: config.latent_dim,
        classes,
        params: generator_net.init(&mut g_rng),
        net: generator_net,
        output: OutputActivation::for_shape(shape),
    };
    let discriminator = Discriminator {
        classes,
        params: discriminator_net.init(&mut d_rng),
        net: discriminator_net,
    };
    let learnable_confusion = (variant.corruption == Corruption::LearnableMatrix)
        .then(|| LearnableConfusion::near_identity(classes, config.rcgan_diagonal_logit));
    Ok(GanNetworks {
        variant: *variant,
        generator,
        discriminator,
        learnable_confusion,
    })
}

/// One discriminator minibatch with every random draw already made.
#[derive(Clone, Debug)]
pub struct DBatch {
    pub real_x: Array2<f64>,
    pub real_labels: Vec<Label>,
    pub z: Array2<f64>,
    pub y: Vec<Label>,
    /// Label rows paired with the generated samples.
    pub fake_labels: Var,
    /// Interpolation weights for the gradient penalty, one per row.
    pub gp_eps: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DStepLoss {
    /// The ascended objective `(1/M) sum [phi(D(x, y_r)) + phi(1 - D(G(z, y), y~))]`.
    pub objective: f64,
    pub penalty: f64,
    /// `-objective + penalty`, to be descended.
    pub target: Var,
}

/// Discriminator objective on a prepared batch. The generator is frozen and
/// its samples enter as constants.
pub fn d_step_loss(
    nets: &GanNetworks,
    d_params: &[Var],
    batch: &DBatch,
    phi: PhiKind,
    gp_coefficient: f64,
) -> Result<DStepLoss> {
    let classes = nets.classes();
    if batch.real_labels.iter().chain(&batch.y).any(|&l| l >= classes) {
        return Err(Error::Argument(format!("label outside 0..{classes}")));
    }
    if batch.real_x.nrows() == 0 || batch.y.is_empty() {
        return Err(Error::Argument("empty discriminator batch".into()));
    }
    let fake_x = nets.generator.generate(&batch.z, &batch.y);
    let fake_labels = batch.fake_labels.detach();
    let real_labels = one_hot(&batch.real_labels, classes);
    let d = &nets.discriminator;
    let s_real = d.forward(d_params, &Var::constant(batch.real_x.clone()), &Var::constant(real_labels.clone()));
    let s_fake = d.forward(d_params, &Var::constant(fake_x.clone()), &fake_labels);
    let objective = &phi.real_term(&s_real).mean_all() + &phi.fake_term(&s_fake).mean_all();
    let penalty = if phi.uses_gradient_penalty() && gp_coefficient > 0.0 {
        if batch.gp_eps.len() != batch.real_x.nrows() || fake_x.nrows() != batch.real_x.nrows() {
            return Err(Error::Argument("gradient penalty needs equal real and fake batch sizes".into()));
        }
        let eps = Array2::from_shape_vec((batch.gp_eps.len(), 1), batch.gp_eps.clone()).expect("column");
        let x_hat = &batch.real_x * &eps + &fake_x * &eps.mapv(|e| 1.0 - e);
        let y_hat = &real_labels * &eps + fake_labels.value() * &eps.mapv(|e| 1.0 - e);
        gradient_penalty(d, d_params, &x_hat, &y_hat).scale(gp_coefficient)
    } else {
        Var::scalar(0.0)
    };
    let target = &(-&objective) + &penalty;
    if !target.item().is_finite() {
        return Err(Error::NonFinite {
            stage: "discriminator".into(),
            step: 0,
        });
    }
    Ok(DStepLoss {
        objective: objective.item(),
        penalty: penalty.item(),
        target,
    })
}

/// `mean_i (||grad_x D(x_i, y_i)|| - 1)^2`, differentiable in the
/// discriminator parameters. Labels are held fixed.
pub fn gradient_penalty(d: &Discriminator, d_params: &[Var], x: &Array2<f64>, y: &Array2<f64>) -> Var {
    let x_var = Var::leaf(x.clone());
    let scores = d.forward(d_params, &x_var, &Var::constant(y.clone()));
    let gx = grad(&scores.sum_all(), std::slice::from_ref(&x_var), true).remove(0);
    let norms = gx.square().sum_rows().add_scalar(1e-12).sqrt();
    norms.add_scalar(-1.0).square().mean_all()
}

/// Running per-class agreement rates standing in for classes absent from an
/// auxiliary-loss batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxState {
    pub rates: Vec<f64>,
    pub lambda: f64,
}

impl AuxState {
    pub fn new(classes: usize, lambda: f64) -> Self {
        AuxState {
            rates: vec![0.0; classes],
            lambda,
        }
    }
}

/// `max(kappa - mean_i a_i, 0)`.
pub fn hinge(kappa: f64, rates: &[f64]) -> f64 {
    (kappa - rates.iter().sum::<f64>() / rates.len() as f64).max(0.0)
}

#[derive(Clone, Debug)]
pub struct AuxOutput {
    /// Hinge on softmax-probability agreement; the differentiated quantity.
    pub value: f64,
    /// Hinge on hard argmax agreement, for logging.
    pub hard_value: f64,
    /// Per-class surrogate agreement used in the hinge (batch or running).
    pub soft_rates: Vec<f64>,
    pub hard_rates: Vec<f64>,
    pub objective: Var,
}

/// Auxiliary trace loss from the classifier's scores on generated samples.
/// `scores` must depend on the generator parameters for the gradient to
/// reach them.
pub fn auxiliary_loss(scores: &Var, y: &[Label], kappa: f64, state: &AuxState) -> Result<AuxOutput> {
    let (n, classes) = scores.shape();
    if n != y.len() || n == 0 {
        return Err(Error::Argument("auxiliary loss needs one label per generated row".into()));
    }
    if state.rates.len() != classes || y.iter().any(|&l| l >= classes) {
        return Err(Error::Argument("auxiliary loss label alphabet mismatch".into()));
    }
    let mut counts = vec![0usize; classes];
    for &l in y {
        counts[l] += 1;
    }
    // weights[m, i] = 1 / |{y = i}| for y_m = i, so that picked^T weights
    // gives per-class mean agreement.
    let weights = Array2::from_shape_fn((n, classes), |(m, i)| {
        if y[m] == i {
            1.0 / counts[i] as f64
        } else {
            0.0
        }
    });
    let probs = scores.softmax_rows();
    let picked = (&probs * &Var::constant(one_hot(y, classes))).sum_rows();
    let per_class = picked.t().matmul(&Var::constant(weights.clone()));
    let missing = Array2::from_shape_fn((1, classes), |(_, i)| if counts[i] == 0 { state.rates[i] } else { 0.0 });
    let rates = &per_class + &Var::constant(missing);
    let mean_rate = rates.sum_all().scale(1.0 / classes as f64);
    let shortfall = (-&mean_rate).add_scalar(kappa);
    let value = shortfall.item().max(0.0);
    let objective = if shortfall.item() > 0.0 { shortfall } else { Var::scalar(0.0) };

    let pred = argmax_rows(scores.value());
    let mut hard_rates = state.rates.clone();
    let mut hits = vec![0usize; classes];
    for (m, &l) in y.iter().enumerate() {
        hits[l] += usize::from(pred[m] == l);
    }
    for i in 0..classes {
        if counts[i] > 0 {
            hard_rates[i] = hits[i] as f64 / counts[i] as f64;
        }
    }
    Ok(AuxOutput {
        value,
        hard_value: hinge(kappa, &hard_rates),
        soft_rates: rates.value().row(0).to_vec(),
        hard_rates,
        objective,
    })
}

impl AuxState {
    /// Folds this batch's per-class surrogate rates into the running values.
    pub fn observe(&mut self, y: &[Label], out: &AuxOutput) {
        let present: Vec<bool> = (0..self.rates.len()).map(|i| y.contains(&i)).collect();
        for (i, seen) in present.into_iter().enumerate() {
            if seen {
                self.rates[i] = self.lambda * self.rates[i] + (1.0 - self.lambda) * out.soft_rates[i];
            }
        }
    }
}

/// One generator minibatch with every random draw already made.
#[derive(Clone, Debug)]
pub struct GBatch {
    pub z: Array2<f64>,
    pub y: Vec<Label>,
    /// Label rows paired with the generated samples; may depend on RCGAN-U's
    /// bound matrix parameters.
    pub fake_labels: Var,
}

#[derive(Clone, Debug)]
pub struct GStepLoss {
    /// `(1/M) sum phi(1 - D(G(z, y), y~))`.
    pub adversarial: f64,
    pub aux: Option<AuxOutput>,
    /// `adversarial + beta * aux`, to be descended.
    pub target: Var,
}

pub struct GStepInputs<'a> {
    pub g_params: &'a [Var],
    pub d_params: &'a [Var],
    pub classifier: &'a ScoreFunction,
    pub phi: PhiKind,
    pub beta: f64,
    pub kappa: f64,
    pub aux_state: &'a AuxState,
}

/// Generator objective on a prepared batch. Discriminator and classifier
/// parameters are expected frozen.
pub fn g_step_loss(nets: &GanNetworks, inputs: &GStepInputs<'_>, batch: &GBatch) -> Result<GStepLoss> {
    let classes = nets.classes();
    if batch.y.is_empty() || batch.z.nrows() != batch.y.len() {
        return Err(Error::Argument("generator batch must be non-empty and matched".into()));
    }
    if batch.y.iter().any(|&l| l >= classes) {
        return Err(Error::Argument(format!("label outside 0..{classes}")));
    }
    let g = &nets.generator;
    let x_g = g.forward(
        inputs.g_params,
        &Var::constant(batch.z.clone()),
        &Var::constant(one_hot(&batch.y, classes)),
    );
    let s_fake = nets.discriminator.forward(inputs.d_params, &x_g, &batch.fake_labels);
    let adversarial = inputs.phi.fake_term(&s_fake).mean_all();
    let use_aux = nets.variant.aux_loss_enabled && inputs.beta > 0.0;
    let (target, aux) = if use_aux {
        if inputs.classifier.num_classes() != classes {
            return Err(Error::Argument("auxiliary loss needs a classifier over the generated classes".into()));
        }
        let frozen = inputs.classifier.params.freeze();
        let scores = inputs.classifier.forward(&frozen, &x_g);
        let out = auxiliary_loss(&scores, &batch.y, inputs.kappa, inputs.aux_state)?;
        (&adversarial + &out.objective.scale(inputs.beta), Some(out))
    } else {
        (adversarial.clone(), None)
    };
    if !target.item().is_finite() {
        return Err(Error::NonFinite {
            stage: "generator".into(),
            step: 0,
        });
    }
    Ok(GStepLoss {
        adversarial: adversarial.item(),
        aux,
        target,
    })
}
