//! Evaluation metrics. This module alone may read the hidden labels of the
//! unlabeled pool and train classifiers on full supervision.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::grad;
use crate::cgan::Generator;
use crate::datasets::{Label, LabeledDataset, LabeledSet, OracleClassifier, PUDataset};
use crate::error::{Error, Result};
use crate::noise::{estimate_pg, TransitionMatrix};
use crate::nn::{Architecture, Optimizer, OptimizerConfig};
use crate::pu::{cross_entropy_var, ScoreFunction};

/// Capability token for reading hidden unlabeled labels. Only this module can
/// construct one.
#[derive(Debug)]
pub struct EvalAccess(());

fn eval_access() -> EvalAccess {
    EvalAccess(())
}

/// Where a metric value was measured.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricContext {
    pub round: usize,
    pub variant: String,
    pub dataset: String,
    pub positive_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    pub value: f64,
    /// Standard deviation or standard error, depending on the metric.
    pub dispersion: f64,
    pub sample_count: usize,
    pub round: usize,
    pub variant: String,
    pub dataset: String,
    pub positive_rate: f64,
}

impl MetricRecord {
    fn new(name: &str, value: f64, dispersion: f64, sample_count: usize, ctx: &MetricContext) -> Self {
        MetricRecord {
            name: name.into(),
            value,
            dispersion: dispersion.max(0.0),
            sample_count: sample_count.max(1),
            round: ctx.round,
            variant: ctx.variant.clone(),
            dataset: ctx.dataset.clone(),
            positive_rate: ctx.positive_rate,
        }
    }
}

/// Oracle agreement with the intended label, averaged uniformly over the
/// generator's classes; the trace mean of the returned `P^g` estimate.
pub fn generator_label_accuracy<R: Rng + ?Sized>(
    generator: &Generator,
    oracle: &OracleClassifier,
    n_per_class: usize,
    rng: &mut R,
    ctx: &MetricContext,
) -> Result<(MetricRecord, TransitionMatrix)> {
    let pg = estimate_pg(|labels| generator.sample(rng, labels), oracle, generator.classes, n_per_class)?;
    let classes = pg.classes();
    let var: f64 = (0..classes)
        .map(|i| pg.std_errors[[i, i]].powi(2))
        .sum::<f64>()
        / (classes * classes) as f64;
    let record = MetricRecord::new(
        "gen_label_acc",
        pg.trace_mean(),
        var.sqrt(),
        classes * n_per_class,
        ctx,
    );
    Ok((record, pg))
}

/// Hard-argmax accuracy on a labeled split, with its binomial standard error.
pub fn pu_accuracy(f: &ScoreFunction, test: &LabeledSet, ctx: &MetricContext) -> Result<MetricRecord> {
    if test.is_empty() {
        return Err(Error::Argument("empty test split".into()));
    }
    let acc = f.accuracy(&test.features, &test.labels);
    let se = (acc * (1.0 - acc) / test.len() as f64).sqrt();
    Ok(MetricRecord::new("pu_test_acc", acc, se, test.len(), ctx))
}

/// `exp(E_x KL(p(y|x) || p(y)))` per split; returns mean and standard
/// deviation across splits.
pub fn inception_score_from_probabilities(probs: &Array2<f64>, splits: usize) -> Result<(f64, f64)> {
    let n = probs.nrows();
    if splits == 0 || n == 0 || n % splits != 0 {
        return Err(Error::Argument(format!("{n} samples cannot form {splits} equal splits")));
    }
    let size = n / splits;
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let part = probs.slice(ndarray::s![s * size..(s + 1) * size, ..]);
        let marginal = part.mean_axis(Axis(0)).expect("non-empty split");
        let mut kl_sum = 0.0;
        for row in part.rows() {
            for (p, q) in row.iter().zip(marginal.iter()) {
                if *p > 0.0 {
                    kl_sum += p * (p / q).ln();
                }
            }
        }
        scores.push((kl_sum / size as f64).max(0.0).exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

/// Inception score of `n_samples` generated rows with labels drawn uniformly
/// over the generator's classes, scored by the evaluation classifier.
pub fn inception_score<R: Rng + ?Sized>(
    generator: &Generator,
    eval_classifier: &OracleClassifier,
    n_samples: usize,
    splits: usize,
    rng: &mut R,
    ctx: &MetricContext,
) -> Result<MetricRecord> {
    if splits == 0 || n_samples == 0 || n_samples % splits != 0 {
        return Err(Error::Argument(format!("{n_samples} samples cannot form {splits} equal splits")));
    }
    let labels: Vec<Label> = (0..n_samples).map(|_| rng.random_range(0..generator.classes)).collect();
    let x = generator.sample(rng, &labels);
    let (mean, std) = inception_score_from_probabilities(&eval_classifier.probabilities(&x), splits)?;
    Ok(MetricRecord::new("inception_score", mean, std, n_samples, ctx))
}

/// Realized label proportions of the unlabeled pool.
pub fn unlabeled_composition(data: &PUDataset) -> Vec<f64> {
    let token = eval_access();
    let labels = data.unlabeled.hidden_labels(&token);
    crate::datasets::label_histogram(labels, data.num_classes()).to_vec()
}

/// Accuracy of a classifier on the hidden labels of the unlabeled pool.
pub fn unlabeled_accuracy(f: &ScoreFunction, data: &PUDataset) -> f64 {
    let token = eval_access();
    f.accuracy(data.unlabeled.features(), data.unlabeled.hidden_labels(&token))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleTrainConfig {
    pub arch: Architecture,
    pub target_accuracy: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

/// Supervised cross-entropy training on the full labeled train split until
/// test accuracy reaches the target or the epoch budget runs out.
pub fn train_oracle_classifier(data: &LabeledDataset, config: &OracleTrainConfig) -> Result<OracleClassifier> {
    if config.max_epochs == 0 || config.batch_size == 0 || data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Argument("oracle training needs data, epochs and a batch size".into()));
    }
    if config.arch.output_dim() != data.num_classes {
        return Err(Error::Argument("oracle architecture does not match the class count".into()));
    }
    config.optimizer.validate()?;
    let mut f = ScoreFunction::new(config.arch.clone(), config.seed);
    let mut opt = Optimizer::new(config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut accuracy = f.accuracy(&data.test.features, &data.test.labels);
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let x = data.train.features.select(Axis(0), chunk);
            let y: Vec<Label> = chunk.iter().map(|&i| data.train.labels[i]).collect();
            let bound = f.params.bind();
            let loss = cross_entropy_var(&f.forward(&bound, &crate::autodiff::Var::constant(x)), &y);
            let grads: Vec<_> = grad(&loss, &bound, false).into_iter().map(|g| g.value().clone()).collect();
            opt.step(&mut f.params, &grads);
        }
        accuracy = f.accuracy(&data.test.features, &data.test.labels);
        log::info!("oracle epoch {epoch}: test accuracy {accuracy:.4}");
        if accuracy >= config.target_accuracy {
            break;
        }
    }
    if accuracy < config.target_accuracy {
        log::warn!(
            "oracle reached {accuracy:.4}, short of the {:.4} target",
            config.target_accuracy
        );
    }
    Ok(OracleClassifier::Pretrained {
        classifier: f,
        accuracy,
        target_accuracy: config.target_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_posteriors_score_one() {
        let p = Array2::from_elem((20, 4), 0.25);
        let (m, s) = inception_score_from_probabilities(&p, 10).unwrap();
        assert_eq!((m, s), (1.0, 0.0));
    }

    #[test]
    fn one_hot_cover_scores_class_count() {
        let p = Array2::from_shape_fn((30, 3), |(i, j)| if i % 3 == j { 1.0 } else { 0.0 });
        let (m, s) = inception_score_from_probabilities(&p, 10).unwrap();
        assert!((m - 3.0).abs() < 1e-12 && s < 1e-12);
    }

    #[test]
    fn splits_must_divide_samples() {
        let p = array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
        assert!(inception_score_from_probabilities(&p, 2).is_err());
        assert!(inception_score_from_probabilities(&p, 0).is_err());
    }
}
