//! Labeled datasets and positive-unlabeled splits.
//!
//! Labels are zero-based everywhere in this crate. In a split with `K`
//! positive classes, labels `0..K` are the positive classes and label `K` is
//! the negative class.

mod images;
mod synthetic;

pub use images::{load_image_dataset, ImageDatasetName};
pub use synthetic::{
    load_synthetic, make_synthetic_gaussian, save_synthetic, SyntheticSpec, SYNTHETIC_SCHEMA_VERSION,
};

use std::collections::BTreeSet;

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalAccess;
use crate::nn::argmax_rows;
use crate::pu::ScoreFunction;

pub type Label = usize;

/// Layout of one feature row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureShape {
    /// Channels-last image flattened row-major as `(height, width, channels)`.
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Vector { dim: usize },
}

impl FeatureShape {
    pub fn len(&self) -> usize {
        match *self {
            FeatureShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
            FeatureShape::Vector { dim } => dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A borrowed view of one labeled row.
#[derive(Clone, Copy, Debug)]
pub struct LabeledExample<'a> {
    pub features: ArrayView1<'a, f64>,
    pub label: Label,
}

/// Feature rows paired with labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub features: Array2<f64>,
    pub labels: Vec<Label>,
}

impl LabeledSet {
    pub fn new(features: Array2<f64>, labels: Vec<Label>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Argument(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("non-finite feature value".into()));
        }
        Ok(LabeledSet { features, labels })
    }

    pub fn empty(dim: usize) -> Self {
        LabeledSet {
            features: Array2::zeros((0, dim)),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example(&self, i: usize) -> LabeledExample<'_> {
        LabeledExample {
            features: self.features.row(i),
            label: self.labels[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = LabeledExample<'_>> {
        (0..self.len()).map(|i| self.example(i))
    }

    pub fn select(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

/// A fully labeled dataset with its canonical train/test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub name: String,
    pub shape: FeatureShape,
    /// Number of source classes.
    pub num_classes: usize,
    pub train: LabeledSet,
    pub test: LabeledSet,
}

/// Class composition requested for the unlabeled pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlabeledDist {
    /// Every class, the negative one included, equally represented.
    Type1,
    /// Negatives make up half the pool; positives share the rest evenly.
    Type2,
    /// Explicit proportions over the `K + 1` split labels.
    Custom(Vec<f64>),
}

impl UnlabeledDist {
    pub fn proportions(&self, k: usize) -> Result<Vec<f64>> {
        let p = match self {
            UnlabeledDist::Type1 => vec![1.0 / (k + 1) as f64; k + 1],
            UnlabeledDist::Type2 => {
                let mut p = vec![1.0 / (2 * k) as f64; k];
                p.push(0.5);
                p
            }
            UnlabeledDist::Custom(p) => {
                if p.len() != k + 1 {
                    return Err(Error::Argument(format!(
                        "custom distribution has {} entries, expected {}",
                        p.len(),
                        k + 1
                    )));
                }
                let sum: f64 = p.iter().sum();
                if p.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Argument(format!(
                        "custom distribution {p:?} is not a probability vector"
                    )));
                }
                p.clone()
            }
        };
        Ok(p)
    }
}

/// Arguments of [`make_pu_split`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// Source classes that become positive labels `0..K`, in order.
    pub positive_classes: Vec<usize>,
    pub positive_rate: f64,
    pub unlabeled_dist: UnlabeledDist,
    /// Size of the unlabeled pool; defaults to the train split size.
    #[serde(default)]
    pub unlabeled_size: Option<usize>,
    pub seed: u64,
}

/// Unlabeled features. Their true labels are kept for evaluation only and can
/// be read solely through an [`EvalAccess`] token, which only the metrics
/// module can mint.
///
/// ```compile_fail
/// # fn f(pool: &pucnigan::datasets::UnlabeledPool) {
/// let token = pucnigan::metrics::EvalAccess(());
/// let _ = pool.hidden_labels(&token);
/// # }
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledPool {
    features: Array2<f64>,
    hidden: Vec<Label>,
}

impl UnlabeledPool {
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    pub fn hidden_labels(&self, _access: &EvalAccess) -> &[Label] {
        &self.hidden
    }
}

/// Positive-labeled examples, an unlabeled pool, and a fully labeled test set.
#[derive(Clone, Debug, PartialEq)]
pub struct PUDataset {
    pub name: String,
    pub shape: FeatureShape,
    /// Number of positive classes `K`.
    pub k: usize,
    pub positives: LabeledSet,
    pub unlabeled: UnlabeledPool,
    pub test: LabeledSet,
    /// Class priors of the unlabeled pool, length `K + 1`.
    pub priors: Vec<f64>,
    pub positive_rate: f64,
    /// Indices into the base train split, for manifests.
    pub positive_source_indices: Vec<usize>,
    pub unlabeled_source_indices: Vec<usize>,
}

impl PUDataset {
    pub fn num_classes(&self) -> usize {
        self.k + 1
    }

    /// Total positive prior `sum_{i<K} pi_i`.
    pub fn positive_prior(&self) -> f64 {
        self.priors[..self.k].iter().sum()
    }

    /// Positives stacked on top of the unlabeled pool: every training row.
    pub fn all_features(&self) -> Array2<f64> {
        concatenate(
            Axis(0),
            &[self.positives.features.view(), self.unlabeled.features.view()],
        )
        .expect("positives and unlabeled share the feature width")
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.priors.iter().sum();
        if self.priors.len() != self.k + 1
            || self.priors.iter().any(|p| *p < 0.0)
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(Error::Argument(format!("invalid priors {:?}", self.priors)));
        }
        if self.positives.labels.iter().any(|&y| y >= self.k) {
            return Err(Error::Argument("negative label among positives".into()));
        }
        Ok(())
    }
}

/// Maps a source label to a split label.
fn split_label(source: usize, positive_classes: &[usize]) -> Label {
    positive_classes
        .iter()
        .position(|&c| c == source)
        .unwrap_or(positive_classes.len())
}

/// Largest-remainder rounding of `total * p`.
pub(crate) fn apportion(total: usize, p: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|v| v * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Builds a positive-unlabeled split from a fully labeled dataset.
///
/// `round(positive_rate * |train|)` positives are drawn evenly across the
/// positive classes (remainder round-robin). The unlabeled pool is drawn from
/// the whole train split to match the requested composition, without
/// replacement unless a class runs out.
pub fn make_pu_split(base: &LabeledDataset, spec: &SplitSpec) -> Result<PUDataset> {
    if !(spec.positive_rate > 0.0 && spec.positive_rate <= 1.0) {
        return Err(Error::Argument(format!(
            "positive rate must lie in (0, 1], got {}",
            spec.positive_rate
        )));
    }
    let k = spec.positive_classes.len();
    if k == 0 {
        return Err(Error::Argument("no positive classes".into()));
    }
    let distinct: BTreeSet<_> = spec.positive_classes.iter().collect();
    if distinct.len() != k || spec.positive_classes.iter().any(|&c| c >= base.num_classes) {
        return Err(Error::Argument(format!(
            "positive classes {:?} must be distinct source classes below {}",
            spec.positive_classes, base.num_classes
        )));
    }
    let train_counts = base.train.class_counts(base.num_classes);
    if let Some(c) = train_counts.iter().position(|&n| n == 0) {
        return Err(Error::Argument(format!("base train split has no example of class {c}")));
    }
    let proportions = spec.unlabeled_dist.proportions(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let n_train = base.train.len();
    let mapped: Vec<Label> = base
        .train
        .labels
        .iter()
        .map(|&y| split_label(y, &spec.positive_classes))
        .collect();
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); k + 1];
    for (i, &y) in mapped.iter().enumerate() {
        by_label[y].push(i);
    }
    for bucket in &mut by_label {
        bucket.shuffle(&mut rng);
    }

    // Labeled positives.
    let n_pos = (spec.positive_rate * n_train as f64).round() as usize;
    let mut positive_idx = Vec::with_capacity(n_pos);
    for (j, bucket) in by_label.iter().take(k).enumerate() {
        let want = n_pos / k + usize::from(j < n_pos % k);
        if want > bucket.len() {
            return Err(Error::Capacity {
                class: spec.positive_classes[j],
                requested: want,
                available: bucket.len(),
            });
        }
        positive_idx.extend_from_slice(&bucket[..want]);
    }

    // Unlabeled pool.
    let n_u = spec.unlabeled_size.unwrap_or(n_train);
    let counts = apportion(n_u, &proportions);
    let mut unlabeled_idx = Vec::with_capacity(n_u);
    for (j, (&want, bucket)) in counts.iter().zip(&by_label).enumerate() {
        if want == 0 {
            continue;
        }
        if bucket.is_empty() {
            return Err(Error::Capacity {
                class: if j < k { spec.positive_classes[j] } else { j },
                requested: want,
                available: 0,
            });
        }
        let take = want.min(bucket.len());
        unlabeled_idx.extend_from_slice(&bucket[..take]);
        if want > take {
            log::warn!(
                "split label {j}: {want} unlabeled examples requested, {} available; duplicating {}",
                bucket.len(),
                want - take
            );
            for _ in take..want {
                unlabeled_idx.push(bucket[rng.random_range(0..bucket.len())]);
            }
        }
    }
    unlabeled_idx.shuffle(&mut rng);

    let mut realized = vec![0usize; k + 1];
    for &i in &unlabeled_idx {
        realized[mapped[i]] += 1;
    }
    let priors: Vec<f64> = realized.iter().map(|&c| c as f64 / n_u.max(1) as f64).collect();

    let positives = LabeledSet {
        features: base.train.features.select(Axis(0), &positive_idx),
        labels: positive_idx.iter().map(|&i| mapped[i]).collect(),
    };
    let unlabeled = UnlabeledPool {
        features: base.train.features.select(Axis(0), &unlabeled_idx),
        hidden: unlabeled_idx.iter().map(|&i| mapped[i]).collect(),
    };
    let test = LabeledSet {
        features: base.test.features.clone(),
        labels: base
            .test
            .labels
            .iter()
            .map(|&y| split_label(y, &spec.positive_classes))
            .collect(),
    };
    let out = PUDataset {
        name: base.name.clone(),
        shape: base.shape,
        k,
        positives,
        unlabeled,
        test,
        priors,
        positive_rate: spec.positive_rate,
        positive_source_indices: positive_idx,
        unlabeled_source_indices: unlabeled_idx,
    };
    out.validate()?;
    Ok(out)
}

/// The base dataset with labels mapped to split labels: positive classes to
/// `0..K` in order, every other class to `K`. Used to train evaluation-only
/// oracles on full supervision.
pub fn relabel_for_split(base: &LabeledDataset, positive_classes: &[usize]) -> Result<LabeledDataset> {
    if positive_classes.is_empty() || positive_classes.iter().any(|&c| c >= base.num_classes) {
        return Err(Error::Argument(format!("invalid positive classes {positive_classes:?}")));
    }
    let map = |set: &LabeledSet| LabeledSet {
        features: set.features.clone(),
        labels: set.labels.iter().map(|&y| split_label(y, positive_classes)).collect(),
    };
    Ok(LabeledDataset {
        name: base.name.clone(),
        shape: base.shape,
        num_classes: positive_classes.len() + 1,
        train: map(&base.train),
        test: map(&base.test),
    })
}

/// Where an oracle's labels come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Bayes rule of a known generating distribution.
    Analytic,
    /// A classifier trained with full supervision.
    Pretrained {
        accuracy: f64,
        target_accuracy: f64,
    },
}

/// Deterministic reference classifier over the `K + 1` split labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleClassifier {
    /// Nearest-mean rule for equal isotropic Gaussians.
    NearestMean { means: Array2<f64>, sigma: f64 },
    Pretrained {
        classifier: ScoreFunction,
        accuracy: f64,
        target_accuracy: f64,
    },
}

impl OracleClassifier {
    pub fn provenance(&self) -> Provenance {
        match self {
            OracleClassifier::NearestMean { .. } => Provenance::Analytic,
            OracleClassifier::Pretrained {
                accuracy,
                target_accuracy,
                ..
            } => Provenance::Pretrained {
                accuracy: *accuracy,
                target_accuracy: *target_accuracy,
            },
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            OracleClassifier::NearestMean { means, .. } => means.nrows(),
            OracleClassifier::Pretrained { classifier, .. } => classifier.num_classes(),
        }
    }

    fn log_scores(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            OracleClassifier::NearestMean { means, sigma } => {
                let mut out = Array2::zeros((x.nrows(), means.nrows()));
                for (i, row) in x.rows().into_iter().enumerate() {
                    for (c, mu) in means.rows().into_iter().enumerate() {
                        let d2: f64 = row.iter().zip(mu.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                        out[[i, c]] = -d2 / (2.0 * sigma * sigma);
                    }
                }
                out
            }
            OracleClassifier::Pretrained { classifier, .. } => classifier.scores(x),
        }
    }

    pub fn classify(&self, x: &Array2<f64>) -> Vec<Label> {
        argmax_rows(&self.log_scores(x))
    }

    /// Class posterior per row (softmax of the oracle's scores).
    pub fn probabilities(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut s = self.log_scores(x);
        for mut row in s.rows_mut() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - m).exp());
            let z: f64 = row.sum();
            row.mapv_inplace(|v| v / z);
        }
        s
    }
}

/// Empirical label histogram as a probability vector.
pub fn label_histogram(labels: &[Label], classes: usize) -> Array1<f64> {
    let mut h = Array1::zeros(classes);
    for &y in labels {
        h[y] += 1.0;
    }
    if !labels.is_empty() {
        h /= labels.len() as f64;
    }
    h
}
