//! Gaussian-mixture world with a known Bayes classifier.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FeatureShape, LabeledDataset, LabeledSet, OracleClassifier};
use crate::error::{Error, Result};

pub const SYNTHETIC_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Number of positive classes; the mixture has `k + 1` components.
    pub k: usize,
    pub dim: usize,
    /// Pairwise distance between component means, in units of the standard
    /// deviation.
    pub separation: f64,
    pub n_per_class: usize,
    /// Test rows per class; defaults to `n_per_class`.
    #[serde(default)]
    pub n_test_per_class: Option<usize>,
    pub seed: u64,
}

/// Means of `k + 1` components with all pairwise distances equal to
/// `separation`: a regular simplex, expressed in the first `k` coordinates.
fn simplex_means(k: usize, dim: usize, separation: f64) -> Array2<f64> {
    let n = k + 1;
    // Vertices e_i - centroid in R^n span a k-dimensional subspace; build an
    // orthonormal basis of it by Gram-Schmidt on the first k of them.
    let centered: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64).collect())
        .collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in centered.iter().take(k) {
        let mut u = v.clone();
        for b in &basis {
            let dot: f64 = u.iter().zip(b).map(|(a, b)| a * b).sum();
            for (ui, bi) in u.iter_mut().zip(b) {
                *ui -= dot * bi;
            }
        }
        let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        basis.push(u.into_iter().map(|a| a / norm).collect());
    }
    let scale = separation / std::f64::consts::SQRT_2;
    let mut means = Array2::zeros((n, dim));
    for (i, v) in centered.iter().enumerate() {
        for (d, b) in basis.iter().enumerate() {
            means[[i, d]] = scale * v.iter().zip(b).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    means
}

fn sample_split(means: &Array2<f64>, per_class: usize, rng: &mut ChaCha8Rng) -> LabeledSet {
    let (n, dim) = means.dim();
    let mut features = Array2::zeros((n * per_class, dim));
    let mut labels = Vec::with_capacity(n * per_class);
    for c in 0..n {
        for r in 0..per_class {
            let row = c * per_class + r;
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(rng);
                features[[row, d]] = means[[c, d]] + z;
            }
            labels.push(c);
        }
    }
    LabeledSet { features, labels }
}

/// Draws `k + 1` unit-variance isotropic Gaussian classes and returns the
/// dataset with its nearest-mean Bayes oracle. Source class `k` is intended to
/// serve as the negative class.
pub fn make_synthetic_gaussian(spec: &SyntheticSpec) -> Result<(LabeledDataset, OracleClassifier)> {
    if spec.k < 1 || spec.dim < 2 || spec.dim < spec.k || !(spec.separation > 0.0) {
        return Err(Error::Argument(format!(
            "synthetic world needs k >= 1, dim >= max(2, k), separation > 0; got {spec:?}"
        )));
    }
    if spec.n_per_class == 0 || spec.n_test_per_class == Some(0) {
        return Err(Error::Argument("synthetic world would be empty".into()));
    }
    let means = simplex_means(spec.k, spec.dim, spec.separation);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = sample_split(&means, spec.n_per_class, &mut rng);
    let test = sample_split(&means, spec.n_test_per_class.unwrap_or(spec.n_per_class), &mut rng);
    let base = LabeledDataset {
        name: "synthetic".into(),
        shape: FeatureShape::Vector { dim: spec.dim },
        num_classes: spec.k + 1,
        train,
        test,
    };
    Ok((base, OracleClassifier::NearestMean { means, sigma: 1.0 }))
}

/// Writes the dataset as comma-separated columns `split,label,x0..x{dim-1}`
/// under a header row carrying the schema version and the generating spec.
pub fn save_synthetic(path: &Path, spec: &SyntheticSpec, data: &LabeledDataset) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "schema_version={SYNTHETIC_SCHEMA_VERSION},k={},dim={},separation={:?},seed={},n_per_class={},n_test_per_class={}",
        spec.k,
        spec.dim,
        spec.separation,
        spec.seed,
        spec.n_per_class,
        spec.n_test_per_class.unwrap_or(spec.n_per_class)
    )
    .expect("writing to a String");
    let cols: Vec<String> = (0..spec.dim).map(|d| format!("x{d}")).collect();
    writeln!(out, "split,label,{}", cols.join(",")).expect("writing to a String");
    for (name, set) in [("train", &data.train), ("test", &data.test)] {
        for ex in set.iter() {
            let vals: Vec<String> = ex.features.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{name},{},{}", ex.label, vals.join(",")).expect("writing to a String");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a file written by [`save_synthetic`] and rebuilds the analytic oracle.
pub fn load_synthetic(path: &Path) -> Result<(SyntheticSpec, LabeledDataset, OracleClassifier)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::load(path, "empty file"))?;
    let mut fields = std::collections::HashMap::new();
    for kv in header.split(',') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::load(path, format!("bad header field {kv:?}")))?;
        fields.insert(k.trim(), v.trim());
    }
    let get = |key: &str| -> Result<&str> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::load(path, format!("header lacks {key}")))
    };
    let parse_err = |key: &str| Error::load(path, format!("header field {key} is malformed"));
    let version: u32 = get("schema_version")?.parse().map_err(|_| parse_err("schema_version"))?;
    if version != SYNTHETIC_SCHEMA_VERSION {
        return Err(Error::load(path, format!("unsupported schema version {version}")));
    }
    let spec = SyntheticSpec {
        k: get("k")?.parse().map_err(|_| parse_err("k"))?,
        dim: get("dim")?.parse().map_err(|_| parse_err("dim"))?,
        separation: get("separation")?.parse().map_err(|_| parse_err("separation"))?,
        seed: get("seed")?.parse().map_err(|_| parse_err("seed"))?,
        n_per_class: get("n_per_class")?.parse().map_err(|_| parse_err("n_per_class"))?,
        n_test_per_class: Some(get("n_test_per_class")?.parse().map_err(|_| parse_err("n_test_per_class"))?),
    };
    lines.next().ok_or_else(|| Error::load(path, "missing column header"))?;
    let mut train = (Vec::new(), Vec::new());
    let mut test = (Vec::new(), Vec::new());
    for (lineno, line) in lines.enumerate() {
        let mut parts = line.split(',');
        let split = parts.next().unwrap_or_default();
        let label: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::load(path, format!("row {}: bad label", lineno + 3)))?;
        let vals: Vec<f64> = parts
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::load(path, format!("row {}: bad value", lineno + 3)))?;
        if vals.len() != spec.dim || label > spec.k {
            return Err(Error::load(path, format!("row {}: wrong width or label", lineno + 3)));
        }
        let target = match split {
            "train" => &mut train,
            "test" => &mut test,
            other => return Err(Error::load(path, format!("unknown split {other:?}"))),
        };
        target.0.extend(vals);
        target.1.push(label);
    }
    let to_set = |(f, l): (Vec<f64>, Vec<usize>)| -> Result<LabeledSet> {
        let n = l.len();
        LabeledSet::new(
            Array2::from_shape_vec((n, spec.dim), f).map_err(|e| Error::load(path, e.to_string()))?,
            l,
        )
    };
    let data = LabeledDataset {
        name: "synthetic".into(),
        shape: FeatureShape::Vector { dim: spec.dim },
        num_classes: spec.k + 1,
        train: to_set(train)?,
        test: to_set(test)?,
    };
    let oracle = OracleClassifier::NearestMean {
        means: simplex_means(spec.k, spec.dim, spec.separation),
        sigma: 1.0,
    };
    Ok((spec, data, oracle))
}
