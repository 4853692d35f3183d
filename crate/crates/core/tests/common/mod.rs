//! Helpers shared by the integration suites. Everything here evaluates
//! quantities by plain loops over `f64` so it stays independent of the
//! autodiff engine under test.

#![allow(dead_code)]

use ndarray::Array2;

use pucnigan::cgan::{build_variant, GanConfig, GanNetworks, GanVariant, VariantName};
use pucnigan::datasets::{make_pu_split, make_synthetic_gaussian, FeatureShape, OracleClassifier, PUDataset, SplitSpec, SyntheticSpec, UnlabeledDist};
use pucnigan::nn::{Activation, Architecture, MlpSpec, OptimizerConfig};
use pucnigan::pu::ScoreFunction;

/// Central differences of `f` with respect to every entry of every tensor.
pub fn central_differences<F>(tensors: &[Array2<f64>], eps: f64, mut f: F) -> Vec<Array2<f64>>
where
    F: FnMut(&[Array2<f64>]) -> f64,
{
    let mut work = tensors.to_vec();
    let mut out = Vec::with_capacity(tensors.len());
    for t in 0..tensors.len() {
        let mut g = Array2::zeros(tensors[t].dim());
        for idx in ndarray::indices(tensors[t].dim()) {
            let orig = work[t][idx];
            work[t][idx] = orig + eps;
            let up = f(&work);
            work[t][idx] = orig - eps;
            let down = f(&work);
            work[t][idx] = orig;
            g[idx] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// `||a - b|| / max(||a||, ||b||, floor)` over all tensors jointly.
pub fn relative_error(a: &[Array2<f64>], b: &[Array2<f64>]) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.iter().zip(y.iter()) {
            diff += (u - v) * (u - v);
            na += u * u;
            nb += v * v;
        }
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-8)
}

pub fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// `l(t, y) = 1 / (1 + exp(t y))`.
pub fn direct_sigmoid_loss(t: f64, y: f64) -> f64 {
    1.0 / (1.0 + (t * y).exp())
}

/// `log(sum_{i<k} e^{s_i} / e^{s_k})` by direct exponentiation.
pub fn direct_positive_logit(s: &[f64], k: usize) -> f64 {
    let num: f64 = s[..k].iter().map(|v| v.exp()).sum();
    (num / s[k].exp()).ln()
}

pub fn direct_softmax(s: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn direct_cross_entropy(scores: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in scores.rows().into_iter().zip(labels) {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[y].exp() / z).ln();
    }
    total / labels.len() as f64
}

/// Forward pass of an MLP given its weight/bias tensors, one row at a time.
pub fn manual_mlp(params: &[Array2<f64>], x: &[f64], activation: Activation, normalize: bool) -> Vec<f64> {
    let layers = params.len() / 2;
    let mut h = x.to_vec();
    for l in 0..layers {
        let (w, b) = (&params[2 * l], &params[2 * l + 1]);
        let mut next = vec![0.0; w.ncols()];
        for (j, out) in next.iter_mut().enumerate() {
            *out = b[[0, j]] + h.iter().enumerate().map(|(i, v)| v * w[[i, j]]).sum::<f64>();
        }
        if l + 1 < layers {
            if normalize {
                let n = next.len() as f64;
                let mean = next.iter().sum::<f64>() / n;
                let var = next.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let sd = (var + 1e-5).sqrt();
                next.iter_mut().for_each(|v| *v = (*v - mean) / sd);
            }
            next.iter_mut().for_each(|v| {
                *v = match activation {
                    Activation::Relu => v.max(0.0),
                    Activation::LeakyRelu { slope } => {
                        if *v > 0.0 {
                            *v
                        } else {
                            slope * *v
                        }
                    }
                    Activation::Tanh => v.tanh(),
                }
            });
        }
        h = next;
    }
    h
}

pub fn one_hot_row(label: usize, classes: usize) -> Vec<f64> {
    (0..classes).map(|c| if c == label { 1.0 } else { 0.0 }).collect()
}

/// Small GAN for gradient and closed-form checks on 2-d data.
pub fn toy_gan(name: VariantName, k: usize, seed: u64) -> (GanNetworks, GanConfig) {
    let config = GanConfig {
        latent_dim: 3,
        generator_hidden: vec![5],
        discriminator_hidden: vec![4],
        rcgan_diagonal_logit: 2.0,
        ..GanConfig::default()
    };
    let nets = build_variant(&GanVariant::standard(name), &FeatureShape::Vector { dim: 2 }, k, &config, seed).expect("toy networks");
    (nets, config)
}

pub fn tanh_classifier(input_dim: usize, hidden: Vec<usize>, classes: usize, seed: u64) -> ScoreFunction {
    ScoreFunction::new(
        Architecture::Mlp(MlpSpec {
            input_dim,
            hidden,
            output_dim: classes,
            activation: Activation::Tanh,
            normalize: false,
        }),
        seed,
    )
}

pub fn small_mlp_classifier(input_dim: usize, classes: usize, seed: u64) -> ScoreFunction {
    ScoreFunction::new(
        Architecture::Mlp(MlpSpec {
            input_dim,
            hidden: vec![16],
            output_dim: classes,
            activation: Activation::LeakyRelu { slope: 0.1 },
            normalize: false,
        }),
        seed,
    )
}

/// Synthetic K-positive split in `max(2, k)` dimensions.
pub fn synthetic_split(k: usize, n_per_class: usize, rate: f64, seed: u64) -> (PUDataset, OracleClassifier) {
    let (base, oracle) = make_synthetic_gaussian(&SyntheticSpec {
        k,
        dim: k.max(2),
        separation: 10.0,
        n_per_class,
        n_test_per_class: Some(100),
        seed,
    })
    .expect("synthetic world");
    let split = make_pu_split(
        &base,
        &SplitSpec {
            positive_classes: (0..k).collect(),
            positive_rate: rate,
            unlabeled_dist: UnlabeledDist::Type1,
            unlabeled_size: None,
            seed,
        },
    )
    .expect("split");
    (split, oracle)
}

pub fn adam(lr: f64) -> OptimizerConfig {
    OptimizerConfig::adam(lr)
}
