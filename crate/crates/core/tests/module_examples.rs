//! Worked examples for the data, risk, noise and metric modules, each checked
//! against an oracle computed here.

mod common;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use common::*;
use pucnigan::autodiff::Var;
use pucnigan::datasets::{
    label_histogram, make_pu_split, make_synthetic_gaussian, OracleClassifier, SplitSpec, SyntheticSpec, UnlabeledDist,
};
use pucnigan::metrics::{pu_accuracy, MetricContext};
use pucnigan::noise::{delta_from_predictions, estimate_pg, ConfusionMatrix};
use pucnigan::nn::{Activation, Architecture, MlpSpec};
use pucnigan::pu::{pretrain_pu, pu_risk_from_scores, PURiskConfig, PretrainConfig, ScoreFunction};

/// `|count - n p| <= 3 sqrt(n p (1 - p))` for every category.
fn within_three_sigma(counts: &[f64], n: f64, p: &[f64]) -> bool {
    counts
        .iter()
        .zip(p)
        .all(|(&c, &q)| (c - n * q).abs() <= 3.0 * (n * q * (1.0 - q)).sqrt() + 1e-9)
}

#[test]
fn type_two_pool_matches_its_composition() {
    let (base, _) = make_synthetic_gaussian(&SyntheticSpec {
        k: 5,
        dim: 5,
        separation: 8.0,
        n_per_class: 2000,
        n_test_per_class: Some(10),
        seed: 2,
    })
    .unwrap();
    let split = make_pu_split(
        &base,
        &SplitSpec {
            positive_classes: (0..5).collect(),
            positive_rate: 0.01,
            unlabeled_dist: UnlabeledDist::Type2,
            unlabeled_size: Some(3000),
            seed: 2,
        },
    )
    .unwrap();
    let target = [0.1, 0.1, 0.1, 0.1, 0.1, 0.5];
    let counts: Vec<f64> = split.priors.iter().map(|p| p * 3000.0).collect();
    assert!(within_three_sigma(&counts, 3000.0, &target), "{:?}", split.priors);
}

#[test]
fn separated_gaussians_are_nearly_bayes_perfect() {
    // Equidistant unit-variance means at distance 10: the nearest-mean rule
    // errs on a pair only past the bisecting hyperplane, 5 sd away. A union
    // bound over the two competitors caps the error per class.
    let bound = 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(-5.0);
    assert!(bound < 1e-4);
    let (base, oracle) = make_synthetic_gaussian(&SyntheticSpec {
        k: 2,
        dim: 2,
        separation: 10.0,
        n_per_class: 10,
        n_test_per_class: Some(20_000),
        seed: 8,
    })
    .unwrap();
    let pred = oracle.classify(&base.test.features);
    let acc = pred.iter().zip(&base.test.labels).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64;
    assert!(acc >= 0.9999, "oracle accuracy {acc}");
}

#[test]
fn oracle_as_classifier_and_constant_predictor_accuracies() {
    let (data, oracle) = synthetic_split(2, 300, 0.05, 1);
    let OracleClassifier::NearestMean { means, .. } = &oracle else {
        unreachable!()
    };
    // The nearest-mean rule as a linear score function: x.mu_c - |mu_c|^2 / 2.
    let spec = MlpSpec {
        input_dim: 2,
        hidden: vec![],
        output_dim: 3,
        activation: Activation::Tanh,
        normalize: false,
    };
    let mut f = ScoreFunction::new(Architecture::Mlp(spec.clone()), 0);
    let w = means.t().to_owned();
    let b = Array2::from_shape_fn((1, 3), |(_, c)| -0.5 * means.row(c).dot(&means.row(c)));
    f.params = pucnigan::nn::Params::new(vec![w, b]);
    let ctx = MetricContext::default();
    assert!(pu_accuracy(&f, &data.test, &ctx).unwrap().value >= 0.9999);

    let mut constant = ScoreFunction::new(Architecture::Mlp(spec), 0);
    let freq = label_histogram(&data.test.labels, 3);
    let top = (0..3).fold(0, |b, c| if freq[c] > freq[b] { c } else { b });
    constant.params = pucnigan::nn::Params::new(vec![
        Array2::zeros((2, 3)),
        Array2::from_shape_fn((1, 3), |(_, c)| if c == top { 1.0 } else { 0.0 }),
    ]);
    let acc = pu_accuracy(&constant, &data.test, &ctx).unwrap().value;
    assert!((acc - freq[top]).abs() < 1e-12);
}

#[test]
fn corrected_negative_term_is_centered_when_unlabeled_is_positive() {
    // With pi_p = 1 and both batches drawn from the positive marginal,
    // E[r] = E[l(h, -1)] - E[l(h, -1)] = 0.
    let f = tanh_classifier(2, vec![6], 3, 5);
    let (data, _) = synthetic_split(2, 500, 0.2, 3);
    let positives = &data.positives;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws = 10_000;
    let batch = 16;
    let all_scores = f.scores(&positives.features);
    let mut rs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let pi: Vec<usize> = (0..batch).map(|_| rng.random_range(0..positives.len())).collect();
        let ui: Vec<usize> = (0..batch).map(|_| rng.random_range(0..positives.len())).collect();
        let sp = all_scores.select(Axis(0), &pi);
        let su = all_scores.select(Axis(0), &ui);
        let labels: Vec<usize> = pi.iter().map(|&i| positives.labels[i]).collect();
        let risk = pu_risk_from_scores(&Var::constant(sp), &labels, &Var::constant(su), 2, 1.0, false).unwrap();
        rs.push(risk.corrected_negative_term);
    }
    let mean = rs.iter().sum::<f64>() / draws as f64;
    let sd = (rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
    assert!(sd > 0.0);
    assert!(mean.abs() <= 3.0 * sd / (draws as f64).sqrt(), "mean {mean}, sd {sd}");
}

#[test]
fn pretraining_on_separated_gaussians_is_accurate() {
    let (data, _) = synthetic_split(2, 1000, 0.05, 12);
    let init = ScoreFunction::new(
        Architecture::Mlp(MlpSpec {
            input_dim: 2,
            hidden: vec![64, 64],
            output_dim: 3,
            activation: Activation::LeakyRelu { slope: 0.1 },
            normalize: false,
        }),
        0,
    );
    let config = PretrainConfig {
        risk: PURiskConfig::default(),
        epochs: 100,
        batch_size: 64,
        seed: 0,
    };
    let out = pretrain_pu(&data, init, &config).unwrap();
    let acc = out.classifier.accuracy(&data.test.features, &data.test.labels);
    assert!(acc >= 0.99, "test accuracy {acc}");
}

#[test]
fn batch_estimate_of_a_known_mixing_classifier() {
    let mixing = [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.05, 0.15, 0.8]];
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let n = 10_000;
    let mut intended = Vec::with_capacity(3 * n);
    let mut predicted = Vec::with_capacity(3 * n);
    for (y, row) in mixing.iter().enumerate() {
        for _ in 0..n {
            let u: f64 = rng.random();
            let p = if u < row[0] {
                0
            } else if u < row[0] + row[1] {
                1
            } else {
                2
            };
            intended.push(y);
            predicted.push(p);
        }
    }
    let current = ConfusionMatrix::identity(3, 0.99).unwrap();
    let delta = delta_from_predictions(&intended, &predicted, &current).unwrap();
    for (y, row) in mixing.iter().enumerate() {
        let counts: Vec<f64> = delta.row(y).iter().map(|v| v * n as f64).collect();
        assert!(within_three_sigma(&counts, n as f64, row), "row {y}: {:?}", delta.row(y));
    }
}

/// Replays real samples of class `sigma[i]` when asked for label `i`.
fn replay_pg(sigma: &[usize], n: usize) -> Array2<f64> {
    let (base, oracle) = make_synthetic_gaussian(&SyntheticSpec {
        k: 2,
        dim: 2,
        separation: 10.0,
        n_per_class: 500,
        n_test_per_class: Some(10),
        seed: 4,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let by_class: Vec<Vec<usize>> = (0..3)
        .map(|c| (0..base.train.len()).filter(|&i| base.train.labels[i] == c).collect())
        .collect();
    let pg = estimate_pg(
        |labels| {
            let idx: Vec<usize> = labels
                .iter()
                .map(|&l| {
                    let pool = &by_class[sigma[l]];
                    pool[rng.random_range(0..pool.len())]
                })
                .collect();
            base.train.features.select(Axis(0), &idx)
        },
        &oracle,
        3,
        n,
    )
    .unwrap();
    pg.entries
}

#[test]
fn replaying_generators_give_permutation_transitions() {
    let identity = replay_pg(&[0, 1, 2], 1000);
    assert!((identity.clone() - Array2::<f64>::eye(3)).iter().all(|v| v.abs() < 5e-3));
    let swapped = replay_pg(&[1, 0, 2], 1000);
    let expected = ndarray::array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
    assert!((swapped.clone() - &expected).iter().all(|v| v.abs() < 5e-3));
    let trace: f64 = (0..3).map(|i| swapped[[i, i]]).sum::<f64>() / 3.0;
    assert!((trace - 1.0 / 3.0).abs() < 5e-3);
}

#[test]
fn random_generator_rows_match_a_direct_histogram() {
    let (nets, _) = toy_gan(pucnigan::cgan::VariantName::CganA, 2, 31);
    let (_, oracle) = make_synthetic_gaussian(&SyntheticSpec {
        k: 2,
        dim: 2,
        separation: 1.0,
        n_per_class: 5,
        n_test_per_class: Some(5),
        seed: 0,
    })
    .unwrap();
    let n = 4000;
    let pg = estimate_pg(|labels| nets.generator.sample(&mut ChaCha8Rng::seed_from_u64(labels[0] as u64), labels), &oracle, 3, n)
        .unwrap();
    for c in 0..3 {
        let x = nets.generator.sample(&mut ChaCha8Rng::seed_from_u64(c as u64), &vec![c; n]);
        let OracleClassifier::NearestMean { means, .. } = &oracle else {
            unreachable!()
        };
        let mut hist = [0.0; 3];
        for row in x.rows() {
            let d: Vec<f64> = (0..3)
                .map(|m| row.iter().zip(means.row(m).iter()).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let best = (0..3).fold(0, |b, m| if d[m] < d[b] { m } else { b });
            hist[best] += 1.0 / n as f64;
        }
        for j in 0..3 {
            assert!((pg.entries[[c, j]] - hist[j]).abs() < 1e-12);
        }
    }
}
