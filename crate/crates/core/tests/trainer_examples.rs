mod common;

use ndarray::Array2;
use serde_json::json;

use common::*;
use pucnigan::cgan::{GanConfig, GanVariant, VariantName};
use pucnigan::experiment::{run_experiment, ExperimentConfig, RunOptions};
use pucnigan::nn::{OptimizerConfig, Params};
use pucnigan::pu::ClassifierCheckpoint;
use pucnigan::trainer::{Seeds, TrainEvent, Trainer, TrainingSchedule};
use pucnigan::Error;

fn gan_config() -> GanConfig {
    GanConfig {
        latent_dim: 4,
        generator_hidden: vec![8],
        discriminator_hidden: vec![8],
        ..GanConfig::default()
    }
}

fn schedule(inner_steps: usize, warmup: usize) -> TrainingSchedule {
    TrainingSchedule {
        batch_size: 8,
        inner_steps,
        warmup,
        outer_rounds: 1,
        early_stop: None,
        seeds: Seeds::derived(1),
        ..TrainingSchedule::default()
    }
}

fn confusion_updates(events: &[TrainEvent]) -> usize {
    events.iter().filter(|e| matches!(e, TrainEvent::ConfusionUpdate { .. })).count()
}

#[test]
fn warmup_equal_to_loop_length_gives_one_update() {
    let (data, _) = synthetic_split(2, 100, 0.1, 0);
    let trainer = Trainer::new(&data, GanVariant::standard(VariantName::CniCgan), schedule(1, 1), gan_config(), Default::default()).unwrap();
    let mut st = trainer.init_state(small_mlp_classifier(2, 3, 0), OptimizerConfig::adam(1e-3)).unwrap();
    let events = trainer.run_inner_gan_loop(&mut st).unwrap();
    assert_eq!(confusion_updates(&events), 1);
    assert_eq!(st.confusion.update_count, 1);
}

#[test]
fn warmup_beyond_loop_length_keeps_identity() {
    let (data, _) = synthetic_split(2, 100, 0.1, 0);
    let trainer = Trainer::new(&data, GanVariant::standard(VariantName::CniCgan), schedule(4, 6), gan_config(), Default::default()).unwrap();
    let mut st = trainer.init_state(small_mlp_classifier(2, 3, 0), OptimizerConfig::adam(1e-3)).unwrap();
    for _ in 0..3 {
        let events = trainer.run_inner_gan_loop(&mut st).unwrap();
        assert_eq!(confusion_updates(&events), 0);
    }
    assert_eq!(*st.confusion.entries(), Array2::<f64>::eye(3));
}

#[test]
fn step_order_is_discriminator_generator_update() {
    let (data, _) = synthetic_split(2, 100, 0.1, 0);
    let trainer = Trainer::new(&data, GanVariant::standard(VariantName::CniCgan), schedule(3, 1), gan_config(), Default::default()).unwrap();
    let mut st = trainer.init_state(small_mlp_classifier(2, 3, 0), OptimizerConfig::adam(1e-3)).unwrap();
    let events = trainer.run_inner_gan_loop(&mut st).unwrap();
    let expected: Vec<TrainEvent> = (1..=3u64)
        .flat_map(|step| {
            [
                TrainEvent::DiscriminatorStep { step },
                TrainEvent::GeneratorStep { step },
                TrainEvent::ConfusionUpdate { step },
            ]
        })
        .collect();
    assert_eq!(events, expected);

    // Variants without a tracked matrix never update it.
    let trainer = Trainer::new(&data, GanVariant::standard(VariantName::RcganU), schedule(3, 1), gan_config(), Default::default()).unwrap();
    let mut st = trainer.init_state(small_mlp_classifier(2, 3, 0), OptimizerConfig::adam(1e-3)).unwrap();
    assert_eq!(confusion_updates(&trainer.run_inner_gan_loop(&mut st).unwrap()), 0);
}

#[test]
fn zero_score_classifier_starts_augmentation_at_log_six() {
    let (data, _) = synthetic_split(5, 60, 0.1, 3);
    let trainer = Trainer::new(
        &data,
        GanVariant::standard(VariantName::CniCgan),
        TrainingSchedule {
            aug_steps_per_round: Some(1),
            ..schedule(1, 1)
        },
        gan_config(),
        Default::default(),
    )
    .unwrap();
    let mut classifier = small_mlp_classifier(5, 6, 0);
    let zeros: Vec<Array2<f64>> = classifier.params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect();
    classifier.params = Params::new(zeros);
    let mut st = trainer.init_state(classifier, OptimizerConfig::sgd(0.1)).unwrap();
    let ce = trainer.augment_pu(&mut st).unwrap();
    assert_eq!(ce.len(), 1);
    assert!((ce[0] - 6f64.ln()).abs() < 1e-12);
}

#[test]
fn k_class_generator_cannot_augment() {
    let (data, _) = synthetic_split(2, 100, 0.1, 0);
    let bad = TrainingSchedule {
        aug_steps_per_round: Some(1),
        ..schedule(2, 1)
    };
    let err = Trainer::new(&data, GanVariant::standard(VariantName::CganP), bad, gan_config(), Default::default()).err();
    assert!(matches!(err, Some(Error::Config(_))));
    let ok = Trainer::new(&data, GanVariant::standard(VariantName::CganP), schedule(2, 1), gan_config(), Default::default()).unwrap();
    assert_eq!(ok.schedule.aug_steps(&ok.variant), 0);
}

#[test]
fn zero_rounds_report_the_pretrained_classifier() {
    let tmp = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::from_value(json!({
        "schema_version": 1,
        "dataset": {"kind": "synthetic", "k": 2, "dim": 2, "separation": 10.0, "n_per_class": 150, "seed": 5},
        "split": {"positive_rate": 0.05, "unlabeled_dist": "type1", "seed": 5},
        "classifier": {"pretrain": {"epochs": 3}},
        "schedule": {"outer_rounds": 0},
        "eval": {"n_per_class": 100},
        "output_dir": tmp.path(),
    }))
    .unwrap();
    let summary = run_experiment(&config, &RunOptions::default()).unwrap();
    assert_eq!(summary.history.len(), 1);
    assert_eq!(summary.history[0].outer_round, 0);

    let saved = std::fs::read_to_string(tmp.path().join("checkpoints/round_0/classifier.json")).unwrap();
    let classifier = serde_json::from_str::<ClassifierCheckpoint>(&saved).unwrap().into_classifier().unwrap();
    let (data, _, _) = pucnigan::experiment::prepare_data(&config, None).unwrap();
    let acc = classifier.accuracy(&data.test.features, &data.test.labels);
    assert_eq!(summary.history[0].pu_test_acc, acc);
    let last = summary.pretrain_log.last().unwrap();
    assert_eq!(last.test_acc, acc);
}

#[test]
fn exact_generator_lifts_a_weak_classifier() {
    // A linear generator that reproduces each class exactly:
    // G(z, y) = z + mu_y. Augmenting with it must improve a classifier
    // pretrained on very few positives.
    let (data, oracle) = synthetic_split(2, 400, 0.005, 21);
    let pucnigan::datasets::OracleClassifier::NearestMean { means, .. } = &oracle else {
        unreachable!()
    };
    let config = GanConfig {
        latent_dim: 2,
        generator_hidden: vec![],
        discriminator_hidden: vec![4],
        ..GanConfig::default()
    };
    let trainer = Trainer::new(
        &data,
        GanVariant::standard(VariantName::CniCgan),
        TrainingSchedule {
            batch_size: 64,
            aug_steps_per_round: Some(5),
            ..schedule(1, 1)
        },
        config,
        pucnigan::trainer::EvalConfig {
            n_per_class: 0,
            ..Default::default()
        },
    )
    .unwrap();
    let init = tanh_classifier(2, vec![8], 3, 2);
    let mut st = trainer.init_state(init, OptimizerConfig::adam(1e-2)).unwrap();
    let mut w = Array2::zeros((5, 2));
    w[[0, 0]] = 1.0;
    w[[1, 1]] = 1.0;
    for c in 0..3 {
        w.row_mut(2 + c).assign(&means.row(c));
    }
    st.gan.generator.params = Params::new(vec![w, Array2::zeros((1, 2))]);

    let mut acc = vec![trainer.evaluate(&st, 0).unwrap().0.pu_test_acc];
    for round in 1..=50 {
        trainer.augment_pu(&mut st).unwrap();
        acc.push(trainer.evaluate(&st, round).unwrap().0.pu_test_acc);
    }
    let window = |i: usize| acc[i..i + 10].iter().sum::<f64>() / 10.0;
    let smoothed: Vec<f64> = (0..=acc.len() - 10).step_by(10).map(window).collect();
    assert!(smoothed.windows(2).all(|p| p[1] >= p[0] - 1e-9), "smoothed accuracy {smoothed:?}");
    assert!(acc[50] >= 0.99, "final accuracy {}", acc[50]);
}
