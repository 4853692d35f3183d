//! `eval`: recomputes every metric from a checkpoint directory.

use std::path::{Path, PathBuf};

use serde::Serialize;

use pucnigan::experiment::{prepare_data, ExperimentConfig};
use pucnigan::metrics::{unlabeled_accuracy, unlabeled_composition};
use pucnigan::noise::{PermutationDiagnostics, TransitionMatrix};
use pucnigan::trainer::{load_checkpoint, MetricRow, Trainer};

use crate::runs::load_config;
use crate::{data_root, CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub metrics: MetricRow,
    /// Accuracy on the hidden labels of the unlabeled training pool.
    pub unlabeled_accuracy: f64,
    pub unlabeled_composition: Vec<f64>,
    pub pg: Option<TransitionMatrix>,
    pub permutation: Option<PermutationDiagnostics>,
}

/// `config` defaults to the `config.json` two levels above the checkpoint.
pub fn eval_checkpoint(checkpoint: &Path, config: Option<&Path>) -> CliResult<EvalReport> {
    let config: ExperimentConfig = match config {
        Some(p) => load_config(p)?,
        None => {
            let run_dir = checkpoint
                .parent()
                .and_then(Path::parent)
                .ok_or_else(|| CliError::Config("checkpoint is not inside a run directory".into()))?;
            crate::runs::read_run_config(run_dir)?
        }
    };
    let state = load_checkpoint(checkpoint)?;
    let (data, oracle, is_classifier) = prepare_data(&config, Some(&data_root()))?;
    let trainer = Trainer::new(
        &data,
        config.gan_variant(),
        config.schedule.clone(),
        config.gan.clone(),
        config.eval.clone(),
    )?
    .with_oracle(oracle.as_ref())
    .with_is_classifier(is_classifier.as_ref());
    let (metrics, pg) = trainer.evaluate(&state, state.outer_round)?;
    let permutation = match &pg {
        Some(p) if p.entries.nrows() == p.entries.ncols() => Some(p.diagnostics()?),
        _ => None,
    };
    Ok(EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        metrics,
        unlabeled_accuracy: unlabeled_accuracy(&state.classifier, &data),
        unlabeled_composition: unlabeled_composition(&data),
        pg,
        permutation,
    })
}
