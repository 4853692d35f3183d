//! Reading and launching run directories.

use std::path::{Path, PathBuf};

use pucnigan::experiment::{run_experiment, ExperimentConfig, RunOptions};
use pucnigan::trainer::MetricRow;

use crate::lock::RunLock;
use crate::{data_root, CliError, CliResult};

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(ExperimentConfig::from_json_str(&text)?)
}

/// Runs a config under a lock on its output directory.
pub fn run_config(config: &ExperimentConfig, resume: bool) -> CliResult<PathBuf> {
    let _lock = RunLock::acquire(&config.output_dir)?;
    let options = RunOptions {
        data_root: Some(data_root()),
        resume,
    };
    let summary = run_experiment(config, &options)?;
    if let Some(last) = summary.history.last() {
        log::info!(
            "finished {} after round {}: pu_test_acc {:.4}",
            summary.run_dir.display(),
            last.outer_round,
            last.pu_test_acc
        );
    }
    Ok(summary.run_dir)
}

pub fn read_metrics(run_dir: &Path) -> CliResult<Vec<MetricRow>> {
    let path = run_dir.join("metrics.csv");
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<MetricRow>, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

/// The resolved config a run directory was produced from.
pub fn read_run_config(run_dir: &Path) -> CliResult<ExperimentConfig> {
    let path = run_dir.join("config.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn is_aborted(run_dir: &Path) -> bool {
    run_dir.join("ABORTED").is_file()
}
