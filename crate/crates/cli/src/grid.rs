//! `grid`: the Cartesian product of datasets, positive rates, unlabeled
//! distributions, variants and seeds, with a summary table per dataset and
//! method.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use pucnigan::cgan::VariantName;
use pucnigan::datasets::UnlabeledDist;
use pucnigan::experiment::{deep_merge, ExperimentConfig};
use pucnigan::trainer::Seeds;

use crate::runs::{is_aborted, read_metrics, run_config};
use crate::{CliError, CliResult};

pub const ORIGINAL_PU: &str = "Original PU";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxes {
    /// Dataset objects as they appear in an experiment config.
    #[serde(default)]
    pub datasets: Option<Vec<Value>>,
    #[serde(default)]
    pub positive_rates: Option<Vec<f64>>,
    #[serde(default)]
    pub unlabeled_dists: Option<Vec<UnlabeledDist>>,
    #[serde(default)]
    pub variants: Option<Vec<VariantName>>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub schema_version: u32,
    /// Partial experiment config shared by every cell.
    pub base: Value,
    pub axes: GridAxes,
    pub output_dir: PathBuf,
}

/// One planned run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub dataset: String,
    pub unlabeled_dist: String,
    pub positive_rate: f64,
    pub variant: VariantName,
    pub seed: u64,
    pub run_dir: PathBuf,
    /// Set when the cell's config did not validate.
    pub config_error: Option<String>,
}

fn dist_label(d: &UnlabeledDist) -> String {
    match d {
        UnlabeledDist::Type1 => "type1".into(),
        UnlabeledDist::Type2 => "type2".into(),
        UnlabeledDist::Custom(p) => {
            let parts: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            format!("custom[{}]", parts.join(" "))
        }
    }
}

fn axis<T: Clone>(name: &str, values: &Option<Vec<T>>, fallback: Option<T>) -> CliResult<Vec<T>> {
    match values {
        Some(v) if v.is_empty() => Err(CliError::Config(format!("grid axis {name} is empty"))),
        Some(v) => Ok(v.clone()),
        None => fallback
            .map(|f| vec![f])
            .ok_or_else(|| CliError::Config(format!("grid axis {name} has no values and the base sets none"))),
    }
}

impl GridSpec {
    pub fn from_json_str(text: &str) -> CliResult<Self> {
        let spec: GridSpec = serde_json::from_str(text).map_err(|e| CliError::Config(format!("grid spec: {e}")))?;
        if spec.schema_version != pucnigan::experiment::SCHEMA_VERSION {
            return Err(CliError::Config(format!("unsupported schema_version {}", spec.schema_version)));
        }
        if !spec.base.is_object() {
            return Err(CliError::Config("grid base must be a JSON object".into()));
        }
        spec.plan()?;
        Ok(spec)
    }

    /// Expands the axes into cells with their merged configs.
    pub fn plan(&self) -> CliResult<Vec<(GridCell, Option<ExperimentConfig>)>> {
        let base = &self.base;
        let datasets = axis("datasets", &self.axes.datasets, base.get("dataset").cloned())?;
        let base_split = base.get("split");
        let rates = axis(
            "positive_rates",
            &self.axes.positive_rates,
            base_split.and_then(|s| s.get("positive_rate")).and_then(Value::as_f64),
        )?;
        let dists = axis(
            "unlabeled_dists",
            &self.axes.unlabeled_dists,
            base_split
                .and_then(|s| s.get("unlabeled_dist"))
                .and_then(|v| serde_json::from_value(v.clone()).ok()),
        )?;
        let variants = axis(
            "variants",
            &self.axes.variants,
            base.get("variant").and_then(|v| serde_json::from_value(v.clone()).ok()),
        )?;
        let seeds = axis("seeds", &self.axes.seeds, Some(0))?;

        let mut cells = Vec::new();
        for ds in &datasets {
            let ds_name = ds.get("kind").and_then(Value::as_str).map(str::to_owned);
            let ds_name = match ds_name.as_deref() {
                Some("image") => ds.get("name").and_then(Value::as_str).unwrap_or("image").to_owned(),
                Some(other) => other.to_owned(),
                None => return Err(CliError::Config("grid dataset entries need a kind".into())),
            };
            for dist in &dists {
                for &rate in &rates {
                    for &variant in &variants {
                        for &seed in &seeds {
                            let run_dir = self
                                .output_dir
                                .join("runs")
                                .join(&ds_name)
                                .join(dist_label(dist))
                                .join(format!("rate{rate}"))
                                .join(variant.as_str())
                                .join(format!("seed{seed}"));
                            let mut value = base.clone();
                            if value.get("schema_version").is_none() {
                                value["schema_version"] = json!(pucnigan::experiment::SCHEMA_VERSION);
                            }
                            let overlay = json!({
                                "dataset": ds,
                                "split": {"positive_rate": rate, "unlabeled_dist": dist, "seed": seed},
                                "variant": variant,
                                "classifier": {"pretrain": {"seed": seed}},
                                "schedule": {"seeds": Seeds::derived(seed)},
                                "output_dir": run_dir,
                            });
                            deep_merge(&mut value, overlay);
                            if value.pointer("/oracle/cache_dir").is_none() {
                                deep_merge(
                                    &mut value,
                                    json!({"oracle": {"cache_dir": self.output_dir.join("oracles")}}),
                                );
                            }
                            // Keep the dataset object whole rather than merged.
                            value["dataset"] = ds.clone();
                            let (config, config_error) = match ExperimentConfig::from_value(value) {
                                Ok(c) => (Some(c), None),
                                Err(e) => (None, Some(e.to_string())),
                            };
                            cells.push((
                                GridCell {
                                    dataset: ds_name.clone(),
                                    unlabeled_dist: dist_label(dist),
                                    positive_rate: rate,
                                    variant,
                                    seed,
                                    run_dir,
                                    config_error,
                                },
                                config,
                            ));
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

pub const CELLS_FILE: &str = "grid_cells.json";

/// Runs every cell in order; failures are recorded and the grid continues.
pub fn run_grid(spec: &GridSpec, skip_completed: bool) -> CliResult<GridSummary> {
    let cells = spec.plan()?;
    std::fs::create_dir_all(&spec.output_dir)?;
    let plan: Vec<&GridCell> = cells.iter().map(|(c, _)| c).collect();
    std::fs::write(spec.output_dir.join(CELLS_FILE), serde_json::to_string_pretty(&plan)?)?;
    let mut failures = Vec::new();
    for (i, (cell, config)) in cells.iter().enumerate() {
        log::info!(
            "grid cell {}/{}: {} {} rate {} {} seed {}",
            i + 1,
            cells.len(),
            cell.dataset,
            cell.unlabeled_dist,
            cell.positive_rate,
            cell.variant,
            cell.seed
        );
        let Some(config) = config else {
            failures.push(format!("{}: {}", cell.run_dir.display(), cell.config_error.as_deref().unwrap_or("")));
            continue;
        };
        if skip_completed && is_complete(&cell.run_dir, config.schedule.outer_rounds) {
            continue;
        }
        if let Err(e) = run_config(config, false) {
            log::error!("{}: {e}", cell.run_dir.display());
            failures.push(format!("{}: {e}", cell.run_dir.display()));
        }
    }
    if !failures.is_empty() {
        std::fs::write(spec.output_dir.join("failures.txt"), failures.join("\n") + "\n")?;
    }
    summarize(&spec.output_dir)
}

fn is_complete(run_dir: &Path, outer_rounds: usize) -> bool {
    !is_aborted(run_dir)
        && read_metrics(run_dir)
            .map(|rows| rows.last().is_some_and(|r| r.outer_round >= outer_rounds))
            .unwrap_or(false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub cell: GridCell,
    pub status: String,
    pub pretrained_pu_acc: Option<f64>,
    pub final_pu_acc: Option<f64>,
    pub gen_label_acc: Option<f64>,
    pub trace_mean: Option<f64>,
    pub is_mean: Option<f64>,
    pub is_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSummary {
    pub cells: Vec<CellResult>,
    /// `dataset,method,<rate>...` with accuracies in percent, averaged over seeds.
    pub table: String,
}

fn cell_result(cell: &GridCell) -> CellResult {
    let mut r = CellResult {
        cell: cell.clone(),
        status: String::new(),
        pretrained_pu_acc: None,
        final_pu_acc: None,
        gen_label_acc: None,
        trace_mean: None,
        is_mean: None,
        is_std: None,
    };
    if cell.config_error.is_some() {
        r.status = "config_error".into();
        return r;
    }
    let rows = read_metrics(&cell.run_dir).ok();
    r.status = match (&rows, is_aborted(&cell.run_dir)) {
        (_, true) => "aborted".into(),
        (None, false) => "missing".into(),
        (Some(_), false) => "ok".into(),
    };
    if let Some(rows) = rows {
        r.pretrained_pu_acc = rows.first().map(|x| x.pu_test_acc);
        if let Some(last) = rows.last() {
            r.final_pu_acc = Some(last.pu_test_acc);
            r.gen_label_acc = last.gen_label_acc;
            r.trace_mean = last.trace_mean;
            r.is_mean = last.is_mean;
            r.is_std = last.is_std;
        }
    }
    r
}

fn cell_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Rebuilds `cells.csv` and `summary.csv` from the run directories listed in
/// the grid's plan. Only reads run outputs, so it can be repeated freely.
pub fn summarize(grid_dir: &Path) -> CliResult<GridSummary> {
    let plan_path = grid_dir.join(CELLS_FILE);
    let text = std::fs::read_to_string(&plan_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", plan_path.display())))?;
    let plan: Vec<GridCell> = serde_json::from_str(&text)?;
    let results: Vec<CellResult> = plan.iter().map(cell_result).collect();

    let mut cells_csv = String::from(
        "dataset,unlabeled_dist,positive_rate,variant,seed,status,pretrained_pu_acc,final_pu_acc,gen_label_acc,trace_mean,is_mean,is_std,run_dir\n",
    );
    for r in &results {
        let c = &r.cell;
        writeln!(
            cells_csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.dataset,
            c.unlabeled_dist,
            c.positive_rate,
            c.variant,
            c.seed,
            r.status,
            cell_opt(r.pretrained_pu_acc),
            cell_opt(r.final_pu_acc),
            cell_opt(r.gen_label_acc),
            cell_opt(r.trace_mean),
            cell_opt(r.is_mean),
            cell_opt(r.is_std),
            c.run_dir.display()
        )
        .expect("writing to a String");
    }

    let mut rates: Vec<f64> = Vec::new();
    let mut groups: Vec<String> = Vec::new();
    let mut methods: Vec<String> = vec![ORIGINAL_PU.into()];
    let multi_dist = {
        let mut d: Vec<&str> = results.iter().map(|r| r.cell.unlabeled_dist.as_str()).collect();
        d.dedup();
        d.len() > 1
    };
    let group_of = |c: &GridCell| {
        if multi_dist {
            format!("{}/{}", c.dataset, c.unlabeled_dist)
        } else {
            c.dataset.clone()
        }
    };
    for r in &results {
        if !rates.contains(&r.cell.positive_rate) {
            rates.push(r.cell.positive_rate);
        }
        let g = group_of(&r.cell);
        if !groups.contains(&g) {
            groups.push(g);
        }
        let m = r.cell.variant.to_string();
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let mut table = String::from("dataset,method");
    for rate in &rates {
        write!(table, ",{}%", rate * 100.0).expect("writing to a String");
    }
    table.push('\n');
    for g in &groups {
        for m in &methods {
            write!(table, "{g},{m}").expect("writing to a String");
            for &rate in &rates {
                let in_cell = results
                    .iter()
                    .filter(|r| group_of(&r.cell) == *g && r.cell.positive_rate == rate && r.status == "ok");
                let values: Vec<f64> = if m == ORIGINAL_PU {
                    // The pretrained classifier only depends on the split and
                    // its seed, so one value per seed suffices.
                    let mut seen = Vec::new();
                    in_cell
                        .filter(|r| {
                            let fresh = !seen.contains(&r.cell.seed);
                            seen.push(r.cell.seed);
                            fresh
                        })
                        .filter_map(|r| r.pretrained_pu_acc)
                        .collect()
                } else {
                    in_cell
                        .filter(|r| r.cell.variant.to_string() == *m)
                        .filter_map(|r| r.final_pu_acc)
                        .collect()
                };
                match mean(&values) {
                    Some(v) => write!(table, ",{:.2}", 100.0 * v),
                    None => write!(table, ","),
                }
                .expect("writing to a String");
            }
            table.push('\n');
        }
    }
    std::fs::write(grid_dir.join("cells.csv"), cells_csv)?;
    std::fs::write(grid_dir.join("summary.csv"), &table)?;
    Ok(GridSummary { cells: results, table })
}
