//! `plot`: SVG figures, each rendered from a sidecar CSV of its points so the
//! figure can be rebuilt from the sidecar alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use pucnigan::datasets::FeatureShape;
use pucnigan::report::write_sample_grid;
use pucnigan::trainer::{load_checkpoint, RunDir};

use crate::runs::{read_metrics, read_run_config};
use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    /// Final metrics against positive rate, one curve per variant.
    RateCurves,
    /// Losses, trace mean and PU accuracy against GAN step for each run.
    TrainingCurves,
    /// Final PU accuracy per unlabeled distribution and rate, one bar per variant.
    RobustnessBars,
    /// Generated samples, one class per row.
    SampleGrid,
}

impl PlotKind {
    pub fn stem(&self) -> &'static str {
        match self {
            PlotKind::RateCurves => "rate_curves",
            PlotKind::TrainingCurves => "training_curves",
            PlotKind::RobustnessBars => "robustness_bars",
            PlotKind::SampleGrid => "sample_grid",
        }
    }
}

/// One plotted value. `category` names the x position of bar charts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub panel: String,
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub category: String,
}

fn draw_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Other(format!("drawing failed: {e}"))
}

fn missing(column: &str, run: &Path) -> CliError {
    CliError::Data(format!(
        "metric column {column} is empty in {}",
        run.join("metrics.csv").display()
    ))
}

/// Averages points sharing panel, series and x (seeds of one cell).
fn average(points: Vec<PlotPoint>) -> Vec<PlotPoint> {
    let mut groups: BTreeMap<(String, String, String, u64), (PlotPoint, f64, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for p in points {
        let key = (p.panel.clone(), p.series.clone(), p.category.clone(), p.x.to_bits());
        match groups.get_mut(&key) {
            Some((_, sum, n)) => {
                *sum += p.y;
                *n += 1;
            }
            None => {
                order.push(key.clone());
                let y = p.y;
                groups.insert(key, (p, y, 1));
            }
        }
    }
    order
        .into_iter()
        .map(|k| {
            let (mut p, sum, n) = groups.remove(&k).expect("key recorded");
            p.y = sum / n as f64;
            p
        })
        .collect()
}

pub fn collect_points(kind: PlotKind, runs: &[PathBuf]) -> CliResult<Vec<PlotPoint>> {
    if runs.is_empty() {
        return Err(CliError::Config("no run directories given".into()));
    }
    let mut points = Vec::new();
    match kind {
        PlotKind::RateCurves => {
            for run in runs {
                let config = read_run_config(run)?;
                let rows = read_metrics(run)?;
                let last = rows.last().expect("read_metrics rejects empty files");
                let gla = last.gen_label_acc.ok_or_else(|| missing("gen_label_acc", run))?;
                let series = config.variant.to_string();
                let ds = config.dataset.name();
                for (metric, value) in [("generator label accuracy", gla), ("PU accuracy", last.pu_test_acc)] {
                    points.push(PlotPoint {
                        panel: format!("{ds}: {metric}"),
                        series: series.clone(),
                        x: config.split.positive_rate,
                        y: 100.0 * value,
                        category: String::new(),
                    });
                }
            }
        }
        PlotKind::RobustnessBars => {
            for run in runs {
                let config = read_run_config(run)?;
                let rows = read_metrics(run)?;
                let last = rows.last().expect("read_metrics rejects empty files");
                let dist = serde_json::to_value(&config.split.unlabeled_dist)?;
                let dist = dist.as_str().map(str::to_owned).unwrap_or_else(|| "custom".into());
                points.push(PlotPoint {
                    panel: config.dataset.name().into(),
                    series: config.variant.to_string(),
                    x: 0.0,
                    y: 100.0 * last.pu_test_acc,
                    category: format!("{dist} {}%", config.split.positive_rate * 100.0),
                });
            }
            // Number the categories in order of first appearance.
            let mut cats: Vec<String> = Vec::new();
            for p in &mut points {
                let i = cats.iter().position(|c| *c == p.category).unwrap_or_else(|| {
                    cats.push(p.category.clone());
                    cats.len() - 1
                });
                p.x = i as f64;
            }
        }
        PlotKind::TrainingCurves => {
            for run in runs {
                let config = read_run_config(run)?;
                let rows = read_metrics(run)?;
                let series = run
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| run.display().to_string());
                let steps = config.schedule.inner_steps as f64;
                if rows.iter().all(|r| r.trace_mean.is_none()) {
                    return Err(missing("trace_mean", run));
                }
                for r in &rows {
                    let x = r.outer_round as f64 * steps;
                    if let Some(t) = r.trace_mean {
                        points.push(PlotPoint {
                            panel: "trace mean of P^g".into(),
                            series: series.clone(),
                            x,
                            y: t,
                            category: String::new(),
                        });
                    }
                    points.push(PlotPoint {
                        panel: "PU test accuracy".into(),
                        series: series.clone(),
                        x,
                        y: r.pu_test_acc,
                        category: String::new(),
                    });
                }
                let dir = RunDir::open(run)?;
                let latest = dir
                    .latest_checkpoint()
                    .ok_or_else(|| CliError::Data(format!("{} has no checkpoints", run.display())))?;
                let state = load_checkpoint(&dir.checkpoint_dir(latest))?;
                // At most ~500 points per loss curve.
                let window = state.losses.len().div_ceil(500).max(1);
                for chunk in state.losses.chunks(window) {
                    let n = chunk.len() as f64;
                    let x = chunk.last().expect("non-empty chunk").step as f64;
                    let d = chunk.iter().map(|s| s.d_objective).sum::<f64>() / n;
                    let g = chunk.iter().map(|s| s.g_adversarial).sum::<f64>() / n;
                    for (panel, y) in [("discriminator objective", d), ("generator adversarial loss", g)] {
                        points.push(PlotPoint {
                            panel: panel.into(),
                            series: series.clone(),
                            x,
                            y,
                            category: String::new(),
                        });
                    }
                }
            }
        }
        PlotKind::SampleGrid => {
            return Err(CliError::Config("sample grids are written by plot_sample_grid".into()));
        }
    }
    Ok(average(points))
}

pub fn write_sidecar(path: &Path, points: &[PlotPoint]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> CliResult<Vec<PlotPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<PlotPoint>, _>>()?)
}

fn panels(points: &[PlotPoint]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in points {
        if !out.contains(&p.panel) {
            out.push(p.panel.clone());
        }
    }
    out
}

fn series_names(points: &[&PlotPoint]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in points {
        if !out.contains(&p.series) {
            out.push(p.series.clone());
        }
    }
    out
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Renders a figure from sidecar points.
pub fn render(kind: PlotKind, points: &[PlotPoint], path: &Path) -> CliResult<()> {
    if points.is_empty() {
        return Err(CliError::Data("nothing to plot".into()));
    }
    let names = panels(points);
    let width = 480 * names.len() as u32;
    let root = SVGBackend::new(path, (width, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let areas = root.split_evenly((1, names.len()));
    for (area, panel) in areas.iter().zip(&names) {
        let pts: Vec<&PlotPoint> = points.iter().filter(|p| &p.panel == panel).collect();
        match kind {
            PlotKind::RobustnessBars => draw_bars(area, panel, &pts)?,
            PlotKind::RateCurves => draw_lines(area, panel, &pts, true)?,
            _ => draw_lines(area, panel, &pts, false)?,
        }
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

fn draw_lines<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    title: &str,
    pts: &[&PlotPoint],
    log_x: bool,
) -> CliResult<()> {
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let (x0, x1) = padded(
        pts.iter().map(|p| tx(p.x)).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| tx(p.x)).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = padded(
        pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max),
    );
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 16))
        .margin(12)
        .x_label_area_size(35)
        .y_label_area_size(55)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    let fmt_x = |v: &f64| {
        if log_x {
            format!("{:.3}%", 100.0 * 10f64.powf(*v))
        } else {
            format!("{v:.0}")
        }
    };
    chart
        .configure_mesh()
        .x_label_formatter(&fmt_x)
        .x_desc(if log_x { "positive rate" } else { "GAN step" })
        .draw()
        .map_err(draw_err)?;
    for (i, name) in series_names(pts).iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let mut line: Vec<(f64, f64)> = pts
            .iter()
            .filter(|p| &p.series == name)
            .map(|p| (tx(p.x), p.y))
            .collect();
        line.sort_by(|a, b| a.0.total_cmp(&b.0));
        chart
            .draw_series(LineSeries::new(line.clone(), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart
            .draw_series(line.into_iter().map(|(x, y)| Circle::new((x, y), 3, color.filled())))
            .map_err(draw_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    Ok(())
}

fn draw_bars<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    title: &str,
    pts: &[&PlotPoint],
) -> CliResult<()> {
    let series = series_names(pts);
    let mut cats: Vec<(f64, String)> = Vec::new();
    for p in pts {
        if !cats.iter().any(|(x, _)| *x == p.x) {
            cats.push((p.x, p.category.clone()));
        }
    }
    let n_cats = pts.iter().map(|p| p.x).fold(0.0, f64::max) + 1.0;
    let y_lo = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y_hi = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = padded(y_lo.min(y_hi - 1.0), y_hi);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 16))
        .margin(12)
        .x_label_area_size(35)
        .y_label_area_size(55)
        .build_cartesian_2d(-0.5..n_cats - 0.5, y0..y1)
        .map_err(draw_err)?;
    let label_of = |v: &f64| {
        cats.iter()
            .find(|(x, _)| (x - v).abs() < 1e-9)
            .map(|(_, c)| c.clone())
            .unwrap_or_default()
    };
    chart
        .configure_mesh()
        .x_labels(cats.len().max(1))
        .x_label_formatter(&label_of)
        .y_desc("final PU accuracy (%)")
        .draw()
        .map_err(draw_err)?;
    let width = 0.8 / series.len() as f64;
    for (i, name) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let offset = -0.4 + width * i as f64;
        chart
            .draw_series(pts.iter().filter(|p| &p.series == name).map(|p| {
                Rectangle::new([(p.x + offset, y0), (p.x + offset + width, p.y)], color.filled())
            }))
            .map_err(draw_err)?
            .label(name.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    Ok(())
}

/// Writes `<out>/<kind>.csv` and renders `<out>/<kind>.svg` from it.
pub fn plot(kind: PlotKind, runs: &[PathBuf], out: &Path) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    if kind == PlotKind::SampleGrid {
        let [run] = runs else {
            return Err(CliError::Config("sample_grid takes exactly one run directory".into()));
        };
        return plot_sample_grid(run, out, 8, 0);
    }
    let points = collect_points(kind, runs)?;
    let sidecar = out.join(format!("{}.csv", kind.stem()));
    write_sidecar(&sidecar, &points)?;
    let svg = out.join(format!("{}.svg", kind.stem()));
    render(kind, &read_sidecar(&sidecar)?, &svg)?;
    Ok(vec![svg, sidecar])
}

/// Sidecar row of a sample grid: one generated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub row: usize,
    pub col: usize,
    pub label: usize,
    pub negative: bool,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channels-last pixel values, space separated.
    pub values: String,
}

/// Samples the latest checkpoint's generator, one class per row with the
/// negative class below a red line.
pub fn plot_sample_grid(run: &Path, out: &Path, columns: usize, seed: u64) -> CliResult<Vec<PathBuf>> {
    let config = read_run_config(run)?;
    let FeatureShape::Image {
        channels,
        height,
        width,
    } = config.dataset.shape()
    else {
        return Err(CliError::Config("sample grids need an image dataset".into()));
    };
    let dir = RunDir::open(run)?;
    let latest = dir
        .latest_checkpoint()
        .ok_or_else(|| CliError::Data(format!("{} has no checkpoints", run.display())))?;
    let state = load_checkpoint(&dir.checkpoint_dir(latest))?;
    let k = config.k();
    let (x, labels) = pucnigan::report::sample_by_class(&state.gan.generator, columns, seed);
    let rows: Vec<SampleRow> = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| SampleRow {
            row: i / columns,
            col: i % columns,
            label,
            negative: label >= k,
            channels,
            height,
            width,
            values: x.row(i).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
        })
        .collect();
    let sidecar = out.join("sample_grid.csv");
    let mut w = csv::Writer::from_path(&sidecar)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let png = out.join("sample_grid.png");
    render_sample_grid(&sidecar, &png)?;
    Ok(vec![png, sidecar])
}

pub fn render_sample_grid(sidecar: &Path, png: &Path) -> CliResult<()> {
    let mut r = csv::Reader::from_path(sidecar)?;
    let rows: Vec<SampleRow> = r.deserialize().collect::<Result<_, _>>()?;
    let first = rows.first().ok_or_else(|| CliError::Data("empty sample sidecar".into()))?;
    let shape = FeatureShape::Image {
        channels: first.channels,
        height: first.height,
        width: first.width,
    };
    let grid_rows = rows.iter().map(|r| r.row).max().unwrap_or(0) + 1;
    let columns = rows.iter().map(|r| r.col).max().unwrap_or(0) + 1;
    let mut x = Array2::zeros((grid_rows * columns, shape.len()));
    for r in &rows {
        let values: Vec<f64> = r
            .values
            .split(' ')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Data(format!("{}: {e}", sidecar.display())))?;
        if values.len() != shape.len() {
            return Err(CliError::Data(format!("{}: sample has the wrong size", sidecar.display())));
        }
        x.row_mut(r.row * columns + r.col).assign(&ndarray::Array1::from(values));
    }
    let negative_from = rows.iter().filter(|r| r.negative).map(|r| r.row).min();
    write_sample_grid(png, &x, &shape, grid_rows, columns, negative_from)?;
    Ok(())
}
