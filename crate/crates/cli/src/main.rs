use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pucnigan::datasets::{ImageDatasetName, SyntheticSpec, UnlabeledDist};
use pucnigan::experiment::DatasetConfig;
use pucnigan_cli::grid::{run_grid, summarize, GridSpec};
use pucnigan_cli::make_data::{default_out_dir, make_data, MakeDataArgs};
use pucnigan_cli::plots::{plot, render, render_sample_grid, read_sidecar, PlotKind};
use pucnigan_cli::runs::{load_config, run_config};
use pucnigan_cli::{data_root, CliError, CliResult};

#[derive(Parser)]
#[command(name = "pucnigan", version, about = "PU classification with CNI-CGAN augmentation")]
struct Cli {
    /// Log level filter, e.g. info or debug.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Synthetic,
    Mnist,
    FashionMnist,
    Cifar10,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Type1,
    Type2,
}

#[derive(Subcommand)]
enum Command {
    /// Build a PU split and write its manifest.
    MakeData {
        #[arg(long, value_enum)]
        dataset: DatasetArg,
        #[arg(long)]
        positive_rate: f64,
        #[arg(long, value_enum, default_value = "type1")]
        dist: DistArg,
        /// Explicit unlabeled proportions over the K + 1 classes; overrides --dist.
        #[arg(long, value_delimiter = ',')]
        priors: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Source classes used as positives, comma separated.
        #[arg(long, value_delimiter = ',')]
        positive_classes: Option<Vec<usize>>,
        /// Synthetic world: number of positive classes.
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 10.0)]
        separation: f64,
        #[arg(long, default_value_t = 1000)]
        n_per_class: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Permit fetching missing dataset files.
        #[arg(long)]
        allow_download: bool,
    },
    /// Run one experiment from a config file.
    Run {
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run a grid of experiments and summarize it.
    Grid {
        spec: PathBuf,
        /// Only rebuild the summary from existing run directories.
        #[arg(long)]
        summarize_only: bool,
        /// Skip cells whose run already finished.
        #[arg(long)]
        skip_completed: bool,
    },
    /// Recompute metrics from a checkpoint directory.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw figures from run directories.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long, default_value = "figures")]
        out: PathBuf,
        /// Re-render from an existing sidecar CSV instead of run directories.
        #[arg(long)]
        from_sidecar: Option<PathBuf>,
        runs: Vec<PathBuf>,
    },
}

fn dataset_config(arg: DatasetArg, k: usize, dim: usize, separation: f64, n_per_class: usize, seed: u64) -> DatasetConfig {
    let image = |name| DatasetConfig::Image { name };
    match arg {
        DatasetArg::Synthetic => DatasetConfig::Synthetic(SyntheticSpec {
            k,
            dim,
            separation,
            n_per_class,
            n_test_per_class: None,
            seed,
        }),
        DatasetArg::Mnist => image(ImageDatasetName::Mnist),
        DatasetArg::FashionMnist => image(ImageDatasetName::FashionMnist),
        DatasetArg::Cifar10 => image(ImageDatasetName::Cifar10),
    }
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::MakeData {
            dataset,
            positive_rate,
            dist,
            priors,
            seed,
            positive_classes,
            k,
            dim,
            separation,
            n_per_class,
            out,
            allow_download,
        } => {
            let dataset = dataset_config(dataset, k, dim, separation, n_per_class, seed);
            let dist = match (priors, dist) {
                (Some(p), _) => UnlabeledDist::Custom(p),
                (None, DistArg::Type1) => UnlabeledDist::Type1,
                (None, DistArg::Type2) => UnlabeledDist::Type2,
            };
            let out = out.unwrap_or_else(|| default_out_dir(dataset.name(), positive_rate, &dist, seed));
            let args = MakeDataArgs {
                dataset,
                positive_classes,
                positive_rate,
                dist,
                seed,
                out: out.clone(),
                data_root: data_root(),
                allow_download,
            };
            let (manifest, hash) = make_data(&args)?;
            println!(
                "{}: {} positives, {} unlabeled, sha256 {hash}",
                out.join("manifest.json").display(),
                manifest.n_positives,
                manifest.n_unlabeled
            );
        }
        Command::Run {
            config,
            output_dir,
            resume,
        } => {
            let mut config = load_config(&config)?;
            if let Some(dir) = output_dir {
                config.output_dir = dir;
            }
            let dir = run_config(&config, resume)?;
            println!("{}", dir.display());
        }
        Command::Grid {
            spec,
            summarize_only,
            skip_completed,
        } => {
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", spec.display())))?;
            let spec = GridSpec::from_json_str(&text)?;
            let summary = if summarize_only {
                summarize(&spec.output_dir)?
            } else {
                run_grid(&spec, skip_completed)?
            };
            print!("{}", summary.table);
        }
        Command::Eval {
            checkpoint,
            config,
            out,
        } => {
            let report = pucnigan_cli::evaluate::eval_checkpoint(&checkpoint, config.as_deref())?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(p, json)?,
                None => println!("{json}"),
            }
        }
        Command::Plot {
            kind,
            out,
            from_sidecar,
            runs,
        } => {
            let written = match from_sidecar {
                Some(sidecar) => {
                    std::fs::create_dir_all(&out)?;
                    if kind == PlotKind::SampleGrid {
                        let png = out.join("sample_grid.png");
                        render_sample_grid(&sidecar, &png)?;
                        vec![png]
                    } else {
                        let svg = out.join(format!("{}.svg", kind.stem()));
                        render(kind, &read_sidecar(&sidecar)?, &svg)?;
                        vec![svg]
                    }
                }
                None => plot(kind, &runs, &out)?,
            };
            for p in written {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
