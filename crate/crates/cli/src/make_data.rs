//! `make-data`: materializes a PU split and its manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use pucnigan::datasets::{make_pu_split, save_synthetic, SplitSpec, SyntheticSpec, UnlabeledDist};
use pucnigan::experiment::DatasetConfig;

use crate::{CliError, CliResult};

#[derive(Clone, Debug)]
pub struct MakeDataArgs {
    pub dataset: DatasetConfig,
    pub positive_classes: Option<Vec<usize>>,
    pub positive_rate: f64,
    pub dist: UnlabeledDist,
    pub seed: u64,
    pub out: PathBuf,
    pub data_root: PathBuf,
    pub allow_download: bool,
}

#[derive(Debug, Serialize)]
pub struct SplitManifest {
    pub schema_version: u32,
    pub dataset: String,
    pub synthetic: Option<SyntheticSpec>,
    pub positive_classes: Vec<usize>,
    pub positive_rate: f64,
    pub unlabeled_dist: UnlabeledDist,
    pub seed: u64,
    pub n_positives: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    /// Realized composition of the unlabeled pool.
    pub priors: Vec<f64>,
    pub positive_source_indices: Vec<usize>,
    pub unlabeled_source_indices: Vec<usize>,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    sha256: &'a str,
    manifest: &'a SplitManifest,
}

pub fn manifest_hash(manifest: &SplitManifest) -> CliResult<String> {
    let bytes = serde_json::to_vec(manifest)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes `<out>/manifest.json` (plus the generated data for the synthetic
/// world) and returns the manifest with its hash.
pub fn make_data(args: &MakeDataArgs) -> CliResult<(SplitManifest, String)> {
    if !(args.positive_rate > 0.0 && args.positive_rate <= 1.0) {
        return Err(CliError::Config(format!(
            "--positive-rate must lie in (0, 1], got {}",
            args.positive_rate
        )));
    }
    let positive_classes = args
        .positive_classes
        .clone()
        .unwrap_or_else(|| args.dataset.default_positive_classes());
    let (base, _) = match args.dataset.load(Some(&args.data_root)) {
        Err(pucnigan::Error::Load { path, reason }) if args.allow_download => {
            return Err(CliError::Data(format!(
                "{}: {reason}; this build has no download client, place the published files under {}",
                path.display(),
                args.data_root.join(args.dataset.name()).display()
            )))
        }
        other => other?,
    };
    let spec = SplitSpec {
        positive_classes: positive_classes.clone(),
        positive_rate: args.positive_rate,
        unlabeled_dist: args.dist.clone(),
        unlabeled_size: None,
        seed: args.seed,
    };
    let data = make_pu_split(&base, &spec)?;
    let synthetic = match &args.dataset {
        DatasetConfig::Synthetic(s) => Some(s.clone()),
        DatasetConfig::Image { .. } => None,
    };
    let manifest = SplitManifest {
        schema_version: 1,
        dataset: args.dataset.name().into(),
        synthetic: synthetic.clone(),
        positive_classes,
        positive_rate: args.positive_rate,
        unlabeled_dist: args.dist.clone(),
        seed: args.seed,
        n_positives: data.positives.len(),
        n_unlabeled: data.unlabeled.len(),
        n_test: data.test.len(),
        priors: data.priors.clone(),
        positive_source_indices: data.positive_source_indices.clone(),
        unlabeled_source_indices: data.unlabeled_source_indices.clone(),
    };
    let hash = manifest_hash(&manifest)?;
    std::fs::create_dir_all(&args.out)?;
    let file = ManifestFile {
        sha256: &hash,
        manifest: &manifest,
    };
    std::fs::write(args.out.join("manifest.json"), serde_json::to_string_pretty(&file)?)?;
    if let Some(s) = &synthetic {
        save_synthetic(&args.out.join("synthetic.csv"), s, &base)?;
    }
    Ok((manifest, hash))
}

pub fn default_out_dir(dataset: &str, rate: f64, dist: &UnlabeledDist, seed: u64) -> PathBuf {
    let dist = match dist {
        UnlabeledDist::Type1 => "type1".to_string(),
        UnlabeledDist::Type2 => "type2".to_string(),
        UnlabeledDist::Custom(_) => "custom".to_string(),
    };
    Path::new("splits").join(format!("{dataset}_rate{rate}_{dist}_seed{seed}"))
}
