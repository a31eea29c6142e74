//! Fitting from game records and the on-disk layout of a fit.
//!
//! A fit directory holds the draws, a manifest describing how they were
//! produced, the training statistics needed to transform new games, and the
//! design matrix the model saw.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_model_data, BuiltData, FeatureOptions, ModelData, TrainingStats};
use crate::ingest::GameRecord;
use crate::models::{Model, ModelSpec};
use crate::sampler::{diagnose, run_chains, ParamDiagnostics, PosteriorSamples, SamplerConfig};
use crate::scalar::Scalar;

pub const DRAWS_FILE: &str = "draws.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const STATS_FILE: &str = "training_stats.toml";
pub const DATA_FILE: &str = "model_data.csv";

/// Per-chain sampler statistics kept in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub step_size: f64,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub mean_accept_stat: f64,
}

/// Everything needed to interpret a draws file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub model: ModelSpec,
    pub sampler: SamplerConfig,
    pub features: FeatureOptions,
    pub n_rows: usize,
    pub n_dropped: usize,
    pub parameters: Vec<String>,
    pub divergences: usize,
    /// False when any parameter has R-hat above the threshold, or when
    /// R-hat could not be computed (a single chain).
    pub converged: bool,
    pub warnings: Vec<String>,
    pub chains: Vec<ChainSummary>,
    pub diagnostics: Vec<ParamDiagnostics>,
}

/// A fitted model with the data it was fitted to.
#[derive(Debug, Clone)]
pub struct Fit<T> {
    pub manifest: FitManifest,
    pub stats: TrainingStats,
    pub samples: PosteriorSamples<T>,
    pub data: ModelData<T>,
}

/// Builds training data from `records` and samples the posterior of `spec`.
/// Convergence problems are reported in the manifest, not as errors.
pub fn fit<T: Scalar>(spec: &ModelSpec, records: &[GameRecord], features: &FeatureOptions, cfg: &SamplerConfig) -> Result<Fit<T>> {
    spec.validate()?;
    cfg.validate()?;
    let BuiltData { data, stats, dropped } = build_model_data::<T>(records, spec.target_month, None, features)?;
    let samples = run_chains(spec, &data, cfg)?;
    let manifest = manifest_for(spec, cfg, features, data.n_rows(), dropped.len(), &samples);
    Ok(Fit {
        manifest,
        stats,
        samples,
        data,
    })
}

fn manifest_for<T: Scalar>(
    spec: &ModelSpec,
    cfg: &SamplerConfig,
    features: &FeatureOptions,
    n_rows: usize,
    n_dropped: usize,
    samples: &PosteriorSamples<T>,
) -> FitManifest {
    let mut warnings = samples.warnings.clone();
    let diagnostics = if samples.n_chains() >= 2 {
        diagnose(samples).unwrap_or_else(|e| {
            warnings.push(format!("diagnostics unavailable: {e}"));
            Vec::new()
        })
    } else {
        warnings.push("R-hat needs at least two chains; convergence not assessed".into());
        Vec::new()
    };
    let flagged: Vec<&str> = diagnostics.iter().filter(|d| d.flagged).map(|d| d.name.as_str()).collect();
    if !flagged.is_empty() {
        let msg = format!("R-hat above threshold for {}", flagged.join(", "));
        log::warn!("{msg}");
        warnings.push(msg);
    }
    FitManifest {
        model: *spec,
        sampler: cfg.clone(),
        features: *features,
        n_rows,
        n_dropped,
        parameters: samples.names().to_vec(),
        divergences: samples.total_divergences(),
        converged: !diagnostics.is_empty() && flagged.is_empty(),
        warnings,
        chains: samples
            .chains
            .iter()
            .enumerate()
            .map(|(chain, c)| ChainSummary {
                chain,
                step_size: c.step_size,
                divergences: c.divergences(),
                warmup_divergences: c.warmup_divergences,
                mean_accept_stat: c.mean_accept_stat(),
            })
            .collect(),
        diagnostics,
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes the four fit files into `dir`, creating it if needed.
pub fn write_fit<T: Scalar>(dir: &Path, fit: &Fit<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fit.samples.write_csv(create(dir, DRAWS_FILE)?)?;
    fit.data.write_csv(create(dir, DATA_FILE)?)?;
    fs::write(dir.join(MANIFEST_FILE), toml::to_string(&fit.manifest)?)?;
    fs::write(dir.join(STATS_FILE), fit.stats.to_toml()?)?;
    Ok(())
}

/// A fit read back from disk. The design matrix is not stored in a
/// reloadable form; rebuild it from records with [`StoredFit::rebuild_data`].
#[derive(Debug, Clone)]
pub struct StoredFit<T> {
    pub manifest: FitManifest,
    pub stats: TrainingStats,
    pub samples: PosteriorSamples<T>,
}

/// Reads a fit directory. A missing directory or manifest is a
/// configuration error: the fit has not been run.
pub fn read_fit<T: Scalar>(dir: &Path) -> Result<StoredFit<T>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::Config(format!("no fit found at {} (missing {MANIFEST_FILE})", dir.display())));
    }
    let manifest: FitManifest = toml::from_str(&fs::read_to_string(&manifest_path)?)?;
    let stats = TrainingStats::from_toml(&fs::read_to_string(dir.join(STATS_FILE))?)?;
    let samples = PosteriorSamples::<T>::read_csv(File::open(dir.join(DRAWS_FILE))?)?;
    if samples.names() != manifest.parameters.as_slice() {
        return Err(Error::Data(format!(
            "{} columns do not match the manifest parameters",
            dir.join(DRAWS_FILE).display()
        )));
    }
    Ok(StoredFit { manifest, stats, samples })
}

impl<T: Scalar> StoredFit<T> {
    /// Rebuilds the fitted design matrix from the same records, reusing the
    /// stored training statistics. Fails when the row count differs from
    /// the fit.
    pub fn rebuild_data(&self, records: &[GameRecord]) -> Result<ModelData<T>> {
        let built = build_model_data::<T>(records, self.manifest.model.target_month, Some(&self.stats), &self.manifest.features)?;
        if built.data.n_rows() != self.manifest.n_rows {
            return Err(Error::Data(format!(
                "records give {} usable rows but the fit used {}",
                built.data.n_rows(),
                self.manifest.n_rows
            )));
        }
        Ok(built.data)
    }

    pub fn model<'a>(&self, data: &'a ModelData<T>) -> Result<Model<'a, T>> {
        Model::new(self.manifest.model, data)
    }
}

/// Writes a serializable value as TOML.
pub fn write_toml<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut f = create_file(path)?;
    f.write_all(toml::to_string(value)?.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Creates a file for writing, creating parent directories as needed.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}
