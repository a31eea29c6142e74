//! Run configuration: a TOML file whose keys are mirrored by flags. Flags
//! win over the file; absent keys take the documented defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use popcast::evaluation::{DEFAULT_BOOTSTRAP, DEFAULT_CI_LEVEL};
use popcast::features::FeatureOptions;
use popcast::ingest::FilterConfig;
use popcast::synthetic::{FeatureGenerator, SyntheticConfig};
use popcast::{Error, ModelSpec, SamplerConfig};
use serde::{Deserialize, Serialize};

pub const DEFAULT_OUT_DIR: &str = "popcast-out";
pub const RECORDS_FILE: &str = "records.ndjson";
pub const GENRES_FILE: &str = "genres.csv";
pub const DEFAULT_MAX_MONTH: u32 = 5;
pub const DEFAULT_GRID_POINTS: usize = 50;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the sampler, predictive draws, bootstrap and synthetic data.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub inputs: Inputs,
    pub ingest: IngestSection,
    pub model: ModelSection,
    pub sampler: SamplerSection,
    pub evaluate: EvaluateSection,
    pub compare: CompareSection,
    pub predict: PredictSection,
    pub report: ReportSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub catalog: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub genres: Option<PathBuf>,
    pub games: Option<PathBuf>,
    pub fit_dir: Option<PathBuf>,
    pub pooled_fit: Option<PathBuf>,
    pub fits: Option<Vec<PathBuf>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub max_month: Option<u32>,
    pub cap_mb: Option<f64>,
    pub min_year: Option<i32>,
    pub usd_rate: Option<f64>,
    pub gbp_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub name: Option<String>,
    pub target_month: Option<u32>,
    pub prior_scale_coeff: Option<f64>,
    pub prior_scale_sigma: Option<f64>,
    pub include_year: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub chains: Option<usize>,
    pub warmup: Option<usize>,
    pub draws: Option<usize>,
    pub target_accept: Option<f64>,
    pub max_tree_depth: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub months: Option<Vec<u32>>,
    pub exact: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub n_boot: Option<usize>,
    pub ci_level: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub overrides: Option<Vec<String>>,
    pub app_ids: Option<Vec<String>>,
    pub draws_files: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub summary: Option<bool>,
    pub curves: Option<bool>,
    pub seasonal: Option<bool>,
    pub genres: Option<bool>,
    pub insights: Option<bool>,
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_games: Option<usize>,
    pub n_genres: Option<usize>,
    pub genres_per_game: Option<(usize, usize)>,
    pub last_month: Option<u32>,
    pub noise_growth: Option<f64>,
    pub genre_spread: Option<f64>,
    pub params: Option<BTreeMap<String, f64>>,
    pub features: Option<FeatureGenerator>,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected MIN,MAX")?;
    Ok((a.trim().parse().map_err(|_| "bad MIN")?, b.trim().parse().map_err(|_| "bad MAX")?))
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    Ok((k.trim().to_string(), v.trim().parse().map_err(|_| "bad VALUE")?))
}

/// Flags mirroring every configuration key. Section keys are flattened,
/// e.g. `[sampler] chains` is `--chains`.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps the worker threads used for chains and rows.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[arg(long, global = true, help_heading = "Inputs")]
    pub catalog: Option<PathBuf>,
    #[arg(long, global = true, help_heading = "Inputs")]
    pub history: Option<PathBuf>,
    #[arg(long, global = true, help_heading = "Inputs")]
    pub records: Option<PathBuf>,
    #[arg(long, global = true, help_heading = "Inputs")]
    pub genres: Option<PathBuf>,
    #[arg(long, global = true, help_heading = "Inputs")]
    pub games: Option<PathBuf>,
    #[arg(long, global = true, help_heading = "Inputs")]
    pub fit_dir: Option<PathBuf>,
    #[arg(long, global = true, help_heading = "Inputs")]
    pub pooled_fit: Option<PathBuf>,
    /// Fit directory to compare; repeat for each fit.
    #[arg(long = "fit", global = true, help_heading = "Inputs")]
    pub fits: Vec<PathBuf>,

    #[arg(long, global = true, help_heading = "Ingest")]
    pub max_month: Option<u32>,
    #[arg(long, global = true, help_heading = "Ingest")]
    pub cap_mb: Option<f64>,
    #[arg(long, global = true, help_heading = "Ingest")]
    pub min_year: Option<i32>,
    #[arg(long, global = true, help_heading = "Ingest")]
    pub usd_rate: Option<f64>,
    #[arg(long, global = true, help_heading = "Ingest")]
    pub gbp_rate: Option<f64>,

    /// normal, normal_hetero, folded, folded_hetero, hier or hier_hetero.
    #[arg(long, global = true, help_heading = "Model")]
    pub model: Option<String>,
    #[arg(long, global = true, help_heading = "Model")]
    pub target_month: Option<u32>,
    #[arg(long, global = true, help_heading = "Model")]
    pub prior_scale_coeff: Option<f64>,
    #[arg(long, global = true, help_heading = "Model")]
    pub prior_scale_sigma: Option<f64>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", help_heading = "Model")]
    pub include_year: Option<bool>,

    #[arg(long, global = true, help_heading = "Sampler")]
    pub chains: Option<usize>,
    #[arg(long, global = true, help_heading = "Sampler")]
    pub warmup: Option<usize>,
    #[arg(long, global = true, help_heading = "Sampler")]
    pub draws: Option<usize>,
    #[arg(long, global = true, help_heading = "Sampler")]
    pub target_accept: Option<f64>,
    #[arg(long, global = true, help_heading = "Sampler")]
    pub max_tree_depth: Option<u32>,

    /// Target months to refit and tabulate LOOIC for, e.g. 2,3,4,5.
    #[arg(long, global = true, value_delimiter = ',', help_heading = "Evaluate")]
    pub months: Option<Vec<u32>>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", help_heading = "Evaluate")]
    pub exact: Option<bool>,

    #[arg(long, global = true, help_heading = "Compare")]
    pub n_boot: Option<usize>,
    #[arg(long, global = true, help_heading = "Compare")]
    pub ci_level: Option<f64>,

    /// What-if change `feature=value`; repeat for several scenarios.
    #[arg(long = "override", global = true, help_heading = "Predict")]
    pub overrides: Vec<String>,
    #[arg(long = "app-id", global = true, help_heading = "Predict")]
    pub app_ids: Vec<String>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", help_heading = "Predict")]
    pub draws_files: Option<bool>,

    #[arg(long = "report-summary", global = true, help_heading = "Report")]
    pub report_summary: Option<bool>,
    #[arg(long = "report-curves", global = true, help_heading = "Report")]
    pub report_curves: Option<bool>,
    #[arg(long = "report-seasonal", global = true, help_heading = "Report")]
    pub report_seasonal: Option<bool>,
    #[arg(long = "report-genres", global = true, help_heading = "Report")]
    pub report_genres: Option<bool>,
    #[arg(long = "report-insights", global = true, help_heading = "Report")]
    pub report_insights: Option<bool>,
    #[arg(long, global = true, help_heading = "Report")]
    pub grid_points: Option<usize>,

    #[arg(long, global = true, help_heading = "Synth")]
    pub n_games: Option<usize>,
    #[arg(long, global = true, help_heading = "Synth")]
    pub n_genres: Option<usize>,
    /// Genres per game as MIN,MAX.
    #[arg(long, global = true, value_parser = parse_pair, help_heading = "Synth")]
    pub genres_per_game: Option<(usize, usize)>,
    #[arg(long, global = true, help_heading = "Synth")]
    pub last_month: Option<u32>,
    #[arg(long, global = true, help_heading = "Synth")]
    pub noise_growth: Option<f64>,
    #[arg(long, global = true, help_heading = "Synth")]
    pub genre_spread: Option<f64>,
    /// True parameter `name=value`; repeat for each parameter.
    #[arg(long = "param", global = true, value_parser = parse_param, help_heading = "Synth")]
    pub params: Vec<(String, f64)>,
}

fn set<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The file named by `--config` (if any) with the flags applied on top.
    pub fn load(flags: &Flags) -> Result<Self, Error> {
        let mut cfg = match &flags.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(flags.clone());
        Ok(cfg)
    }

    pub fn apply(&mut self, f: Flags) {
        set(&mut self.seed, f.seed);
        set(&mut self.threads, f.threads);
        set(&mut self.out_dir, f.out_dir);
        let i = &mut self.inputs;
        set(&mut i.catalog, f.catalog);
        set(&mut i.history, f.history);
        set(&mut i.records, f.records);
        set(&mut i.genres, f.genres);
        set(&mut i.games, f.games);
        set(&mut i.fit_dir, f.fit_dir);
        set(&mut i.pooled_fit, f.pooled_fit);
        set(&mut i.fits, Some(f.fits).filter(|v| !v.is_empty()));
        let g = &mut self.ingest;
        set(&mut g.max_month, f.max_month);
        set(&mut g.cap_mb, f.cap_mb);
        set(&mut g.min_year, f.min_year);
        set(&mut g.usd_rate, f.usd_rate);
        set(&mut g.gbp_rate, f.gbp_rate);
        let m = &mut self.model;
        set(&mut m.name, f.model);
        set(&mut m.target_month, f.target_month);
        set(&mut m.prior_scale_coeff, f.prior_scale_coeff);
        set(&mut m.prior_scale_sigma, f.prior_scale_sigma);
        set(&mut m.include_year, f.include_year);
        let s = &mut self.sampler;
        set(&mut s.chains, f.chains);
        set(&mut s.warmup, f.warmup);
        set(&mut s.draws, f.draws);
        set(&mut s.target_accept, f.target_accept);
        set(&mut s.max_tree_depth, f.max_tree_depth);
        set(&mut self.evaluate.months, f.months);
        set(&mut self.evaluate.exact, f.exact);
        set(&mut self.compare.n_boot, f.n_boot);
        set(&mut self.compare.ci_level, f.ci_level);
        let p = &mut self.predict;
        set(&mut p.overrides, Some(f.overrides).filter(|v| !v.is_empty()));
        set(&mut p.app_ids, Some(f.app_ids).filter(|v| !v.is_empty()));
        set(&mut p.draws_files, f.draws_files);
        let r = &mut self.report;
        set(&mut r.summary, f.report_summary);
        set(&mut r.curves, f.report_curves);
        set(&mut r.seasonal, f.report_seasonal);
        set(&mut r.genres, f.report_genres);
        set(&mut r.insights, f.report_insights);
        set(&mut r.grid_points, f.grid_points);
        let y = &mut self.synth;
        set(&mut y.n_games, f.n_games);
        set(&mut y.n_genres, f.n_genres);
        set(&mut y.genres_per_game, f.genres_per_game);
        set(&mut y.last_month, f.last_month);
        set(&mut y.noise_growth, f.noise_growth);
        set(&mut y.genre_spread, f.genre_spread);
        if !f.params.is_empty() {
            y.params.get_or_insert_with(BTreeMap::new).extend(f.params);
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| SamplerConfig::default().seed)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    /// The records file: `inputs.records`, else the ingest output.
    pub fn records_path(&self) -> PathBuf {
        self.inputs.records.clone().unwrap_or_else(|| self.out_dir().join(RECORDS_FILE))
    }

    pub fn genres_path(&self) -> PathBuf {
        self.inputs.genres.clone().unwrap_or_else(|| self.out_dir().join(GENRES_FILE))
    }

    pub fn model_spec(&self) -> Result<ModelSpec, Error> {
        let name = self
            .model
            .name
            .as_deref()
            .ok_or_else(|| Error::Config("no model given (`[model] name` or --model)".into()))?;
        let mut spec: ModelSpec = name.parse()?;
        if let Some(m) = self.model.target_month {
            spec.target_month = m;
        }
        if let Some(v) = self.model.prior_scale_coeff {
            spec.prior_scale_coeff = v;
        }
        if let Some(v) = self.model.prior_scale_sigma {
            spec.prior_scale_sigma = v;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn feature_options(&self) -> FeatureOptions {
        FeatureOptions {
            include_year: self.model.include_year.unwrap_or(false),
        }
    }

    /// `out_dir/fit/<model>_m<month>` unless `inputs.fit_dir` is set.
    pub fn fit_dir(&self) -> Result<PathBuf, Error> {
        if let Some(d) = &self.inputs.fit_dir {
            return Ok(d.clone());
        }
        let spec = self.model_spec()?;
        Ok(self.out_dir().join("fit").join(format!("{}_m{}", spec.key(), spec.target_month)))
    }

    pub fn sampler(&self) -> Result<SamplerConfig, Error> {
        let d = SamplerConfig::default();
        let s = &self.sampler;
        let cfg = SamplerConfig {
            n_chains: s.chains.unwrap_or(d.n_chains),
            n_warmup: s.warmup.unwrap_or(d.n_warmup),
            n_draws: s.draws.unwrap_or(d.n_draws),
            target_accept: s.target_accept.unwrap_or(d.target_accept),
            max_tree_depth: s.max_tree_depth.unwrap_or(d.max_tree_depth),
            seed: self.seed(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn filter(&self) -> FilterConfig {
        let mut f = FilterConfig::default();
        let g = &self.ingest;
        if let Some(v) = g.cap_mb {
            f.cap_mb = v;
        }
        if let Some(v) = g.min_year {
            f.min_year = v;
        }
        if let Some(v) = g.usd_rate {
            f.rates.usd = v;
        }
        if let Some(v) = g.gbp_rate {
            f.rates.gbp = v;
        }
        f
    }

    pub fn max_month(&self) -> Result<u32, Error> {
        let m = self.ingest.max_month.unwrap_or(DEFAULT_MAX_MONTH);
        if !(2..=5).contains(&m) {
            return Err(Error::Config(format!("max_month must be 2..=5, got {m}")));
        }
        Ok(m)
    }

    pub fn n_boot(&self) -> usize {
        self.compare.n_boot.unwrap_or(DEFAULT_BOOTSTRAP)
    }

    pub fn ci_level(&self) -> f64 {
        self.compare.ci_level.unwrap_or(DEFAULT_CI_LEVEL)
    }

    pub fn grid_points(&self) -> Result<usize, Error> {
        let n = self.report.grid_points.unwrap_or(DEFAULT_GRID_POINTS);
        if n < 2 {
            return Err(Error::Config(format!("grid_points must be >= 2, got {n}")));
        }
        Ok(n)
    }

    pub fn synthetic(&self) -> Result<SyntheticConfig, Error> {
        let y = &self.synth;
        let need = |v: Option<usize>, key: &str| v.ok_or_else(|| Error::Config(format!("synth needs `{key}`")));
        Ok(SyntheticConfig {
            model: self
                .model
                .name
                .clone()
                .ok_or_else(|| Error::Config("synth needs a model (`[model] name` or --model)".into()))?,
            n_games: need(y.n_games, "n_games")?,
            n_genres: need(y.n_genres, "n_genres")?,
            genres_per_game: y.genres_per_game.unwrap_or((1, 3)),
            last_month: y.last_month.unwrap_or(DEFAULT_MAX_MONTH),
            noise_growth: y.noise_growth.unwrap_or(0.0),
            seed: self.seed(),
            genre_spread: y.genre_spread.unwrap_or(1.0),
            params: y.params.clone(),
            features: y.features.unwrap_or_default(),
        })
    }
}

/// Fails with a configuration error when an input path does not exist.
pub fn require_file(path: &Path, what: &str) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} `{}` does not exist", path.display())))
    }
}
