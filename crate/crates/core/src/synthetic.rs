//! Synthetic datasets drawn from any of the six variants with known
//! parameters.
//!
//! Each game draws from its own random stream (stream `i` of the seed), so a
//! dataset with more games keeps the earlier games unchanged. True
//! intercepts are given on the raw-feature scale, where the linear predictor
//! uses `log(1 + x)` instead of `log((1 + x) / mean)`; this keeps the targets
//! independent of the in-run feature means. [`GroundTruth`] carries the
//! matching model-scale parameters for each target month.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Days, NaiveDate};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_model_data, compute_stats, temporal_features, BuiltData, FeatureOptions, LOG_RATIO_FEATURES};
use crate::ingest::{DailyHistory, GameRecord, GenreVocabulary, RawCatalogRow, MONTH_DAYS};
use crate::models::{predictive_params, Intercept, Likelihood, ModelSpec, ParamLayout, ParamVector, Scale};

/// Log-normal parameters of a raw feature (of the log of the value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalSpec {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalSpec {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        Ok(LogNormal::new(self.mu, self.sigma)
            .map_err(|e| Error::Config(format!("log-normal feature: {e}")))?
            .sample(rng))
    }
}

/// Distributions of the raw features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureGenerator {
    /// Price in EUR, rounded to cents.
    pub price: LogNormalSpec,
    /// Storage in MB, rounded up to a whole MB.
    pub storage: LogNormalSpec,
    /// Month-1 median players, rounded half up.
    pub past_players: LogNormalSpec,
    /// Inclusive range of the number of languages.
    pub languages: (u32, u32),
    /// Inclusive range of release dates.
    pub release_from: NaiveDate,
    pub release_to: NaiveDate,
}

impl Default for FeatureGenerator {
    fn default() -> Self {
        Self {
            price: LogNormalSpec { mu: 2.3, sigma: 0.8 },
            storage: LogNormalSpec { mu: 7.5, sigma: 1.2 },
            past_players: LogNormalSpec { mu: 4.5, sigma: 1.5 },
            languages: (1, 12),
            release_from: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            release_to: NaiveDate::from_ymd_opt(2019, 12, 31).unwrap(),
        }
    }
}

/// What to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub spec: ModelSpec,
    /// Parameters with intercepts on the raw-feature scale. Coefficients
    /// follow the base feature order.
    pub true_params: ParamVector<f64>,
    pub n_games: usize,
    pub n_genres: usize,
    /// Inclusive range of genres per game.
    pub genres_per_game: (usize, usize),
    pub features: FeatureGenerator,
    /// Last month generated (2 to 5).
    pub last_month: u32,
    /// Noise scale of month `m` is the month-2 scale times
    /// `(1 + noise_growth)^(m - 2)`.
    pub noise_growth: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n_games == 0 {
            return Err(Error::Config("n_games must be >= 1".into()));
        }
        let (lo, hi) = self.genres_per_game;
        if lo == 0 || lo > hi || hi > self.n_genres {
            return Err(Error::Config(format!(
                "genres per game {lo}..={hi} must be non-empty and within {} genres",
                self.n_genres
            )));
        }
        if !(2..=5).contains(&self.last_month) {
            return Err(Error::Config(format!("last month must be 2..=5, got {}", self.last_month)));
        }
        if !(self.noise_growth >= 0.0) {
            return Err(Error::Config("noise growth must be >= 0".into()));
        }
        let f = &self.features;
        if f.languages.0 == 0 || f.languages.0 > f.languages.1 || f.release_from > f.release_to {
            return Err(Error::Config("empty language or release-date range".into()));
        }
        let layout = ParamLayout::new(&self.spec, LOG_RATIO_FEATURES.len() + 3, self.n_genres.max(1))?;
        self.true_params.to_unconstrained(&layout)?;
        Ok(())
    }
}

/// Model-scale truth for one target month.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthTruth {
    pub params: ParamVector<f64>,
    /// Constrained values in the model's parameter order.
    pub named: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// The generating parameters as given.
    pub raw: ParamVector<f64>,
    pub months: BTreeMap<u32, MonthTruth>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub records: Vec<GameRecord>,
    pub catalog: Vec<RawCatalogRow>,
    pub histories: Vec<DailyHistory>,
    pub genres: GenreVocabulary,
    pub truth: GroundTruth,
    pub spec: ModelSpec,
}

impl SyntheticDataset {
    /// Model inputs for a target month, with statistics computed in-run.
    /// Genres without games keep their parameters.
    pub fn model_data(&self, target_month: u32) -> Result<BuiltData<f64>> {
        let options = FeatureOptions::default();
        let usable: Vec<&GameRecord> = self
            .records
            .iter()
            .filter(|r| r.median(1).is_some() && r.median(target_month).is_some())
            .collect();
        let mut stats = compute_stats(&usable, target_month, &options)?;
        stats.n_genres = stats.n_genres.max(self.genres.len());
        build_model_data(&self.records, target_month, Some(&stats), &options)
    }
}

/// `floor(v + 0.5)`, clamped at 0.
pub fn round_half_up(v: f64) -> u64 {
    (v + 0.5).floor().max(0.0) as u64
}

fn genre_name(j: usize) -> String {
    format!("genre_{j:03}")
}

fn shift_intercept(i: &Intercept<f64>, by: f64) -> Intercept<f64> {
    match i {
        Intercept::Pooled(v) => Intercept::Pooled(v + by),
        Intercept::PerGenre { values, mu, sd } => Intercept::PerGenre {
            values: values.iter().map(|v| v + by).collect(),
            mu: mu + by,
            sd: *sd,
        },
    }
}

/// Scales the noise of a parameter vector by `factor`.
fn scale_noise(p: &ParamVector<f64>, factor: f64) -> ParamVector<f64> {
    let mut out = p.clone();
    out.scale = match &p.scale {
        Scale::Shared(s) => Scale::Shared(s * factor),
        Scale::Linear { intercept, coeffs } => Scale::Linear {
            intercept: shift_intercept(intercept, factor.ln()),
            coeffs: coeffs.clone(),
        },
    };
    out
}

/// One draw of the transformed target: `|N(mu, sigma)|` for the folded
/// normal, `N(mu, sigma)` for the normal.
pub fn predictive_draw<R: Rng + ?Sized>(spec: &ModelSpec, params: &ParamVector<f64>, x: &[f64], genres: &[usize], rng: &mut R) -> Result<f64> {
    let (mu, sigma) = predictive_params(spec, params, x, genres)?;
    let z: f64 = rng.sample(StandardNormal);
    Ok(match spec.likelihood {
        Likelihood::FoldedNormal => (mu + sigma * z).abs(),
        Likelihood::Normal => mu + sigma * z,
    })
}

/// Raw-scale predictors: `log(1 + x)` for the log-ratio features, then day of
/// month and the day-of-year pair.
fn raw_row(r: &GameRecord) -> Vec<f64> {
    let t = temporal_features(r.release_date);
    let (sin, cos) = (std::f64::consts::TAU * t.day_of_year_scaled).sin_cos();
    vec![
        r.price_eur.ln_1p(),
        (r.n_languages as f64).ln_1p(),
        r.storage_mb.ln_1p(),
        (r.median(1).unwrap_or(0) as f64).ln_1p(),
        t.day_of_month as f64,
        cos,
        sin,
    ]
}

struct Game {
    record: GameRecord,
    row: RawCatalogRow,
}

fn draw_game(s: &SyntheticSpec, i: usize) -> Result<Game> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(i as u64);
    let f = &s.features;
    let price = (f.price.draw(&mut rng)? * 100.0).round() / 100.0;
    let storage = f.storage.draw(&mut rng)?.ceil().max(1.0);
    let past = round_half_up(f.past_players.draw(&mut rng)?);
    let n_languages = rng.random_range(f.languages.0..=f.languages.1);
    let span = (f.release_to - f.release_from).num_days() as u64;
    let release = f.release_from + Days::new(rng.random_range(0..=span));
    let k = rng.random_range(s.genres_per_game.0..=s.genres_per_game.1);
    let genre_ids: BTreeSet<usize> = sample_indices(&mut rng, s.n_genres, k).into_iter().collect();
    let app_id = format!("syn{i:06}");

    let mut record = GameRecord {
        app_id: app_id.clone(),
        name: format!("Synthetic game {i}"),
        price_eur: price,
        n_languages,
        storage_mb: storage,
        release_date: release,
        genre_ids: genre_ids.clone(),
        monthly_medians: BTreeMap::from([(1, past)]),
    };
    let x = raw_row(&record);
    let genres: Vec<usize> = genre_ids.iter().copied().collect();
    let growth = 1.0 + s.noise_growth;
    for m in 2..=s.last_month {
        let params = scale_noise(&s.true_params, growth.powi(m as i32 - 2));
        let t = predictive_draw(&s.spec, &params, &x, &genres, &mut rng)?;
        record.monthly_medians.insert(m, round_half_up(t.exp_m1()));
    }
    let row = RawCatalogRow {
        app_id,
        name: record.name.clone(),
        price_amount: price,
        price_currency: "EUR".into(),
        languages: (0..n_languages).map(|l| format!("lang_{l:02}")).collect(),
        system_requirements_text: format!("Storage: {storage} MB available space"),
        release_date: release.format("%Y-%m-%d").to_string(),
        genres: genres.iter().map(|&j| genre_name(j)).collect(),
        developers: Vec::new(),
        publishers: Vec::new(),
    };
    Ok(Game { record, row })
}

/// Daily series whose every 30-day window is constant at that month's median.
fn history_of(r: &GameRecord) -> Result<DailyHistory> {
    let months = r.monthly_medians.keys().max().copied().unwrap_or(0) as i64;
    let series = (0..MONTH_DAYS * months)
        .map(|d| {
            let month = (d / MONTH_DAYS + 1) as u32;
            (r.release_date + Days::new(d as u64), r.monthly_medians[&month])
        })
        .collect();
    DailyHistory::new(r.app_id.clone(), series)
}

/// Model-scale parameters for a target month of `records`.
fn month_truth(s: &SyntheticSpec, data: &BuiltData<f64>, month: u32) -> Result<MonthTruth> {
    let params = scale_noise(&s.true_params, (1.0 + s.noise_growth).powi(month as i32 - 2));
    let mut loc_shift = 0.0;
    let mut scale_shift = 0.0;
    for (k, name) in LOG_RATIO_FEATURES.iter().enumerate() {
        let log_mean = data.stats.mean(name)?.ln();
        loc_shift += params.beta[k] * log_mean;
        if let Scale::Linear { coeffs, .. } = &params.scale {
            scale_shift += coeffs[k] * log_mean;
        }
    }
    if s.spec.likelihood == Likelihood::Normal {
        loc_shift -= data.stats.target_mean.ln();
    }
    let mut out = params.clone();
    out.beta0 = shift_intercept(&params.beta0, loc_shift);
    if let Scale::Linear { intercept, coeffs } = &params.scale {
        out.scale = Scale::Linear {
            intercept: shift_intercept(intercept, scale_shift),
            coeffs: coeffs.clone(),
        };
    }
    let layout = ParamLayout::new(&s.spec, data.data.n_features(), data.data.n_genres())?;
    let named = layout.names().into_iter().zip(out.to_constrained(&layout)?).collect();
    Ok(MonthTruth { params: out, named })
}

/// Generates a dataset. Deterministic given `s`, seed included.
pub fn generate(s: &SyntheticSpec) -> Result<SyntheticDataset> {
    s.validate()?;
    let games: Vec<Game> = (0..s.n_games).map(|i| draw_game(s, i)).collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(games.len());
    let mut catalog = Vec::with_capacity(games.len());
    for g in games {
        records.push(g.record);
        catalog.push(g.row);
    }
    let histories = records.iter().map(history_of).collect::<Result<Vec<_>>>()?;
    let used: BTreeSet<usize> = records.iter().flat_map(|r| r.genre_ids.iter().copied()).collect();
    if used.len() != s.n_genres {
        log::warn!("{} of {} genres have no games", s.n_genres - used.len(), s.n_genres);
    }
    let genres = GenreVocabulary {
        names: (0..s.n_genres).map(genre_name).collect(),
    };
    let mut dataset = SyntheticDataset {
        records,
        catalog,
        histories,
        genres,
        truth: GroundTruth {
            raw: s.true_params.clone(),
            months: BTreeMap::new(),
        },
        spec: s.spec,
    };
    for m in 2..=s.last_month {
        let data = dataset.model_data(m)?;
        let truth = month_truth(s, &data, m)?;
        dataset.truth.months.insert(m, truth);
    }
    Ok(dataset)
}

/// Raw-scale parameters that give realistic targets: the next month mostly
/// follows the past month, with small effects of the other features. Genre
/// intercepts are drawn around the pooled value with sd `genre_spread`.
pub fn example_params(spec: &ModelSpec, n_genres: usize, genre_spread: f64, seed: u64) -> Result<ParamVector<f64>> {
    let beta = vec![-0.05, 0.1, 0.03, 0.9, -0.004, 0.1, 0.05];
    let gamma = vec![0.05, -0.05, 0.03, -0.08, 0.002, 0.1, -0.05];
    let (beta0, gamma0) = (0.4, -0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut intercept = |base: f64| -> Result<Intercept<f64>> {
        if !spec.hierarchical {
            return Ok(Intercept::Pooled(base));
        }
        if !(genre_spread > 0.0) {
            return Err(Error::Config("genre spread must be > 0".into()));
        }
        Ok(Intercept::PerGenre {
            values: (0..n_genres)
                .map(|_| base + genre_spread * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            mu: base,
            sd: genre_spread,
        })
    };
    let beta0 = intercept(beta0)?;
    let scale = if spec.heteroscedastic {
        Scale::Linear {
            intercept: intercept(gamma0)?,
            coeffs: gamma,
        }
    } else {
        Scale::Shared(gamma0.exp())
    };
    Ok(ParamVector { beta0, beta, scale })
}

/// Serializable form of a [`SyntheticSpec`] with parameters by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub model: String,
    pub n_games: usize,
    pub n_genres: usize,
    pub genres_per_game: (usize, usize),
    #[serde(default = "default_last_month")]
    pub last_month: u32,
    #[serde(default)]
    pub noise_growth: f64,
    #[serde(default)]
    pub seed: u64,
    /// Spread of generated genre intercepts when `params` is absent.
    #[serde(default = "default_genre_spread")]
    pub genre_spread: f64,
    /// Constrained raw-scale parameters by name; absent means
    /// [`example_params`].
    #[serde(default)]
    pub params: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub features: FeatureGenerator,
}

fn default_last_month() -> u32 {
    2
}

fn default_genre_spread() -> f64 {
    1.0
}

impl SyntheticConfig {
    pub fn to_spec(&self) -> Result<SyntheticSpec> {
        let spec: ModelSpec = self.model.parse()?;
        let true_params = match &self.params {
            None => example_params(&spec, self.n_genres, self.genre_spread, self.seed)?,
            Some(named) => {
                let layout = ParamLayout::new(&spec, LOG_RATIO_FEATURES.len() + 3, self.n_genres)?;
                let names = layout.names();
                if let Some(extra) = named.keys().find(|k| !names.contains(k)) {
                    return Err(Error::Config(format!("unknown parameter `{extra}` for the {spec} model")));
                }
                let c = names
                    .iter()
                    .map(|n| named.get(n).copied().ok_or_else(|| Error::Config(format!("missing parameter `{n}`"))))
                    .collect::<Result<Vec<_>>>()?;
                ParamVector::from_constrained(&layout, &c)?
            }
        };
        let s = SyntheticSpec {
            spec,
            true_params,
            n_games: self.n_games,
            n_genres: self.n_genres,
            genres_per_game: self.genres_per_game,
            features: self.features,
            last_month: self.last_month,
            noise_growth: self.noise_growth,
            seed: self.seed,
        };
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests;
