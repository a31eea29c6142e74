//! Posterior interpretation: summary tables, contribution and seasonal
//! curves, genre intercepts, per-game predictions and dataset statistics.
//!
//! Percentiles use linear interpolation between order statistics (type 7).
//! Reports are flat rows of `entity, statistic, value, q5, q95`.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{feature_row, LOG_RATIO_FEATURES};
use crate::ingest::GameRecord;
use crate::models::{Likelihood, ModelSpec, ParamLayout, ParamVector};
use crate::sampler::PosteriorSamples;
use crate::scalar::{self, Scalar};
use crate::TrainingStats;

/// Default factor over the pooled interval width above which a genre
/// intercept is marked high-variance.
pub const HIGH_VARIANCE_FACTOR: f64 = 3.0;

/// Mean and 5th/95th percentiles of a set of draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub q5: f64,
    pub q95: f64,
}

impl Summary {
    pub fn from_draws(draws: &[f64]) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::EmptyData("no draws to summarize".into()));
        }
        if let Some(v) = draws.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("draw {v} in summary")));
        }
        let q = scalar::quantiles(draws, &[0.05, 0.95]);
        Ok(Self {
            mean: scalar::mean(draws),
            q5: q[0],
            q95: q[1],
        })
    }

    pub fn contains_zero(&self) -> bool {
        self.q5 <= 0.0 && self.q95 >= 0.0
    }

    pub fn width(&self) -> f64 {
        self.q95 - self.q5
    }
}

fn pooled_f64<T: Scalar>(samples: &PosteriorSamples<T>, name: &str) -> Result<Vec<f64>> {
    Ok(samples.pooled_by_name(name)?.into_iter().map(Scalar::as_f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub name: String,
    #[serde(flatten)]
    pub summary: Summary,
    /// The 90% interval contains 0.
    pub contains_zero: bool,
}

/// One row per parameter, in sample order.
pub fn posterior_summary<T: Scalar>(samples: &PosteriorSamples<T>) -> Result<Vec<SummaryRow>> {
    (0..samples.n_params())
        .map(|i| {
            let draws: Vec<f64> = samples.pooled(i).into_iter().map(Scalar::as_f64).collect();
            let summary = Summary::from_draws(&draws)?;
            Ok(SummaryRow {
                name: samples.names()[i].clone(),
                summary,
                contains_zero: summary.contains_zero(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Distribution of `coef * log(1 + x)` at each raw value `x >= 0`.
pub fn feature_contribution(coef_draws: &[f64], grid: &[f64]) -> Result<Vec<CurvePoint>> {
    grid.iter()
        .map(|&x| {
            if !(x >= 0.0) {
                return Err(Error::domain("contribution grid value", ">= 0", x));
            }
            let f = x.ln_1p();
            let values: Vec<f64> = coef_draws.iter().map(|b| b * f).collect();
            Ok(CurvePoint {
                x,
                summary: Summary::from_draws(&values)?,
            })
        })
        .collect()
}

/// A named curve, e.g. the contribution of `beta[1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub parameter: String,
    pub feature: String,
    pub points: Vec<CurvePoint>,
}

/// Contribution curves of the log-ratio features for the location
/// coefficients and, when present, the scale coefficients. `grids` holds a
/// raw-value grid per feature name.
pub fn contribution_curves<T: Scalar>(samples: &PosteriorSamples<T>, grids: &BTreeMap<String, Vec<f64>>) -> Result<Vec<Curve>> {
    let mut out = Vec::new();
    for prefix in ["beta", "gamma"] {
        for (k, feature) in LOG_RATIO_FEATURES.iter().enumerate() {
            let name = format!("{prefix}[{}]", k + 1);
            if samples.param_index(&name).is_err() {
                continue;
            }
            let Some(grid) = grids.get(*feature) else { continue };
            out.push(Curve {
                parameter: name.clone(),
                feature: feature.to_string(),
                points: feature_contribution(&pooled_f64(samples, &name)?, grid)?,
            });
        }
    }
    Ok(out)
}

/// Distribution of `beta5 * day` for a day of month in `1..=31`.
pub fn day_of_month_effect(beta5_draws: &[f64], day: u32) -> Result<Summary> {
    if !(1..=31).contains(&day) {
        return Err(Error::domain("day of month", "in 1..=31", day));
    }
    let values: Vec<f64> = beta5_draws.iter().map(|b| b * day as f64).collect();
    Summary::from_draws(&values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeasonalPoint {
    pub x: f64,
    /// `b6 cos(2 pi x) + b7 sin(2 pi x)`.
    pub log_space: Summary,
    /// `exp` of the log-space value: the multiplicative effect.
    pub original: Summary,
}

/// Seasonal curve over a grid of scaled days of year in `[0, 1]`.
pub fn day_of_year_effect(cos_draws: &[f64], sin_draws: &[f64], grid: &[f64]) -> Result<Vec<SeasonalPoint>> {
    if cos_draws.len() != sin_draws.len() {
        return Err(Error::Dimension(format!("{} cosine and {} sine draws", cos_draws.len(), sin_draws.len())));
    }
    grid.iter()
        .map(|&x| {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::domain("day-of-year grid value", "in [0, 1]", x));
            }
            let (s, c) = (std::f64::consts::TAU * x).sin_cos();
            let log_space: Vec<f64> = cos_draws.iter().zip(sin_draws).map(|(a, b)| a * c + b * s).collect();
            let original: Vec<f64> = log_space.iter().map(|v| v.exp()).collect();
            Ok(SeasonalPoint {
                x,
                log_space: Summary::from_draws(&log_space)?,
                original: Summary::from_draws(&original)?,
            })
        })
        .collect()
}

/// Seasonal curves for the location (`beta[6]`, `beta[7]`) and, when present,
/// the scale (`gamma[6]`, `gamma[7]`) coefficients.
pub fn seasonal_curves<T: Scalar>(samples: &PosteriorSamples<T>, grid: &[f64]) -> Result<Vec<(String, Vec<SeasonalPoint>)>> {
    let mut out = Vec::new();
    for prefix in ["beta", "gamma"] {
        let (c, s) = (format!("{prefix}[6]"), format!("{prefix}[7]"));
        if samples.param_index(&c).is_err() {
            continue;
        }
        out.push((
            prefix.to_string(),
            day_of_year_effect(&pooled_f64(samples, &c)?, &pooled_f64(samples, &s)?, grid)?,
        ));
    }
    Ok(out)
}

/// `intercept - sum_i coef_i * log(mean_i)` per draw.
pub fn adjusted_intercept_draws(intercept: &[f64], terms: &[(&[f64], f64)]) -> Result<Vec<f64>> {
    for (coef, mean) in terms {
        if coef.len() != intercept.len() {
            return Err(Error::Dimension(format!("{} coefficient draws for {} intercept draws", coef.len(), intercept.len())));
        }
        if !(*mean > 0.0) {
            return Err(Error::domain("feature mean", "> 0", *mean));
        }
    }
    Ok((0..intercept.len())
        .map(|d| intercept[d] - terms.iter().map(|(c, m)| c[d] * m.ln()).sum::<f64>())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjustedIntercepts {
    pub beta0: Summary,
    pub gamma0: Option<Summary>,
}

/// Intercepts with the training-mean offsets of the four log-ratio features
/// folded back in. Hierarchical fits use the genre hyper-mean.
pub fn adjusted_intercept<T: Scalar>(samples: &PosteriorSamples<T>, stats: &TrainingStats) -> Result<AdjustedIntercepts> {
    let block = |prefix: &str, intercept: &str| -> Result<Option<Summary>> {
        let name = [intercept.to_string(), format!("{intercept}_mu")]
            .into_iter()
            .find(|n| samples.param_index(n).is_ok());
        let Some(name) = name else { return Ok(None) };
        let base = pooled_f64(samples, &name)?;
        let mut coefs = Vec::new();
        for (k, feature) in LOG_RATIO_FEATURES.iter().enumerate() {
            coefs.push((pooled_f64(samples, &format!("{prefix}[{}]", k + 1))?, stats.mean(feature)?));
        }
        let terms: Vec<(&[f64], f64)> = coefs.iter().map(|(c, m)| (c.as_slice(), *m)).collect();
        Ok(Some(Summary::from_draws(&adjusted_intercept_draws(&base, &terms)?)?))
    };
    Ok(AdjustedIntercepts {
        beta0: block("beta", "beta0")?.ok_or_else(|| Error::Data("samples have no location intercept".into()))?,
        gamma0: block("gamma", "gamma0")?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenreRow {
    pub genre: usize,
    pub beta0: Summary,
    pub gamma0: Option<Summary>,
    /// 5th/95th percentiles of the pooled intercept.
    pub pooled_beta0: (f64, f64),
    pub pooled_gamma0: Option<(f64, f64)>,
    pub high_variance: bool,
}

fn genre_count(names: &[String]) -> usize {
    names.iter().filter(|n| n.starts_with("beta0[")).count()
}

/// Per-genre intercepts of a hierarchical fit next to the pooled fit's
/// intercept band. Genres whose location interval is wider than
/// `width_factor` times the pooled one are marked high-variance.
pub fn genre_intercept_report<T: Scalar>(
    hier: &PosteriorSamples<T>,
    pooled: &PosteriorSamples<T>,
    n_genres: usize,
    width_factor: f64,
) -> Result<Vec<GenreRow>> {
    let found = genre_count(hier.names());
    if found != n_genres {
        return Err(Error::Dimension(format!("hierarchical fit has {found} genres, expected {n_genres}")));
    }
    if genre_count(pooled.names()) != 0 {
        return Err(Error::Config("second fit must have a pooled intercept".into()));
    }
    let band = |name: &str| -> Result<Option<Summary>> {
        if pooled.param_index(name).is_err() {
            return Ok(None);
        }
        Ok(Some(Summary::from_draws(&pooled_f64(pooled, name)?)?))
    };
    let pooled_beta0 = band("beta0")?.ok_or_else(|| Error::Data("pooled fit has no `beta0`".into()))?;
    let pooled_gamma0 = band("gamma0")?;
    (0..n_genres)
        .map(|j| {
            let beta0 = Summary::from_draws(&pooled_f64(hier, &format!("beta0[{j}]"))?)?;
            let gamma_name = format!("gamma0[{j}]");
            let gamma0 = if hier.param_index(&gamma_name).is_ok() {
                Some(Summary::from_draws(&pooled_f64(hier, &gamma_name)?)?)
            } else {
                None
            };
            Ok(GenreRow {
                genre: j,
                beta0,
                gamma0,
                pooled_beta0: (pooled_beta0.q5, pooled_beta0.q95),
                pooled_gamma0: pooled_gamma0.map(|s| (s.q5, s.q95)),
                high_variance: beta0.width() > width_factor * pooled_beta0.width(),
            })
        })
        .collect()
}

/// Predictive draws for one game.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub app_id: String,
    /// Draws on the transformed-target scale, one per posterior draw.
    pub transformed: Vec<f64>,
    /// The same draws in player-count space.
    pub counts: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Prediction {
    /// Count-space 5th, 50th and 95th percentiles and mean.
    pub fn quantiles(&self) -> Result<[f64; 4]> {
        let s = Summary::from_draws(&self.counts)?;
        let q = scalar::quantiles(&self.counts, &[0.5]);
        Ok([s.q5, q[0], s.q95, s.mean])
    }
}

fn layout_for<T: Scalar>(spec: &ModelSpec, samples: &PosteriorSamples<T>, stats: &TrainingStats) -> Result<ParamLayout> {
    let layout = ParamLayout::new(spec, stats.feature_names().len(), stats.n_genres)?;
    if layout.names() != samples.names() {
        return Err(Error::Dimension(format!(
            "draws do not match the {spec} model with {} features and {} genres",
            stats.feature_names().len(),
            stats.n_genres
        )));
    }
    Ok(layout)
}

/// Draws the predictive distribution of `game` once per posterior draw and
/// maps it back to player counts. Genres the fit has no intercept for use the
/// genre hyper-mean, with a warning.
pub fn predict_distribution<T: Scalar>(
    spec: &ModelSpec,
    samples: &PosteriorSamples<T>,
    game: &GameRecord,
    stats: &TrainingStats,
    seed: u64,
) -> Result<Prediction> {
    let layout = layout_for(spec, samples, stats)?;
    let x: Vec<f64> = feature_row(game, stats)?;
    let genres: Vec<usize> = game.genre_ids.iter().copied().collect();
    let mut warnings = Vec::new();
    if spec.hierarchical {
        if genres.is_empty() {
            return Err(Error::EmptyGenreSet);
        }
        let unknown: Vec<usize> = genres.iter().copied().filter(|&j| j >= stats.n_genres).collect();
        if !unknown.is_empty() {
            let msg = format!("{}: genres {unknown:?} unseen in training; using the genre hyper-mean", game.app_id);
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let log_mean = stats.target_mean.ln();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transformed = Vec::with_capacity(samples.n_chains() * samples.n_draws());
    let mut counts = Vec::with_capacity(transformed.capacity());
    for draw in samples.iter_draws() {
        let c: Vec<f64> = draw.iter().map(|v| v.as_f64()).collect();
        let params = ParamVector::from_constrained(&layout, &c)?;
        let (mu, sigma) = crate::models::predictive_params(spec, &params, &x, &genres)?;
        let z: f64 = StandardNormal.sample(&mut rng);
        let (t, count) = match spec.likelihood {
            Likelihood::FoldedNormal => {
                let t = (mu + sigma * z).abs();
                (t, t.exp_m1())
            }
            // the normal target is log((1 + y) / mean)
            Likelihood::Normal => {
                let t = mu + sigma * z;
                (t, (t + log_mean).exp_m1())
            }
        };
        transformed.push(t);
        counts.push(count);
    }
    Ok(Prediction {
        app_id: game.app_id.clone(),
        transformed,
        counts,
        warnings,
    })
}

/// A single-feature change to a game's raw values.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub feature: String,
    pub value: f64,
}

impl std::str::FromStr for Override {
    type Err = Error;

    /// Parses `feature=value`.
    fn from_str(s: &str) -> Result<Self> {
        let (feature, value) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{s}` is not feature=value")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("override `{s}` has a non-numeric value")))?;
        Ok(Self {
            feature: feature.trim().to_string(),
            value,
        })
    }
}

fn whole(what: &'static str, v: f64) -> Result<u64> {
    if !(v >= 0.0) || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(Error::domain(what, "a non-negative integer", v));
    }
    Ok(v as u64)
}

/// Applies an override to the raw record. Legal features: `price`,
/// `n_languages`, `storage`, `past_median_players`, `day_of_month` and
/// `day_of_year` (1-based ordinal); the last two move the release date.
pub fn apply_override(game: &GameRecord, o: &Override) -> Result<GameRecord> {
    let mut g = game.clone();
    let v = o.value;
    match o.feature.as_str() {
        "price" => {
            if !(v >= 0.0) {
                return Err(Error::domain("price", ">= 0", v));
            }
            g.price_eur = v;
        }
        "n_languages" => g.n_languages = whole("number of languages", v)? as u32,
        "storage" => {
            if !(v >= 0.0) {
                return Err(Error::domain("storage", ">= 0", v));
            }
            g.storage_mb = v;
        }
        "past_median_players" => {
            g.monthly_medians.insert(1, whole("past median players", v)?);
        }
        "day_of_month" => {
            let d = whole("day of month", v)? as u32;
            g.release_date = g
                .release_date
                .with_day(d)
                .ok_or_else(|| Error::domain("day of month", "valid in the release month", v))?;
        }
        "day_of_year" => {
            let d = whole("day of year", v)? as u32;
            g.release_date = NaiveDate::from_yo_opt(g.release_date.year(), d)
                .ok_or_else(|| Error::domain("day of year", "valid in the release year", v))?;
        }
        other => return Err(Error::Config(format!("unknown override feature `{other}`"))),
    }
    Ok(g)
}

/// The original prediction followed by one per override, all with the same
/// seed. Labels are `original` and `feature=value`.
pub fn what_if<T: Scalar>(
    spec: &ModelSpec,
    samples: &PosteriorSamples<T>,
    game: &GameRecord,
    overrides: &[Override],
    stats: &TrainingStats,
    seed: u64,
) -> Result<Vec<(String, Prediction)>> {
    let changed: Vec<GameRecord> = overrides.iter().map(|o| apply_override(game, o)).collect::<Result<_>>()?;
    let mut out = vec![("original".to_string(), predict_distribution(spec, samples, game, stats, seed)?)];
    for (o, g) in overrides.iter().zip(&changed) {
        out.push((format!("{}={}", o.feature, o.value), predict_distribution(spec, samples, g, stats, seed)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariateStats {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub stdev: f64,
    pub min: f64,
    pub max: f64,
}

impl VariateStats {
    fn new(name: impl Into<String>, values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            name: name.into(),
            n: values.len(),
            mean: scalar::mean(values),
            median: scalar::quantiles(values, &[0.5])[0],
            stdev: scalar::sample_variance(values).sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenreEdge {
    pub a: usize,
    pub b: usize,
    pub shared: usize,
    /// Shared games over games in either genre.
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetInsights {
    pub variates: Vec<VariateStats>,
    /// Month-2 minus month-1 medians over games with both.
    pub month_difference: Option<VariateStats>,
    /// Pearson correlation of month-1 and month-2 medians.
    pub pearson_m1_m2: Option<f64>,
    /// Genre id and game count.
    pub genre_nodes: Vec<(usize, usize)>,
    pub genre_edges: Vec<GenreEdge>,
}

/// Pearson correlation; `None` for fewer than two pairs or a constant side.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ma, mb) = (scalar::mean(a), scalar::mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

pub fn dataset_insights(records: &[GameRecord]) -> Result<DatasetInsights> {
    if records.is_empty() {
        return Err(Error::EmptyData("no records for dataset insights".into()));
    }
    let column = |f: &dyn Fn(&GameRecord) -> Option<f64>| -> Vec<f64> { records.iter().filter_map(f).collect() };
    let mut variates: Vec<VariateStats> = [
        VariateStats::new("price_eur", &column(&|r| Some(r.price_eur))),
        VariateStats::new("n_languages", &column(&|r| Some(r.n_languages as f64))),
        VariateStats::new("storage_mb", &column(&|r| Some(r.storage_mb))),
    ]
    .into_iter()
    .flatten()
    .collect();
    let max_month = records.iter().filter_map(|r| r.monthly_medians.keys().max().copied()).max().unwrap_or(0);
    for m in 1..=max_month {
        if let Some(v) = VariateStats::new(format!("month_{m}_median"), &column(&|r| r.median(m).map(|v| v as f64))) {
            variates.push(v);
        }
    }
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.median(1)? as f64, r.median(2)? as f64)))
        .collect();
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| b - a).collect();
    let (m1, m2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();

    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut together: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for r in records {
        let ids: Vec<usize> = r.genre_ids.iter().copied().collect();
        for (i, &a) in ids.iter().enumerate() {
            *counts.entry(a).or_default() += 1;
            for &b in &ids[i + 1..] {
                *together.entry((a, b)).or_default() += 1;
            }
        }
    }
    let genre_edges = together
        .into_iter()
        .map(|((a, b), shared)| GenreEdge {
            a,
            b,
            shared,
            proportion: shared as f64 / (counts[&a] + counts[&b] - shared) as f64,
        })
        .collect();
    Ok(DatasetInsights {
        variates,
        month_difference: VariateStats::new("month_2_minus_month_1", &diffs),
        pearson_m1_m2: pearson(&m1, &m2),
        genre_nodes: counts.into_iter().collect(),
        genre_edges,
    })
}

/// One line of a report file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub entity: String,
    pub statistic: String,
    pub value: f64,
    pub q5: Option<f64>,
    pub q95: Option<f64>,
}

impl ReportRow {
    pub fn value(entity: impl Into<String>, statistic: impl Into<String>, value: f64) -> Self {
        Self {
            entity: entity.into(),
            statistic: statistic.into(),
            value,
            q5: None,
            q95: None,
        }
    }

    pub fn summary(entity: impl Into<String>, statistic: impl Into<String>, s: &Summary) -> Self {
        Self {
            entity: entity.into(),
            statistic: statistic.into(),
            value: s.mean,
            q5: Some(s.q5),
            q95: Some(s.q95),
        }
    }
}

pub fn write_report_csv<W: Write>(writer: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_report(rows: &[SummaryRow]) -> Vec<ReportRow> {
    rows.iter()
        .flat_map(|r| {
            [
                ReportRow::summary(&r.name, "mean", &r.summary),
                ReportRow::value(&r.name, "interval_contains_zero", r.contains_zero as u8 as f64),
            ]
        })
        .collect()
}

pub fn curve_report(curves: &[Curve]) -> Vec<ReportRow> {
    curves
        .iter()
        .flat_map(|c| {
            c.points
                .iter()
                .map(move |p| ReportRow::summary(format!("contribution/{}/{}", c.parameter, c.feature), format!("x={}", p.x), &p.summary))
        })
        .collect()
}

pub fn seasonal_report(curves: &[(String, Vec<SeasonalPoint>)]) -> Vec<ReportRow> {
    let mut out = Vec::new();
    for (block, points) in curves {
        for p in points {
            out.push(ReportRow::summary(format!("day_of_year/{block}/log"), format!("x={}", p.x), &p.log_space));
            out.push(ReportRow::summary(format!("day_of_year/{block}/exp"), format!("x={}", p.x), &p.original));
        }
    }
    out
}

pub fn genre_report(rows: &[GenreRow], names: Option<&[String]>) -> Vec<ReportRow> {
    let mut out = Vec::new();
    for r in rows {
        let entity = match names.and_then(|n| n.get(r.genre)) {
            Some(name) => format!("genre/{}/{name}", r.genre),
            None => format!("genre/{}", r.genre),
        };
        out.push(ReportRow::summary(&entity, "beta0", &r.beta0));
        if let Some(g) = &r.gamma0 {
            out.push(ReportRow::summary(&entity, "gamma0", g));
        }
        out.push(ReportRow {
            entity: entity.clone(),
            statistic: "pooled_beta0_band".into(),
            value: 0.5 * (r.pooled_beta0.0 + r.pooled_beta0.1),
            q5: Some(r.pooled_beta0.0),
            q95: Some(r.pooled_beta0.1),
        });
        if let Some((lo, hi)) = r.pooled_gamma0 {
            out.push(ReportRow {
                entity: entity.clone(),
                statistic: "pooled_gamma0_band".into(),
                value: 0.5 * (lo + hi),
                q5: Some(lo),
                q95: Some(hi),
            });
        }
        out.push(ReportRow::value(&entity, "high_variance", r.high_variance as u8 as f64));
    }
    out
}

pub fn insights_report(ins: &DatasetInsights) -> Vec<ReportRow> {
    let mut out = Vec::new();
    let variate = |out: &mut Vec<ReportRow>, v: &VariateStats| {
        for (stat, value) in [
            ("n", v.n as f64),
            ("mean", v.mean),
            ("median", v.median),
            ("stdev", v.stdev),
            ("min", v.min),
            ("max", v.max),
        ] {
            out.push(ReportRow::value(&v.name, stat, value));
        }
    };
    for v in &ins.variates {
        variate(&mut out, v);
    }
    if let Some(d) = &ins.month_difference {
        variate(&mut out, d);
    }
    if let Some(r) = ins.pearson_m1_m2 {
        out.push(ReportRow::value("month_1_vs_month_2", "pearson", r));
    }
    for (g, n) in &ins.genre_nodes {
        out.push(ReportRow::value(format!("genre_node/{g}"), "games", *n as f64));
    }
    for e in &ins.genre_edges {
        out.push(ReportRow::value(format!("genre_edge/{}-{}", e.a, e.b), "shared", e.shared as f64));
        out.push(ReportRow::value(format!("genre_edge/{}-{}", e.a, e.b), "proportion", e.proportion));
    }
    out
}

/// Fixed-width text table of a posterior summary; flagged rows are marked
/// with `*`.
pub fn render_summary_text(rows: &[SummaryRow]) -> String {
    let mut s = format!("{:<16} {:>10} {:>10} {:>10}\n", "parameter", "mean", "q5", "q95");
    for r in rows {
        s.push_str(&format!(
            "{:<16} {:>10.4} {:>10.4} {:>10.4}{}\n",
            r.name,
            r.summary.mean,
            r.summary.q5,
            r.summary.q95,
            if r.contains_zero { " *" } else { "" }
        ));
    }
    s.push_str("* 90% interval contains 0\n");
    s
}

#[cfg(test)]
mod tests;
