//! Feature engineering: turns cleaned game records into the design matrix,
//! genre sets and transformed targets the models consume.
//!
//! Heavy-tailed non-negative features (price, languages, storage, past
//! players) go through the log-ratio transform `log((1 + x) / mean)` against
//! training-set means, which are kept in [`TrainingStats`] so prediction
//! reuses them. Day of month enters raw; day of year is encoded as a
//! (cos, sin) pair on the unit circle.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::GameRecord;
use crate::scalar::Scalar;

pub const PRICE: &str = "price";
pub const N_LANGUAGES: &str = "n_languages";
pub const STORAGE: &str = "storage";
pub const PAST_PLAYERS: &str = "past_median_players";
pub const DAY_OF_MONTH: &str = "day_of_month";
pub const DAY_OF_YEAR_COS: &str = "day_of_year_cos";
pub const DAY_OF_YEAR_SIN: &str = "day_of_year_sin";

/// Fixed column order of the base design matrix.
pub const BASE_FEATURES: [&str; 7] = [
    PRICE,
    N_LANGUAGES,
    STORAGE,
    PAST_PLAYERS,
    DAY_OF_MONTH,
    DAY_OF_YEAR_COS,
    DAY_OF_YEAR_SIN,
];

/// Features that go through the log-ratio transform.
pub const LOG_RATIO_FEATURES: [&str; 4] = [PRICE, N_LANGUAGES, STORAGE, PAST_PLAYERS];

/// `log((1 + x) / mean)`.
pub fn log_ratio_transform<T: Scalar>(x: T, mean: T) -> Result<T> {
    if !(mean > T::zero()) {
        return Err(Error::domain("feature mean", "> 0", mean.as_f64()));
    }
    if !(x >= T::zero()) {
        return Err(Error::domain("feature value", ">= 0", x.as_f64()));
    }
    Ok(x.ln_1p() - mean.ln())
}

/// Maps `x` in `[0, 1]` to `(sin 2 pi x, cos 2 pi x)`.
pub fn cyclic_encode<T: Scalar>(x: T) -> Result<(T, T)> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::domain("cyclic feature", "in [0, 1]", x.as_f64()));
    }
    let angle = T::TAU() * x;
    Ok(angle.sin_cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalFeatures {
    pub year: i32,
    /// 1-based day of the year.
    pub ordinal: u32,
    /// `(ordinal - 1) / days_in_year`, in `[0, 1)`.
    pub day_of_year_scaled: f64,
    pub day_of_month: u32,
}

pub fn temporal_features(release: NaiveDate) -> TemporalFeatures {
    let days_in_year = if release.leap_year() { 366.0 } else { 365.0 };
    TemporalFeatures {
        year: release.year(),
        ordinal: release.ordinal(),
        day_of_year_scaled: (release.ordinal() - 1) as f64 / days_in_year,
        day_of_month: release.day(),
    }
}

/// `log(1 + y)`.
pub fn transform_target<T: Scalar>(y_raw: T) -> Result<T> {
    if !(y_raw >= T::zero()) {
        return Err(Error::domain("target", ">= 0", y_raw.as_f64()));
    }
    Ok(y_raw.ln_1p())
}

/// `exp(t) - 1`, inverse of [`transform_target`].
pub fn inverse_transform<T: Scalar>(t: T) -> Result<T> {
    if !(t >= T::zero()) {
        return Err(Error::domain("transformed target", ">= 0", t.as_f64()));
    }
    Ok(t.exp_m1())
}

/// Statistics computed on the training set and reused at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    /// Raw-scale means of the log-ratio features.
    pub feature_means: BTreeMap<String, f64>,
    /// Mean raw target; the normal model's target goes through the
    /// log-ratio transform against it.
    pub target_mean: f64,
    pub n_genres: usize,
    /// Release years seen in training when year indicators are enabled; the
    /// first level is the baseline and gets no column.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub year_levels: Vec<i32>,
}

impl TrainingStats {
    pub fn mean(&self, feature: &str) -> Result<f64> {
        self.feature_means
            .get(feature)
            .copied()
            .ok_or_else(|| Error::Data(format!("training stats lack a mean for `{feature}`")))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let stats: Self = toml::from_str(s)?;
        for f in LOG_RATIO_FEATURES {
            let m = stats.mean(f)?;
            if !(m > 0.0) {
                return Err(Error::domain("feature mean", "> 0", m));
            }
        }
        Ok(stats)
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = BASE_FEATURES.iter().map(|s| s.to_string()).collect();
        names.extend(self.year_levels.iter().skip(1).map(|y| format!("year_{y}")));
        names
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureOptions {
    /// Adds one-hot release-year columns (off by default).
    #[serde(default)]
    pub include_year: bool,
}

/// Raw (untransformed) values of the log-ratio features for one record.
pub fn raw_log_ratio_values(record: &GameRecord) -> Result<[f64; 4]> {
    let past = record
        .median(1)
        .ok_or_else(|| Error::Data(format!("{}: no month-1 median", record.app_id)))?;
    Ok([
        record.price_eur,
        record.n_languages as f64,
        record.storage_mb,
        past as f64,
    ])
}

/// Transformed feature vector of one record under the given statistics.
pub fn feature_row<T: Scalar>(record: &GameRecord, stats: &TrainingStats) -> Result<Vec<T>> {
    let raw = raw_log_ratio_values(record)?;
    let mut row = Vec::with_capacity(BASE_FEATURES.len() + stats.year_levels.len());
    for (name, value) in LOG_RATIO_FEATURES.iter().zip(raw) {
        row.push(log_ratio_transform(T::lit(value), T::lit(stats.mean(name)?))?);
    }
    let t = temporal_features(record.release_date);
    let (sin, cos) = cyclic_encode(T::lit(t.day_of_year_scaled))?;
    row.push(T::lit(t.day_of_month as f64));
    row.push(cos);
    row.push(sin);
    for level in stats.year_levels.iter().skip(1) {
        row.push(if *level == t.year { T::one() } else { T::zero() });
    }
    Ok(row)
}

/// Assembled inputs for one model fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData<T> {
    x: Vec<T>,
    n_rows: usize,
    feature_names: Vec<String>,
    genre_sets: Vec<Vec<usize>>,
    y_raw: Vec<u64>,
    y: Vec<T>,
    n_genres: usize,
    target_log_mean: T,
    app_ids: Vec<String>,
}

impl<T: Scalar> ModelData<T> {
    /// Builds model data from already-transformed parts. `x` is row-major.
    pub fn from_parts(
        x: Vec<T>,
        feature_names: Vec<String>,
        genre_sets: Vec<Vec<usize>>,
        y_raw: Vec<u64>,
        n_genres: usize,
        target_mean: f64,
    ) -> Result<Self> {
        let n_rows = y_raw.len();
        let p = feature_names.len();
        if x.len() != n_rows * p || genre_sets.len() != n_rows {
            return Err(Error::Dimension(format!(
                "{} matrix entries and {} genre sets for {n_rows} rows x {p} features",
                x.len(),
                genre_sets.len()
            )));
        }
        if n_rows == 0 {
            return Err(Error::EmptyData("model data has no rows".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix entry".into()));
        }
        if genre_sets.iter().any(Vec::is_empty) {
            return Err(Error::EmptyGenreSet);
        }
        if !(target_mean > 0.0) {
            return Err(Error::domain("target mean", "> 0", target_mean));
        }
        let y = y_raw.iter().map(|&v| T::lit(v as f64).ln_1p()).collect();
        let app_ids = (0..n_rows).map(|i| format!("row{i}")).collect();
        Ok(Self {
            x,
            n_rows,
            feature_names,
            genre_sets,
            y_raw,
            y,
            n_genres,
            target_log_mean: T::lit(target_mean.ln()),
            app_ids,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_genres(&self) -> usize {
        self.n_genres
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        let p = self.n_features();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn x(&self) -> &[T] {
        &self.x
    }

    #[inline]
    pub fn genres(&self, i: usize) -> &[usize] {
        &self.genre_sets[i]
    }

    pub fn genre_sets(&self) -> &[Vec<usize>] {
        &self.genre_sets
    }

    pub fn y_raw(&self) -> &[u64] {
        &self.y_raw
    }

    /// `log(1 + y_raw)`.
    pub fn y(&self) -> &[T] {
        &self.y
    }

    /// Log of the training-set mean raw target.
    pub fn target_log_mean(&self) -> T {
        self.target_log_mean
    }

    pub fn app_ids(&self) -> &[String] {
        &self.app_ids
    }

    pub fn with_app_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_rows {
            return Err(Error::Dimension(format!("{} app ids for {} rows", ids.len(), self.n_rows)));
        }
        self.app_ids = ids;
        Ok(self)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyData("empty subset".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_rows) {
            return Err(Error::Dimension(format!("row {bad} out of {}", self.n_rows)));
        }
        let mut x = Vec::with_capacity(indices.len() * self.n_features());
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        Ok(Self {
            x,
            n_rows: indices.len(),
            feature_names: self.feature_names.clone(),
            genre_sets: indices.iter().map(|&i| self.genre_sets[i].clone()).collect(),
            y_raw: indices.iter().map(|&i| self.y_raw[i]).collect(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            n_genres: self.n_genres,
            target_log_mean: self.target_log_mean,
            app_ids: indices.iter().map(|&i| self.app_ids[i].clone()).collect(),
        })
    }

    /// All rows except `held_out`.
    pub fn without_row(&self, held_out: usize) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n_rows).filter(|&i| i != held_out).collect();
        self.subset(&keep)
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelData<U> {
        let conv = |v: &T| U::lit(v.as_f64());
        ModelData {
            x: self.x.iter().map(conv).collect(),
            n_rows: self.n_rows,
            feature_names: self.feature_names.clone(),
            genre_sets: self.genre_sets.clone(),
            y_raw: self.y_raw.clone(),
            y: self.y.iter().map(conv).collect(),
            n_genres: self.n_genres,
            target_log_mean: U::lit(self.target_log_mean.as_f64()),
            app_ids: self.app_ids.clone(),
        }
    }

    /// Writes `app_id, <features...>, genres, y_raw, y` as CSV; genres are
    /// `;`-separated ids.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["app_id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.extend(["genres".into(), "y_raw".into(), "y".into()]);
        w.write_record(&header)?;
        for i in 0..self.n_rows {
            let mut rec = vec![self.app_ids[i].clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            rec.push(
                self.genre_sets[i]
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            rec.push(self.y_raw[i].to_string());
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedRow {
    pub app_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct BuiltData<T> {
    pub data: ModelData<T>,
    pub stats: TrainingStats,
    pub dropped: Vec<DroppedRow>,
}

/// Computes training statistics from records that have both the month-1 and
/// target-month medians.
pub fn compute_stats(records: &[&GameRecord], target_month: u32, options: &FeatureOptions) -> Result<TrainingStats> {
    if records.is_empty() {
        return Err(Error::EmptyData("no records to compute statistics from".into()));
    }
    let n = records.len() as f64;
    let mut sums = [0.0; 4];
    let mut target_sum = 0.0;
    let mut n_genres = 0;
    let mut years = BTreeSet::new();
    for r in records {
        let raw = raw_log_ratio_values(r)?;
        for (s, v) in sums.iter_mut().zip(raw) {
            *s += v;
        }
        target_sum += r.median(target_month).unwrap_or(0) as f64;
        n_genres = n_genres.max(r.genre_ids.iter().max().map_or(0, |m| m + 1));
        years.insert(r.release_date.year());
    }
    let feature_means: BTreeMap<String, f64> = LOG_RATIO_FEATURES
        .iter()
        .zip(sums)
        .map(|(name, s)| (name.to_string(), s / n))
        .collect();
    for (name, m) in &feature_means {
        if !(*m > 0.0) {
            return Err(Error::Data(format!("training mean of `{name}` is {m}; must be > 0")));
        }
    }
    Ok(TrainingStats {
        feature_means,
        target_mean: target_sum / n,
        n_genres,
        year_levels: if options.include_year { years.into_iter().collect() } else { Vec::new() },
    })
}

/// Builds the design matrix and targets for predicting month `target_month`
/// (2 to 5) from month-1 data. Records lacking either median, or without
/// genres, are dropped and reported. With `stats` absent, statistics are
/// computed from the usable records (training); otherwise they are reused.
pub fn build_model_data<T: Scalar>(
    records: &[GameRecord],
    target_month: u32,
    stats: Option<&TrainingStats>,
    options: &FeatureOptions,
) -> Result<BuiltData<T>> {
    if !(2..=5).contains(&target_month) {
        return Err(Error::Config(format!("target month must be 2..=5, got {target_month}")));
    }
    let mut dropped = Vec::new();
    let usable: Vec<&GameRecord> = records
        .iter()
        .filter(|r| {
            let reason = if r.median(1).is_none() {
                Some("missing month-1 median".to_string())
            } else if r.median(target_month).is_none() {
                Some(format!("missing month-{target_month} median"))
            } else if r.genre_ids.is_empty() {
                Some("empty genre set".to_string())
            } else {
                None
            };
            if let Some(reason) = reason {
                log::info!("dropping {}: {reason}", r.app_id);
                dropped.push(DroppedRow {
                    app_id: r.app_id.clone(),
                    reason,
                });
                false
            } else {
                true
            }
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptyData(format!("no record has month-1 and month-{target_month} medians")));
    }
    let stats = match stats {
        Some(s) => s.clone(),
        None => compute_stats(&usable, target_month, options)?,
    };
    let mut x = Vec::with_capacity(usable.len() * stats.feature_names().len());
    for r in &usable {
        x.extend(feature_row::<T>(r, &stats)?);
    }
    let data = ModelData::from_parts(
        x,
        stats.feature_names(),
        usable.iter().map(|r| r.genre_ids.iter().copied().collect()).collect(),
        usable.iter().map(|r| r.median(target_month).unwrap()).collect(),
        stats.n_genres,
        stats.target_mean,
    )?
    .with_app_ids(usable.iter().map(|r| r.app_id.clone()).collect())?;
    Ok(BuiltData { data, stats, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, price: f64, langs: u32, storage: f64, date: &str, m1: u64, m2: Option<u64>) -> GameRecord {
        let mut monthly_medians = BTreeMap::from([(1, m1)]);
        if let Some(v) = m2 {
            monthly_medians.insert(2, v);
        }
        GameRecord {
            app_id: id.into(),
            name: String::new(),
            price_eur: price,
            n_languages: langs,
            storage_mb: storage,
            release_date: NaiveDate::parse_from_str(date, "%Y-%m-%d").unwrap(),
            genre_ids: BTreeSet::from([0, 2]),
            monthly_medians,
        }
    }

    #[test]
    fn log_ratio_values() {
        // high-precision reference: ln(3000001/1000) = 8.00636790...
        let v = log_ratio_transform(3_000_000.0_f64, 1000.0).unwrap();
        assert!((v - 8.006_367_900_983_524).abs() < 1e-12);
        assert_eq!(log_ratio_transform(999.0_f64, 1000.0).unwrap(), 0.0);
        let v = log_ratio_transform(0.0_f64, 1000.0).unwrap();
        assert!((v - (-6.907_755_278_982_137)).abs() < 1e-12);
        assert!(log_ratio_transform(1.0_f64, 0.0).is_err());
        assert!(log_ratio_transform(-1.0_f64, 3.0).is_err());
    }

    #[test]
    fn cyclic_points() {
        let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12;
        assert!(close(cyclic_encode(0.0).unwrap(), (0.0, 1.0)));
        assert!(close(cyclic_encode(0.25).unwrap(), (1.0, 0.0)));
        assert!(close(cyclic_encode(0.5).unwrap(), (0.0, -1.0)));
        assert!(cyclic_encode(1.5).is_err());
        assert!(cyclic_encode(-0.1).is_err());
    }

    #[test]
    fn temporal_examples() {
        let t = temporal_features(NaiveDate::from_ymd_opt(2020, 3, 2).unwrap());
        assert_eq!((t.year, t.ordinal, t.day_of_month), (2020, 62, 2));
        let t = temporal_features(NaiveDate::from_ymd_opt(2019, 1, 1).unwrap());
        assert_eq!(t.day_of_year_scaled, 0.0);
        let t = temporal_features(NaiveDate::from_ymd_opt(2019, 12, 31).unwrap());
        assert_eq!(t.day_of_year_scaled, 364.0 / 365.0);
        let t = temporal_features(NaiveDate::from_ymd_opt(2020, 12, 31).unwrap());
        assert_eq!(t.day_of_year_scaled, 365.0 / 366.0);
    }

    #[test]
    fn cyclic_continuity_across_new_year() {
        let enc = |day: u32| {
            let t = temporal_features(NaiveDate::from_yo_opt(2019, day).unwrap());
            cyclic_encode(t.day_of_year_scaled).unwrap()
        };
        let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        assert!(dist(enc(1), enc(365)) < dist(enc(1), enc(183)));
    }

    #[test]
    fn target_transform() {
        assert_eq!(transform_target(0.0_f64).unwrap(), 0.0);
        let t = transform_target(999.0_f64).unwrap();
        assert!((t - 1000f64.ln()).abs() < 1e-14);
        assert!((inverse_transform(t).unwrap() - 999.0).abs() < 1e-9);
        assert!(transform_target(-1.0_f64).is_err());
        assert!(inverse_transform(-0.5_f64).is_err());
    }

    #[test]
    fn two_record_matrix_matches_hand_computation() {
        let recs = vec![
            record("a", 10.0, 3, 2048.0, "2020-03-02", 100, Some(80)),
            record("b", 0.0, 1, 512.0, "2019-12-31", 20, Some(30)),
        ];
        let built = build_model_data::<f64>(&recs, 2, None, &FeatureOptions::default()).unwrap();
        let m = |a: f64, b: f64| (a + b) / 2.0;
        let means = [m(10.0, 0.0), m(3.0, 1.0), m(2048.0, 512.0), m(100.0, 20.0)];
        assert_eq!(built.stats.mean(PRICE).unwrap(), means[0]);
        let raw = [[10.0, 3.0, 2048.0, 100.0], [0.0, 1.0, 512.0, 20.0]];
        let doy = [61.0 / 366.0, 364.0 / 365.0];
        let dom = [2.0, 31.0];
        for i in 0..2 {
            let row = built.data.row(i);
            for k in 0..4 {
                assert!((row[k] - ((1.0 + raw[i][k]) / means[k]).ln()).abs() < 1e-12);
            }
            assert_eq!(row[4], dom[i]);
            let ang = 2.0 * std::f64::consts::PI * doy[i];
            assert!((row[5] - ang.cos()).abs() < 1e-12);
            assert!((row[6] - ang.sin()).abs() < 1e-12);
        }
        assert_eq!(built.data.y_raw(), &[80, 30]);
        assert!((built.data.y()[0] - 81f64.ln()).abs() < 1e-12);
        assert_eq!(built.data.n_genres(), 3);
        assert_eq!(built.stats.target_mean, 55.0);
    }

    #[test]
    fn different_means_shift_columns_by_constants() {
        let recs = vec![
            record("a", 10.0, 3, 2048.0, "2020-03-02", 100, Some(80)),
            record("b", 0.0, 1, 512.0, "2019-12-31", 20, Some(30)),
        ];
        let a = build_model_data::<f64>(&recs, 2, None, &FeatureOptions::default()).unwrap();
        let mut other = a.stats.clone();
        for v in other.feature_means.values_mut() {
            *v *= 3.0;
        }
        let b = build_model_data::<f64>(&recs, 2, Some(&other), &FeatureOptions::default()).unwrap();
        for i in 0..2 {
            for k in 0..7 {
                let shift = if k < 4 { 3f64.ln() } else { 0.0 };
                assert!((a.data.row(i)[k] - b.data.row(i)[k] - shift).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_without_target_are_dropped() {
        let recs = vec![
            record("a", 10.0, 3, 2048.0, "2020-03-02", 100, Some(80)),
            record("b", 0.0, 1, 512.0, "2019-12-31", 20, None),
        ];
        let built = build_model_data::<f64>(&recs, 2, None, &FeatureOptions::default()).unwrap();
        assert_eq!(built.data.n_rows(), 1);
        assert_eq!(built.dropped.len(), 1);
        assert_eq!(built.dropped[0].app_id, "b");
        let only_b = &recs[1..];
        assert!(matches!(
            build_model_data::<f64>(only_b, 2, None, &FeatureOptions::default()),
            Err(Error::EmptyData(_))
        ));
        assert!(build_model_data::<f64>(&recs, 6, None, &FeatureOptions::default()).is_err());
    }

    #[test]
    fn year_indicators() {
        let recs = vec![
            record("a", 10.0, 3, 2048.0, "2020-03-02", 100, Some(80)),
            record("b", 1.0, 1, 512.0, "2019-12-31", 20, Some(3)),
        ];
        let built = build_model_data::<f64>(&recs, 2, None, &FeatureOptions { include_year: true }).unwrap();
        assert_eq!(built.data.n_features(), 8);
        assert_eq!(built.data.feature_names()[7], "year_2020");
        assert_eq!(built.data.row(0)[7], 1.0);
        assert_eq!(built.data.row(1)[7], 0.0);
    }

    #[test]
    fn stats_round_trip_through_toml() {
        let recs = vec![record("a", 10.0, 3, 2048.0, "2020-03-02", 100, Some(80))];
        let built = build_model_data::<f64>(&recs, 2, None, &FeatureOptions::default()).unwrap();
        let s = built.stats.to_toml().unwrap();
        assert_eq!(TrainingStats::from_toml(&s).unwrap(), built.stats);
    }

    proptest! {
        #[test]
        fn log_ratio_is_increasing(a in 0.0..1e7f64, b in 0.0..1e7f64, mean in 0.01..1e4f64) {
            prop_assume!(a < b);
            prop_assert!(log_ratio_transform(a, mean).unwrap() < log_ratio_transform(b, mean).unwrap());
        }

        #[test]
        fn encoding_has_unit_norm(x in 0.0..=1.0f64) {
            let (s, c) = cyclic_encode(x).unwrap();
            prop_assert!((s * s + c * c - 1.0).abs() < 1e-12);
        }

        #[test]
        fn target_round_trip(y in 0u64..=3_000_000) {
            let t = transform_target(y as f64).unwrap();
            prop_assert!((inverse_transform(t).unwrap() - y as f64).abs() <= 1e-9 * (y as f64).max(1.0));
        }

        #[test]
        fn build_is_deterministic(prices in proptest::collection::vec(0.0..100.0f64, 1..10)) {
            let recs: Vec<_> = prices.iter().enumerate()
                .map(|(i, &p)| record(&i.to_string(), p, 1 + i as u32, 100.0 + i as f64, "2018-07-14", 5 + i as u64, Some(7)))
                .collect();
            let a = build_model_data::<f64>(&recs, 2, None, &FeatureOptions::default()).unwrap();
            let b = build_model_data::<f64>(&recs, 2, None, &FeatureOptions::default()).unwrap();
            let bits = |d: &ModelData<f64>| d.x().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.data), bits(&b.data));
        }
    }
}
