//! Offline ingestion of scraped catalog and player-history files.
//!
//! Raw rows arrive as newline-delimited JSON objects, daily histories as a
//! CSV of `app_id,date,players`. Cleaning converts prices to EUR, pulls the
//! storage requirement out of free-text system requirements, drops outliers
//! and old releases, and reduces each daily history to monthly medians over
//! fixed 30-day windows after release.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{Datelike, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of one post-release "month" in days.
pub const MONTH_DAYS: i64 = 30;
/// Windows with fewer daily observations than this are reported as sparse.
pub const SPARSE_WINDOW_OBS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Currency {
    #[serde(rename = "EUR")]
    Eur,
    #[serde(rename = "USD")]
    Usd,
    #[serde(rename = "GBP")]
    Gbp,
}

impl FromStr for Currency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EUR" => Ok(Currency::Eur),
            "USD" => Ok(Currency::Usd),
            "GBP" => Ok(Currency::Gbp),
            _ => Err(Error::UnknownCurrency(s.to_string())),
        }
    }
}

impl fmt::Display for Currency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Currency::Eur => "EUR",
            Currency::Usd => "USD",
            Currency::Gbp => "GBP",
        })
    }
}

/// EUR per unit of foreign currency. Defaults are the November 2020 rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExchangeRates {
    pub usd: f64,
    pub gbp: f64,
}

impl Default for ExchangeRates {
    fn default() -> Self {
        Self { usd: 0.82, gbp: 1.09 }
    }
}

impl ExchangeRates {
    pub fn rate(&self, currency: Currency) -> f64 {
        match currency {
            Currency::Eur => 1.0,
            Currency::Usd => self.usd,
            Currency::Gbp => self.gbp,
        }
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Converts a price to EUR, rounded to cents.
pub fn convert_price(amount: f64, currency: Currency, rates: &ExchangeRates) -> Result<f64> {
    if !(amount >= 0.0) || !amount.is_finite() {
        return Err(Error::domain("price", "finite and >= 0", amount));
    }
    Ok(round2(amount * rates.rate(currency)))
}

/// [`convert_price`] from a raw currency code.
pub fn convert_price_code(amount: f64, code: &str, rates: &ExchangeRates) -> Result<f64> {
    convert_price(amount, code.parse()?, rates)
}

fn storage_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)(?:storage|hard\s*(?:drive|disk)(?:\s*space)?)\s*:\s*([0-9]+(?:\.[0-9]+)?)\s*(TB|GB|MB)",
        )
        .unwrap()
    })
}

/// First storage quantity in a system-requirements text, in MB.
pub fn extract_storage_mb(requirements_text: &str) -> Option<f64> {
    let caps = storage_regex().captures(requirements_text)?;
    let value: f64 = caps[1].parse().ok()?;
    let factor = match caps[2].to_ascii_uppercase().as_str() {
        "TB" => 1024.0 * 1024.0,
        "GB" => 1024.0,
        _ => 1.0,
    };
    Some(value * factor)
}

/// One catalog row as scraped, before any cleaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCatalogRow {
    pub app_id: String,
    #[serde(default)]
    pub name: String,
    pub price_amount: f64,
    pub price_currency: String,
    #[serde(default)]
    pub languages: Vec<String>,
    #[serde(default)]
    pub system_requirements_text: String,
    pub release_date: String,
    #[serde(default)]
    pub genres: Vec<String>,
    #[serde(default)]
    pub developers: Vec<String>,
    #[serde(default)]
    pub publishers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    StorageOutlier,
    TooOld,
    MissingStorage,
    UnknownCurrency,
    InvalidPrice,
    InvalidDate,
    NoGenres,
    DuplicateAppId,
    MissingAppId,
    Unparseable,
    InvalidHistory,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::StorageOutlier => "storage_outlier",
            RejectReason::TooOld => "too_old",
            RejectReason::MissingStorage => "missing_storage",
            RejectReason::UnknownCurrency => "unknown_currency",
            RejectReason::InvalidPrice => "invalid_price",
            RejectReason::InvalidDate => "invalid_date",
            RejectReason::NoGenres => "no_genres",
            RejectReason::DuplicateAppId => "duplicate_app_id",
            RejectReason::MissingAppId => "missing_app_id",
            RejectReason::Unparseable => "unparseable",
            RejectReason::InvalidHistory => "invalid_history",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub app_id: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub cap_mb: f64,
    pub min_year: i32,
    pub rates: ExchangeRates,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            cap_mb: 300.0 * 1024.0,
            min_year: 2015,
            rates: ExchangeRates::default(),
        }
    }
}

/// A catalog row that passed cleaning but has no player history attached yet.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanRow {
    pub app_id: String,
    pub name: String,
    pub price_eur: f64,
    pub n_languages: u32,
    pub storage_mb: f64,
    pub release_date: NaiveDate,
    pub genres: Vec<String>,
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

fn clean_row(row: &RawCatalogRow, cfg: &FilterConfig) -> std::result::Result<CleanRow, RejectReason> {
    if row.app_id.trim().is_empty() {
        return Err(RejectReason::MissingAppId);
    }
    let release_date = parse_date(&row.release_date).ok_or(RejectReason::InvalidDate)?;
    if release_date.year() < cfg.min_year {
        return Err(RejectReason::TooOld);
    }
    let currency: Currency = row
        .price_currency
        .parse()
        .map_err(|_| RejectReason::UnknownCurrency)?;
    let price_eur =
        convert_price(row.price_amount, currency, &cfg.rates).map_err(|_| RejectReason::InvalidPrice)?;
    let storage_mb =
        extract_storage_mb(&row.system_requirements_text).ok_or(RejectReason::MissingStorage)?;
    if storage_mb > cfg.cap_mb {
        return Err(RejectReason::StorageOutlier);
    }
    if storage_mb <= 0.0 {
        return Err(RejectReason::MissingStorage);
    }
    let genres: Vec<String> = row
        .genres
        .iter()
        .map(|g| g.trim().to_string())
        .filter(|g| !g.is_empty())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if genres.is_empty() {
        return Err(RejectReason::NoGenres);
    }
    let distinct_languages: HashSet<&str> = row.languages.iter().map(|l| l.trim()).filter(|l| !l.is_empty()).collect();
    Ok(CleanRow {
        app_id: row.app_id.clone(),
        name: row.name.clone(),
        price_eur,
        // English is always available, even when the listing is empty
        n_languages: distinct_languages.len().max(1) as u32,
        storage_mb,
        release_date,
        genres,
    })
}

/// Applies the cleaning rules. Every input row ends up either kept or in the
/// rejection log, in input order.
pub fn filter_catalog(rows: &[RawCatalogRow], cfg: &FilterConfig) -> Result<(Vec<CleanRow>, Vec<Rejection>)> {
    if !(cfg.cap_mb > 0.0) {
        return Err(Error::domain("storage cap", "> 0", cfg.cap_mb));
    }
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for row in rows {
        let outcome = if !seen.insert(row.app_id.clone()) {
            Err(RejectReason::DuplicateAppId)
        } else {
            clean_row(row, cfg)
        };
        match outcome {
            Ok(clean) => kept.push(clean),
            Err(reason) => rejected.push(Rejection {
                app_id: row.app_id.clone(),
                reason,
            }),
        }
    }
    Ok((kept, rejected))
}

/// Daily concurrent-player series for one game.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyHistory {
    app_id: String,
    series: Vec<(NaiveDate, u64)>,
}

impl DailyHistory {
    /// Builds a history; dates must be strictly increasing.
    pub fn new(app_id: impl Into<String>, series: Vec<(NaiveDate, u64)>) -> Result<Self> {
        let app_id = app_id.into();
        if let Some(w) = series.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(Error::Data(format!(
                "history for {app_id}: dates not strictly increasing at {}",
                w[1].0
            )));
        }
        Ok(Self { app_id, series })
    }

    /// Sorts the observations, drops those before `release`, and validates.
    pub fn from_unordered(app_id: impl Into<String>, mut series: Vec<(NaiveDate, u64)>, release: NaiveDate) -> Result<Self> {
        series.retain(|(d, _)| *d >= release);
        series.sort_by_key(|(d, _)| *d);
        Self::new(app_id, series)
    }

    pub fn app_id(&self) -> &str {
        &self.app_id
    }

    pub fn series(&self) -> &[(NaiveDate, u64)] {
        &self.series
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.series.last().map(|(d, _)| *d)
    }
}

/// Median of one 30-day window and how many days it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonthWindow {
    pub median: u64,
    pub n_obs: usize,
}

impl MonthWindow {
    pub fn is_sparse(&self) -> bool {
        self.n_obs < SPARSE_WINDOW_OBS
    }
}

/// Lower median of a set of counts; `None` when empty.
pub fn lower_median(values: &mut [u64]) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    Some(values[(values.len() - 1) / 2])
}

/// Window statistics for post-release month `month_index` (1-based): days
/// `[30(m-1), 30m)` after release. Absent when the window runs past the last
/// scraped day or holds no observations.
pub fn month_window(history: &DailyHistory, release: NaiveDate, month_index: u32) -> Option<MonthWindow> {
    if month_index == 0 {
        return None;
    }
    let start = MONTH_DAYS * (month_index as i64 - 1);
    let end = MONTH_DAYS * month_index as i64;
    let horizon = (history.last_date()? - release).num_days();
    if horizon < end - 1 {
        return None;
    }
    let mut counts: Vec<u64> = history
        .series
        .iter()
        .filter_map(|(d, c)| {
            let offset = (*d - release).num_days();
            (offset >= start && offset < end).then_some(*c)
        })
        .collect();
    let n_obs = counts.len();
    lower_median(&mut counts).map(|median| MonthWindow { median, n_obs })
}

/// Median daily player count in post-release month `month_index`.
pub fn monthly_median(history: &DailyHistory, release: NaiveDate, month_index: u32) -> Option<u64> {
    month_window(history, release, month_index).map(|w| w.median)
}

/// Sorted genre names; a game's genre ids index into this list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenreVocabulary {
    pub names: Vec<String>,
}

impl GenreVocabulary {
    pub fn from_rows(rows: &[CleanRow]) -> Self {
        let names: BTreeSet<&str> = rows.iter().flat_map(|r| r.genres.iter().map(String::as_str)).collect();
        Self {
            names: names.into_iter().map(str::to_string).collect(),
        }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// One cleaned game, ready for feature engineering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub app_id: String,
    #[serde(default)]
    pub name: String,
    pub price_eur: f64,
    pub n_languages: u32,
    pub storage_mb: f64,
    pub release_date: NaiveDate,
    pub genre_ids: BTreeSet<usize>,
    /// Month index (1-based) to median player count; keys are contiguous from 1.
    #[serde(default)]
    pub monthly_medians: BTreeMap<u32, u64>,
}

impl GameRecord {
    pub fn median(&self, month: u32) -> Option<u64> {
        self.monthly_medians.get(&month).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseWindow {
    pub app_id: String,
    pub month: u32,
    pub n_obs: usize,
}

/// Everything the ingest stage produces.
#[derive(Debug, Clone, Default)]
pub struct IngestOutput {
    pub records: Vec<GameRecord>,
    pub rejections: Vec<Rejection>,
    pub genres: GenreVocabulary,
    pub sparse_windows: Vec<SparseWindow>,
    /// Input catalog rows that became records, unchanged and in input order.
    pub clean_catalog: Vec<RawCatalogRow>,
}

/// Attaches monthly medians (months `1..=max_month`, stopping at the first
/// missing month) to cleaned rows.
pub fn assemble_records(
    rows: Vec<CleanRow>,
    histories: &HashMap<String, DailyHistory>,
    max_month: u32,
) -> IngestOutput {
    let genres = GenreVocabulary::from_rows(&rows);
    let mut out = IngestOutput {
        genres,
        ..Default::default()
    };
    for row in rows {
        let mut monthly_medians = BTreeMap::new();
        if let Some(history) = histories.get(&row.app_id) {
            for month in 1..=max_month {
                let Some(window) = month_window(history, row.release_date, month) else {
                    break;
                };
                if window.is_sparse() {
                    log::warn!("{}: month {month} has only {} observations", row.app_id, window.n_obs);
                    out.sparse_windows.push(SparseWindow {
                        app_id: row.app_id.clone(),
                        month,
                        n_obs: window.n_obs,
                    });
                }
                monthly_medians.insert(month, window.median);
            }
        }
        let genre_ids = row
            .genres
            .iter()
            .map(|g| out.genres.index(g).expect("vocabulary built from these rows"))
            .collect();
        out.records.push(GameRecord {
            app_id: row.app_id,
            name: row.name,
            price_eur: row.price_eur,
            n_languages: row.n_languages,
            storage_mb: row.storage_mb,
            release_date: row.release_date,
            genre_ids,
            monthly_medians,
        });
    }
    out
}

/// Reads a newline-delimited JSON catalog. Lines that fail to parse are
/// returned as rejections (keyed by `line:<n>` when no app id is readable).
pub fn read_catalog<R: BufRead>(reader: R) -> Result<(Vec<RawCatalogRow>, Vec<Rejection>)> {
    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawCatalogRow>(&line) {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("catalog line {}: {e}", i + 1);
                let app_id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("app_id").and_then(|a| a.as_str().map(str::to_string)))
                    .unwrap_or_else(|| format!("line:{}", i + 1));
                rejected.push(Rejection {
                    app_id,
                    reason: RejectReason::Unparseable,
                });
            }
        }
    }
    Ok((rows, rejected))
}

pub fn write_catalog<W: Write>(mut writer: W, rows: &[RawCatalogRow]) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut writer, row)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
struct HistoryLine {
    app_id: String,
    date: String,
    players: u64,
}

/// Reads a `app_id,date,players` CSV into unsorted per-game series.
pub fn read_histories<R: Read>(reader: R) -> Result<HashMap<String, Vec<(NaiveDate, u64)>>> {
    let mut out: HashMap<String, Vec<(NaiveDate, u64)>> = HashMap::new();
    let mut rdr = csv::Reader::from_reader(reader);
    for line in rdr.deserialize::<HistoryLine>() {
        let line = line?;
        let date = parse_date(&line.date)
            .ok_or_else(|| Error::Data(format!("history for {}: bad date `{}`", line.app_id, line.date)))?;
        out.entry(line.app_id).or_default().push((date, line.players));
    }
    Ok(out)
}

pub fn write_histories<W: Write>(writer: W, histories: &[DailyHistory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for h in histories {
        for (date, players) in &h.series {
            w.serialize(HistoryLine {
                app_id: h.app_id.clone(),
                date: date.format("%Y-%m-%d").to_string(),
                players: *players,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs the full ingest: parse, clean, attach histories, compute medians.
pub fn ingest<C: BufRead, H: Read>(catalog: C, history: H, cfg: &FilterConfig, max_month: u32) -> Result<IngestOutput> {
    let (rows, mut rejections) = read_catalog(catalog)?;
    let (kept, rejected) = filter_catalog(&rows, cfg)?;
    rejections.extend(rejected);
    let mut raw_histories = read_histories(history)?;
    let mut histories = HashMap::new();
    let mut usable = Vec::with_capacity(kept.len());
    for row in kept {
        let series = raw_histories.remove(&row.app_id).unwrap_or_default();
        match DailyHistory::from_unordered(row.app_id.clone(), series, row.release_date) {
            Ok(h) => {
                histories.insert(row.app_id.clone(), h);
                usable.push(row);
            }
            Err(e) => {
                log::warn!("{e}");
                rejections.push(Rejection {
                    app_id: row.app_id,
                    reason: RejectReason::InvalidHistory,
                });
            }
        }
    }
    let mut out = assemble_records(usable, &histories, max_month);
    out.rejections = rejections;
    let kept: HashSet<&str> = out.records.iter().map(|r| r.app_id.as_str()).collect();
    out.clean_catalog = rows.into_iter().filter(|r| kept.contains(r.app_id.as_str())).collect();
    Ok(out)
}

pub fn write_records<W: Write>(mut writer: W, records: &[GameRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<GameRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_rejections<W: Write>(writer: W, rejections: &[Rejection]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["app_id", "reason"])?;
    for r in rejections {
        w.write_record([r.app_id.as_str(), r.reason.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// `app_id,month,n_obs` rows for windows with too few observations.
pub fn write_sparse_windows<W: Write>(writer: W, windows: &[SparseWindow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["app_id", "month", "n_obs"])?;
    for s in windows {
        w.write_record([s.app_id.clone(), s.month.to_string(), s.n_obs.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_genres<W: Write>(writer: W, genres: &GenreVocabulary) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["genre_id", "name"])?;
    for (i, name) in genres.names.iter().enumerate() {
        w.write_record([i.to_string().as_str(), name.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_genres<R: Read>(reader: R) -> Result<GenreVocabulary> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut names = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        names.push(rec.get(1).unwrap_or_default().to_string());
    }
    Ok(GenreVocabulary { names })
}
