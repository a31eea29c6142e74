//! One function per subcommand. Each reads its inputs through the resolved
//! [`RunConfig`] and overwrites its outputs, so reruns are idempotent.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use popcast::analysis::{
    adjusted_intercept, contribution_curves, curve_report, dataset_insights, day_of_month_effect, genre_intercept_report,
    genre_report, insights_report, posterior_summary, render_summary_text, seasonal_curves, seasonal_report,
    summary_report, what_if, write_report_csv, Override, Prediction, ReportRow, Summary, HIGH_VARIANCE_FACTOR,
};
use popcast::evaluation::{
    compare_models_at, exact_loo_pointwise, loo_for_fit, looic_over_months, write_bootstrap_quantiles, write_looic_table,
    LooSummary,
};
use popcast::features::{build_model_data, LOG_RATIO_FEATURES};
use popcast::ingest::{read_genres, read_records, write_genres, write_records, write_rejections, write_sparse_windows};
use popcast::io::{create_file, read_fit, write_fit, write_toml, StoredFit};
use popcast::synthetic::generate;
use popcast::{Error, GameRecord, ModelData};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{require_file, RunConfig, GENRES_FILE, RECORDS_FILE};

/// What a successful command reports back to `main`.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Set when a fit finished with convergence warnings.
    pub unconverged: bool,
}

const BOOTSTRAP_QUANTILES: [f64; 9] = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>> {
    require_file(path, what)?;
    Ok(BufReader::new(File::open(path).map_err(Error::from)?))
}

fn load_records(path: &Path) -> Result<Vec<GameRecord>> {
    read_records(open(path, "records file")?).with_context(|| format!("reading {}", path.display()))
}

fn write_rows(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_report_csv(create_file(path)?, rows)?;
    Ok(())
}

fn load_fit(dir: &Path) -> Result<StoredFit<f64>> {
    read_fit::<f64>(dir).with_context(|| format!("loading fit {}", dir.display()))
}

fn dir_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

pub fn ingest(cfg: &RunConfig) -> Result<Outcome> {
    let catalog = cfg.inputs.catalog.as_ref().ok_or_else(|| config_error("ingest needs `[inputs] catalog`"))?;
    let history = cfg.inputs.history.as_ref().ok_or_else(|| config_error("ingest needs `[inputs] history`"))?;
    let out = popcast::ingest::ingest(open(catalog, "catalog")?, open(history, "history")?, &cfg.filter(), cfg.max_month()?)?;
    if out.records.is_empty() {
        log::warn!("no game survived ingest");
    }
    let dir = cfg.out_dir();
    write_records(create_file(&dir.join(RECORDS_FILE))?, &out.records)?;
    popcast::ingest::write_catalog(create_file(&dir.join("catalog_clean.ndjson"))?, &out.clean_catalog)?;
    write_rejections(create_file(&dir.join("rejections.csv"))?, &out.rejections)?;
    write_genres(create_file(&dir.join(GENRES_FILE))?, &out.genres)?;
    write_sparse_windows(create_file(&dir.join("sparse_windows.csv"))?, &out.sparse_windows)?;
    println!(
        "ingested {} games ({} rejected, {} genres) into {}",
        out.records.len(),
        out.rejections.len(),
        out.genres.len(),
        dir.display()
    );
    Ok(Outcome::default())
}

pub fn fit(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.model_spec()?;
    let sampler = cfg.sampler()?;
    let records = load_records(&cfg.records_path())?;
    let fit = popcast::io::fit::<f64>(&spec, &records, &cfg.feature_options(), &sampler)?;
    let dir = cfg.fit_dir()?;
    write_fit(&dir, &fit)?;
    let m = &fit.manifest;
    println!(
        "fitted {spec} to {} games ({} chains x {} draws, {} divergences) into {}",
        m.n_rows,
        sampler.n_chains,
        sampler.n_draws,
        m.divergences,
        dir.display()
    );
    println!("converged: {}", m.converged);
    for w in &m.warnings {
        println!("warning: {w}");
    }
    Ok(Outcome {
        unconverged: !m.converged,
    })
}

#[derive(Serialize)]
struct LooFile<'a> {
    model: String,
    target_month: u32,
    psis: &'a LooSummary,
    warnings: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    exact: Option<ExactSummary>,
}

#[derive(Serialize)]
struct ExactSummary {
    elpd: f64,
    /// `psis - exact`.
    difference: f64,
    combined_se: f64,
}

pub fn evaluate(cfg: &RunConfig) -> Result<Outcome> {
    let dir = cfg.fit_dir()?;
    let stored = load_fit(&dir)?;
    let records = load_records(&cfg.records_path())?;
    let data = stored.rebuild_data(&records)?;
    let spec = stored.manifest.model;
    let loo = loo_for_fit(&stored.model(&data)?, &stored.samples)?;
    loo.write_pointwise_csv(create_file(&dir.join("loo_pointwise.csv"))?, data.app_ids())?;
    let summary = loo.summary();

    let exact = if cfg.evaluate.exact.unwrap_or(false) {
        let pointwise = exact_loo_pointwise(&spec, &data, &stored.manifest.sampler)?;
        let mut w = create_file(&dir.join("exact_loo_pointwise.csv"))?;
        writeln!(w, "point,app_id,elpd").map_err(Error::from)?;
        for (i, (id, e)) in data.app_ids().iter().zip(&pointwise).enumerate() {
            writeln!(w, "{i},{id},{e}").map_err(Error::from)?;
        }
        w.flush().map_err(Error::from)?;
        let elpd: f64 = pointwise.iter().sum();
        let n = pointwise.len() as f64;
        let mean = elpd / n;
        let var = pointwise.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let exact_se = (n * var).sqrt();
        Some(ExactSummary {
            elpd,
            difference: summary.elpd - elpd,
            combined_se: (summary.elpd_se.powi(2) + exact_se.powi(2)).sqrt(),
        })
    } else {
        None
    };
    write_toml(
        &dir.join("loo_summary.toml"),
        &LooFile {
            model: spec.key().to_string(),
            target_month: spec.target_month,
            psis: &summary,
            warnings: &loo.warnings,
            exact,
        },
    )?;
    println!(
        "{spec} month {}: elpd_loo {:.3} (se {:.3}), looic {:.3}, {} of {} points with k > {}",
        spec.target_month, summary.elpd, summary.elpd_se, summary.looic, summary.n_flagged, summary.n_points, summary.k_threshold
    );

    if let Some(months) = &cfg.evaluate.months {
        let mut by_month: BTreeMap<u32, ModelData> = BTreeMap::new();
        for &m in months {
            let built = build_model_data::<f64>(&records, m, None, &stored.manifest.features)?;
            by_month.insert(m, built.data);
        }
        let rows = looic_over_months(&[spec], &by_month, &stored.manifest.sampler)?;
        write_looic_table(create_file(&dir.join("looic_by_month.csv"))?, &rows)?;
        for r in &rows {
            println!("month {}: looic {:.3} (se {:.3})", r.month, r.looic, r.se);
        }
    }
    Ok(Outcome::default())
}

pub fn compare(cfg: &RunConfig) -> Result<Outcome> {
    let dirs = cfg.inputs.fits.clone().unwrap_or_default();
    if dirs.len() < 2 {
        return Err(config_error("compare needs at least two fits (`[inputs] fits` or repeated --fit)"));
    }
    let records = load_records(&cfg.records_path())?;
    let mut labels = Vec::new();
    let mut pointwise = Vec::new();
    let mut ids: Option<Vec<String>> = None;
    let mut looic_rows = Vec::new();
    for dir in &dirs {
        let stored = load_fit(dir)?;
        let data = stored.rebuild_data(&records)?;
        let loo = loo_for_fit(&stored.model(&data)?, &stored.samples)?;
        match &ids {
            None => ids = Some(data.app_ids().to_vec()),
            Some(first) if first.as_slice() != data.app_ids() => {
                return Err(Error::Data(format!("{} was fitted to different games than {}", dir.display(), dirs[0].display())).into());
            }
            Some(_) => {}
        }
        let label = dir_label(dir);
        if labels.contains(&label) {
            return Err(config_error(format!("two fits are named `{label}`")));
        }
        looic_rows.push(ReportRow::value(&label, "looic", loo.looic));
        looic_rows.push(ReportRow::value(&label, "looic_se", loo.looic_se));
        labels.push(label);
        pointwise.push(loo.pointwise_elpd);
    }
    let out = cfg.out_dir().join("compare");
    write_rows(&out.join("looic.csv"), &looic_rows)?;
    let mut rows = Vec::new();
    for a in 0..labels.len() {
        for b in a + 1..labels.len() {
            let cmp = compare_models_at(&pointwise[a], &pointwise[b], cfg.n_boot(), cfg.seed(), cfg.ci_level())?;
            let stem = format!("{}__{}", labels[a], labels[b]);
            write_toml(&out.join(format!("{stem}.toml")), &cmp)?;
            write_bootstrap_quantiles(create_file(&out.join(format!("{stem}_quantiles.csv")))?, &cmp, &BOOTSTRAP_QUANTILES)?;
            let entity = format!("{}|{}", labels[a], labels[b]);
            rows.push(ReportRow {
                entity: entity.clone(),
                statistic: "looic_difference".into(),
                value: cmp.difference,
                q5: Some(cmp.ci_lower),
                q95: Some(cmp.ci_upper),
            });
            rows.push(ReportRow::value(&entity, "prob_a_better", cmp.prob_a_better));
            println!(
                "{} vs {}: looic difference {:.3} [{:.3}, {:.3}], P({} better) = {:.3}",
                labels[a], labels[b], cmp.difference, cmp.ci_lower, cmp.ci_upper, labels[a], cmp.prob_a_better
            );
        }
    }
    write_rows(&out.join("summary.csv"), &rows)?;
    Ok(Outcome::default())
}

fn file_stem_for(app_id: &str) -> String {
    app_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_draws(path: &Path, scenarios: &[(String, Prediction)]) -> Result<()> {
    let mut w = create_file(path)?;
    let header: Vec<&str> = scenarios.iter().map(|(l, _)| l.as_str()).collect();
    writeln!(w, "draw,{}", header.join(",")).map_err(Error::from)?;
    let n = scenarios[0].1.counts.len();
    for i in 0..n {
        let row: Vec<String> = scenarios.iter().map(|(_, p)| p.counts[i].to_string()).collect();
        writeln!(w, "{i},{}", row.join(",")).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> Result<Outcome> {
    let dir = cfg.fit_dir()?;
    let stored = load_fit(&dir)?;
    let games_path = cfg.inputs.games.clone().unwrap_or_else(|| cfg.records_path());
    let mut games = load_records(&games_path)?;
    if let Some(ids) = &cfg.predict.app_ids {
        if let Some(missing) = ids.iter().find(|id| !games.iter().any(|g| &g.app_id == *id)) {
            return Err(Error::Data(format!("game `{missing}` is not in {}", games_path.display())).into());
        }
        games.retain(|g| ids.contains(&g.app_id));
    }
    let overrides: Vec<Override> = cfg
        .predict
        .overrides
        .iter()
        .flatten()
        .map(|s| s.parse())
        .collect::<popcast::Result<_>>()?;
    let spec = stored.manifest.model;
    let seed = cfg.seed();
    let results: Vec<Vec<(String, Prediction)>> = games
        .par_iter()
        .enumerate()
        .map(|(i, g)| what_if(&spec, &stored.samples, g, &overrides, &stored.stats, seed.wrapping_add(i as u64)))
        .collect::<popcast::Result<_>>()?;

    let out = dir.join("predict");
    let mut rows = Vec::new();
    for scenarios in &results {
        for (label, p) in scenarios {
            let entity = format!("{}/{label}", p.app_id);
            let [q5, q50, q95, mean] = p.quantiles()?;
            rows.push(ReportRow {
                entity: entity.clone(),
                statistic: "players".into(),
                value: mean,
                q5: Some(q5),
                q95: Some(q95),
            });
            rows.push(ReportRow::value(&entity, "players_median", q50));
            rows.push(ReportRow::summary(&entity, "transformed", &Summary::from_draws(&p.transformed)?));
        }
    }
    write_rows(&out.join("predictions.csv"), &rows)?;
    if cfg.predict.draws_files.unwrap_or(true) {
        for scenarios in &results {
            let id = &scenarios[0].1.app_id;
            write_draws(&out.join("draws").join(format!("{}.csv", file_stem_for(id))), scenarios)?;
        }
    }
    println!("predicted {} games ({} scenarios each) into {}", results.len(), overrides.len() + 1, out.display());
    Ok(Outcome::default())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn feature_grids(records: &[GameRecord], n: usize) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut max = [0.0f64; 4];
    for r in records {
        let Ok(raw) = popcast::features::raw_log_ratio_values(r) else { continue };
        for (m, v) in max.iter_mut().zip(raw) {
            *m = m.max(v);
        }
    }
    Ok(LOG_RATIO_FEATURES
        .iter()
        .zip(max)
        .map(|(f, m)| (f.to_string(), linspace(0.0, m, n)))
        .collect())
}

pub fn report(cfg: &RunConfig) -> Result<Outcome> {
    let dir = cfg.fit_dir()?;
    let stored = load_fit(&dir)?;
    let records = load_records(&cfg.records_path())?;
    let out = dir.join("report");
    let r = &cfg.report;
    let n = cfg.grid_points()?;
    let samples = &stored.samples;

    if r.summary.unwrap_or(true) {
        let summary = posterior_summary(samples)?;
        let mut rows = summary_report(&summary);
        let adj = adjusted_intercept(samples, &stored.stats)?;
        rows.push(ReportRow::summary("beta0_adjusted", "mean", &adj.beta0));
        if let Some(g) = &adj.gamma0 {
            rows.push(ReportRow::summary("gamma0_adjusted", "mean", g));
        }
        write_rows(&out.join("summary.csv"), &rows)?;
        let mut text = format!(
            "model {} (target month {}), {} games, {} chains x {} draws\nconverged: {}\n\n",
            stored.manifest.model,
            stored.manifest.model.target_month,
            stored.manifest.n_rows,
            samples.n_chains(),
            samples.n_draws(),
            stored.manifest.converged
        );
        text.push_str(&render_summary_text(&summary));
        text.push_str(&format!(
            "\nintercept at raw feature scale: {:.4} [{:.4}, {:.4}]\n",
            adj.beta0.mean, adj.beta0.q5, adj.beta0.q95
        ));
        fs::create_dir_all(&out).map_err(Error::from)?;
        fs::write(out.join("summary.txt"), text).map_err(Error::from)?;
    }

    if r.curves.unwrap_or(true) {
        let mut rows = curve_report(&contribution_curves(samples, &feature_grids(&records, n)?)?);
        for prefix in ["beta", "gamma"] {
            let name = format!("{prefix}[5]");
            let Ok(draws) = samples.pooled_by_name(&name) else { continue };
            for day in 1..=31 {
                rows.push(ReportRow::summary(format!("day_of_month/{name}"), format!("day={day}"), &day_of_month_effect(&draws, day)?));
            }
        }
        write_rows(&out.join("curves.csv"), &rows)?;
    }

    if r.seasonal.unwrap_or(true) {
        write_rows(&out.join("seasonal.csv"), &seasonal_report(&seasonal_curves(samples, &linspace(0.0, 1.0, n))?))?;
    }

    let hierarchical = stored.manifest.model.hierarchical;
    match (r.genres, hierarchical, &cfg.inputs.pooled_fit) {
        (Some(false), ..) => {}
        (_, true, Some(pooled_dir)) => {
            let pooled = load_fit(pooled_dir)?;
            let rows = genre_intercept_report(samples, &pooled.samples, stored.stats.n_genres, HIGH_VARIANCE_FACTOR)?;
            let genres_path = cfg.genres_path();
            let names = if genres_path.is_file() {
                Some(read_genres(open(&genres_path, "genres file")?)?.names)
            } else {
                None
            };
            write_rows(&out.join("genres.csv"), &genre_report(&rows, names.as_deref()))?;
        }
        (Some(true), false, _) => return Err(config_error("the genre report needs a hierarchical fit")),
        (Some(true), true, None) => return Err(config_error("the genre report needs `[inputs] pooled_fit`")),
        (None, true, None) => log::info!("no pooled fit given; skipping the genre report"),
        (None, false, _) => {}
    }

    if r.insights.unwrap_or(true) {
        write_rows(&out.join("insights.csv"), &insights_report(&dataset_insights(&records)?))?;
    }
    println!("wrote reports into {}", out.display());
    Ok(Outcome::default())
}

#[derive(Serialize)]
struct TruthFile {
    model: String,
    /// Constrained parameters per target month, on the model's scale.
    months: BTreeMap<String, BTreeMap<String, f64>>,
}

pub fn synth(cfg: &RunConfig) -> Result<Outcome> {
    let sc = cfg.synthetic()?;
    let spec = sc.to_spec()?;
    let ds = generate(&spec)?;
    let dir: PathBuf = cfg.out_dir();
    popcast::ingest::write_catalog(create_file(&dir.join("catalog.ndjson"))?, &ds.catalog)?;
    popcast::ingest::write_histories(create_file(&dir.join("history.csv"))?, &ds.histories)?;
    write_toml(&dir.join("synth_config.toml"), &sc)?;
    write_toml(
        &dir.join("truth.toml"),
        &TruthFile {
            model: ds.spec.key().to_string(),
            months: ds
                .truth
                .months
                .iter()
                .map(|(m, t)| (format!("month_{m}"), t.named.clone()))
                .collect(),
        },
    )?;
    println!("generated {} {} games into {}", ds.records.len(), ds.spec, dir.display());
    Ok(Outcome::default())
}
