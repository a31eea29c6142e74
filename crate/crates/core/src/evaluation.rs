//! Leave-one-out predictive accuracy: PSIS-LOO, brute-force LOO, bootstrap
//! comparison of two models, and LOOIC per target month.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ModelData;
use crate::models::{Model, ModelSpec};
use crate::sampler::{run_chains, PosteriorSamples, SamplerConfig};
use crate::scalar::{log_sum_exp_slice, quantile_sorted, Scalar};

/// Pareto k above which a pointwise estimate is flagged as unreliable.
pub const K_THRESHOLD: f64 = 0.7;
/// Draw count below which Pareto smoothing is skipped.
pub const MIN_PSIS_DRAWS: usize = 25;
/// Largest dataset [`exact_loo`] accepts.
pub const EXACT_LOO_MAX_ROWS: usize = 200;
pub const DEFAULT_BOOTSTRAP: usize = 10_000;
pub const DEFAULT_CI_LEVEL: f64 = 0.9;

const MIN_TAIL_LEN: usize = 5;

/// Result of Pareto smoothing one vector of log importance ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct Psis<T> {
    /// Smoothed, truncated log weights normalized to log-sum-exp 0.
    pub log_weights: Vec<T>,
    /// Tail shape estimate; `None` when there are too few draws to fit it.
    /// A constant tail gives `-inf`.
    pub pareto_k: Option<T>,
}

/// Generalized Pareto fit of exceedances (sorted ascending, positive) by the
/// Zhang-Stephens profile-likelihood method with a weakly informative
/// adjustment of `k` towards 0.5. Returns `(k, sigma)`.
fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let prior = 3.0;
    let m = 30 + (n as f64).sqrt().floor() as usize;
    let xstar = x[((n as f64) / 4.0 + 0.5).floor() as usize - 1];
    let theta: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x[n - 1] + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / xstar)
        .collect();
    let l_theta: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let a = -t;
            let k = x.iter().map(|&xi| (a * xi).ln_1p()).sum::<f64>() / n as f64;
            n as f64 * ((a / k).ln() - k - 1.0)
        })
        .collect();
    let lse = log_sum_exp_slice(&l_theta);
    let theta_hat: f64 = theta.iter().zip(&l_theta).map(|(t, l)| t * (l - lse).exp()).sum();
    let k = x.iter().map(|&xi| (-theta_hat * xi).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -k / theta_hat;
    let nf = n as f64;
    let k = k * nf / (nf + 10.0) + 10.0 * 0.5 / (nf + 10.0);
    (if k.is_nan() { f64::INFINITY } else { k }, sigma)
}

/// Quantile function of the generalized Pareto distribution with location 0.
fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

/// Smooths the tail of `raw` log ratios and truncates at the largest raw
/// value. Returned weights are on the input scale (not normalized).
fn smooth_unnormalized(raw: &[f64]) -> (Vec<f64>, Option<f64>) {
    let s = raw.len();
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = raw.iter().map(|v| v - max).collect();
    let mut k = None;
    let tail_len = (0.2 * s as f64).min(3.0 * (s as f64).sqrt()).ceil() as usize;
    if s >= MIN_PSIS_DRAWS && tail_len >= MIN_TAIL_LEN {
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
        let tail_ids = &order[s - tail_len..];
        let tail: Vec<f64> = tail_ids.iter().map(|&i| lw[i]).collect();
        if (tail[tail_len - 1] - tail[0]).abs() < f64::EPSILON / 100.0 {
            k = Some(f64::NEG_INFINITY);
        } else {
            let exp_cutoff = lw[order[s - tail_len - 1]].exp();
            let exceed: Vec<f64> = tail.iter().map(|v| v.exp() - exp_cutoff).collect();
            let (kh, sigma) = gpd_fit(&exceed);
            if kh.is_finite() {
                for (j, &i) in tail_ids.iter().enumerate() {
                    let p = (j as f64 + 0.5) / tail_len as f64;
                    lw[i] = (gpd_quantile(p, kh, sigma) + exp_cutoff).ln();
                }
            }
            k = Some(kh);
        }
    }
    for v in lw.iter_mut() {
        *v = v.min(0.0) + max;
    }
    (lw, k)
}

/// Pareto-smoothed importance sampling of one vector of log ratios.
pub fn psis_smooth<T: Scalar>(log_ratios: &[T]) -> Result<Psis<T>> {
    if log_ratios.is_empty() {
        return Err(Error::EmptyData("no log ratios".into()));
    }
    if log_ratios.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log importance ratio".into()));
    }
    let raw: Vec<f64> = log_ratios.iter().map(|v| v.as_f64()).collect();
    let (lw, k) = smooth_unnormalized(&raw);
    let lse = log_sum_exp_slice(&lw);
    Ok(Psis {
        log_weights: lw.iter().map(|v| T::lit(v - lse)).collect(),
        pareto_k: k.map(T::lit),
    })
}

/// Pointwise log-likelihood values, draws x points, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LoglikMatrix<T> {
    n_draws: usize,
    n_points: usize,
    values: Vec<T>,
}

impl<T: Scalar> LoglikMatrix<T> {
    pub fn new(n_draws: usize, n_points: usize, values: Vec<T>) -> Result<Self> {
        if n_draws == 0 || n_points == 0 {
            return Err(Error::EmptyData("log-likelihood matrix is empty".into()));
        }
        if values.len() != n_draws * n_points {
            return Err(Error::Dimension(format!(
                "{} values for {n_draws} draws x {n_points} points",
                values.len()
            )));
        }
        Ok(Self {
            n_draws,
            n_points,
            values,
        })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n_points = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_points) {
            return Err(Error::Dimension("ragged log-likelihood rows".into()));
        }
        Self::new(rows.len(), n_points, rows.concat())
    }

    /// Evaluates `model` at every posterior draw.
    pub fn compute(model: &Model<'_, T>, samples: &PosteriorSamples<T>) -> Result<Self> {
        let layout = model.layout();
        if samples.n_params() != layout.dim() {
            return Err(Error::Dimension(format!(
                "{} sampled parameters for a {}-parameter model",
                samples.n_params(),
                layout.dim()
            )));
        }
        let draws: Vec<&[T]> = samples.iter_draws().collect();
        let rows = draws
            .par_iter()
            .map(|d| model.pointwise_loglik(&layout.unconstrain(d)?))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows)
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn get(&self, draw: usize, point: usize) -> T {
        self.values[draw * self.n_points + point]
    }

    pub fn column(&self, point: usize) -> Vec<T> {
        (0..self.n_draws).map(|s| self.get(s, point)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooResult<T> {
    pub pointwise_elpd: Vec<T>,
    /// NaN where the tail shape could not be estimated.
    pub pareto_k: Vec<T>,
    pub elpd: T,
    pub elpd_se: T,
    pub looic: T,
    pub looic_se: T,
    pub warnings: Vec<String>,
}

/// Summary fields of a [`LooResult`] for report files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooSummary {
    pub elpd: f64,
    pub elpd_se: f64,
    pub looic: f64,
    pub looic_se: f64,
    pub n_points: usize,
    pub n_flagged: usize,
    pub k_threshold: f64,
    pub max_pareto_k: f64,
}

impl<T: Scalar> LooResult<T> {
    /// Builds the totals from pointwise values.
    pub fn from_pointwise(pointwise_elpd: Vec<T>, pareto_k: Vec<T>) -> Result<Self> {
        let n = pointwise_elpd.len();
        if n == 0 || pareto_k.len() != n {
            return Err(Error::Dimension("pointwise elpd and k must be non-empty and equal length".into()));
        }
        let elpd: T = pointwise_elpd.iter().copied().sum();
        let sd = crate::scalar::sample_variance(&pointwise_elpd).sqrt();
        let elpd_se = T::from_usize(n).unwrap().sqrt() * sd;
        let two = T::lit(2.0);
        Ok(Self {
            pointwise_elpd,
            pareto_k,
            elpd,
            elpd_se,
            looic: -two * elpd,
            looic_se: two * elpd_se,
            warnings: Vec::new(),
        })
    }

    /// Points with Pareto k above the threshold.
    pub fn flagged(&self) -> Vec<usize> {
        (0..self.pareto_k.len())
            .filter(|&i| self.pareto_k[i].as_f64() > K_THRESHOLD)
            .collect()
    }

    pub fn flagged_fraction(&self) -> f64 {
        self.flagged().len() as f64 / self.pareto_k.len() as f64
    }

    /// Pointwise LOOIC contributions `-2 * elpd_i`.
    pub fn pointwise_looic(&self) -> Vec<T> {
        self.pointwise_elpd.iter().map(|&e| T::lit(-2.0) * e).collect()
    }

    pub fn summary(&self) -> LooSummary {
        LooSummary {
            elpd: self.elpd.as_f64(),
            elpd_se: self.elpd_se.as_f64(),
            looic: self.looic.as_f64(),
            looic_se: self.looic_se.as_f64(),
            n_points: self.pointwise_elpd.len(),
            n_flagged: self.flagged().len(),
            k_threshold: K_THRESHOLD,
            max_pareto_k: self
                .pareto_k
                .iter()
                .map(|k| k.as_f64())
                .filter(|k| !k.is_nan())
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// `point,app_id,elpd,looic,pareto_k,flagged` rows.
    pub fn write_pointwise_csv<W: Write>(&self, writer: W, app_ids: &[String]) -> Result<()> {
        if app_ids.len() != self.pointwise_elpd.len() {
            return Err(Error::Dimension(format!(
                "{} ids for {} points",
                app_ids.len(),
                self.pointwise_elpd.len()
            )));
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["point", "app_id", "elpd", "looic", "pareto_k", "flagged"])?;
        for (i, id) in app_ids.iter().enumerate() {
            let k = self.pareto_k[i];
            w.write_record([
                i.to_string(),
                id.clone(),
                self.pointwise_elpd[i].to_string(),
                (T::lit(-2.0) * self.pointwise_elpd[i]).to_string(),
                k.to_string(),
                (k.as_f64() > K_THRESHOLD).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// PSIS-LOO from a draws x points log-likelihood matrix.
pub fn elpd_loo<T: Scalar>(loglik: &LoglikMatrix<T>) -> Result<LooResult<T>> {
    if loglik.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-likelihood matrix entry".into()));
    }
    let per_point = (0..loglik.n_points())
        .into_par_iter()
        .map(|i| {
            let ll = loglik.column(i);
            let ratios: Vec<T> = ll.iter().map(|&v| -v).collect();
            let psis = psis_smooth(&ratios)?;
            let terms: Vec<T> = psis.log_weights.iter().zip(&ll).map(|(&w, &l)| w + l).collect();
            Ok((log_sum_exp_slice(&terms), psis.pareto_k.unwrap_or_else(T::nan)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (elpd, k): (Vec<T>, Vec<T>) = per_point.into_iter().unzip();
    let mut result = LooResult::from_pointwise(elpd, k)?;
    if loglik.n_draws() < MIN_PSIS_DRAWS {
        let msg = format!(
            "only {} draws: importance weights left unsmoothed and Pareto k not estimated",
            loglik.n_draws()
        );
        log::warn!("{msg}");
        result.warnings.push(msg);
    }
    let flagged = result.flagged().len();
    if flagged > 0 {
        let msg = format!("{flagged} of {} points have Pareto k > {K_THRESHOLD}", loglik.n_points());
        log::warn!("{msg}");
        result.warnings.push(msg);
    }
    Ok(result)
}

/// PSIS-LOO of a fitted model.
pub fn loo_for_fit<T: Scalar>(model: &Model<'_, T>, samples: &PosteriorSamples<T>) -> Result<LooResult<T>> {
    elpd_loo(&LoglikMatrix::compute(model, samples)?)
}

/// Brute-force LOO: refits the model without each point and scores the
/// held-out target by its log mean predictive density. Summed over points.
pub fn exact_loo<T: Scalar>(spec: &ModelSpec, data: &ModelData<T>, cfg: &SamplerConfig) -> Result<T> {
    Ok(exact_loo_pointwise(spec, data, cfg)?.into_iter().sum())
}

/// Per-point terms of [`exact_loo`].
pub fn exact_loo_pointwise<T: Scalar>(spec: &ModelSpec, data: &ModelData<T>, cfg: &SamplerConfig) -> Result<Vec<T>> {
    let n = data.n_rows();
    if n > EXACT_LOO_MAX_ROWS {
        return Err(Error::Config(format!(
            "exact LOO refits the model once per row; {n} rows exceeds the limit of {EXACT_LOO_MAX_ROWS}"
        )));
    }
    if n < 2 {
        return Err(Error::EmptyData("exact LOO needs at least 2 rows".into()));
    }
    (0..n)
        .map(|i| {
            let train = data.without_row(i)?;
            let held_out = data.subset(&[i])?;
            let samples = run_chains(spec, &train, cfg)?;
            let model = Model::new(*spec, &held_out)?;
            let ll = LoglikMatrix::compute(&model, &samples)?.column(0);
            Ok(log_sum_exp_slice(&ll) - T::from_usize(ll.len()).unwrap().ln())
        })
        .collect()
}

/// Bootstrap summary of the LOOIC difference between two models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n_points: usize,
    pub n_boot: usize,
    pub seed: u64,
    pub ci_level: f64,
    /// Observed `sum_i -2 (elpd_a,i - elpd_b,i)`; negative favours model a.
    pub difference: f64,
    /// Mean of the bootstrap sums.
    pub mean: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Fraction of bootstrap sums below zero (0.5 when every difference is 0).
    pub prob_a_better: f64,
    #[serde(skip)]
    pub bootstrap: Vec<f64>,
}

impl Comparison {
    /// Quantiles of the bootstrap distribution.
    pub fn quantiles(&self, qs: &[f64]) -> Vec<f64> {
        crate::scalar::quantiles(&self.bootstrap, qs)
    }
}

/// Compares pointwise elpd vectors of two models on the same rows, with a
/// `DEFAULT_CI_LEVEL` interval.
pub fn compare_models<T: Scalar>(pointwise_a: &[T], pointwise_b: &[T], n_boot: usize, seed: u64) -> Result<Comparison> {
    compare_models_at(pointwise_a, pointwise_b, n_boot, seed, DEFAULT_CI_LEVEL)
}

pub fn compare_models_at<T: Scalar>(
    pointwise_a: &[T],
    pointwise_b: &[T],
    n_boot: usize,
    seed: u64,
    ci_level: f64,
) -> Result<Comparison> {
    if pointwise_a.len() != pointwise_b.len() {
        return Err(Error::Dimension(format!(
            "pointwise vectors of length {} and {}",
            pointwise_a.len(),
            pointwise_b.len()
        )));
    }
    if pointwise_a.is_empty() || n_boot == 0 {
        return Err(Error::EmptyData("comparison needs points and bootstrap replicates".into()));
    }
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(Error::Config(format!("CI level must be in (0, 1), got {ci_level}")));
    }
    let d: Vec<f64> = pointwise_a
        .iter()
        .zip(pointwise_b)
        .map(|(a, b)| -2.0 * (a.as_f64() - b.as_f64()))
        .collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pointwise elpd".into()));
    }
    let n = d.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums: Vec<f64> = (0..n_boot)
        .map(|_| (0..n).map(|_| d[rng.random_range(0..n)]).sum())
        .collect();
    let mean = sums.iter().sum::<f64>() / n_boot as f64;
    let prob = if d.iter().all(|&v| v == 0.0) {
        0.5
    } else {
        sums.iter().filter(|&&s| s < 0.0).count() as f64 / n_boot as f64
    };
    let bootstrap = sums.clone();
    sums.sort_by(f64::total_cmp);
    let tail = (1.0 - ci_level) / 2.0;
    Ok(Comparison {
        n_points: n,
        n_boot,
        seed,
        ci_level,
        difference: d.iter().sum(),
        mean,
        ci_lower: quantile_sorted(&sums, tail),
        ci_upper: quantile_sorted(&sums, 1.0 - tail),
        prob_a_better: prob,
        bootstrap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooicRow {
    pub model: String,
    pub month: u32,
    pub looic: f64,
    pub se: f64,
    pub n_flagged: usize,
}

/// Fits every model to every month present and tabulates LOOIC. Months in
/// 2..=5 without data are logged and left out.
pub fn looic_over_months<T: Scalar>(
    specs: &[ModelSpec],
    months: &BTreeMap<u32, ModelData<T>>,
    cfg: &SamplerConfig,
) -> Result<Vec<LooicRow>> {
    for m in 2..=5 {
        if !months.contains_key(&m) {
            log::warn!("no data for month {m}; its LOOIC cells are omitted");
        }
    }
    let mut rows = Vec::with_capacity(specs.len() * months.len());
    for spec in specs {
        for (&month, data) in months {
            let spec_m = spec.with_target_month(month);
            spec_m.validate()?;
            let samples = run_chains(&spec_m, data, cfg)?;
            let model = Model::new(spec_m, data)?;
            let loo = loo_for_fit(&model, &samples)?;
            rows.push(LooicRow {
                model: spec.key().to_string(),
                month,
                looic: loo.looic.as_f64(),
                se: loo.looic_se.as_f64(),
                n_flagged: loo.flagged().len(),
            });
        }
    }
    Ok(rows)
}

pub fn write_looic_table<W: Write>(writer: W, rows: &[LooicRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `quantile,value` rows of the bootstrap distribution.
pub fn write_bootstrap_quantiles<W: Write>(writer: W, cmp: &Comparison, qs: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["quantile", "value"])?;
    for (q, v) in qs.iter().zip(cmp.quantiles(qs)) {
        w.write_record([q.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
