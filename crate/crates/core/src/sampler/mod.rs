//! NUTS sampling of model posteriors and convergence diagnostics.
//!
//! Chains run in parallel on the rayon pool. Each chain owns a ChaCha8
//! stream derived from `(seed, chain index)`, so results do not depend on
//! scheduling or thread count.

mod adapt;
mod diagnostics;
mod nuts;

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnostics::{effective_sample_size, split_rhat};

use crate::error::{Error, Result};
use crate::features::ModelData;
use crate::models::{Model, ModelSpec, StandardizedModel};
use crate::scalar::Scalar;
use adapt::{DualAveraging, WindowedVariance};
use nuts::{Nuts, Point};

/// Initialization attempts before giving up on a chain.
pub const MAX_INIT_ATTEMPTS: usize = 100;
/// Post-warmup divergence fraction above which a warning is attached.
pub const DIVERGENCE_WARN_RATE: f64 = 0.1;
/// R-hat above this flags a parameter as not converged.
pub const RHAT_THRESHOLD: f64 = 1.01;

/// An unnormalized log density with gradient on an unconstrained space.
pub trait LogDensity<T: Clone>: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    fn logp_and_grad(&self, position: &[T], grad: &mut [T]) -> T;

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    /// Maps an unconstrained position to the reported parameter values.
    fn constrain(&self, position: &[T]) -> Vec<T> {
        position.to_vec()
    }
}

/// A log density given by a closure `f(position, grad) -> logp`.
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T: Clone, F: Fn(&[T], &mut [T]) -> T + Sync> LogDensity<T> for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn logp_and_grad(&self, position: &[T], grad: &mut [T]) -> T {
        (self.f)(position, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: u32,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_draws: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 20_190_601,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_warmup == 0 || self.n_draws == 0 || self.max_tree_depth == 0 {
            return Err(Error::Config(
                "n_chains, n_warmup, n_draws and max_tree_depth must all be positive".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("target_accept must be in (0, 1), got {}", self.target_accept)));
        }
        Ok(())
    }
}

/// Per-chain sampler statistics. Per-draw vectors cover post-warmup
/// iterations only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub divergent: Vec<bool>,
    pub tree_depth: Vec<u32>,
    pub n_leapfrog: Vec<u32>,
    pub energy: Vec<f64>,
    pub warmup_divergences: usize,
}

impl ChainDiagnostics {
    pub fn divergences(&self) -> usize {
        self.divergent.iter().filter(|&&d| d).count()
    }

    pub fn mean_accept_stat(&self) -> f64 {
        self.accept_stat.iter().sum::<f64>() / self.accept_stat.len().max(1) as f64
    }
}

/// Post-warmup draws, stored as chains x iterations x parameters on the
/// constrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples<T> {
    names: Vec<String>,
    n_chains: usize,
    n_draws: usize,
    draws: Vec<T>,
    pub chains: Vec<ChainDiagnostics>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> PosteriorSamples<T> {
    /// `draws[chain][iteration]` holds one parameter vector.
    pub fn from_draws(names: Vec<String>, draws: Vec<Vec<Vec<T>>>) -> Result<Self> {
        let n_chains = draws.len();
        let n_draws = draws.first().map_or(0, Vec::len);
        if n_chains == 0 || n_draws == 0 {
            return Err(Error::EmptyData("posterior has no draws".into()));
        }
        let mut flat = Vec::with_capacity(n_chains * n_draws * names.len());
        for chain in &draws {
            if chain.len() != n_draws {
                return Err(Error::Dimension("chains have different lengths".into()));
            }
            for d in chain {
                if d.len() != names.len() {
                    return Err(Error::Dimension(format!("draw of length {} for {} names", d.len(), names.len())));
                }
                flat.extend_from_slice(d);
            }
        }
        Ok(Self {
            names,
            n_chains,
            n_draws,
            draws: flat,
            chains: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    pub fn draw(&self, chain: usize, iteration: usize) -> &[T] {
        let p = self.n_params();
        let at = (chain * self.n_draws + iteration) * p;
        &self.draws[at..at + p]
    }

    /// All draws in chain order.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.draws.chunks_exact(self.n_params().max(1))
    }

    /// One parameter, split by chain.
    pub fn chain_values(&self, index: usize) -> Vec<Vec<T>> {
        (0..self.n_chains)
            .map(|c| (0..self.n_draws).map(|i| self.draw(c, i)[index]).collect())
            .collect()
    }

    /// One parameter, all chains pooled.
    pub fn pooled(&self, index: usize) -> Vec<T> {
        self.iter_draws().map(|d| d[index]).collect()
    }

    pub fn pooled_by_name(&self, name: &str) -> Result<Vec<T>> {
        Ok(self.pooled(self.param_index(name)?))
    }

    pub fn total_divergences(&self) -> usize {
        self.chains.iter().map(ChainDiagnostics::divergences).sum()
    }

    pub fn divergence_rate(&self) -> f64 {
        self.total_divergences() as f64 / (self.n_chains * self.n_draws) as f64
    }

    fn chains_f64(&self, index: usize) -> Vec<Vec<f64>> {
        self.chain_values(index)
            .into_iter()
            .map(|c| c.into_iter().map(Scalar::as_f64).collect())
            .collect()
    }

    /// Writes `chain,draw,<names...>` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for c in 0..self.n_chains {
            for i in 0..self.n_draws {
                let mut row = vec![c.to_string(), i.to_string()];
                row.extend(self.draw(c, i).iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format of [`PosteriorSamples::write_csv`]. Sampler
    /// statistics are not part of the file and come back empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 2 || &header[0] != "chain" || &header[1] != "draw" {
            return Err(Error::Data("draws file must start with `chain,draw` columns".into()));
        }
        let names: Vec<String> = header.iter().skip(2).map(String::from).collect();
        let mut chains: Vec<Vec<Vec<T>>> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let chain: usize = rec[0]
                .parse()
                .map_err(|_| Error::Data(format!("row {}: bad chain id `{}`", line + 2, &rec[0])))?;
            if chain > chains.len() {
                return Err(Error::Data(format!("row {}: chain ids must be contiguous from 0", line + 2)));
            }
            if chain == chains.len() {
                chains.push(Vec::new());
            }
            let values = rec
                .iter()
                .skip(2)
                .map(|v| {
                    v.parse::<f64>()
                        .map(T::lit)
                        .map_err(|_| Error::Data(format!("row {}: bad value `{v}`", line + 2)))
                })
                .collect::<Result<Vec<T>>>()?;
            chains[chain].push(values);
        }
        Self::from_draws(names, chains)
    }
}

/// Split R-hat of the named parameter.
pub fn rhat<T: Scalar>(samples: &PosteriorSamples<T>, parameter: &str) -> Result<f64> {
    split_rhat(&samples.chains_f64(samples.param_index(parameter)?))
}

/// Effective sample size of the named parameter.
pub fn ess<T: Scalar>(samples: &PosteriorSamples<T>, parameter: &str) -> Result<f64> {
    effective_sample_size(&samples.chains_f64(samples.param_index(parameter)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
    pub flagged: bool,
}

/// R-hat and ESS for every parameter. Needs at least two chains.
pub fn diagnose<T: Scalar>(samples: &PosteriorSamples<T>) -> Result<Vec<ParamDiagnostics>> {
    (0..samples.n_params())
        .map(|i| {
            let chains = samples.chains_f64(i);
            let r = split_rhat(&chains)?;
            Ok(ParamDiagnostics {
                name: samples.names[i].clone(),
                rhat: r,
                ess: effective_sample_size(&chains)?,
                flagged: !(r <= RHAT_THRESHOLD),
            })
        })
        .collect()
}

struct ChainOutput<T> {
    draws: Vec<Vec<T>>,
    diagnostics: ChainDiagnostics,
}

fn initial_point<T: Scalar, D: LogDensity<T> + ?Sized>(target: &D, rng: &mut ChaCha8Rng, chain: usize) -> Result<Point<T>> {
    let mut last = String::new();
    for _ in 0..MAX_INIT_ATTEMPTS {
        let q: Vec<T> = (0..target.dim()).map(|_| T::lit(rng.random_range(-2.0..2.0))).collect();
        let z = Point::new(target, q);
        if z.logp.is_finite() && z.grad.iter().all(|g| g.is_finite()) {
            return Ok(z);
        }
        last = format!("chain {chain}: log density {} at {:?}", z.logp, z.q);
    }
    Err(Error::Initialization {
        attempts: MAX_INIT_ATTEMPTS,
        detail: last,
    })
}

fn run_chain<T: Scalar, D: LogDensity<T> + ?Sized>(target: &D, cfg: &SamplerConfig, chain: usize) -> Result<ChainOutput<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let mut z = initial_point(target, &mut rng, chain)?;
    let mut nuts = Nuts::new(target, cfg.max_tree_depth, rng);
    let dim = target.dim();

    nuts.init_step_size(&z);
    let mut step = DualAveraging::new(cfg.target_accept);
    step.set_mu((10.0 * nuts.step_size.as_f64()).ln());
    let mut metric = WindowedVariance::new(dim, cfg.n_warmup);
    let mut inv_metric = vec![1.0; dim];
    let mut warmup_divergences = 0;
    let mut q64 = vec![0.0; dim];

    for _ in 0..cfg.n_warmup {
        let t = nuts.transition(z);
        z = t.point;
        warmup_divergences += usize::from(t.divergent);
        nuts.step_size = T::lit(step.learn(t.accept_stat));
        for (a, b) in q64.iter_mut().zip(&z.q) {
            *a = b.as_f64();
        }
        if metric.learn(&mut inv_metric, &q64) {
            nuts.inv_metric = inv_metric.iter().map(|&v| T::lit(v)).collect();
            nuts.init_step_size(&z);
            step.set_mu((10.0 * nuts.step_size.as_f64()).ln());
            step.restart();
        }
    }
    nuts.step_size = T::lit(step.final_step_size());

    let mut draws = Vec::with_capacity(cfg.n_draws);
    let mut diag = ChainDiagnostics {
        step_size: nuts.step_size.as_f64(),
        inv_metric: nuts.inv_metric.iter().map(|v| v.as_f64()).collect(),
        accept_stat: Vec::with_capacity(cfg.n_draws),
        divergent: Vec::with_capacity(cfg.n_draws),
        tree_depth: Vec::with_capacity(cfg.n_draws),
        n_leapfrog: Vec::with_capacity(cfg.n_draws),
        energy: Vec::with_capacity(cfg.n_draws),
        warmup_divergences,
    };
    for _ in 0..cfg.n_draws {
        let t = nuts.transition(z);
        z = t.point;
        draws.push(target.constrain(&z.q));
        diag.accept_stat.push(t.accept_stat);
        diag.divergent.push(t.divergent);
        diag.tree_depth.push(t.depth);
        diag.n_leapfrog.push(t.n_leapfrog);
        diag.energy.push(t.energy);
    }
    Ok(ChainOutput {
        draws,
        diagnostics: diag,
    })
}

/// Samples any [`LogDensity`].
pub fn sample<T: Scalar, D: LogDensity<T> + ?Sized>(target: &D, cfg: &SamplerConfig) -> Result<PosteriorSamples<T>> {
    cfg.validate()?;
    if target.dim() == 0 {
        return Err(Error::Config("target has no parameters".into()));
    }
    let outputs: Vec<Result<ChainOutput<T>>> = (0..cfg.n_chains).into_par_iter().map(|c| run_chain(target, cfg, c)).collect();
    let mut draws = Vec::with_capacity(cfg.n_chains);
    let mut chains = Vec::with_capacity(cfg.n_chains);
    for out in outputs {
        let out = out?;
        draws.push(out.draws);
        chains.push(out.diagnostics);
    }
    let mut samples = PosteriorSamples::from_draws(target.param_names(), draws)?;
    samples.chains = chains;
    let divergences = samples.total_divergences();
    if divergences > 0 {
        log::info!("{divergences} divergent transitions after warmup");
    }
    let rate = samples.divergence_rate();
    if rate > DIVERGENCE_WARN_RATE {
        let msg = format!(
            "{:.1}% of post-warmup transitions diverged ({divergences} of {})",
            100.0 * rate,
            cfg.n_chains * cfg.n_draws
        );
        log::warn!("{msg}");
        samples.warnings.push(msg);
    }
    let at_max = samples
        .chains
        .iter()
        .flat_map(|c| &c.tree_depth)
        .filter(|&&d| d >= cfg.max_tree_depth)
        .count();
    if at_max > 0 {
        let msg = format!("{at_max} transitions hit the maximum tree depth {}", cfg.max_tree_depth);
        log::warn!("{msg}");
        samples.warnings.push(msg);
    }
    Ok(samples)
}

/// Samples the posterior of `spec` given `data`.
pub fn run_chains<T: Scalar>(spec: &ModelSpec, data: &ModelData<T>, cfg: &SamplerConfig) -> Result<PosteriorSamples<T>> {
    let model = StandardizedModel::new(Model::new(*spec, data)?);
    sample(&model, cfg)
}
