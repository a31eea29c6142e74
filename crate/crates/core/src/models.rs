//! The six regression variants and their log posteriors.
//!
//! A variant is a combination of likelihood (normal or folded normal),
//! pooled or genre-hierarchical intercepts, and shared or feature-dependent
//! scale. The folded normal location is `softplus(intercept + beta'x)`; the
//! normal mean is the raw linear predictor. Heteroscedastic variants use
//! `sigma = exp(intercept_gamma + gamma'x)`.
//!
//! Parameters live in an unconstrained vector (positive quantities on the
//! log scale, with the log-Jacobian added to the posterior). [`ParamLayout`]
//! fixes the order and names; [`ParamVector`] is the typed view.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distributions::{cauchy_kernel, folded_normal_kernel, normal_logpdf_grad, sigmoid, softplus, LogDensityGrad};
use crate::error::{Error, Result};
use crate::features::ModelData;
use crate::sampler::LogDensity;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Normal,
    FoldedNormal,
}

/// Which model to fit, with its prior scales and target month.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub likelihood: Likelihood,
    pub hierarchical: bool,
    pub heteroscedastic: bool,
    /// Cauchy scale for coefficients and intercepts (and half-Cauchy scale of
    /// the genre-level spreads).
    pub prior_scale_coeff: f64,
    /// Half-Cauchy scale of the shared `sigma`.
    pub prior_scale_sigma: f64,
    pub target_month: u32,
}

const KEYS: [(&str, Likelihood, bool, bool); 6] = [
    ("normal", Likelihood::Normal, false, false),
    ("normal_hetero", Likelihood::Normal, false, true),
    ("folded", Likelihood::FoldedNormal, false, false),
    ("folded_hetero", Likelihood::FoldedNormal, false, true),
    ("hier", Likelihood::FoldedNormal, true, false),
    ("hier_hetero", Likelihood::FoldedNormal, true, true),
];

impl ModelSpec {
    /// A variant with the default priors: coefficient scale 5 (1 when
    /// hierarchical), sigma scale 5, target month 2.
    pub fn new(likelihood: Likelihood, hierarchical: bool, heteroscedastic: bool) -> Result<Self> {
        let spec = Self {
            likelihood,
            hierarchical,
            heteroscedastic,
            prior_scale_coeff: if hierarchical { 1.0 } else { 5.0 },
            prior_scale_sigma: 5.0,
            target_month: 2,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// All six variants in a fixed order.
    pub fn all() -> Vec<Self> {
        KEYS.iter()
            .map(|&(_, l, h, s)| Self::new(l, h, s).expect("listed variants are legal"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hierarchical && self.likelihood == Likelihood::Normal {
            return Err(Error::Config("hierarchical intercepts are only defined for the folded normal likelihood".into()));
        }
        if !(self.prior_scale_coeff > 0.0) || !(self.prior_scale_sigma > 0.0) {
            return Err(Error::Config("prior scales must be > 0".into()));
        }
        if !(2..=5).contains(&self.target_month) {
            return Err(Error::Config(format!("target month must be 2..=5, got {}", self.target_month)));
        }
        Ok(())
    }

    pub fn with_target_month(mut self, month: u32) -> Self {
        self.target_month = month;
        self
    }

    /// Short identifier used in file names and on the command line.
    pub fn key(&self) -> &'static str {
        KEYS.iter()
            .find(|&&(_, l, h, s)| l == self.likelihood && h == self.hierarchical && s == self.heteroscedastic)
            .map(|k| k.0)
            .expect("validated spec")
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KEYS.iter()
            .find(|k| k.0 == s)
            .map(|&(_, l, h, het)| Self::new(l, h, het).expect("listed variants are legal"))
            .ok_or_else(|| {
                let known: Vec<_> = KEYS.iter().map(|k| k.0).collect();
                Error::Config(format!("unknown model `{s}`; expected one of {}", known.join(", ")))
            })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Where an intercept lives in the unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterceptSlot {
    Pooled(usize),
    /// `n` per-genre values from `start`, then the hyper-mean at `mu` and
    /// the log hyper-scale at `log_sd`.
    Genre { start: usize, n: usize, mu: usize, log_sd: usize },
}

impl InterceptSlot {
    #[inline]
    fn mean<T: Scalar>(&self, u: &[T], genres: &[usize]) -> T {
        match *self {
            InterceptSlot::Pooled(i) => u[i],
            InterceptSlot::Genre { start, n, mu, .. } => {
                let mut s = T::zero();
                for &j in genres {
                    s += if j < n { u[start + j] } else { u[mu] };
                }
                s / T::from_usize(genres.len()).unwrap()
            }
        }
    }

    #[inline]
    fn add_grad<T: Scalar>(&self, g: &mut [T], genres: &[usize], value: T) {
        match *self {
            InterceptSlot::Pooled(i) => g[i] += value,
            InterceptSlot::Genre { start, n, mu, .. } => {
                let share = value / T::from_usize(genres.len()).unwrap();
                for &j in genres {
                    g[if j < n { start + j } else { mu }] += share;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleSlot {
    /// Log of the shared sigma.
    Shared(usize),
    Linear { intercept: InterceptSlot, coeffs: usize },
}

/// Fixed order of the unconstrained parameter vector for one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub spec: ModelSpec,
    pub n_features: usize,
    pub n_genres: usize,
    pub beta0: InterceptSlot,
    pub beta: usize,
    pub scale: ScaleSlot,
    dim: usize,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec, n_features: usize, n_genres: usize) -> Result<Self> {
        spec.validate()?;
        if spec.hierarchical && n_genres == 0 {
            return Err(Error::Config("hierarchical model needs at least one genre".into()));
        }
        let mut next = 0;
        let intercept = |next: &mut usize| {
            if spec.hierarchical {
                let slot = InterceptSlot::Genre {
                    start: *next,
                    n: n_genres,
                    mu: *next + n_genres,
                    log_sd: *next + n_genres + 1,
                };
                *next += n_genres + 2;
                slot
            } else {
                *next += 1;
                InterceptSlot::Pooled(*next - 1)
            }
        };
        let beta0 = intercept(&mut next);
        let beta = next;
        next += n_features;
        let scale = if spec.heteroscedastic {
            let intercept = intercept(&mut next);
            let coeffs = next;
            next += n_features;
            ScaleSlot::Linear { intercept, coeffs }
        } else {
            next += 1;
            ScaleSlot::Shared(next - 1)
        };
        Ok(Self {
            spec: *spec,
            n_features,
            n_genres,
            beta0,
            beta,
            scale,
            dim: next,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn log_scale_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        if let InterceptSlot::Genre { log_sd, .. } = self.beta0 {
            out.push(log_sd);
        }
        match self.scale {
            ScaleSlot::Shared(i) => out.push(i),
            ScaleSlot::Linear {
                intercept: InterceptSlot::Genre { log_sd, .. },
                ..
            } => out.push(log_sd),
            ScaleSlot::Linear { .. } => {}
        }
        out
    }

    /// Names of the constrained parameters, in vector order. Coefficients are
    /// numbered from 1 in feature order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.dim];
        let intercept = |names: &mut Vec<String>, slot: InterceptSlot, base: &str| match slot {
            InterceptSlot::Pooled(i) => names[i] = base.to_string(),
            InterceptSlot::Genre { start, n, mu, log_sd } => {
                for j in 0..n {
                    names[start + j] = format!("{base}[{j}]");
                }
                names[mu] = format!("{base}_mu");
                names[log_sd] = format!("sigma_{base}");
            }
        };
        intercept(&mut names, self.beta0, "beta0");
        for k in 0..self.n_features {
            names[self.beta + k] = format!("beta[{}]", k + 1);
        }
        match self.scale {
            ScaleSlot::Shared(i) => names[i] = "sigma".into(),
            ScaleSlot::Linear { intercept: slot, coeffs } => {
                intercept(&mut names, slot, "gamma0");
                for k in 0..self.n_features {
                    names[coeffs + k] = format!("gamma[{}]", k + 1);
                }
            }
        }
        names
    }

    /// Unconstrained to constrained (exp on the log-scale entries).
    pub fn constrain<T: Scalar>(&self, u: &[T]) -> Vec<T> {
        let mut c = u.to_vec();
        for i in self.log_scale_indices() {
            c[i] = c[i].exp();
        }
        c
    }

    pub fn unconstrain<T: Scalar>(&self, c: &[T]) -> Result<Vec<T>> {
        if c.len() != self.dim {
            return Err(Error::Dimension(format!("{} values for {} parameters", c.len(), self.dim)));
        }
        let mut u = c.to_vec();
        for i in self.log_scale_indices() {
            if !(c[i] > T::zero()) {
                return Err(Error::domain("scale parameter", "> 0", c[i].as_f64()));
            }
            u[i] = c[i].ln();
        }
        Ok(u)
    }
}

/// An intercept: a single value, or per-genre values tied by a normal
/// hyper-prior with mean `mu` and scale `sd`.
#[derive(Debug, Clone, PartialEq)]
pub enum Intercept<T> {
    Pooled(T),
    PerGenre { values: Vec<T>, mu: T, sd: T },
}

impl<T: Scalar> Intercept<T> {
    /// The intercept a game with this genre set uses. Genres the model has
    /// no parameter for fall back to `mu`.
    pub fn for_genres(&self, genres: &[usize]) -> Result<T> {
        match self {
            Intercept::Pooled(v) => Ok(*v),
            Intercept::PerGenre { values, mu, .. } => {
                if genres.is_empty() {
                    return Err(Error::EmptyGenreSet);
                }
                let s: T = genres.iter().map(|&j| values.get(j).copied().unwrap_or(*mu)).sum();
                Ok(s / T::from_usize(genres.len()).unwrap())
            }
        }
    }
}

/// `(1/|G|) * sum_{j in G} coeffs[j]`.
pub fn genre_intercept_mean<T: Scalar>(coeffs: &[T], genre_set: &[usize]) -> Result<T> {
    if genre_set.is_empty() {
        return Err(Error::EmptyGenreSet);
    }
    let mut s = T::zero();
    for &j in genre_set {
        s += *coeffs
            .get(j)
            .ok_or_else(|| Error::Dimension(format!("genre {j} out of {}", coeffs.len())))?;
    }
    Ok(s / T::from_usize(genre_set.len()).unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scale<T> {
    Shared(T),
    Linear { intercept: Intercept<T>, coeffs: Vec<T> },
}

/// Typed, constrained-scale model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    pub beta0: Intercept<T>,
    pub beta: Vec<T>,
    pub scale: Scale<T>,
}

fn read_intercept<T: Scalar>(slot: InterceptSlot, u: &[T]) -> Intercept<T> {
    match slot {
        InterceptSlot::Pooled(i) => Intercept::Pooled(u[i]),
        InterceptSlot::Genre { start, n, mu, log_sd } => Intercept::PerGenre {
            values: u[start..start + n].to_vec(),
            mu: u[mu],
            sd: u[log_sd].exp(),
        },
    }
}

fn write_intercept<T: Scalar>(slot: InterceptSlot, value: &Intercept<T>, u: &mut [T]) -> Result<()> {
    match (slot, value) {
        (InterceptSlot::Pooled(i), Intercept::Pooled(v)) => u[i] = *v,
        (InterceptSlot::Genre { start, n, mu, log_sd }, Intercept::PerGenre { values, mu: m, sd }) => {
            if values.len() != n {
                return Err(Error::Dimension(format!("{} genre intercepts, expected {n}", values.len())));
            }
            if !(*sd > T::zero()) {
                return Err(Error::domain("genre intercept scale", "> 0", sd.as_f64()));
            }
            u[start..start + n].copy_from_slice(values);
            u[mu] = *m;
            u[log_sd] = sd.ln();
        }
        _ => return Err(Error::Dimension("intercept kind does not match the model".into())),
    }
    Ok(())
}

impl<T: Scalar> ParamVector<T> {
    pub fn from_unconstrained(layout: &ParamLayout, u: &[T]) -> Result<Self> {
        if u.len() != layout.dim() {
            return Err(Error::Dimension(format!("{} values for {} parameters", u.len(), layout.dim())));
        }
        let p = layout.n_features;
        Ok(Self {
            beta0: read_intercept(layout.beta0, u),
            beta: u[layout.beta..layout.beta + p].to_vec(),
            scale: match layout.scale {
                ScaleSlot::Shared(i) => Scale::Shared(u[i].exp()),
                ScaleSlot::Linear { intercept, coeffs } => Scale::Linear {
                    intercept: read_intercept(intercept, u),
                    coeffs: u[coeffs..coeffs + p].to_vec(),
                },
            },
        })
    }

    pub fn from_constrained(layout: &ParamLayout, c: &[T]) -> Result<Self> {
        Self::from_unconstrained(layout, &layout.unconstrain(c)?)
    }

    pub fn to_unconstrained(&self, layout: &ParamLayout) -> Result<Vec<T>> {
        let p = layout.n_features;
        if self.beta.len() != p {
            return Err(Error::Dimension(format!("{} coefficients, expected {p}", self.beta.len())));
        }
        let mut u = vec![T::zero(); layout.dim()];
        write_intercept(layout.beta0, &self.beta0, &mut u)?;
        u[layout.beta..layout.beta + p].copy_from_slice(&self.beta);
        match (layout.scale, &self.scale) {
            (ScaleSlot::Shared(i), Scale::Shared(s)) => {
                if !(*s > T::zero()) {
                    return Err(Error::domain("sigma", "> 0", s.as_f64()));
                }
                u[i] = s.ln();
            }
            (ScaleSlot::Linear { intercept, coeffs: at }, Scale::Linear { intercept: value, coeffs }) => {
                if coeffs.len() != p {
                    return Err(Error::Dimension(format!("{} scale coefficients, expected {p}", coeffs.len())));
                }
                write_intercept(intercept, value, &mut u)?;
                u[at..at + p].copy_from_slice(coeffs);
            }
            _ => return Err(Error::Dimension("scale kind does not match the model".into())),
        }
        Ok(u)
    }

    pub fn to_constrained(&self, layout: &ParamLayout) -> Result<Vec<T>> {
        Ok(layout.constrain(&self.to_unconstrained(layout)?))
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

/// Location and scale of the predictive distribution for one game, on the
/// transformed-target scale.
pub fn predictive_params<T: Scalar>(spec: &ModelSpec, params: &ParamVector<T>, x: &[T], genres: &[usize]) -> Result<(T, T)> {
    if x.len() != params.beta.len() {
        return Err(Error::Dimension(format!("{} features, {} coefficients", x.len(), params.beta.len())));
    }
    if spec.hierarchical && genres.is_empty() {
        return Err(Error::EmptyGenreSet);
    }
    let eta = params.beta0.for_genres(genres)? + dot(&params.beta, x);
    if !eta.is_finite() {
        return Err(Error::NonFinite(format!("linear predictor {eta} for x = {x:?}")));
    }
    let mu = match spec.likelihood {
        Likelihood::FoldedNormal => softplus(eta),
        Likelihood::Normal => eta,
    };
    let sigma = match &params.scale {
        Scale::Shared(s) => *s,
        Scale::Linear { intercept, coeffs } => {
            let zeta = intercept.for_genres(genres)? + dot(coeffs, x);
            if !zeta.is_finite() {
                return Err(Error::NonFinite(format!("scale predictor {zeta} for x = {x:?}")));
            }
            zeta.exp()
        }
    };
    Ok((mu, sigma))
}

/// A model variant bound to a dataset.
#[derive(Debug, Clone)]
pub struct Model<'a, T> {
    spec: ModelSpec,
    data: &'a ModelData<T>,
    layout: ParamLayout,
    targets: Vec<T>,
}

impl<'a, T: Scalar> Model<'a, T> {
    pub fn new(spec: ModelSpec, data: &'a ModelData<T>) -> Result<Self> {
        let layout = ParamLayout::new(&spec, data.n_features(), data.n_genres())?;
        if spec.hierarchical {
            if let Some(bad) = data.genre_sets().iter().flatten().find(|&&j| j >= data.n_genres()) {
                return Err(Error::Dimension(format!("genre {bad} out of {}", data.n_genres())));
            }
        }
        let targets = match spec.likelihood {
            Likelihood::FoldedNormal => data.y().to_vec(),
            // log((1 + y) / mean) = log(1 + y) - log(mean)
            Likelihood::Normal => data.y().iter().map(|&y| y - data.target_log_mean()).collect(),
        };
        Ok(Self {
            spec,
            data,
            layout,
            targets,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn data(&self) -> &ModelData<T> {
        self.data
    }

    /// The target each row's likelihood is evaluated at.
    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    fn check(&self, u: &[T]) -> Result<()> {
        if u.len() != self.layout.dim() {
            return Err(Error::Dimension(format!(
                "{} values for the {}-parameter {} model",
                u.len(),
                self.layout.dim(),
                self.spec
            )));
        }
        Ok(())
    }

    /// Sum of log-likelihood terms, optionally accumulating the gradient
    /// and per-row values.
    fn likelihood(&self, u: &[T], mut grad: Option<&mut [T]>, mut pointwise: Option<&mut [T]>) -> T {
        let p = self.layout.n_features;
        let beta = &u[self.layout.beta..self.layout.beta + p];
        let (shared_sigma, gamma) = match self.layout.scale {
            ScaleSlot::Shared(i) => (u[i].exp(), &u[0..0]),
            ScaleSlot::Linear { coeffs, .. } => (T::nan(), &u[coeffs..coeffs + p]),
        };
        let folded = self.spec.likelihood == Likelihood::FoldedNormal;
        let mut total = T::zero();
        let mut g_log_sigma = T::zero();
        for i in 0..self.data.n_rows() {
            let x = self.data.row(i);
            let genres = self.data.genres(i);
            let eta = self.layout.beta0.mean(u, genres) + dot(beta, x);
            let (mu, dmu_deta) = if folded {
                (softplus(eta), sigmoid(eta))
            } else {
                (eta, T::one())
            };
            let sigma = match self.layout.scale {
                ScaleSlot::Shared(_) => shared_sigma,
                ScaleSlot::Linear { intercept, .. } => (intercept.mean(u, genres) + dot(gamma, x)).exp(),
            };
            let y = self.targets[i];
            let LogDensityGrad { logpdf, d_mu, d_sigma } = if folded {
                folded_normal_kernel(y, mu, sigma)
            } else {
                normal_logpdf_grad(y, mu, sigma)
            };
            total += logpdf;
            if let Some(pw) = pointwise.as_deref_mut() {
                pw[i] = logpdf;
            }
            if let Some(g) = grad.as_deref_mut() {
                let g_eta = d_mu * dmu_deta;
                self.layout.beta0.add_grad(g, genres, g_eta);
                for (gk, &xk) in g[self.layout.beta..self.layout.beta + p].iter_mut().zip(x) {
                    *gk += g_eta * xk;
                }
                // d/d(log sigma)
                let g_zeta = d_sigma * sigma;
                match self.layout.scale {
                    ScaleSlot::Shared(_) => g_log_sigma += g_zeta,
                    ScaleSlot::Linear { intercept, coeffs } => {
                        intercept.add_grad(g, genres, g_zeta);
                        for (gk, &xk) in g[coeffs..coeffs + p].iter_mut().zip(x) {
                            *gk += g_zeta * xk;
                        }
                    }
                }
            }
        }
        if let (Some(g), ScaleSlot::Shared(i)) = (grad, self.layout.scale) {
            g[i] += g_log_sigma;
        }
        total
    }

    fn prior(&self, u: &[T], mut grad: Option<&mut [T]>) -> T {
        let sc = T::lit(self.spec.prior_scale_coeff);
        let ss = T::lit(self.spec.prior_scale_sigma);
        let mut total = T::zero();
        let cauchy = |i: usize, total: &mut T, grad: &mut Option<&mut [T]>| {
            let (lp, d) = cauchy_kernel(u[i], T::zero(), sc);
            *total += lp;
            if let Some(g) = grad.as_deref_mut() {
                g[i] += d;
            }
        };
        // half-Cauchy on exp(v) plus the log-Jacobian v
        let half_cauchy_log = |i: usize, scale: T, total: &mut T, grad: &mut Option<&mut [T]>| {
            let s = u[i].exp();
            let (lp, d) = cauchy_kernel(s, T::zero(), scale);
            *total += lp + T::LN_2() + u[i];
            if let Some(g) = grad.as_deref_mut() {
                g[i] += d * s + T::one();
            }
        };
        let hierarchy = |slot: InterceptSlot, total: &mut T, grad: &mut Option<&mut [T]>| {
            if let InterceptSlot::Genre { start, n, mu, log_sd } = slot {
                let sd = u[log_sd].exp();
                let inv_var = (sd * sd).recip();
                let mut g_mu = T::zero();
                let mut g_log_sd = T::zero();
                for j in 0..n {
                    let LogDensityGrad { logpdf, d_mu, d_sigma } = normal_logpdf_grad(u[start + j], u[mu], sd);
                    *total += logpdf;
                    g_mu += d_mu;
                    g_log_sd += d_sigma * sd;
                    if let Some(g) = grad.as_deref_mut() {
                        g[start + j] -= (u[start + j] - u[mu]) * inv_var;
                    }
                }
                if let Some(g) = grad.as_deref_mut() {
                    g[mu] += g_mu;
                    g[log_sd] += g_log_sd;
                }
            }
        };
        let intercept_prior = |slot: InterceptSlot, total: &mut T, grad: &mut Option<&mut [T]>| match slot {
            InterceptSlot::Pooled(i) => cauchy(i, total, grad),
            InterceptSlot::Genre { mu, log_sd, .. } => {
                hierarchy(slot, total, grad);
                cauchy(mu, total, grad);
                half_cauchy_log(log_sd, sc, total, grad);
            }
        };
        intercept_prior(self.layout.beta0, &mut total, &mut grad);
        match self.layout.scale {
            ScaleSlot::Shared(i) => half_cauchy_log(i, ss, &mut total, &mut grad),
            ScaleSlot::Linear { intercept, .. } => intercept_prior(intercept, &mut total, &mut grad),
        }
        let p = self.layout.n_features;
        let mut coeff_blocks = vec![self.layout.beta];
        if let ScaleSlot::Linear { coeffs, .. } = self.layout.scale {
            coeff_blocks.push(coeffs);
        }
        for start in coeff_blocks {
            for i in start..start + p {
                let (lp, d) = cauchy_kernel(u[i], T::zero(), sc);
                total += lp;
                if let Some(g) = grad.as_deref_mut() {
                    g[i] += d;
                }
            }
        }
        total
    }

    pub fn log_likelihood(&self, u: &[T]) -> Result<T> {
        self.check(u)?;
        Ok(self.likelihood(u, None, None))
    }

    /// Log prior density in the unconstrained parameterization, including the
    /// log-Jacobian of the log-scale entries.
    pub fn log_prior(&self, u: &[T]) -> Result<T> {
        self.check(u)?;
        Ok(self.prior(u, None))
    }

    /// Unnormalized log posterior at unconstrained `u`.
    pub fn log_posterior(&self, u: &[T]) -> Result<T> {
        self.check(u)?;
        Ok(self.likelihood(u, None, None) + self.prior(u, None))
    }

    pub fn log_posterior_gradient(&self, u: &[T]) -> Result<Vec<T>> {
        self.check(u)?;
        let mut g = vec![T::zero(); u.len()];
        self.likelihood(u, Some(&mut g), None);
        self.prior(u, Some(&mut g));
        Ok(g)
    }

    /// Per-row log-likelihood, no prior terms.
    pub fn pointwise_loglik(&self, u: &[T]) -> Result<Vec<T>> {
        self.check(u)?;
        let mut pw = vec![T::zero(); self.data.n_rows()];
        self.likelihood(u, None, Some(&mut pw));
        Ok(pw)
    }

    /// Writes per-row log-likelihood into `out`, reusing its allocation.
    pub fn pointwise_loglik_into(&self, u: &[T], out: &mut [T]) -> Result<()> {
        self.check(u)?;
        if out.len() != self.data.n_rows() {
            return Err(Error::Dimension(format!("{} outputs for {} rows", out.len(), self.data.n_rows())));
        }
        self.likelihood(u, None, Some(out));
        Ok(())
    }
}

impl<T: Scalar> LogDensity<T> for Model<'_, T> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn logp_and_grad(&self, position: &[T], grad: &mut [T]) -> T {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let lik = self.likelihood(position, Some(grad), None);
        lik + self.prior(position, Some(grad))
    }

    fn param_names(&self) -> Vec<String> {
        self.layout.names()
    }

    fn constrain(&self, position: &[T]) -> Vec<T> {
        self.layout.constrain(position)
    }
}

/// The model in sampler coordinates: every coefficient acts on a centred,
/// unit-variance feature, the intercepts absorb the centring, and the
/// location and log-scale intercepts are measured from data-based offsets.
/// The map to the model's unconstrained vector is affine, so the density
/// differs only by a constant. Starting points drawn near zero then put the
/// location near the targets instead of in the flat region of the softplus,
/// where the folded normal has a spurious near-zero-location basin.
#[derive(Debug, Clone)]
pub struct StandardizedModel<'a, T> {
    model: Model<'a, T>,
    center: Vec<T>,
    scale: Vec<T>,
    location_offset: T,
    log_scale_offset: T,
}

impl<'a, T: Scalar> StandardizedModel<'a, T> {
    pub fn new(model: Model<'a, T>) -> Self {
        let data = model.data();
        let (n, p) = (data.n_rows(), data.n_features());
        let mut center = vec![T::zero(); p];
        let mut scale = vec![T::one(); p];
        if n > 1 {
            let nf = T::from_usize(n).unwrap();
            for k in 0..p {
                let m = (0..n).map(|i| data.row(i)[k]).fold(T::zero(), |a, b| a + b) / nf;
                let v = (0..n).map(|i| (data.row(i)[k] - m).powi(2)).fold(T::zero(), |a, b| a + b) / (nf - T::one());
                let sd = v.sqrt();
                // constant columns are left as they are
                if sd > T::from_f64(1e-12).unwrap() {
                    center[k] = m;
                    scale[k] = sd;
                }
            }
        }
        let t = model.targets();
        let nf = T::from_usize(t.len().max(1)).unwrap();
        let mean = t.iter().fold(T::zero(), |a, &b| a + b) / nf;
        let location_offset = match model.spec().likelihood {
            Likelihood::Normal => mean,
            // inverse softplus of the mean target
            Likelihood::FoldedNormal if mean > T::from_f64(1e-3).unwrap() => mean + (-(-mean).exp()).ln_1p(),
            Likelihood::FoldedNormal => T::zero(),
        };
        let sd = if t.len() > 1 {
            (t.iter().fold(T::zero(), |a, &b| a + (b - mean).powi(2)) / (nf - T::one())).sqrt()
        } else {
            T::zero()
        };
        let log_scale_offset = if sd > T::from_f64(1e-12).unwrap() { sd.ln() } else { T::zero() };
        Self {
            model,
            center,
            scale,
            location_offset,
            log_scale_offset,
        }
    }

    fn offset(&self, u: &mut [T], sign: T) {
        let layout = self.model.layout();
        let shift = |u: &mut [T], slot: InterceptSlot, by: T| match slot {
            InterceptSlot::Pooled(i) => u[i] += by,
            InterceptSlot::Genre { start, n, mu, .. } => {
                for j in start..start + n {
                    u[j] += by;
                }
                u[mu] += by;
            }
        };
        shift(u, layout.beta0, sign * self.location_offset);
        match layout.scale {
            ScaleSlot::Shared(i) => u[i] += sign * self.log_scale_offset,
            ScaleSlot::Linear { intercept, .. } => shift(u, intercept, sign * self.log_scale_offset),
        }
    }

    pub fn model(&self) -> &Model<'a, T> {
        &self.model
    }

    fn shift_block(&self, u: &mut [T], slot: InterceptSlot, coeffs: usize, sign: T) {
        let mut c = T::zero();
        for k in 0..self.center.len() {
            c += u[coeffs + k] * self.center[k];
        }
        match slot {
            InterceptSlot::Pooled(i) => u[i] -= sign * c,
            InterceptSlot::Genre { start, n, mu, .. } => {
                for j in start..start + n {
                    u[j] -= sign * c;
                }
                u[mu] -= sign * c;
            }
        }
    }

    fn blocks(&self) -> Vec<(InterceptSlot, usize)> {
        let layout = self.model.layout();
        let mut out = vec![(layout.beta0, layout.beta)];
        if let ScaleSlot::Linear { intercept, coeffs } = layout.scale {
            out.push((intercept, coeffs));
        }
        out
    }

    /// Sampler coordinates to the model's unconstrained vector.
    pub fn to_model(&self, v: &[T]) -> Vec<T> {
        let mut u = v.to_vec();
        for (slot, coeffs) in self.blocks() {
            for k in 0..self.scale.len() {
                u[coeffs + k] = v[coeffs + k] / self.scale[k];
            }
            self.shift_block(&mut u, slot, coeffs, T::one());
        }
        self.offset(&mut u, T::one());
        u
    }

    /// The model's unconstrained vector to sampler coordinates.
    pub fn from_model(&self, u: &[T]) -> Vec<T> {
        let mut v = u.to_vec();
        self.offset(&mut v, -T::one());
        let base = v.clone();
        for (slot, coeffs) in self.blocks() {
            self.shift_block(&mut v, slot, coeffs, -T::one());
            for k in 0..self.scale.len() {
                v[coeffs + k] = base[coeffs + k] * self.scale[k];
            }
        }
        v
    }
}

impl<T: Scalar> LogDensity<T> for StandardizedModel<'_, T> {
    fn dim(&self) -> usize {
        self.model.layout().dim()
    }

    fn logp_and_grad(&self, position: &[T], grad: &mut [T]) -> T {
        let u = self.to_model(position);
        let lp = self.model.logp_and_grad(&u, grad);
        // pull the gradient back through the linear map
        for (slot, coeffs) in self.blocks() {
            let g_intercept = match slot {
                InterceptSlot::Pooled(i) => grad[i],
                InterceptSlot::Genre { start, n, mu, .. } => {
                    grad[start..start + n].iter().fold(grad[mu], |a, &b| a + b)
                }
            };
            for k in 0..self.scale.len() {
                grad[coeffs + k] = (grad[coeffs + k] - self.center[k] * g_intercept) / self.scale[k];
            }
        }
        lp
    }

    fn param_names(&self) -> Vec<String> {
        self.model.layout().names()
    }

    fn constrain(&self, position: &[T]) -> Vec<T> {
        self.model.layout().constrain(&self.to_model(position))
    }
}

/// [`Model::log_posterior`] for typed parameters.
pub fn log_posterior<T: Scalar>(spec: &ModelSpec, params: &ParamVector<T>, data: &ModelData<T>) -> Result<T> {
    let model = Model::new(*spec, data)?;
    model.log_posterior(&params.to_unconstrained(model.layout())?)
}

/// [`Model::log_posterior_gradient`] for typed parameters; the gradient is in
/// the unconstrained parameterization.
pub fn log_posterior_gradient<T: Scalar>(spec: &ModelSpec, params: &ParamVector<T>, data: &ModelData<T>) -> Result<Vec<T>> {
    let model = Model::new(*spec, data)?;
    model.log_posterior_gradient(&params.to_unconstrained(model.layout())?)
}

/// [`Model::pointwise_loglik`] for typed parameters.
pub fn pointwise_loglik<T: Scalar>(spec: &ModelSpec, params: &ParamVector<T>, data: &ModelData<T>) -> Result<Vec<T>> {
    let model = Model::new(*spec, data)?;
    model.pointwise_loglik(&params.to_unconstrained(model.layout())?)
}
