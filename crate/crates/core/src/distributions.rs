//! Log-density kernels, gradients and samplers for the distributions the
//! models use: normal, folded normal, Cauchy and half-Cauchy, plus the
//! softplus link.
//!
//! Every density is evaluated in log space. The folded normal combines its
//! two normal terms with log-sum-exp, so densities stay finite far into the
//! tails where the linear-scale PDF underflows.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[inline]
fn half_ln_two_pi<T: Scalar>() -> T {
    T::lit(0.918_938_533_204_672_8)
}

/// Location/scale of a folded normal `FN(mu, sigma^2)`: the law of `|Z|`
/// for `Z ~ N(mu, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldedNormal<T> {
    pub mu: T,
    pub sigma: T,
}

impl<T: Scalar> FoldedNormal<T> {
    pub fn new(mu: T, sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(Error::domain("sigma", "finite and > 0", sigma.as_f64()));
        }
        if !mu.is_finite() {
            return Err(Error::NonFinite(format!("folded normal location {mu}")));
        }
        Ok(Self { mu, sigma })
    }

    /// Analytic mean `sigma*sqrt(2/pi)*exp(-mu^2/2sigma^2) + mu*(1 - 2*Phi(-mu/sigma))`.
    pub fn mean(&self) -> T {
        let mu = self.mu.as_f64();
        let sigma = self.sigma.as_f64();
        let phi = statrs::function::erf::erfc(mu / sigma / std::f64::consts::SQRT_2) / 2.0;
        let m = sigma * (2.0 / std::f64::consts::PI).sqrt() * (-mu * mu / (2.0 * sigma * sigma)).exp()
            + mu * (1.0 - 2.0 * phi);
        T::lit(m)
    }
}

/// Log-density together with its partial derivatives in location and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensityGrad<T> {
    pub logpdf: T,
    pub d_mu: T,
    pub d_sigma: T,
}

fn check_support<T: Scalar>(x: T) -> Result<()> {
    if x < T::zero() || x.is_nan() {
        return Err(Error::domain("folded normal argument", ">= 0", x.as_f64()));
    }
    Ok(())
}

/// Folded normal density `f_N(x | mu, sigma^2) + f_N(-x | mu, sigma^2)`.
pub fn folded_normal_pdf<T: Scalar>(x: T, p: &FoldedNormal<T>) -> Result<T> {
    folded_normal_logpdf(x, p).map(T::exp)
}

pub fn folded_normal_logpdf<T: Scalar>(x: T, p: &FoldedNormal<T>) -> Result<T> {
    check_support(x)?;
    Ok(folded_normal_kernel(x, p.mu, p.sigma).logpdf)
}

pub fn folded_normal_logpdf_grad<T: Scalar>(x: T, p: &FoldedNormal<T>) -> Result<LogDensityGrad<T>> {
    check_support(x)?;
    Ok(folded_normal_kernel(x, p.mu, p.sigma))
}

/// Unchecked folded normal log-density and gradient; the hot path of the
/// model likelihood. Requires `x >= 0` and `sigma > 0`.
#[inline]
pub(crate) fn folded_normal_kernel<T: Scalar>(x: T, mu: T, sigma: T) -> LogDensityGrad<T> {
    let inv_var = (sigma * sigma).recip();
    let dm = x - mu;
    let dp = x + mu;
    let half = T::lit(0.5);
    let a = -half * dm * dm * inv_var;
    let b = -half * dp * dp * inv_var;
    // a - b = 2 x mu / sigma^2; the smaller term relative to the larger
    let (hi, gap) = if a >= b { (a, b - a) } else { (b, a - b) };
    let e = gap.exp();
    let lse = hi + e.ln_1p();
    let w_lo = e / (T::one() + e);
    let w_hi = T::one() - w_lo;
    let (w_a, w_b) = if a >= b { (w_hi, w_lo) } else { (w_lo, w_hi) };
    let logpdf = lse - sigma.ln() - half_ln_two_pi();
    let d_mu = (w_a * dm - w_b * dp) * inv_var;
    let d_sigma = (w_a * dm * dm + w_b * dp * dp) * inv_var / sigma - sigma.recip();
    LogDensityGrad { logpdf, d_mu, d_sigma }
}

/// Normal log-density with gradient in location and scale.
#[inline]
pub fn normal_logpdf_grad<T: Scalar>(x: T, mu: T, sigma: T) -> LogDensityGrad<T> {
    let z = (x - mu) / sigma;
    LogDensityGrad {
        logpdf: -T::lit(0.5) * z * z - sigma.ln() - half_ln_two_pi(),
        d_mu: z / sigma,
        d_sigma: (z * z - T::one()) / sigma,
    }
}

#[inline]
pub fn normal_logpdf<T: Scalar>(x: T, mu: T, sigma: T) -> T {
    normal_logpdf_grad(x, mu, sigma).logpdf
}

/// `log(1 + e^x)`, exact to rounding over the whole real line.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, the derivative of [`softplus`].
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn check_scale<T: Scalar>(scale: T) -> Result<()> {
    if !(scale > T::zero()) {
        return Err(Error::domain("scale", "> 0", scale.as_f64()));
    }
    Ok(())
}

pub fn cauchy_logpdf<T: Scalar>(x: T, location: T, scale: T) -> Result<T> {
    check_scale(scale)?;
    Ok(cauchy_kernel(x, location, scale).0)
}

/// Half-Cauchy on `[0, inf)` with location pinned at zero.
pub fn half_cauchy_logpdf<T: Scalar>(x: T, scale: T) -> Result<T> {
    check_scale(scale)?;
    if x < T::zero() {
        return Err(Error::domain("half-Cauchy argument", ">= 0", x.as_f64()));
    }
    Ok(cauchy_kernel(x, T::zero(), scale).0 + T::LN_2())
}

/// Cauchy log-density and its derivative in `x`.
#[inline]
pub(crate) fn cauchy_kernel<T: Scalar>(x: T, location: T, scale: T) -> (T, T) {
    let d = x - location;
    let s2 = scale * scale;
    let logpdf = -(T::PI() * scale).ln() - (d * d / s2).ln_1p();
    let dx = -T::lit(2.0) * d / (s2 + d * d);
    (logpdf, dx)
}

/// Draws `|z|` with `z ~ N(mu, sigma^2)`.
pub fn folded_normal_sample<T: Scalar, R: Rng + ?Sized>(p: &FoldedNormal<T>, rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    (p.mu + p.sigma * T::lit(z)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Independent oracle: plain normal PDF, evaluated on the linear scale.
    fn phi(z: f64) -> f64 {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn fnp(mu: f64, sigma: f64) -> FoldedNormal<f64> {
        FoldedNormal::new(mu, sigma).unwrap()
    }

    #[test]
    fn half_normal_at_origin() {
        let v = folded_normal_pdf(0.0, &fnp(0.0, 1.0)).unwrap();
        assert!((v - 0.797_884_560_802_865_4).abs() < 1e-12);
    }

    #[test]
    fn two_term_identity() {
        let expected = phi(-1.0) + phi(3.0);
        let v = folded_normal_pdf(1.0, &fnp(2.0, 1.0)).unwrap();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.246_403).abs() < 1e-6);
        let lp = folded_normal_logpdf(1.0, &fnp(2.0, 1.0)).unwrap();
        assert!((lp - expected.ln()).abs() < 1e-12);
        assert!((lp - (-1.400_788_605_286_863)).abs() < 1e-12);
    }

    #[test]
    fn tail_value() {
        let v = folded_normal_pdf(5.0, &fnp(0.0, 1.0)).unwrap();
        assert!((v - 2.0 * phi(5.0)).abs() < 1e-18);
        assert!((v - 2.973e-6).abs() < 1e-9);
    }

    #[test]
    fn negative_support_and_bad_sigma_are_rejected() {
        assert!(folded_normal_pdf(-0.1, &fnp(0.0, 1.0)).is_err());
        assert!(FoldedNormal::new(0.0, 0.0).is_err());
        assert!(FoldedNormal::new(0.0, -1.0).is_err());
    }

    #[test]
    fn symmetric_fold_has_zero_location_gradient() {
        for &x in &[0.0, 0.3, 1.0, 4.0, 30.0] {
            let g = folded_normal_logpdf_grad(x, &fnp(0.0, 1.7)).unwrap();
            assert_eq!(g.d_mu, 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for _ in 0..200 {
            let x = rng.random_range(0.0..8.0);
            let mu = rng.random_range(-5.0..8.0);
            let sigma = rng.random_range(0.2..4.0);
            let g = folded_normal_logpdf_grad(x, &fnp(mu, sigma)).unwrap();
            let f = |m: f64, s: f64| folded_normal_logpdf(x, &fnp(m, s)).unwrap();
            let fd_mu = (f(mu + h, sigma) - f(mu - h, sigma)) / (2.0 * h);
            let fd_sigma = (f(mu, sigma + h) - f(mu, sigma - h)) / (2.0 * h);
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-3);
            assert!(rel(g.d_mu, fd_mu) < 1e-6, "d_mu {} vs {}", g.d_mu, fd_mu);
            assert!(rel(g.d_sigma, fd_sigma) < 1e-6, "d_sigma {} vs {}", g.d_sigma, fd_sigma);
        }
    }

    #[test]
    fn normal_gradient_matches_finite_differences() {
        let h = 1e-6;
        let (x, mu, s): (f64, f64, f64) = (0.7, -0.4, 1.3);
        let g = normal_logpdf_grad(x, mu, s);
        let fd_mu = (normal_logpdf(x, mu + h, s) - normal_logpdf(x, mu - h, s)) / (2.0 * h);
        let fd_s = (normal_logpdf(x, mu, s + h) - normal_logpdf(x, mu, s - h)) / (2.0 * h);
        assert!((g.d_mu - fd_mu).abs() < 1e-8);
        assert!((g.d_sigma - fd_s).abs() < 1e-8);
    }

    #[test]
    fn far_tail_stays_finite() {
        let lp = folded_normal_logpdf(1e4, &fnp(0.0, 0.01)).unwrap();
        assert!(lp.is_finite() && lp < -1e11);
        let g = folded_normal_logpdf_grad(1e3, &fnp(-2.0, 0.5)).unwrap();
        assert!(g.d_mu.is_finite() && g.d_sigma.is_finite());
    }

    #[test]
    fn softplus_regimes() {
        assert!((softplus(0.0_f64) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(100.0_f64) - 100.0).abs() < 1e-12);
        let tiny = softplus(-100.0_f64);
        assert!(tiny >= 0.0 && (tiny - (-100.0_f64).exp()).abs() < 1e-50);
        assert!(softplus(1000.0_f64).is_finite());
    }

    #[test]
    fn cauchy_values() {
        let v = cauchy_logpdf(0.0_f64, 0.0, 5.0).unwrap();
        assert!((v - (1.0 / (5.0 * std::f64::consts::PI)).ln()).abs() < 1e-14);
        assert!((v - (-2.7541)).abs() < 1e-4);
        let h = half_cauchy_logpdf(0.0_f64, 5.0).unwrap();
        assert!((h - (2.0 / (5.0 * std::f64::consts::PI)).ln()).abs() < 1e-14);
        for &x in &[0.1, 1.0, 17.0] {
            assert_eq!(cauchy_logpdf(x, 0.0, 2.0).unwrap(), cauchy_logpdf(-x, 0.0, 2.0).unwrap());
        }
        assert!(cauchy_logpdf(0.0, 0.0, 0.0).is_err());
        assert!(half_cauchy_logpdf(-1.0, 1.0).is_err());
    }

    #[test]
    fn sampler_support_and_mean() {
        let p = fnp(2.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let d = folded_normal_sample(&p, &mut rng);
            assert!(d >= 0.0);
            sum += d;
        }
        // analytic mean at (2, 1) is 2.0170 to four decimals
        assert!((p.mean() - 2.0170).abs() < 1e-4);
        assert!((sum / n as f64 - p.mean()).abs() < 3e-3);
    }

    #[test]
    fn zero_location_draws_are_half_normal() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let p = fnp(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n).map(|_| folded_normal_sample(&p, &mut rng)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let std = Normal::new(0.0, 1.0).unwrap();
        let mut d = 0.0_f64;
        for (i, &x) in draws.iter().enumerate() {
            let cdf = 2.0 * std.cdf(x) - 1.0;
            d = d.max((cdf - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - cdf).abs());
        }
        // KS critical value at alpha = 0.01
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn works_in_single_precision() {
        let p = FoldedNormal::new(2.0_f32, 1.0).unwrap();
        let v = folded_normal_pdf(1.0_f32, &p).unwrap();
        assert!((v - 0.246_403).abs() < 1e-5);
    }
}
