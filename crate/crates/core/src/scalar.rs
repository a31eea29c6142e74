use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the numerical core is written against: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the implemented types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_sum_exp<T: Scalar>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-sum-exp over a slice; `-inf` for an empty slice.
pub fn log_sum_exp_slice<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Mean of a slice; NaN when empty.
pub fn mean<T: Scalar>(values: &[T]) -> T {
    let n = T::from_usize(values.len()).unwrap();
    values.iter().copied().sum::<T>() / n
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance<T: Scalar>(values: &[T]) -> T {
    if values.len() < 2 {
        return T::zero();
    }
    let m = mean(values);
    let ss: T = values.iter().map(|&v| (v - m) * (v - m)).sum();
    ss / T::from_usize(values.len() - 1).unwrap()
}

/// Percentile with linear interpolation between order statistics
/// (the "type 7" rule). `q` is a fraction in `[0, 1]`; `sorted` must be
/// sorted ascending and non-empty.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = T::lit(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Sorts a copy and returns the requested quantiles.
pub fn quantiles<T: Scalar>(values: &[T], qs: &[f64]) -> Vec<T> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    qs.iter().map(|&q| quantile_sorted(&sorted, q)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert!((log_sum_exp(1000.0_f64, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp_slice(&[0.0_f64, 0.0, 0.0]) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0_f64, 2.0, 3.0, 4.0];
        assert_eq!(quantiles(&v, &[0.0, 0.5, 1.0]), vec![1.0, 2.5, 4.0]);
        assert!((quantile_sorted(&v, 0.05) - 1.15).abs() < 1e-12);
    }

    #[test]
    fn f32_and_f64_agree() {
        let a: f32 = log_sum_exp(0.3_f32, -1.2);
        let b: f64 = log_sum_exp(0.3_f64, -1.2);
        assert!((a as f64 - b).abs() < 1e-6);
    }
}
