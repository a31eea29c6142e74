//! Convergence diagnostics on raw per-chain arrays.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        // odd lengths drop the middle draw
        out.push(&c[..half]);
        out.push(&c[c.len() - half..]);
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Ranks (1-based, ties averaged) mapped through the inverse normal CDF
/// with the `(r - 3/8) / (S + 1/4)` offset.
fn rank_normalize(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let s = all.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| all[a].total_cmp(&all[b]));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && all[order[j + 1]] == all[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::standard();
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| normal.inverse_cdf((r - 0.375) / (s as f64 + 0.25)))
        .collect();
    let mut out = Vec::with_capacity(chains.len());
    let mut at = 0;
    for c in chains {
        out.push(z[at..at + c.len()].to_vec());
        at += c.len();
    }
    out
}

fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n * var(&means);
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Rank-normalized split R-hat: the larger of the bulk and folded-tail
/// versions.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Config(format!("R-hat needs at least 2 chains, got {}", chains.len())));
    }
    let n = chains[0].len();
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension("R-hat needs equal-length chains with at least 4 draws".into()));
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("draw passed to R-hat".into()));
    }
    let halves = split(chains);
    let bulk = rhat_basic(&rank_normalize(&halves));
    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let med = crate::scalar::quantile_sorted(&all, 0.5);
    let folded: Vec<Vec<f64>> = halves.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let folded_refs: Vec<&[f64]> = folded.iter().map(Vec::as_slice).collect();
    let tail = rhat_basic(&rank_normalize(&folded_refs));
    Ok(bulk.max(tail))
}

fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size of split chains from the Geyer initial monotone
/// sequence of the multi-chain autocorrelation estimate. A constant input
/// gives 0.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.is_empty() || chains[0].len() < 4 || chains.iter().any(|c| c.len() != chains[0].len()) {
        return Err(Error::Dimension("ESS needs equal-length chains with at least 4 draws".into()));
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("draw passed to ESS".into()));
    }
    let halves: Vec<&[f64]> = if chains[0].len() >= 8 {
        split(chains)
    } else {
        chains.iter().map(Vec::as_slice).collect()
    };
    let m = halves.len();
    let n = halves[0].len();
    let means: Vec<f64> = halves.iter().map(|c| mean(c)).collect();
    let acov = |lag: usize| -> f64 { halves.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, lag)).sum::<f64>() / m as f64 };
    let nf = n as f64;
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += var(&means);
    }
    let first = chains[0][0];
    if var_plus <= 0.0 || chains.iter().flatten().all(|&v| v == first) {
        log::warn!("constant chain: effective sample size set to 0");
        return Ok(0.0);
    }

    let mut rho = vec![0.0; n];
    let mut rho_even = 1.0;
    rho[0] = rho_even;
    let mut rho_odd = 1.0 - (mean_var - acov(1)) / var_plus;
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (mean_var - acov(t + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - acov(t + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho[max_t + 1] = rho_even;
    }
    let mut t = 1;
    while t + 3 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + rho[max_t + 1];
    Ok((total / tau).min(total * total.log10()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn white(seed: u64, chains: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..chains).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    #[test]
    fn copies_give_unit_rhat() {
        let c = white(1, 1, 1000).remove(0);
        let r = split_rhat(&[c.clone(), c.clone(), c.clone(), c]).unwrap();
        assert!(r <= 1.001, "{r}");
        let g = golden(500);
        let r = split_rhat(&[g.clone(), g.clone(), g.clone(), g]).unwrap();
        assert!((r - 0.998_120_595_590_523_8).abs() < 1e-10, "{r}");
    }

    /// Unit-variance deterministic sequence from the golden-ratio rotation.
    fn golden(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| 12f64.sqrt() * ((i as f64 * 0.618_033_988_749_894_9).fract() - 0.5))
            .collect()
    }

    #[test]
    fn separated_chains_give_large_rhat() {
        let base = golden(500);
        let a: Vec<f64> = base.iter().map(|v| v - 10.0).collect();
        let b: Vec<f64> = base.iter().rev().map(|v| v + 10.0).collect();
        let r = split_rhat(&[a, b]).unwrap();
        // reference: ArviZ 0.23 rhat(method="rank") on the same arrays
        assert!((r - 1.826_573_457_885_793_7).abs() < 1e-10, "{r}");
        assert!(r > 1.2);
    }

    #[test]
    fn ess_matches_reference() {
        let base = golden(500);
        let rev: Vec<f64> = base.iter().rev().copied().collect();
        let e = effective_sample_size(&[base, rev]).unwrap();
        // reference: ArviZ 0.23 ess(method="mean")
        assert!((e - 2_071.074_346_077_939).abs() < 1e-6, "{e}");
    }

    #[test]
    fn white_noise_rhat_small() {
        let failures = (0..200).filter(|&s| split_rhat(&white(100 + s, 4, 1000)).unwrap() >= 1.01).count();
        assert!(failures <= 2, "{failures} of 200 seeds above 1.01");
    }

    #[test]
    fn rhat_rejects_single_chain() {
        assert!(split_rhat(&white(3, 1, 100)).is_err());
        assert!(split_rhat(&white(3, 2, 3)).is_err());
    }

    #[test]
    fn iid_ess_near_total() {
        for seed in 0..20 {
            let e = effective_sample_size(&white(seed, 4, 1000)).unwrap();
            assert!((3400.0..=4600.0).contains(&e), "seed {seed}: {e}");
        }
    }

    #[test]
    fn ar1_ess() {
        // asymptotic ESS of AR(1) with phi = 0.9 is n (1 - phi) / (1 + phi) = n / 19
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let phi: f64 = 0.9;
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
                (0..5000)
                    .map(|_| {
                        x = phi * x + rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        let e = effective_sample_size(&chains).unwrap();
        let expected = 20_000.0 / 19.0;
        assert!(e > expected / 1.5 && e < expected * 1.5, "{e} vs {expected}");
    }

    #[test]
    fn constant_chain_has_zero_ess() {
        assert_eq!(effective_sample_size(&[vec![2.5; 100], vec![2.5; 100]]).unwrap(), 0.0);
    }
}
