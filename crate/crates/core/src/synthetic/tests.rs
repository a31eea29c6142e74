use super::*;
use crate::distributions::softplus;
use crate::features::feature_row;
use crate::ingest::{ingest, write_catalog, write_histories, FilterConfig};
use statrs::distribution::{ContinuousCDF, Normal};

fn spec_for(key: &str, n_games: usize, seed: u64) -> SyntheticSpec {
    let spec: ModelSpec = key.parse().unwrap();
    SyntheticSpec {
        spec,
        true_params: example_params(&spec, 5, 1.0, seed).unwrap(),
        n_games,
        n_genres: 5,
        genres_per_game: (1, 3),
        features: FeatureGenerator::default(),
        last_month: 3,
        noise_growth: 0.2,
        seed,
    }
}

#[test]
fn same_seed_same_dataset() {
    let s = spec_for("hier_hetero", 50, 1);
    let a = generate(&s).unwrap();
    let b = generate(&s).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.catalog, b.catalog);
    assert_eq!(a.truth, b.truth);
    let c = generate(&SyntheticSpec { seed: 2, ..s }).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn doubling_games_keeps_the_prefix() {
    let s = spec_for("folded", 40, 3);
    let small = generate(&s).unwrap();
    let big = generate(&SyntheticSpec { n_games: 80, ..s }).unwrap();
    assert_eq!(small.records[..], big.records[..40]);
    assert_eq!(small.catalog[..], big.catalog[..40]);
}

#[test]
fn targets_are_counts_and_genre_sets_non_empty() {
    for key in ["normal", "normal_hetero", "folded", "folded_hetero", "hier", "hier_hetero"] {
        let d = generate(&spec_for(key, 60, 4)).unwrap();
        for r in &d.records {
            assert!(!r.genre_ids.is_empty() && r.genre_ids.len() <= 3);
            assert_eq!(r.monthly_medians.keys().copied().collect::<Vec<_>>(), vec![1, 2, 3]);
        }
        assert_eq!(d.truth.months.len(), 2);
        let data = d.model_data(2).unwrap();
        assert_eq!(data.data.n_rows(), 60);
        assert!(data.dropped.is_empty());
    }
}

#[test]
fn zero_noise_targets_follow_the_location() {
    let spec: ModelSpec = "folded".parse().unwrap();
    let mut s = spec_for("folded", 30, 5);
    s.true_params.scale = Scale::Shared(1e-12);
    s.noise_growth = 0.0;
    let d = generate(&s).unwrap();
    let built = d.model_data(2).unwrap();
    let truth = &d.truth.months[&2].params;
    for r in &d.records {
        let x: Vec<f64> = feature_row(r, &built.stats).unwrap();
        let (mu, _) = predictive_params(&spec, truth, &x, &[]).unwrap();
        // the model-scale truth on transformed features gives the same location
        assert_eq!(r.median(2).unwrap(), round_half_up(mu.exp_m1()), "{}", r.app_id);
        let eta_raw = match &s.true_params.beta0 {
            Intercept::Pooled(b) => *b,
            _ => unreachable!(),
        } + s.true_params.beta.iter().zip(raw_row(r)).map(|(b, v)| b * v).sum::<f64>();
        assert_eq!(r.median(2).unwrap(), round_half_up(softplus(eta_raw).exp_m1()));
    }
}

#[test]
fn rounding_is_half_up() {
    assert_eq!(round_half_up(2.5), 3);
    assert_eq!(round_half_up(2.499_999), 2);
    assert_eq!(round_half_up(-0.7), 0);
    assert_eq!(round_half_up(0.0), 0);
}

fn ks_p_value(d: f64, n: usize) -> f64 {
    // asymptotic Kolmogorov distribution with the Stephens correction
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        p += 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn predictive_draws_match_the_folded_normal() {
    let spec: ModelSpec = "folded".parse().unwrap();
    let params = ParamVector {
        beta0: Intercept::Pooled(0.5),
        beta: vec![0.0; 7],
        scale: Scale::Shared(1.3),
    };
    let x = [0.0; 7];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut draws: Vec<f64> = (0..n).map(|_| predictive_draw(&spec, &params, &x, &[0], &mut rng).unwrap()).collect();
    draws.sort_by(f64::total_cmp);
    let mu = softplus(0.5f64);
    let normal = Normal::new(mu, 1.3).unwrap();
    // folded normal CDF: F(y) = Phi((y - mu)/s) - Phi((-y - mu)/s)
    let cdf = |y: f64| normal.cdf(y) - normal.cdf(-y);
    let d = draws
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let f = cdf(y);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    let p = ks_p_value(d, n);
    assert!(p > 0.01, "KS d {d}, p {p}");
}

#[test]
fn noise_grows_with_month() {
    let s = spec_for("folded_hetero", 10, 6);
    let d = generate(&SyntheticSpec { last_month: 5, ..s }).unwrap();
    let gamma0 = |m: u32| d.truth.months[&m].named["gamma0"];
    for m in 3..=5 {
        assert!((gamma0(m) - gamma0(m - 1) - 1.2f64.ln()).abs() < 1e-12, "month {m}");
    }
    let s = spec_for("folded", 10, 6);
    let d = generate(&SyntheticSpec { last_month: 4, ..s }).unwrap();
    let sigma = |m: u32| d.truth.months[&m].named["sigma"];
    assert!((sigma(3) / sigma(2) - 1.2).abs() < 1e-12);
    assert!((sigma(4) / sigma(2) - 1.44).abs() < 1e-12);
}

#[test]
fn model_scale_truth_shifts_only_intercepts() {
    let s = spec_for("hier_hetero", 200, 7);
    let d = generate(&s).unwrap();
    let built = d.model_data(2).unwrap();
    let t = &d.truth.months[&2];
    assert_eq!(t.params.beta, s.true_params.beta);
    let shift: f64 = LOG_RATIO_FEATURES
        .iter()
        .enumerate()
        .map(|(k, f)| s.true_params.beta[k] * built.stats.mean(f).unwrap().ln())
        .sum();
    let (Intercept::PerGenre { values: raw, sd: raw_sd, .. }, Intercept::PerGenre { values, sd, .. }) = (&s.true_params.beta0, &t.params.beta0) else {
        panic!()
    };
    for (a, b) in raw.iter().zip(values) {
        assert!((b - a - shift).abs() < 1e-12);
    }
    assert_eq!(raw_sd, sd);
    assert_eq!(t.named.len(), ParamLayout::new(&s.spec, 7, 5).unwrap().dim());
}

#[test]
fn files_round_trip_through_ingest() {
    let d = generate(&spec_for("hier", 40, 8)).unwrap();
    let mut catalog = Vec::new();
    write_catalog(&mut catalog, &d.catalog).unwrap();
    let mut history = Vec::new();
    write_histories(&mut history, &d.histories).unwrap();
    let out = ingest(catalog.as_slice(), history.as_slice(), &FilterConfig::default(), 3).unwrap();
    assert!(out.rejections.is_empty(), "{:?}", out.rejections);
    let mut got = out.records.clone();
    got.sort_by(|a, b| a.app_id.cmp(&b.app_id));
    assert_eq!(got.len(), d.records.len());
    for (a, b) in got.iter().zip(&d.records) {
        assert_eq!(a.app_id, b.app_id);
        assert_eq!(a.price_eur, b.price_eur);
        assert_eq!(a.n_languages, b.n_languages);
        assert_eq!(a.storage_mb, b.storage_mb);
        assert_eq!(a.release_date, b.release_date);
        assert_eq!(a.monthly_medians, b.monthly_medians);
        let names: Vec<&str> = a.genre_ids.iter().map(|&j| out.genres.names[j].as_str()).collect();
        let expected: Vec<String> = b.genre_ids.iter().map(|&j| genre_name(j)).collect();
        assert_eq!(names, expected);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let s = spec_for("folded", 10, 9);
    assert!(generate(&SyntheticSpec { n_games: 0, ..s.clone() }).is_err());
    assert!(generate(&SyntheticSpec { genres_per_game: (0, 2), ..s.clone() }).is_err());
    assert!(generate(&SyntheticSpec { genres_per_game: (2, 9), ..s.clone() }).is_err());
    assert!(generate(&SyntheticSpec { last_month: 6, ..s.clone() }).is_err());
    let hier = spec_for("hier", 10, 9);
    assert!(generate(&SyntheticSpec { true_params: s.true_params.clone(), ..hier }).is_err());
}

#[test]
fn config_round_trip() {
    let text = r#"
model = "folded"
n_games = 20
n_genres = 3
genres_per_game = [1, 2]
seed = 4
"#;
    let cfg: SyntheticConfig = toml::from_str(text).unwrap();
    let s = cfg.to_spec().unwrap();
    assert_eq!(s.last_month, 2);
    assert_eq!(s.true_params, example_params(&s.spec, 3, 1.0, 4).unwrap());

    let layout = ParamLayout::new(&s.spec, 7, 3).unwrap();
    let named: BTreeMap<String, f64> = layout.names().into_iter().zip(s.true_params.to_constrained(&layout).unwrap()).collect();
    let explicit = SyntheticConfig {
        params: Some(named.clone()),
        ..cfg.clone()
    };
    assert_eq!(explicit.to_spec().unwrap().true_params, s.true_params);
    let mut extra = named.clone();
    extra.insert("beta[9]".into(), 1.0);
    assert!(SyntheticConfig { params: Some(extra), ..cfg.clone() }.to_spec().is_err());
    let mut missing = named;
    missing.remove("sigma");
    assert!(SyntheticConfig { params: Some(missing), ..cfg.clone() }.to_spec().is_err());
    let back: SyntheticConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
}
