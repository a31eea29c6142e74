use super::*;
use crate::features::BASE_FEATURES;
use proptest::prelude::*;
use rand::Rng;

fn samples(names: &[&str], columns: &[Vec<f64>]) -> PosteriorSamples<f64> {
    let n = columns[0].len();
    let draws: Vec<Vec<f64>> = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    PosteriorSamples::from_draws(names.iter().map(|s| s.to_string()).collect(), vec![draws]).unwrap()
}

fn stats(n_genres: usize) -> TrainingStats {
    TrainingStats {
        feature_means: LOG_RATIO_FEATURES
            .iter()
            .zip([10.0, 5.0, 2000.0, 300.0])
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        target_mean: 250.0,
        n_genres,
        year_levels: Vec::new(),
    }
}

fn game(genres: &[usize]) -> GameRecord {
    GameRecord {
        app_id: "g1".into(),
        name: "Game".into(),
        price_eur: 9.99,
        n_languages: 3,
        storage_mb: 1500.0,
        release_date: NaiveDate::from_ymd_opt(2019, 3, 14).unwrap(),
        genre_ids: genres.iter().copied().collect(),
        monthly_medians: BTreeMap::from([(1, 200), (2, 150)]),
    }
}

/// Constant draws of a folded model with the given coefficients.
fn folded_samples(beta0: f64, beta: [f64; 7], sigma: f64, n: usize) -> PosteriorSamples<f64> {
    let spec: ModelSpec = "folded".parse().unwrap();
    let layout = ParamLayout::new(&spec, 7, 3).unwrap();
    let names = layout.names();
    let mut row = vec![beta0];
    row.extend(beta);
    row.push(sigma);
    PosteriorSamples::from_draws(names, vec![vec![row; n]]).unwrap()
}

#[test]
fn summary_examples() {
    let s = Summary::from_draws(&[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(s.mean, 2.0);
    assert!((s.q5 - 1.1).abs() < 1e-12 && (s.q95 - 2.9).abs() < 1e-12);
    assert!(Summary::from_draws(&[]).is_err());
    assert!(Summary::from_draws(&[1.0, f64::NAN]).is_err());

    let sym = samples(&["a", "b"], &[vec![-1.0, 0.5, 1.0, -0.5], vec![1.0, 2.0, 3.0, 4.0]]);
    let rows = posterior_summary(&sym).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains_zero);
    assert!(!rows[1].contains_zero);
}

#[test]
fn standard_normal_q5() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
    let s = Summary::from_draws(&draws).unwrap();
    assert!((s.q5 + 1.644_853_626_951_472_2).abs() < 0.02, "{}", s.q5);
    assert!((s.q95 - 1.644_853_626_951_472_2).abs() < 0.02, "{}", s.q95);
}

#[test]
fn contribution_examples() {
    let c = feature_contribution(&[-0.022; 5], &[0.0, 30.0]).unwrap();
    assert_eq!(c[0].summary.mean, 0.0);
    // -0.022 * ln 31
    assert!((c[1].summary.mean + 0.075_547_718_498_673_21).abs() < 1e-12, "{}", c[1].summary.mean);
    assert!(feature_contribution(&[1.0], &[-1.0]).is_err());
}

#[test]
fn day_of_month_examples() {
    let e = day_of_month_effect(&[-0.022; 10], 31).unwrap();
    assert!((e.mean + 0.682).abs() <= 1e-12, "{}", e.mean);
    assert_eq!(day_of_month_effect(&[0.3, 0.5], 1).unwrap(), Summary::from_draws(&[0.3, 0.5]).unwrap());
    let k = day_of_month_effect(&[-0.022], 7).unwrap().mean;
    let k2 = day_of_month_effect(&[-0.022], 14).unwrap().mean;
    assert!((k2 - 2.0 * k).abs() < 1e-15);
    assert!(day_of_month_effect(&[1.0], 0).is_err());
    assert!(day_of_month_effect(&[1.0], 32).is_err());
}

#[test]
fn day_of_year_examples() {
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let curve = day_of_year_effect(&[0.4, 0.6], &[0.0, 0.0], &grid).unwrap();
    let best = curve
        .iter()
        .max_by(|a, b| a.log_space.mean.total_cmp(&b.log_space.mean))
        .unwrap();
    assert!(best.x == 0.0 || best.x == 1.0);
    assert!((curve[0].log_space.mean - curve[100].log_space.mean).abs() < 1e-12);
    assert!((curve[0].original.mean - 0.5 * (0.4f64.exp() + 0.6f64.exp())).abs() < 1e-12);

    let flat = day_of_year_effect(&[0.0; 3], &[0.0; 3], &grid).unwrap();
    assert!(flat.iter().all(|p| p.log_space.mean == 0.0 && p.original.mean == 1.0));
    assert!(day_of_year_effect(&[0.0], &[0.0], &[1.5]).is_err());
    assert!(day_of_year_effect(&[0.0], &[0.0, 1.0], &[0.5]).is_err());
}

#[test]
fn adjusted_intercept_examples() {
    let d = adjusted_intercept_draws(&[7.583], &[(&[0.988], 1000.0)]).unwrap();
    // 7.583 - 0.988 ln 1000
    assert!((d[0] - 0.758_137_784_365_649_4).abs() < 1e-12, "{}", d[0]);
    let zero = adjusted_intercept_draws(&[1.0, 2.0], &[(&[0.0, 0.0], 5.0), (&[0.0, 0.0], 7.0)]).unwrap();
    assert_eq!(zero, vec![1.0, 2.0]);

    let s = folded_samples(3.0, [0.0; 7], 1.0, 4);
    let a = adjusted_intercept(&s, &stats(3)).unwrap();
    assert_eq!(a.beta0.mean, 3.0);
    assert!(a.gamma0.is_none());
    let mut missing = stats(3);
    missing.feature_means.remove("price");
    assert!(adjusted_intercept(&s, &missing).is_err());

    let s = folded_samples(3.0, [0.5, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0], 1.0, 4);
    let a = adjusted_intercept(&s, &stats(3)).unwrap();
    assert!((a.beta0.mean - (3.0 - 0.5 * 10f64.ln())).abs() < 1e-12);
}

#[test]
fn genre_report_flags_wide_intervals() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut normal = |scale: f64, center: f64| -> Vec<f64> {
        (0..2000).map(|_| center + scale * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let hier = samples(
        &["beta0[0]", "beta0[1]", "beta0[2]", "beta0_mu", "sigma_beta0", "sigma"],
        &[
            normal(0.1, 2.0),
            normal(5.0, 0.0),
            normal(0.1, 4.0),
            normal(0.1, 1.0),
            vec![1.0; 2000],
            vec![1.0; 2000],
        ],
    );
    let pooled = samples(&["beta0", "sigma"], &[normal(0.1, 1.0), vec![1.0; 2000]]);
    let rows = genre_intercept_report(&hier, &pooled, 3, HIGH_VARIANCE_FACTOR).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r.high_variance).collect::<Vec<_>>(), vec![false, true, false]);
    // the shifted genre lies outside the pooled band
    assert!(rows[2].beta0.q5 > rows[2].pooled_beta0.1);
    assert!(rows[0].gamma0.is_none() && rows[0].pooled_gamma0.is_none());
    assert!(genre_intercept_report(&hier, &pooled, 4, 3.0).is_err());
    assert!(genre_intercept_report(&hier, &hier, 3, 3.0).is_err());
    let text = genre_report(&rows, Some(&["Action".into(), "Indie".into(), "RPG".into()]));
    assert!(text.iter().any(|r| r.entity == "genre/1/Indie" && r.statistic == "high_variance" && r.value == 1.0));
}

#[test]
fn degenerate_prediction_is_a_point_mass() {
    let beta = [0.1, 0.0, 0.2, 0.5, -0.01, 0.1, 0.0];
    let s = folded_samples(4.0, beta, 1e-12, 50);
    let st = stats(3);
    let g = game(&[0]);
    let p = predict_distribution(&"folded".parse().unwrap(), &s, &g, &st, 5).unwrap();
    let x: Vec<f64> = feature_row(&g, &st).unwrap();
    let eta = 4.0 + beta.iter().zip(&x).map(|(b, v)| b * v).sum::<f64>();
    let expected = crate::distributions::softplus(eta).exp() - 1.0;
    assert_eq!(p.counts.len(), 50);
    for c in &p.counts {
        assert!((c - expected).abs() < 1e-8 * expected, "{c} vs {expected}");
    }
}

#[test]
fn prediction_back_transform_and_support() {
    let s = folded_samples(0.5, [0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0], 2.0, 500);
    let p = predict_distribution(&"folded".parse().unwrap(), &s, &game(&[1]), &stats(3), 9).unwrap();
    assert!(p.counts.iter().all(|&c| c >= 0.0));
    for (t, c) in p.transformed.iter().zip(&p.counts) {
        assert!((t.exp() - 1.0 - c).abs() <= 1e-9 * c.max(1.0));
    }
    let q = p.quantiles().unwrap();
    assert!(q[0] <= q[1] && q[1] <= q[2]);
    let again = predict_distribution(&"folded".parse().unwrap(), &s, &game(&[1]), &stats(3), 9).unwrap();
    assert_eq!(p, again);
    // pooled draws carry no genre parameters, so the genre count is irrelevant
    assert!(predict_distribution(&"folded".parse().unwrap(), &s, &game(&[1]), &stats(4), 9).is_ok());
    assert!(predict_distribution(&"hier".parse().unwrap(), &s, &game(&[1]), &stats(3), 9).is_err());
}

#[test]
fn unseen_genre_uses_hyper_mean() {
    let spec: ModelSpec = "hier".parse().unwrap();
    let layout = ParamLayout::new(&spec, 7, 2).unwrap();
    // beta0[0], beta0[1], beta0_mu, sigma_beta0, beta[1..7], sigma
    let mut row = vec![1.0, 2.0, 3.0, 0.5];
    row.extend([0.0; 7]);
    row.push(1e-12);
    let s = PosteriorSamples::from_draws(layout.names(), vec![vec![row; 3]]).unwrap();
    let p = predict_distribution(&spec, &s, &game(&[5]), &stats(2), 1).unwrap();
    assert_eq!(p.warnings.len(), 1);
    let expected = crate::distributions::softplus(3.0f64).exp_m1();
    assert!((p.counts[0] - expected).abs() < 1e-9);
    let seen = predict_distribution(&spec, &s, &game(&[0, 1]), &stats(2), 1).unwrap();
    assert!(seen.warnings.is_empty());
    assert!((seen.counts[0] - crate::distributions::softplus(1.5f64).exp_m1()).abs() < 1e-9);
}

#[test]
fn normal_model_prediction_uses_target_mean() {
    let spec: ModelSpec = "normal".parse().unwrap();
    let layout = ParamLayout::new(&spec, 7, 3).unwrap();
    let mut row = vec![0.2];
    row.extend([0.0; 7]);
    row.push(1e-12);
    let s = PosteriorSamples::from_draws(layout.names(), vec![vec![row; 2]]).unwrap();
    let p = predict_distribution(&spec, &s, &game(&[0]), &stats(3), 1).unwrap();
    // log((1 + y) / 250) = 0.2
    assert!((p.counts[0] - (250.0 * 0.2f64.exp() - 1.0)).abs() < 1e-9);
}

#[test]
fn what_if_examples() {
    let s = folded_samples(1.0, [0.0, 0.0, 0.0, 0.6, 0.0, 0.0, 0.0], 0.5, 400);
    let spec: ModelSpec = "folded".parse().unwrap();
    let g = game(&[0]);
    let st = stats(3);
    let none = what_if(&spec, &s, &g, &[], &st, 4).unwrap();
    assert_eq!(none.len(), 1);
    assert_eq!(none[0].1, predict_distribution(&spec, &s, &g, &st, 4).unwrap());

    let same = what_if(&spec, &s, &g, &["price=9.99".parse().unwrap()], &st, 4).unwrap();
    assert_eq!(same[0].1.counts, same[1].1.counts);

    let overrides: Vec<Override> = ["past_median_players=5000", "n_languages=10", "day_of_month=30"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let sets = what_if(&spec, &s, &g, &overrides, &st, 4).unwrap();
    assert_eq!(sets.len(), 4);
    assert_eq!(sets[1].0, "past_median_players=5000");
    let median = |p: &Prediction| p.quantiles().unwrap()[1];
    assert!(median(&sets[1].1) > median(&sets[0].1));

    for bad in ["price=-1", "n_languages=2.5", "day_of_month=0", "colour=3"] {
        let o: Override = bad.parse().unwrap();
        assert!(what_if(&spec, &s, &g, &[o], &st, 4).is_err(), "{bad}");
    }
    assert!("price".parse::<Override>().is_err());
    let moved = apply_override(&g, &"day_of_year=32".parse().unwrap()).unwrap();
    assert_eq!(moved.release_date, NaiveDate::from_ymd_opt(2019, 2, 1).unwrap());
}

#[test]
fn dataset_insight_examples() {
    let twins = [game(&[0]), game(&[0])];
    let ins = dataset_insights(&twins).unwrap();
    assert!(ins.variates.iter().all(|v| v.stdev == 0.0));
    assert!(ins.pearson_m1_m2.is_none());

    let records: Vec<GameRecord> = (0..10)
        .map(|i| {
            let mut g = game(if i % 2 == 0 { &[0, 1] } else { &[1, 2] });
            g.monthly_medians = BTreeMap::from([(1, 100 + 10 * i), (2, 50 + 5 * i)]);
            g
        })
        .collect();
    let ins = dataset_insights(&records).unwrap();
    assert!((ins.pearson_m1_m2.unwrap() - 1.0).abs() < 1e-12);
    let d = ins.month_difference.clone().unwrap();
    assert_eq!(d.n, 10);
    assert_eq!(d.median, -72.5);
    assert_eq!(ins.genre_nodes, vec![(0, 5), (1, 10), (2, 5)]);
    assert_eq!(ins.genre_edges.len(), 2);
    assert_eq!(ins.genre_edges[0].shared, 5);
    assert!((ins.genre_edges[0].proportion - 0.5).abs() < 1e-12);
    assert!(dataset_insights(&[]).is_err());
    let rows = insights_report(&ins);
    assert!(rows.iter().any(|r| r.entity == "month_1_vs_month_2" && r.statistic == "pearson"));
}

#[test]
fn report_csv_columns() {
    let rows = summary_report(&posterior_summary(&samples(&["beta[1]"], &[vec![1.0, 2.0]])).unwrap());
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("entity,statistic,value,q5,q95\nbeta[1],mean,1.5,1.05,1.95\n"), "{text}");
    assert!(text.contains("beta[1],interval_contains_zero,0.0,,"), "{text}");
    assert!(render_summary_text(&posterior_summary(&samples(&["x"], &[vec![-1.0, 1.0]])).unwrap()).contains("x "));
}

#[test]
fn contribution_curves_cover_both_blocks() {
    let spec: ModelSpec = "folded_hetero".parse().unwrap();
    let layout = ParamLayout::new(&spec, 7, 1).unwrap();
    let row: Vec<f64> = (0..layout.dim()).map(|i| i as f64 * 0.01).collect();
    let s = PosteriorSamples::from_draws(layout.names(), vec![vec![row; 3]]).unwrap();
    let grids: BTreeMap<String, Vec<f64>> = BASE_FEATURES.iter().map(|f| (f.to_string(), vec![0.0, 10.0])).collect();
    let curves = contribution_curves(&s, &grids).unwrap();
    assert_eq!(curves.len(), 8);
    assert_eq!(curves[4].parameter, "gamma[1]");
    assert_eq!(seasonal_curves(&s, &[0.0, 0.5]).unwrap().len(), 2);
    assert_eq!(curve_report(&curves).len(), 16);
}

proptest! {
    #[test]
    fn shifting_draws_shifts_summary(v in prop::collection::vec(-100.0..100.0f64, 1..50), c in -50.0..50.0f64) {
        let a = Summary::from_draws(&v).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let b = Summary::from_draws(&shifted).unwrap();
        prop_assert!((b.mean - a.mean - c).abs() < 1e-9);
        prop_assert!((b.q5 - a.q5 - c).abs() < 1e-9);
        prop_assert!((b.q95 - a.q95 - c).abs() < 1e-9);
        prop_assert!(a.q5 <= a.q95);
    }

    #[test]
    fn contribution_sign_follows_beta(b in -3.0..3.0f64, x in 0.001..1e6f64) {
        let c = feature_contribution(&[b, b], &[x]).unwrap()[0].summary.mean;
        prop_assert!(c == 0.0 && b == 0.0 || c.signum() == b.signum());
    }

    #[test]
    fn argmax_invariant_to_positive_scaling(draws in prop::collection::vec(-1.0..1.0f64, 1..20), k in 0.01..100.0f64) {
        let grid = [0.0, 1.0, 10.0, 100.0, 1000.0];
        let argmax = |d: &[f64]| {
            let c = feature_contribution(d, &grid).unwrap();
            (0..c.len()).max_by(|&i, &j| c[i].summary.mean.total_cmp(&c[j].summary.mean)).unwrap()
        };
        let scaled: Vec<f64> = draws.iter().map(|v| v * k).collect();
        let m = crate::scalar::mean(&draws);
        // ties at exactly zero mean are ambiguous
        prop_assume!(m.abs() > 1e-9);
        prop_assert_eq!(argmax(&draws), argmax(&scaled));
    }
}
