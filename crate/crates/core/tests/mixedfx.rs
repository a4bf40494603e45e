use markfeed::mixedfx::{fit_reml, rank_group_intercepts, significance, DataTable, MixedModelSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn table(cols: &[&str], rows: Vec<Vec<String>>) -> DataTable {
    DataTable::new(cols.iter().map(|s| s.to_string()).collect(), rows).unwrap()
}

/// Within-user design: every user sees both modes `per_cell` times.
fn effort_data(
    seed: u64,
    users: usize,
    per_cell: usize,
    effect: f64,
    user_sd: f64,
    noise_sd: f64,
) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Normal::new(0.0, user_sd).unwrap();
    let e = Normal::new(0.0, noise_sd).unwrap();
    let mut rows = Vec::new();
    for k in 0..users {
        let b = u.sample(&mut rng);
        for mode in ["marking", "postedit"] {
            for _ in 0..per_cell {
                let y =
                    10.0 + b + if mode == "postedit" { effect } else { 0.0 } + e.sample(&mut rng);
                rows.push(vec![format!("u{k}"), mode.to_string(), y.to_string()]);
            }
        }
    }
    table(&["user_id", "mode", "ksmr"], rows)
}

#[test]
fn balanced_one_way_matches_anova() {
    let (a, m) = (8usize, 6usize);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = Normal::new(0.0, 2.0).unwrap();
    let e = Normal::new(0.0, 1.0).unwrap();
    let mut ys = vec![vec![0.0; m]; a];
    let mut rows = Vec::new();
    for (i, row) in ys.iter_mut().enumerate() {
        let b = g.sample(&mut rng);
        for y in row.iter_mut() {
            *y = 5.0 + b + e.sample(&mut rng);
            rows.push(vec![format!("g{i}"), y.to_string()]);
        }
    }
    // values are re-read from the decimal strings so the oracle sees the same data
    let t = table(&["g", "y"], rows);
    let yv = t.numeric("y").unwrap();
    let means: Vec<f64> = (0..a)
        .map(|i| yv[i * m..(i + 1) * m].iter().sum::<f64>() / m as f64)
        .collect();
    let grand = yv.iter().sum::<f64>() / (a * m) as f64;
    let msb = m as f64 * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (a - 1) as f64;
    let msw = (0..a * m)
        .map(|k| (yv[k] - means[k / m]).powi(2))
        .sum::<f64>()
        / (a * (m - 1)) as f64;
    assert!(msb > msw, "data must lie in the interior");
    let fit = fit_reml(&MixedModelSpec::parse("y ~ 1 + (1 | g)").unwrap(), &t).unwrap();
    let sigma_a = (msb - msw) / m as f64;
    assert!(
        (fit.residual_variance - msw).abs() < 1e-6,
        "{} vs {msw}",
        fit.residual_variance
    );
    assert!((fit.variance_components[0].variance - sigma_a).abs() < 1e-6);
    assert!((fit.fixed("(Intercept)").unwrap().estimate - grand).abs() < 1e-9);
    // REML value at the optimum is never below a probed value
    assert!(fit.probes.iter().all(|p| *p <= fit.reml_loglik + 1e-12));
}

#[test]
fn known_effect_is_recovered() {
    let mut covered = 0;
    for seed in 0..100 {
        let t = effort_data(seed, 12, 10, 3.76, 1.5, 4.0);
        let fit = fit_reml(
            &MixedModelSpec::parse("ksmr ~ mode + (1 | user_id)").unwrap(),
            &t,
        )
        .unwrap();
        let fe = fit.fixed("mode=postedit").unwrap();
        if (fe.estimate - 3.76).abs() <= 2.0 * fe.std_error {
            covered += 1;
        }
    }
    assert!(covered >= 95, "covered {covered}/100");
}

#[test]
fn zero_between_group_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    for k in 0..6 {
        for (mode, mu) in [("a", 2.0), ("b", 5.0)] {
            let noise: Vec<f64> = (0..5).map(|_| e.sample(&mut rng)).collect();
            let mean = noise.iter().sum::<f64>() / 5.0;
            for z in noise {
                rows.push(vec![
                    format!("g{k}"),
                    mode.into(),
                    (mu + z - mean).to_string(),
                ]);
            }
        }
    }
    let t = table(&["g", "f", "y"], rows);
    let with = fit_reml(&MixedModelSpec::parse("y ~ f + (1|g)").unwrap(), &t).unwrap();
    assert!(with.variance_components[0].variance < 1e-6);
    assert!((with.fixed("f=b").unwrap().estimate - 3.0).abs() < 1e-6);
    let without = fit_reml(&MixedModelSpec::parse("y ~ f").unwrap(), &t).unwrap();
    for (a, b) in with.fixed_effects.iter().zip(&without.fixed_effects) {
        assert!((a.estimate - b.estimate).abs() < 1e-6);
    }
}

#[test]
fn shifting_response_moves_only_the_intercept() {
    let t = effort_data(5, 8, 6, 2.0, 2.0, 1.0);
    let mut shifted_rows = Vec::new();
    let ys = t.numeric("ksmr").unwrap();
    let users = t.labels("user_id").unwrap();
    let modes = t.labels("mode").unwrap();
    for i in 0..t.len() {
        shifted_rows.push(vec![
            users[i].clone(),
            modes[i].clone(),
            (ys[i] + 100.0).to_string(),
        ]);
    }
    let s = table(&["user_id", "mode", "ksmr"], shifted_rows);
    let spec = MixedModelSpec::parse("ksmr ~ mode + (1|user_id)").unwrap();
    let a = fit_reml(&spec, &t).unwrap();
    let b = fit_reml(&spec, &s).unwrap();
    assert!(
        (b.fixed("(Intercept)").unwrap().estimate
            - a.fixed("(Intercept)").unwrap().estimate
            - 100.0)
            .abs()
            < 1e-8
    );
    assert!(
        (a.fixed("mode=postedit").unwrap().estimate - b.fixed("mode=postedit").unwrap().estimate)
            .abs()
            < 1e-8
    );
    assert!((a.variance_components[0].variance - b.variance_components[0].variance).abs() < 1e-8);
    assert!((a.residual_variance - b.residual_variance).abs() < 1e-8);
}

#[test]
fn wald_test_calibration_and_power() {
    let spec = MixedModelSpec::parse("ksmr ~ mode + (1|user_id)").unwrap();
    let mut rejections = 0;
    for seed in 0..200 {
        let t = effort_data(1000 + seed, 8, 5, 0.0, 1.0, 1.0);
        let fit = fit_reml(&spec, &t).unwrap();
        if significance(&fit, "mode=postedit", 0.05)
            .unwrap()
            .significant
        {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / 200.0;
    assert!((rate - 0.05).abs() <= 0.05, "rate {rate}");

    let t = effort_data(7, 8, 5, 50.0, 1.0, 1.0);
    let w = significance(&fit_reml(&spec, &t).unwrap(), "mode=postedit", 0.01).unwrap();
    assert!(w.p_value < 1e-6);
    assert!(w.significant);
    assert_eq!(w.df_method, "between-within");
}

#[test]
fn topic_offsets_are_ranked() {
    let offsets = [
        ("physics", 4.0),
        ("biodiversity", 2.5),
        ("music", 0.5),
        ("language", -2.0),
        ("diseases", -4.0),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let e = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    // interleave topics so first-seen order differs from the ranking
    for i in 0..30 {
        for (topic, off) in offsets.iter().rev() {
            let mode = if i % 2 == 0 { "marking" } else { "postedit" };
            rows.push(vec![
                topic.to_string(),
                mode.into(),
                (10.0 + off + e.sample(&mut rng)).to_string(),
            ]);
        }
    }
    let t = table(&["topic", "mode", "ksmr"], rows);
    let fit = fit_reml(
        &MixedModelSpec::parse("ksmr ~ mode + (1|topic)").unwrap(),
        &t,
    )
    .unwrap();
    let ranked: Vec<String> = rank_group_intercepts(&fit, "topic")
        .unwrap()
        .into_iter()
        .map(|g| g.level)
        .collect();
    let expected: Vec<String> = offsets.iter().map(|(t, _)| t.to_string()).collect();
    assert_eq!(ranked, expected);
}

#[test]
fn nested_and_crossed_groupings_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = Normal::new(0.0, 1.0).unwrap();
    let talk: Vec<f64> = (0..6).map(|_| 2.0 * n.sample(&mut rng)).collect();
    let sent: Vec<f64> = (0..36).map(|_| n.sample(&mut rng)).collect();
    let mut rows = Vec::new();
    for s in 0..36 {
        for sys in ["base", "corr", "mark"] {
            let eff = match sys {
                "corr" => -2.0,
                "mark" => -1.0,
                _ => 0.0,
            };
            let y = 50.0 + talk[s / 6] + sent[s] + eff + 0.5 * n.sample(&mut rng);
            rows.push(vec![
                format!("t{}", s / 6),
                format!("s{}", s % 6),
                sys.into(),
                y.to_string(),
            ]);
        }
    }
    let t = table(&["talk_id", "sent_id", "system", "ter"], rows);
    let fit = fit_reml(
        &MixedModelSpec::parse("ter ~ system + (1|talk_id/sent_id)").unwrap(),
        &t,
    )
    .unwrap();
    assert_eq!(fit.variance_components.len(), 2);
    assert_eq!(fit.group_intercepts["talk_id:sent_id"].len(), 36);
    assert!(fit.variance_components.iter().all(|v| v.variance >= 0.0));
    assert!(fit.reml_loglik.is_finite());
    let c = fit.fixed("system=corr").unwrap();
    assert!((c.estimate + 2.0).abs() < 3.0 * c.std_error);
    // system varies within sentences, so the within df applies
    assert!(c.df > 60.0);
}
