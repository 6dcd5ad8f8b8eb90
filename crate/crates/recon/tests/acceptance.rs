//! Acceptance suite: one test per criterion, each printing a pass line
//! with the measured quantities (run with `--nocapture` to see them).

mod common;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recon::analysis::historical_decomposition;
use recon::filter::{
    kalman_filter, kalman_gain_weights, kalman_smoother, riccati_quadratic, steady_state,
    UnivariateTheta,
};
use recon::identify::{count_moments, equivalent_theta, innovation_representation, StructuralFlags};
use recon::sampler::{draw_states, run_gibbs, McmcSettings, PriorSpec};
use recon::ssm::{build_state_space, simulate, ParamVector, ReconConfig};
use recon::vintages::ObservationMatrix;

use common::{dense_gaussian_loglik, random_masked_obs, random_params};

fn obs_from(values: DMatrix<f64>) -> ObservationMatrix {
    ObservationMatrix::from_dense(values, "2000Q1".parse().unwrap())
}

#[test]
fn criterion_01_moment_count_reproduction() {
    let flags = StructuralFlags::default();
    let start = Instant::now();
    let results: Vec<(usize, usize)> = [1usize, 2, 3, 4]
        .iter()
        .map(|&l| {
            let mc = count_moments(l, 1, &flags);
            (mc.n_moments, mc.n_params)
        })
        .collect();
    let elapsed = start.elapsed();
    assert_eq!(results, vec![(5, 6), (14, 10), (27, 14), (44, 18)]);
    assert!(!count_moments(1, 1, &flags).order_condition_met);
    assert!(count_moments(2, 1, &flags).order_condition_met);
    assert!(
        elapsed.as_micros() < 1000,
        "moment counting took {elapsed:?}, budget 1 ms"
    );
    println!("criterion 1: PASS — moment counts (5,6),(14,10),(27,14),(44,18) in {elapsed:?}");
}

#[test]
fn criterion_02_filter_matches_dense_gaussian_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let p = if case % 2 == 0 { 1 } else { 2 };
        let config = ReconConfig::basic(2, p);
        let params = random_params(2, p, &mut rng);
        let miss = match case % 3 {
            0 => 0.0,
            1 => 0.2,
            _ => 0.4,
        };
        let obs = random_masked_obs(&config, &params, 6, miss, &mut rng);
        let model = build_state_space(&config, &params).unwrap();
        let filter_ll = kalman_filter(&model, &obs).unwrap().loglik;
        let oracle_ll = dense_gaussian_loglik(&model, &obs);
        worst = worst.max((filter_ll - oracle_ll).abs());
    }
    let elapsed = start.elapsed();
    assert!(worst < 1e-8, "max |filter - oracle| = {worst}");
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!(
        "criterion 2: PASS — 50 random models, max log-likelihood gap {worst:.3e} in {elapsed:?}"
    );
}

#[test]
fn criterion_03_riccati_closed_form_vs_fixed_point() {
    use recon::identify::univariate_model;
    let start = Instant::now();

    // Worked example: rho = 0, unit truth and noise variances, no news.
    let worked = UnivariateTheta {
        rho: 0.0,
        var_truth: 1.0,
        var_news: [0.0, 0.0],
        var_noise: [1.0, 1.0],
    };
    let p_quad = riccati_quadratic(&worked).unwrap();
    let p_iter = steady_state(&univariate_model(&worked).unwrap())
        .unwrap()
        .p_filtered[(0, 0)];
    assert!((p_quad - 1.0 / 3.0).abs() < 1e-10, "quadratic {p_quad}");
    assert!((p_iter - 1.0 / 3.0).abs() < 1e-10, "iterative {p_iter}");

    let mut rng = ChaCha8Rng::seed_from_u64(3033);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let theta = UnivariateTheta {
            rho: rng.gen_range(0.0..0.95),
            var_truth: rng.gen_range(0.05..2.0),
            var_news: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
            var_noise: [rng.gen_range(0.05..1.5), rng.gen_range(0.05..1.5)],
        };
        let quad = riccati_quadratic(&theta).unwrap();
        let iter = steady_state(&univariate_model(&theta).unwrap())
            .unwrap()
            .p_filtered[(0, 0)];
        worst = worst.max((quad - iter).abs());
    }
    let elapsed = start.elapsed();
    assert!(worst < 1e-8, "max |p_quadratic - p_iterative| = {worst}");
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1 s");
    println!(
        "criterion 3: PASS — worked example p = 1/3 on both routes; 100 random thetas, max gap {worst:.3e} in {elapsed:?}"
    );
}

#[test]
fn criterion_04_observational_equivalence_and_restriction() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4044);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let theta0 = UnivariateTheta {
            rho: rng.gen_range(0.05..0.9),
            var_truth: rng.gen_range(0.3..2.0),
            var_news: [rng.gen_range(0.0..1.0), rng.gen_range(0.1..1.0)],
            var_noise: [rng.gen_range(0.1..1.5), rng.gen_range(0.1..1.5)],
        };
        let rep0 = innovation_representation(&theta0).unwrap();
        let p0 = rep0.p;
        // Admissible window for delta.
        let lo = (-theta0.var_news[1]).max(-p0 * 0.99);
        let hi = theta0.var_truth / (theta0.rho * theta0.rho);
        for k in 1..=5 {
            let delta = lo + (hi - lo) * k as f64 / 6.0;
            let theta1 = equivalent_theta(&theta0, delta).unwrap();
            let rep1 = innovation_representation(&theta1).unwrap();
            worst = worst.max(rep0.max_abs_difference(&rep1));
        }
    }
    assert!(worst < 1e-8, "max representation gap {worst}");

    // Under the final-news restriction only delta = 0 stays in the class:
    // scan the admissible grid at 1e-4 resolution.
    let theta0 = UnivariateTheta {
        rho: 0.6,
        var_truth: 1.0,
        var_news: [0.5, 0.0],
        var_noise: [0.7, 0.4],
    };
    let hi = theta0.var_truth / (theta0.rho * theta0.rho);
    let step = 1e-4;
    let mut satisfying = 0usize;
    let mut checked = 0usize;
    let mut delta = 0.0;
    while delta <= hi {
        if let Ok(theta1) = equivalent_theta(&theta0, delta) {
            checked += 1;
            if theta1.var_news[1].abs() < 1e-12 {
                satisfying += 1;
            }
        }
        delta += step;
    }
    assert!(checked > 10_000, "grid too small: {checked}");
    assert_eq!(satisfying, 1, "restriction held at {satisfying} grid points");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!(
        "criterion 4: PASS — 250 equivalent pairs, max innovation-representation gap {worst:.3e}; restriction pins delta = 0 uniquely over {checked} grid points in {elapsed:?}"
    );
}

#[test]
fn criterion_05_simulation_smoother_consistency() {
    let start = Instant::now();
    let config = ReconConfig::basic(2, 1);
    let params = ParamVector::basic(
        vec![0.5],
        0.8,
        [vec![0.6, 0.3], vec![0.5, 0.25]],
        [vec![0.4, 0.3], vec![0.7, 0.4]],
    );
    let model = build_state_space(&config, &params).unwrap();
    let horizon = 50;
    let sim = simulate(&model, horizon, 505).unwrap();
    let obs = obs_from(sim.observations);

    let fr = kalman_filter(&model, &obs).unwrap();
    let sm = kalman_smoother(&model, &fr).unwrap();

    let n_draws = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    let mut acc = DMatrix::zeros(horizon, model.m);
    for _ in 0..n_draws {
        acc += draw_states(&model, &obs, &mut rng).unwrap();
    }
    acc /= n_draws as f64;

    let mut within = 0usize;
    let mut total = 0usize;
    for t in 0..horizon {
        for j in 0..model.m {
            let sd = sm.covs[t][(j, j)].max(0.0).sqrt();
            let se = sd / (n_draws as f64).sqrt();
            if se < 1e-12 {
                continue;
            }
            total += 1;
            if (acc[(t, j)] - sm.means[t][j]).abs() <= 3.0 * se {
                within += 1;
            }
        }
    }
    let share = within as f64 / total as f64;
    let elapsed = start.elapsed();
    assert!(
        share >= 0.99,
        "only {within}/{total} components within 3 MC standard errors"
    );
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}, budget 2 min");
    println!(
        "criterion 5: PASS — {within}/{total} state-period components within 3 MC standard errors ({:.2}%) in {elapsed:?}",
        100.0 * share
    );
}

#[test]
fn criterion_06_parameter_recovery_at_desk_scale() {
    let start = Instant::now();
    let config = ReconConfig::basic(2, 1);
    // Mixed news/noise scales of order one (growth-rate units), final news
    // scale zero as in the default restriction.
    let truth = ParamVector::basic(
        vec![0.5],
        0.9,
        [vec![1.0, 0.0], vec![0.8, 0.0]],
        [vec![0.8, 0.7], vec![1.0, 0.9]],
    );
    let model = build_state_space(&config, &truth).unwrap();
    let theta_star = recon::ssm::theta_pack(&truth, &config).unwrap();
    let names = recon::ssm::theta_names(&config);
    let priors = PriorSpec::default_for(&config);

    let replications = 20;
    let mut covered = vec![0usize; names.len()];
    let mut rel_err_sum = 0.0;
    let mut rel_err_count = 0usize;
    for rep in 0..replications {
        let sim = simulate(&model, 300, 6000 + rep as u64).unwrap();
        let obs = obs_from(sim.observations);
        let settings = McmcSettings {
            iterations: 20_000,
            burn_in: 10_000,
            thin: 10,
            chains: 1,
            seed: 7000 + rep as u64,
        };
        let out = run_gibbs(&config, &obs, &priors, &settings).unwrap();
        assert_eq!(out.n_kept(), 1000);
        for (j, summary) in out.summaries.iter().enumerate() {
            let truth_j = theta_star[j];
            if summary.q05 <= truth_j && truth_j <= summary.q95 {
                covered[j] += 1;
            }
            if truth_j.abs() > 1e-12 {
                rel_err_sum += (summary.mean - truth_j).abs() / truth_j.abs();
                rel_err_count += 1;
            }
        }
    }
    let mut coverage_report = String::new();
    for (j, name) in names.iter().enumerate() {
        let rate = covered[j] as f64 / replications as f64;
        coverage_report.push_str(&format!("{name}={rate:.2} "));
        assert!(
            rate >= 0.8,
            "coverage for {name} is {rate:.2}, needs >= 0.80"
        );
    }
    let avg_rel_err = rel_err_sum / rel_err_count as f64;
    assert!(
        avg_rel_err <= 0.25,
        "average relative error {avg_rel_err:.3}, needs <= 0.25"
    );
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 1800.0,
        "took {elapsed:?}, budget ~30 min"
    );
    println!(
        "criterion 6: PASS — 90% CI coverage per parameter [{}], average relative error {avg_rel_err:.3} in {elapsed:?}",
        coverage_report.trim_end()
    );
}

#[test]
fn criterion_07_decomposition_identity_per_draw() {
    let config = ReconConfig::basic(2, 1);
    let params = ParamVector::basic(
        vec![0.5],
        0.9,
        [vec![0.6, 0.0], vec![0.5, 0.0]],
        [vec![0.4, 0.3], vec![0.7, 0.4]],
    );
    let model = build_state_space(&config, &params).unwrap();
    let horizon = 60;
    let sim = simulate(&model, horizon, 707).unwrap();
    let obs = obs_from(sim.observations);
    let priors = PriorSpec::default_for(&config);
    let settings = McmcSettings {
        iterations: 400,
        burn_in: 200,
        thin: 4,
        chains: 1,
        seed: 77,
    };
    let draws = run_gibbs(&config, &obs, &priors, &settings).unwrap();

    // Per draw: news + noise components must equal the observed revision.
    let layout = &draws.state_layout;
    let mut worst: f64 = 0.0;
    for series in 0..2usize {
        let col_first = series * 2;
        let col_last = series * 2 + 1;
        for path in draws.state_draws.as_ref().unwrap() {
            for t in 0..horizon {
                let (Some(a), Some(b)) = (draws.obs.get(t, col_first), draws.obs.get(t, col_last))
                else {
                    continue;
                };
                let news = path[(t, layout.news_state(series, 2))]
                    - path[(t, layout.news_state(series, 1))];
                let noise = path[(t, layout.noise_state(series, 2))]
                    - path[(t, layout.noise_state(series, 1))];
                worst = worst.max((news + noise - (b - a)).abs());
            }
        }
        // And at the posterior mean through the analysis surface.
        let dec = historical_decomposition(&draws, series, 1, 2).unwrap();
        for t in 0..horizon {
            if dec.both_observed[t] {
                worst =
                    worst.max((dec.news[t] + dec.noise[t] - dec.total_revision[t].unwrap()).abs());
            }
        }
    }
    assert!(worst < 1e-6, "max identity violation {worst}");
    println!(
        "criterion 7: PASS — news + noise = total revision on every draw and at the posterior mean, max gap {worst:.3e}"
    );
}

#[test]
fn criterion_08_missing_data_exactness() {
    let config = ReconConfig::basic(2, 1);
    let params = ParamVector::basic(
        vec![0.5],
        0.8,
        [vec![0.6, 0.3], vec![0.5, 0.25]],
        [vec![0.4, 0.3], vec![0.7, 0.4]],
    );
    let model = build_state_space(&config, &params).unwrap();
    let horizon = 80;
    let sim = simulate(&model, horizon, 808).unwrap();

    // Mask the income-side first release everywhere.
    let masked_col = 2;
    let mut obs = obs_from(sim.observations.clone());
    obs.mask_column(masked_col);
    let ll_masked = kalman_filter(&model, &obs).unwrap().loglik;

    // Same model with that measurement row deleted from Z.
    let mut reduced = model.clone();
    reduced.z = DMatrix::from_fn(3, model.m, |i, j| {
        let row = if i < masked_col { i } else { i + 1 };
        model.z[(row, j)]
    });
    let kept: Vec<usize> = (0..4).filter(|&c| c != masked_col).collect();
    let values = DMatrix::from_fn(horizon, 3, |t, i| sim.observations[(t, kept[i])]);
    let ll_reduced = kalman_filter(&reduced, &obs_from(values)).unwrap().loglik;

    assert_eq!(
        ll_masked, ll_reduced,
        "masked and row-deleted log-likelihoods differ: {ll_masked} vs {ll_reduced}"
    );
    println!(
        "criterion 8: PASS — masking a column reproduces the row-deleted log-likelihood bit for bit ({ll_masked})"
    );
}

#[test]
fn criterion_09_gain_weight_patterns() {
    // News-only: the terminal release of the dominant series carries the
    // largest weight by far (its remaining news variance is tiny).
    let config = ReconConfig::basic(2, 1);
    let news_only = ParamVector::basic(
        vec![0.6],
        0.5,
        [vec![1.2, 0.05], vec![0.9, 0.4]],
        [vec![0.0, 0.0], vec![0.0, 0.0]],
    );
    let model = build_state_space(&config, &news_only).unwrap();
    let weights = kalman_gain_weights(&model).unwrap();
    let dominant = weights
        .iter()
        .find(|w| w.series == 0 && w.release == 2)
        .unwrap()
        .weight;
    for w in &weights {
        if !(w.series == 0 && w.release == 2) {
            assert!(
                dominant > w.weight,
                "final release weight {dominant:.4} not above series {} release {} ({:.4})",
                w.series,
                w.release,
                w.weight
            );
        }
    }

    // Mixed news/noise: weight spreads out, nothing close to one.
    let mixed = ParamVector::basic(
        vec![0.5],
        0.8,
        [vec![0.6, 0.3], vec![0.5, 0.25]],
        [vec![0.4, 0.3], vec![0.7, 0.4]],
    );
    let model = build_state_space(&config, &mixed).unwrap();
    let mixed_weights = kalman_gain_weights(&model).unwrap();
    for w in &mixed_weights {
        assert!(
            w.weight < 0.9,
            "mixed model concentrates {:.4} on series {} release {}",
            w.weight,
            w.series,
            w.release
        );
    }
    let spread: Vec<String> = mixed_weights
        .iter()
        .map(|w| format!("{:.3}", w.weight))
        .collect();
    println!(
        "criterion 9: PASS — news-only concentrates {dominant:.4} on the final dominant release; mixed spreads [{}]",
        spread.join(", ")
    );
}

#[test]
fn criterion_10_byte_identical_reruns() {
    use std::process::Command;

    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    std::fs::write(base.join("config.toml"), "l = 2\np = 1\n").unwrap();
    std::fs::write(
        base.join("params.toml"),
        "rho = [0.5]\nsigma_e = 0.8\nsigma_news = [[0.6, 0.0], [0.5, 0.0]]\nsigma_noise = [[0.4, 0.3], [0.7, 0.4]]\n",
    )
    .unwrap();

    let bin = env!("CARGO_BIN_EXE_recon");
    let run = |args: &[&str]| {
        let status = Command::new(bin)
            .args(args)
            .env("SOURCE_DATE_EPOCH", "0")
            .status()
            .expect("binary runs");
        assert!(status.success(), "command failed: {args:?}");
    };
    let hash_dir = |p: &std::path::Path| {
        let mut entries: Vec<_> = std::fs::read_dir(p)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        entries
            .into_iter()
            .map(|f| {
                use sha2::{Digest, Sha256};
                let bytes = std::fs::read(&f).unwrap();
                (
                    f.file_name().unwrap().to_string_lossy().into_owned(),
                    format!("{:x}", Sha256::digest(&bytes)),
                )
            })
            .collect::<Vec<_>>()
    };

    let config = base.join("config.toml");
    let params = base.join("params.toml");
    for (out_a, out_b) in [("sim_a", "sim_b")] {
        let (a, b) = (base.join(out_a), base.join(out_b));
        for out in [&a, &b] {
            run(&[
                "simulate",
                "--config",
                config.to_str().unwrap(),
                "--params",
                params.to_str().unwrap(),
                "--horizon",
                "40",
                "--seed",
                "11",
                "--out",
                out.to_str().unwrap(),
            ]);
        }
        assert_eq!(hash_dir(&a), hash_dir(&b), "simulate outputs differ");
    }

    let data = base.join("sim_a").join("vintages.csv");
    for (out_a, out_b) in [("est_a", "est_b")] {
        let (a, b) = (base.join(out_a), base.join(out_b));
        for out in [&a, &b] {
            run(&[
                "estimate",
                "--config",
                config.to_str().unwrap(),
                "--data",
                data.to_str().unwrap(),
                "--iterations",
                "200",
                "--burn-in",
                "100",
                "--thin",
                "5",
                "--seed",
                "13",
                "--out",
                out.to_str().unwrap(),
            ]);
        }
        assert_eq!(hash_dir(&a), hash_dir(&b), "estimate outputs differ");
    }
    println!(
        "criterion 10: PASS — simulate and estimate reruns produce byte-identical output files"
    );
}
