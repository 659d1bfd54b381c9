mod common;

use approx::assert_abs_diff_eq;
use fflqr_core::model::{fit_fflqr, Family, ModelSpec};
use fflqr_core::selection::{
    bic_candidate, bic_truncation, forward_accepts, forward_select, select_truncation, ForwardOptions,
};
use fflqr_core::sim::{generate_dataset, SimConfig};
use fflqr_core::uncertainty::{
    bootstrap_band, bootstrap_replicates, coverage, cpd, direct_band, interval_score, mspe, BootstrapConfig,
    PredictionBand,
};
use fflqr_core::FunctionalSample;
use nalgebra::DMatrix;
use rand::Rng;

fn small_config() -> SimConfig {
    SimConfig {
        n_train: 60,
        n_test: 40,
        n_grid: 30,
        sigma: 0.5,
        ..SimConfig::default()
    }
}

/// Truncation criterion recomputed from the fitted curves with local code.
fn oracle_bic(y: &FunctionalSample, xs: &[FunctionalSample], tau: f64, k_y: usize, k_x: usize) -> f64 {
    let pred = fit_fflqr(y, xs, tau, k_y, k_x).unwrap().predict(xs).unwrap();
    let w = common::trapezoid_weights(y.grid().points());
    let mut sq = 0.0;
    for j in 0..y.n_points() {
        let loss: f64 = (0..y.n_curves())
            .map(|i| common::check_loss(y.values()[(i, j)] - pred.values()[(i, j)], tau))
            .sum();
        sq += w[j] * loss.max(1e-300).ln().powi(2);
    }
    let n = y.n_curves() as f64;
    sq.sqrt() + (k_y + k_x) as f64 * n.ln()
}

#[test]
fn truncation_search_matches_exhaustive_oracle() {
    let data = generate_dataset(&small_config(), 0).unwrap();
    let xs = &data.xs_train[..2];
    let family = Family::Fflqr { tau: 0.5 };
    let choice = select_truncation(&data.y_train, xs, &family, 4, 3).unwrap();
    assert_eq!(choice.trace.len(), 12);
    let mut best = (f64::INFINITY, 0, 0);
    for k_y in 1..=4 {
        for k_x in 1..=3 {
            let b = oracle_bic(&data.y_train, xs, 0.5, k_y, k_x);
            assert_abs_diff_eq!(b, bic_truncation(&data.y_train, xs, &family, k_y, k_x).unwrap(), epsilon = 1e-9);
            let better = b < best.0 - 1e-12
                || ((b - best.0).abs() <= 1e-12
                    && (k_y + k_x, k_y) < (best.1 + best.2, best.1));
            if better {
                best = (b, k_y, k_x);
            }
        }
    }
    assert_eq!((choice.k_y, choice.k_x), (best.1, best.2));
}

#[test]
fn candidate_criterion_shares_the_loss_term() {
    let data = generate_dataset(&small_config(), 1).unwrap();
    let xs = &data.xs_train[..1];
    let family = Family::Fflqr { tau: 0.5 };
    let n = data.y_train.n_curves() as f64;
    let t = bic_truncation(&data.y_train, xs, &family, 2, 2).unwrap();
    let c = bic_candidate(&data.y_train, xs, &family, 2, 2).unwrap();
    assert_abs_diff_eq!(t - 4.0 * n.ln(), c - n.ln() / (2.0 * n), epsilon = 1e-10);
    assert!(bic_candidate(&data.y_train, &[], &family, 2, 2).is_err());
}

#[test]
fn forward_selection_edge_cases() {
    let data = generate_dataset(&small_config(), 2).unwrap();
    let family = Family::Fflqr { tau: 0.5 };
    let opts = ForwardOptions {
        k_y_max: 3,
        k_x_max: 3,
        ..ForwardOptions::default()
    };
    let one = forward_select(&data.y_train, &data.xs_train[3..4], &family, &opts).unwrap();
    assert_eq!(one.chosen_predictors, vec![0]);

    let copies = vec![data.xs_train[3].clone(), data.xs_train[3].clone()];
    let dup = forward_select(&data.y_train, &copies, &family, &opts).unwrap();
    assert_eq!(dup.chosen_predictors.len(), 1);

    let full = forward_select(&data.y_train, &data.xs_train, &family, &opts).unwrap();
    assert!(full.bic_trace.len() >= data.xs_train.len());
    let accepted: Vec<f64> = full
        .bic_trace
        .iter()
        .filter(|e| e.accepted && e.stage <= full.chosen_predictors.len())
        .filter_map(|e| e.bic)
        .collect();
    for w in accepted.windows(2) {
        assert!(forward_accepts(w[0], w[1], 0.95));
    }
}

#[test]
fn ratio_rule_is_sign_robust() {
    assert!(forward_accepts(10.0, 9.4, 0.95));
    assert!(!forward_accepts(10.0, 9.6, 0.95));
    assert!(forward_accepts(-10.0, -10.6, 0.95));
    assert!(!forward_accepts(-10.0, -10.4, 0.95));
    assert!(!forward_accepts(-10.0, -9.0, 0.95));
}

#[test]
fn mspe_matches_naive_loops() {
    let mut rng = common::rng(50);
    let a = common::random_sample(&mut rng, 12, 33, 4, 0.2);
    let b = common::random_sample(&mut rng, 12, 33, 4, 0.2);
    let oracle = common::naive_mspe(a.values(), b.values(), &common::trapezoid_weights(a.grid().points()));
    assert_abs_diff_eq!(mspe(&a, &b).unwrap(), oracle, epsilon = 1e-12);
}

#[test]
fn interval_score_single_exceedance() {
    let g = common::unit_grid(11);
    let y = FunctionalSample::new(DMatrix::from_fn(1, 11, |_, j| if j >= 8 { 2.0 } else { 0.5 }), g.clone()).unwrap();
    let band = PredictionBand::new(DMatrix::zeros(1, 11), DMatrix::from_element(1, 11, 1.0), 0.1, g.clone()).unwrap();
    let w = common::trapezoid_weights(g.points());
    let pointwise: Vec<f64> = (0..11).map(|j| if j >= 8 { 1.0 + 20.0 * 1.0 } else { 1.0 }).collect();
    let oracle = (0..11).map(|j| w[j] * pointwise[j] * pointwise[j]).sum::<f64>().sqrt();
    assert_abs_diff_eq!(interval_score(&band, &y).unwrap(), oracle, epsilon = 1e-12);

    let width = (0..11).map(|j| w[j]).sum::<f64>().sqrt();
    assert!(interval_score(&band, &y).unwrap() >= width);
    let closer = FunctionalSample::new(y.values().map(|v| if v > 1.0 { 1.5 } else { v }), g).unwrap();
    assert!(interval_score(&band, &closer).unwrap() < interval_score(&band, &y).unwrap());
}

#[test]
fn cpd_is_bounded() {
    let mut rng = common::rng(51);
    let g = common::unit_grid(9);
    for _ in 0..20 {
        let alpha = rng.random_range(0.01..0.99);
        let y = FunctionalSample::new(DMatrix::from_fn(4, 9, |_, _| rng.random_range(-1.0..1.0)), g.clone()).unwrap();
        let lo = DMatrix::from_fn(4, 9, |_, _| rng.random_range(-1.0..0.0));
        let band = PredictionBand::new(lo.clone(), lo.add_scalar(0.7), alpha, g.clone()).unwrap();
        let d = cpd(&band, &y).unwrap();
        assert!(d >= 0.0 && d <= (1.0 - alpha).max(alpha) + 1e-15);
    }
}

#[test]
fn bootstrap_on_identical_rows_has_zero_width() {
    let mut rng = common::rng(52);
    let base = common::random_sample(&mut rng, 1, 20, 3, 0.0);
    let xb = common::random_sample(&mut rng, 1, 20, 3, 0.0);
    let rows = vec![0; 15];
    let y = base.select_rows(&rows);
    let x = xb.select_rows(&rows);
    let test = common::random_sample(&mut rng, 3, 20, 3, 0.0);
    let spec = ModelSpec::Fflqr { tau: 0.5, k_y: 1, k_x: 1 };
    let band = bootstrap_band(&y, &[x], &[test], &spec, 0.1, &BootstrapConfig { replicates: 10, seed: 3 }).unwrap();
    for (l, u) in band.lower().iter().zip(band.upper().iter()) {
        assert!((u - l).abs() < 1e-10);
    }
}

#[test]
fn two_replicate_band_interpolates() {
    let data = generate_dataset(&small_config(), 3).unwrap();
    let spec = ModelSpec::Fflqr { tau: 0.5, k_y: 2, k_x: 1 };
    let xs = &data.xs_train[1..2];
    let xt = &data.xs_test[1..2];
    let reps = bootstrap_replicates(&data.y_train, xs, xt, &spec, &BootstrapConfig { replicates: 2, seed: 9 }).unwrap();
    let band = reps.band(0.5).unwrap();
    let (a, b) = (&reps.predictions()[0], &reps.predictions()[1]);
    for k in 0..a.len() {
        let (lo, hi) = (a[k].min(b[k]), a[k].max(b[k]));
        assert_abs_diff_eq!(band.lower()[k], lo + 0.25 * (hi - lo), epsilon = 1e-12);
        assert_abs_diff_eq!(band.upper()[k], lo + 0.75 * (hi - lo), epsilon = 1e-12);
    }
}

#[test]
fn bootstrap_is_deterministic_and_nested() {
    let data = generate_dataset(&small_config(), 4).unwrap();
    let spec = ModelSpec::Fflqr { tau: 0.5, k_y: 2, k_x: 2 };
    let cfg = BootstrapConfig { replicates: 30, seed: 11 };
    let xs = &data.xs_train[..2];
    let xt = &data.xs_test[..2];
    let a = bootstrap_band(&data.y_train, xs, xt, &spec, 0.05, &cfg).unwrap();
    let b = bootstrap_band(&data.y_train, xs, xt, &spec, 0.05, &cfg).unwrap();
    assert_eq!(a, b);
    let narrow = bootstrap_band(&data.y_train, xs, xt, &spec, 0.2, &cfg).unwrap();
    assert!(a.contains(&narrow));
    let other = bootstrap_band(&data.y_train, xs, xt, &spec, 0.05, &BootstrapConfig { replicates: 30, seed: 12 }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn direct_band_is_ordered_and_collapses_without_noise() {
    let mut rng = common::rng(53);
    let x = common::rank_k_sample(&mut rng, 50, 30, 2);
    let (_, scores) = fflqr_core::fpc_decompose(&x, 2).unwrap();
    let sc = scores.as_matrix();
    let pts = x.grid().points().to_vec();
    let y = DMatrix::from_fn(50, 30, |i, j| 1.0 + sc[(i, 0)] * pts[j] - 0.5 * sc[(i, 1)]);
    let y = FunctionalSample::new(y, x.grid().clone()).unwrap();
    let test = common::rank_k_sample(&mut rng, 10, 30, 2);
    let band = direct_band(&y, std::slice::from_ref(&x), &[test], 0.1, 2, 2).unwrap();
    let width: f64 = band.upper().iter().zip(band.lower().iter()).map(|(u, l)| u - l).fold(0.0, f64::max);
    assert!(width < 1e-6, "max width {width}");
    assert!(band.lower().iter().zip(band.upper().iter()).all(|(l, u)| l <= u));
}

#[test]
fn direct_band_covers_on_desk_scenario() {
    let cfg = SimConfig {
        n_train: 200,
        n_test: 100,
        ..SimConfig::default()
    };
    let data = generate_dataset(&cfg, 0).unwrap();
    let set = cfg.true_set();
    let xs: Vec<_> = set.iter().map(|&m| data.xs_train[m].clone()).collect();
    let xt: Vec<_> = set.iter().map(|&m| data.xs_test[m].clone()).collect();
    let k = select_truncation(&data.y_train, &xs, &Family::Fflqr { tau: 0.5 }, cfg.k_y_max, cfg.k_x_max).unwrap();
    let band = direct_band(&data.y_train, &xs, &xt, 0.05, k.k_y, k.k_x).unwrap();
    let c = coverage(&band, &data.y_test).unwrap();
    assert!(c >= 0.8, "coverage {c} at K=({}, {})", k.k_y, k.k_x);
}
