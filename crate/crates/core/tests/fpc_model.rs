mod common;

use approx::assert_abs_diff_eq;
use fflqr_core::fdata::{center, fpc_decompose, inner_product, reconstruct};
use fflqr_core::model::{
    fit_bspline_ls, fit_fflqr, fit_fpc_ls, max_truncation, model_from_json, model_to_json, FittedModel, ModelSpec,
};
use fflqr_core::FunctionalSample;
use nalgebra::DMatrix;
use rand::Rng;

#[test]
fn eigenfunctions_are_orthonormal_and_trace_holds() {
    let mut rng = common::rng(30);
    for _ in 0..10 {
        let s = common::random_sample(&mut rng, 40, 60, 6, 0.05);
        let k = max_truncation(&s);
        let (basis, scores) = fpc_decompose(&s, k).unwrap();
        assert!(basis.orthonormality_residual() < 1e-8);
        let trace: f64 = basis.eigenvalues().iter().sum();
        assert_abs_diff_eq!(trace, common::integrated_variance(&s), epsilon = 1e-6);
        assert_abs_diff_eq!(basis.eigenvalues()[0], common::leading_eigenvalue(&s), epsilon = 1e-6);
        let sc = scores.as_matrix();
        for c in 0..5 {
            let col = sc.column(c);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-8);
            assert_abs_diff_eq!(var, basis.eigenvalues()[c], epsilon = 1e-6);
        }
    }
}

#[test]
fn eigenfunction_sign_convention() {
    let mut rng = common::rng(31);
    let s = common::random_sample(&mut rng, 25, 30, 4, 0.0);
    let (basis, _) = fpc_decompose(&s, 4).unwrap();
    for k in 0..4 {
        let f = basis.eigenfunction(k);
        let (imax, _) = f
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        assert!(f[imax] > 0.0);
        assert_abs_diff_eq!(inner_product(&f, &f, s.grid()).unwrap(), 1.0, epsilon = 1e-10);
    }
}

#[test]
fn exact_rank_round_trip_and_monotone_error() {
    let mut rng = common::rng(32);
    let s = common::rank_k_sample(&mut rng, 30, 50, 3);
    let mut prev = f64::INFINITY;
    for k in 1..=6 {
        let (basis, scores) = fpc_decompose(&s, k).unwrap();
        let back = reconstruct(&basis, &scores).unwrap();
        let err = common::naive_mspe(s.values(), back.values(), s.grid().weights());
        assert!(err <= prev + 1e-12);
        prev = err;
        if k >= 3 {
            assert!(err.sqrt() < 1e-6, "rank-3 sample at K={k}: {err}");
        }
    }
    let (basis, _) = fpc_decompose(&s, 6).unwrap();
    assert!(basis.rank_deficient());
}

#[test]
fn centering_removes_the_mean() {
    let mut rng = common::rng(33);
    let s = common::random_sample(&mut rng, 15, 20, 3, 0.1);
    let (c, mean) = center(&s);
    for j in 0..20 {
        assert_abs_diff_eq!(c.values().column(j).sum(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mean[j], s.values().column(j).mean(), epsilon = 1e-14);
    }
}

/// `y_i(t) = Σ_k ζ_ik v_k(t)` where `ζ` are the predictor's own FPC scores,
/// so the model is exactly representable at `K_X = K_Y = 2`.
fn representable(seed: u64, n: usize) -> (FunctionalSample, FunctionalSample) {
    let mut rng = common::rng(seed);
    let x = common::rank_k_sample(&mut rng, n, 40, 2);
    let (_, scores) = fpc_decompose(&x, 2).unwrap();
    let g = x.grid().clone();
    let pts = g.points().to_vec();
    let sc = scores.as_matrix();
    let y = DMatrix::from_fn(n, 40, |i, j| {
        let t = pts[j];
        0.3 + 2.0 * sc[(i, 0)] * (1.0 + t) - sc[(i, 1)] * t * t
    });
    (FunctionalSample::new(y, g).unwrap(), x)
}

#[test]
fn quantile_and_ls_fits_recover_representable_model() {
    let (y, x) = representable(34, 40);
    let xs = vec![x];
    for model in [
        FittedModel::Fflqr(fit_fflqr(&y, &xs, 0.5, 2, 2).unwrap()),
        FittedModel::Fflqr(fit_fflqr(&y, &xs, 0.2, 2, 2).unwrap()),
        FittedModel::FpcLs(fit_fpc_ls(&y, &xs, 2, 2).unwrap()),
    ] {
        let pred = model.predict(&xs).unwrap();
        let err = common::naive_mspe(y.values(), pred.values(), y.grid().weights());
        assert!(err < 1e-12, "{}: {err}", model.kind());
    }
}

#[test]
fn predicting_the_mean_curve_returns_the_intercept() {
    let (y, x) = representable(35, 30);
    let fit = fit_fflqr(&y, std::slice::from_ref(&x), 0.5, 2, 2).unwrap();
    let mean = x.mean_curve();
    let at_mean = FunctionalSample::new(DMatrix::from_fn(1, x.n_points(), |_, j| mean[j]), x.grid().clone()).unwrap();
    let pred = fit.predict(&[at_mean]).unwrap();
    let expect = fit.response_basis().mean() + fit.intercept_function();
    for j in 0..y.n_points() {
        assert_abs_diff_eq!(pred.values()[(0, j)], expect[j], epsilon = 1e-10);
    }
}

#[test]
fn coefficient_surface_reproduces_predictions() {
    let (y, x) = representable(36, 30);
    let fit = fit_fpc_ls(&y, std::slice::from_ref(&x), 2, 2).unwrap();
    let surface = fit.coefficient_surface(0).unwrap();
    let pred = fit.predict(std::slice::from_ref(&x)).unwrap();
    let w = x.grid().weights();
    let xm = x.mean_curve();
    let base = fit.response_basis().mean() + fit.intercept_function();
    for i in [0, 7, 19] {
        for tj in [0, 13, 39] {
            let integral: f64 = (0..x.n_points())
                .map(|s| w[s] * (x.values()[(i, s)] - xm[s]) * surface.values[(s, tj)])
                .sum();
            assert_abs_diff_eq!(base[tj] + integral, pred.values()[(i, tj)], epsilon = 1e-9);
        }
    }
    assert!(fit.coefficient_surface(1).is_err());
}

#[test]
fn truncation_limits_are_enforced() {
    let (y, x) = representable(37, 10);
    assert!(fit_fflqr(&y, std::slice::from_ref(&x), 0.5, 10, 1).is_err());
    assert!(fit_fflqr(&y, std::slice::from_ref(&x), 0.5, 0, 1).is_err());
    assert!(fit_fflqr(&y, &[x.clone(), x.clone(), x.clone(), x.clone()], 0.5, 1, 3).is_err());
    let short = y.select_rows(&[0, 1, 2]);
    assert!(fit_fflqr(&short, std::slice::from_ref(&x), 0.5, 1, 1).is_err());
}

#[test]
fn bspline_baseline_fits_linear_functional() {
    let mut rng = common::rng(38);
    let x = common::random_sample(&mut rng, 80, 50, 3, 0.0);
    let g = x.grid().clone();
    let w = g.weights().to_vec();
    let pts = g.points().to_vec();
    let y = DMatrix::from_fn(80, 50, |i, j| {
        let integral: f64 = (0..50).map(|s| w[s] * x.values()[(i, s)] * (1.0 + pts[s])).sum();
        1.0 + integral * pts[j]
    });
    let y = FunctionalSample::new(y, g).unwrap();
    let fit = fit_bspline_ls(&y, std::slice::from_ref(&x), 8, 4).unwrap();
    let pred = fit.predict(std::slice::from_ref(&x)).unwrap();
    let err = common::naive_mspe(y.values(), pred.values(), y.grid().weights());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn models_round_trip_through_json() {
    let (y, x) = representable(39, 30);
    let xs = vec![x.clone()];
    let mut rng = common::rng(40);
    let noisy = FunctionalSample::new(
        y.values().map(|v| v + 0.01 * rng.random_range(-1.0..1.0)),
        y.grid().clone(),
    )
    .unwrap();
    for spec in [
        ModelSpec::Fflqr { tau: 0.3, k_y: 2, k_x: 2 },
        ModelSpec::FpcLs { k_y: 1, k_x: 2 },
        ModelSpec::BsplineLs { n_basis: 6, order: 4 },
    ] {
        let model = spec.fit(&noisy, &xs).unwrap();
        assert_eq!(model.spec(), spec);
        let back = model_from_json(&model_to_json(&model).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.predict(&xs).unwrap(), model.predict(&xs).unwrap());
    }
    assert!(model_from_json("{\"format\":\"fflqr-model\",\"version\":99,\"model\":null}").is_err());
}
