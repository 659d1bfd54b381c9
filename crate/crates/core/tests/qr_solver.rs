mod common;

use approx::assert_relative_eq;
use fflqr_core::qr::{qr_fit, qr_fit_multi, residual_signs, subgradient_violation, QrProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn random_problem<R: Rng>(rng: &mut R, n: usize, q: usize) -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(n, q, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
    let y = DVector::from_fn(n, |i, _| {
        let mut v = 0.5 + rng.random_range(-1.0..1.0) * 0.3;
        if q > 1 {
            v += 1.5 * x[(i, 1)];
        }
        v + rng.random_range(-1.0f64..1.0).powi(3) * 2.0
    });
    (x, y)
}

#[test]
fn matches_vertex_oracle_on_random_problems() {
    let mut rng = common::rng(20);
    for case in 0..60 {
        let q = 1 + case % 2;
        let n = rng.random_range(q + 3..=40);
        let tau = [0.1, 0.25, 0.5, 0.75, 0.9][case % 5];
        let (x, y) = random_problem(&mut rng, n, q);
        let sol = qr_fit(&QrProblem::new(x.clone(), y.clone(), tau).unwrap()).unwrap();
        let oracle = common::vertex_oracle(&x, &y, tau);
        let own = common::qr_objective(&x, &y, &sol.coefficients, tau);
        assert_relative_eq!(own, oracle, max_relative = 1e-8, epsilon = 1e-10);
        assert_relative_eq!(sol.objective, own, max_relative = 1e-10, epsilon = 1e-12);
    }
}

#[test]
fn intercept_only_gives_sample_quantile() {
    let y = DVector::from_vec(vec![3.0, -1.0, 7.0, 2.0, 5.0, 0.0, 4.0]);
    for (tau, expect) in [(0.5, 3.0), (0.2, 0.0), (0.8, 5.0)] {
        let sol = qr_fit(&QrProblem::intercept_only(y.clone(), tau).unwrap()).unwrap();
        assert_relative_eq!(sol.coefficients[0], expect, epsilon = 1e-7);
    }
}

#[test]
fn optimality_conditions_hold() {
    let mut rng = common::rng(21);
    for case in 0..30 {
        let q = 1 + case % 4;
        let n = 30 + case * 3;
        let tau = 0.1 + 0.8 * rng.random::<f64>();
        let (x, y) = random_problem(&mut rng, n, q);
        let sol = qr_fit(&QrProblem::new(x.clone(), y.clone(), tau).unwrap()).unwrap();
        let v = subgradient_violation(&x, &y, &sol.coefficients, tau);
        assert!(v < 1e-6, "case {case}: subgradient violation {v}");

        let res: Vec<f64> = (0..n).map(|i| y[i] - (x.row(i) * &sol.coefficients)[0]).collect();
        let (neg, _, _) = residual_signs(&res, y.amax());
        let frac = neg as f64 / n as f64;
        let slack = (q + 1) as f64 / n as f64;
        assert!(frac >= tau - slack && frac <= tau + slack, "case {case}: {frac} vs tau {tau}");
    }
}

#[test]
fn dependent_columns_are_zeroed() {
    let mut rng = common::rng(22);
    let (x, y) = random_problem(&mut rng, 25, 2);
    let mut wide = DMatrix::zeros(25, 3);
    wide.columns_mut(0, 2).copy_from(&x);
    wide.column_mut(2).copy_from(&(x.column(1) * 2.0));
    let sol = qr_fit(&QrProblem::new(wide, y.clone(), 0.5).unwrap()).unwrap();
    assert!(sol.rank_deficient());
    assert_eq!(sol.coefficients[2], 0.0);
    let base = qr_fit(&QrProblem::new(x, y, 0.5).unwrap()).unwrap();
    assert_relative_eq!(sol.objective, base.objective, max_relative = 1e-8);
}

#[test]
fn rejects_bad_input() {
    let x = DMatrix::from_element(3, 1, 1.0);
    let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
    assert!(QrProblem::new(x.clone(), y.clone(), 0.0).is_err());
    assert!(QrProblem::new(x.clone(), y.clone(), 1.0).is_err());
    assert!(QrProblem::new(x.clone(), DVector::from_vec(vec![1.0, 2.0]), 0.5).is_err());
    assert!(QrProblem::new(DMatrix::from_element(3, 4, 1.0), y.clone(), 0.5).is_err());
    assert!(QrProblem::new(x, DVector::from_vec(vec![1.0, f64::NAN, 3.0]), 0.5).is_err());
}

#[test]
fn multi_column_fit_matches_single_fits() {
    let mut rng = common::rng(23);
    let (x, _) = random_problem(&mut rng, 40, 3);
    let ys = DMatrix::from_fn(40, 4, |_, _| rng.random_range(-1.0..1.0));
    let multi = qr_fit_multi(&x, &ys, 0.3, true).unwrap();
    for k in 0..4 {
        let single = qr_fit(&QrProblem::new(x.clone(), ys.column(k).into_owned(), 0.3).unwrap()).unwrap();
        let a = common::qr_objective(&x, &ys.column(k).into_owned(), &multi.coefficients.column(k).into_owned(), 0.3);
        assert_relative_eq!(a, single.objective, max_relative = 1e-9, epsilon = 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scale_equivariance(seed in 0u64..10_000, c in 0.1f64..10.0, tau in 0.05f64..0.95) {
        let mut rng = common::rng(seed);
        let (x, y) = random_problem(&mut rng, 25, 2);
        let base = qr_fit(&QrProblem::new(x.clone(), y.clone(), tau).unwrap()).unwrap();
        let scaled = qr_fit(&QrProblem::new(x.clone(), &y * c, tau).unwrap()).unwrap();
        prop_assert!((scaled.objective - c * base.objective).abs() <= 1e-7 * (1.0 + c * base.objective));
    }

    #[test]
    fn reflection_swaps_tau(seed in 0u64..10_000, tau in 0.05f64..0.95) {
        let mut rng = common::rng(seed);
        let (x, y) = random_problem(&mut rng, 25, 2);
        let a = qr_fit(&QrProblem::new(x.clone(), y.clone(), tau).unwrap()).unwrap();
        let b = qr_fit(&QrProblem::new(x.clone(), -&y, 1.0 - tau).unwrap()).unwrap();
        prop_assert!((a.objective - b.objective).abs() <= 1e-7 * (1.0 + a.objective));
    }

    #[test]
    fn shift_by_fitted_plane(seed in 0u64..10_000, b0 in -5.0f64..5.0, b1 in -5.0f64..5.0) {
        let mut rng = common::rng(seed);
        let (x, y) = random_problem(&mut rng, 25, 2);
        let shift = DVector::from_vec(vec![b0, b1]);
        let a = qr_fit(&QrProblem::new(x.clone(), y.clone(), 0.4).unwrap()).unwrap();
        let b = qr_fit(&QrProblem::new(x.clone(), &y + &x * &shift, 0.4).unwrap()).unwrap();
        prop_assert!((a.objective - b.objective).abs() <= 1e-7 * (1.0 + a.objective));
    }
}
