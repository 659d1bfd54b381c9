//! Linear quantile regression by check-loss minimization.
//!
//! The fit solves the dual linear program
//!
//! ```text
//! max  yᵀa   s.t.  Xᵀa = (1 − τ) Xᵀ1,   0 ≤ a ≤ 1
//! ```
//!
//! with a Mehrotra predictor-corrector primal-dual interior point method
//! (Frisch-Newton). The coefficient vector is the negated multiplier of the
//! equality constraint. Once the duality gap is closed, the solution is
//! snapped to an exact vertex: the `q` observations with the smallest
//! absolute residuals that form a nonsingular basis are interpolated, and
//! the vertex replaces the interior iterate whenever its objective is no
//! worse.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FflqrError, Result};
use crate::linalg::{independent_columns, DEPENDENCE_TOL};
use crate::matrix_serde;

pub const MAX_ITERATIONS: usize = 200;
const GAP_ABS_TOL: f64 = 1e-10;
const GAP_REL_TOL: f64 = 1e-9;
const STEP_FRACTION: f64 = 0.99995;

/// Tie tolerance for zero residuals, relative to the response scale.
pub const RESIDUAL_TIE_TOL: f64 = 1e-9;

pub(crate) fn validate_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(FflqrError::invalid(
            "tau",
            format!("quantile level must lie in (0, 1), got {tau}"),
        ))
    }
}

#[inline]
pub(crate) fn rho(u: f64, tau: f64) -> f64 {
    if u >= 0.0 {
        u * tau
    } else {
        u * (tau - 1.0)
    }
}

/// Check loss `ρ_τ(u) = u (τ − 1{u < 0})`.
pub fn check_loss(u: f64, tau: f64) -> Result<f64> {
    validate_tau(tau)?;
    Ok(rho(u, tau))
}

/// Sum of check losses of `y − Xb`.
pub fn objective(design: &DMatrix<f64>, response: &DVector<f64>, coef: &DVector<f64>, tau: f64) -> f64 {
    let fitted = design * coef;
    response
        .iter()
        .zip(fitted.iter())
        .map(|(y, f)| rho(y - f, tau))
        .sum()
}

#[derive(Debug, Clone)]
pub struct QrProblem {
    design: DMatrix<f64>,
    response: DVector<f64>,
    tau: f64,
}

impl QrProblem {
    pub fn new(design: DMatrix<f64>, response: DVector<f64>, tau: f64) -> Result<Self> {
        validate_tau(tau)?;
        if design.nrows() != response.len() {
            return Err(FflqrError::DimensionMismatch {
                context: "quantile regression design rows vs response",
                expected: design.nrows(),
                found: response.len(),
            });
        }
        if design.ncols() == 0 {
            return Err(FflqrError::invalid("design", "design has no columns"));
        }
        if design.nrows() < design.ncols() {
            return Err(FflqrError::invalid(
                "design",
                format!(
                    "need at least as many observations as columns ({} < {})",
                    design.nrows(),
                    design.ncols()
                ),
            ));
        }
        for j in 0..design.ncols() {
            for i in 0..design.nrows() {
                if !design[(i, j)].is_finite() {
                    return Err(FflqrError::NonFinite { row: i, col: j });
                }
            }
        }
        if let Some(i) = response.iter().position(|v| !v.is_finite()) {
            return Err(FflqrError::NonFinite { row: i, col: 0 });
        }
        Ok(QrProblem {
            design,
            response,
            tau,
        })
    }

    /// Intercept-only problem, whose minimizers are the τ-th sample quantiles.
    pub fn intercept_only(response: DVector<f64>, tau: f64) -> Result<Self> {
        let design = DMatrix::from_element(response.len(), 1, 1.0);
        QrProblem::new(design, response, tau)
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrSolution {
    pub coefficients: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Design columns dropped as linearly dependent (their coefficients are zero).
    pub dropped_columns: Vec<usize>,
}

impl QrSolution {
    pub fn rank_deficient(&self) -> bool {
        !self.dropped_columns.is_empty()
    }
}

/// Minimizes `Σ ρ_τ(y_i − x_iᵀb)`.
pub fn qr_fit(problem: &QrProblem) -> Result<QrSolution> {
    let x = &problem.design;
    let y = &problem.response;
    let tau = problem.tau;
    let q = x.ncols();

    let keep = independent_columns(x);
    let dropped: Vec<usize> = (0..q).filter(|j| !keep.contains(j)).collect();
    let mut coefficients = DVector::zeros(q);
    let mut iterations = 0;

    if !keep.is_empty() {
        let reduced = x.select_columns(keep.iter());
        let (b, iters) = interior_point(&reduced, y, tau)?;
        let b = polish_vertex(&reduced, y, tau, b);
        for (row, &j) in keep.iter().enumerate() {
            coefficients[j] = b[row];
        }
        iterations = iters;
    }
    let objective = objective(x, y, &coefficients, tau);
    Ok(QrSolution {
        coefficients,
        objective,
        iterations,
        dropped_columns: dropped,
    })
}

/// Primal-dual path following on the bounded dual LP; returns (b, iterations).
fn interior_point(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> Result<(DVector<f64>, usize)> {
    let n = x.nrows();
    let p = x.ncols();
    let c: DVector<f64> = -y;
    let b_rhs: DVector<f64> = x.transpose() * DVector::from_element(n, 1.0 - tau);

    let mut xp = DVector::from_element(n, 1.0 - tau);
    let mut sp = DVector::from_element(n, tau);

    // least-squares start for the dual multiplier
    let xtx = x.transpose() * x;
    let mut yd = solve_spd(&xtx, &(x.transpose() * &c))?;
    let r = &c - x * &yd;
    let scale = r.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let offset = (1e-3 * scale).max(1e-10);
    let mut z = r.map(|v| v.max(0.0) + offset);
    let mut w = r.map(|v| (-v).max(0.0) + offset);

    let mut gap = xp.dot(&z) + sp.dot(&w);
    for iter in 0..MAX_ITERATIONS {
        let fitted_obj = {
            let b = -&yd;
            objective(x, y, &b, tau)
        };
        if gap <= GAP_ABS_TOL || gap <= GAP_REL_TOL * fitted_obj.abs().max(1.0) {
            return Ok((-yd, iter));
        }

        let r_p = &b_rhs - x.transpose() * &xp;
        let r_d = &c - x * &yd - &z + &w;
        let q_inv = DVector::from_fn(n, |i, _| 1.0 / (z[i] / xp[i] + w[i] / sp[i]));

        let mut normal = DMatrix::zeros(p, p);
        for i in 0..n {
            let row = x.row(i);
            let qi = q_inv[i];
            for a in 0..p {
                let ra = row[a] * qi;
                for bcol in a..p {
                    normal[(a, bcol)] += ra * row[bcol];
                }
            }
        }
        for a in 0..p {
            for bcol in 0..a {
                normal[(a, bcol)] = normal[(bcol, a)];
            }
        }
        let chol = factor_spd(&normal)?;

        let solve_dir = |rhs_xz: &DVector<f64>, rhs_sw: &DVector<f64>| {
            let r_hat = DVector::from_fn(n, |i, _| r_d[i] - rhs_xz[i] / xp[i] + rhs_sw[i] / sp[i]);
            let rhs = &r_p + x.transpose() * r_hat.component_mul(&q_inv);
            let dy = chol.solve(&rhs);
            let dx = (x * &dy - &r_hat).component_mul(&q_inv);
            let ds = -&dx;
            let dz = DVector::from_fn(n, |i, _| (rhs_xz[i] - z[i] * dx[i]) / xp[i]);
            let dw = DVector::from_fn(n, |i, _| (rhs_sw[i] + w[i] * dx[i]) / sp[i]);
            (dx, ds, dy, dz, dw)
        };

        // predictor
        let aff_xz = -xp.component_mul(&z);
        let aff_sw = -sp.component_mul(&w);
        let (dx_a, ds_a, _, dz_a, dw_a) = solve_dir(&aff_xz, &aff_sw);
        let ap = step_length(&xp, &dx_a).min(step_length(&sp, &ds_a)).min(1.0);
        let ad = step_length(&z, &dz_a).min(step_length(&w, &dw_a)).min(1.0);
        let mu_aff = (&xp + &dx_a * ap).dot(&(&z + &dz_a * ad))
            + (&sp + &ds_a * ap).dot(&(&w + &dw_a * ad));
        let sigma = (mu_aff / gap).clamp(0.0, 1.0).powi(3);
        let mu = sigma * gap / (2 * n) as f64;

        // corrector
        let rhs_xz = DVector::from_fn(n, |i, _| mu - xp[i] * z[i] - dx_a[i] * dz_a[i]);
        let rhs_sw = DVector::from_fn(n, |i, _| mu - sp[i] * w[i] - ds_a[i] * dw_a[i]);
        let (dx, ds, dy, dz, dw) = solve_dir(&rhs_xz, &rhs_sw);
        let ap = (STEP_FRACTION * step_length(&xp, &dx).min(step_length(&sp, &ds))).min(1.0);
        let ad = (STEP_FRACTION * step_length(&z, &dz).min(step_length(&w, &dw))).min(1.0);

        xp.axpy(ap, &dx, 1.0);
        sp.axpy(ap, &ds, 1.0);
        yd.axpy(ad, &dy, 1.0);
        z.axpy(ad, &dz, 1.0);
        w.axpy(ad, &dw, 1.0);
        gap = xp.dot(&z) + sp.dot(&w);
        if !gap.is_finite() {
            break;
        }
    }
    let b = -&yd;
    Err(FflqrError::NoConvergence {
        iterations: MAX_ITERATIONS,
        gap,
        objective: objective(x, y, &b, tau),
    })
}

/// Largest α ≤ ∞ keeping `v + α dv ≥ 0`.
fn step_length(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(a, d)| -a / d)
        .fold(f64::INFINITY, f64::min)
        .min(1.0 / STEP_FRACTION)
}

fn factor_spd(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let diag_scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut ridge = 1e-14 * diag_scale;
    for _ in 0..6 {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += ridge;
        }
        if let Some(c) = shifted.cholesky() {
            return Ok(c);
        }
        ridge *= 100.0;
    }
    Err(FflqrError::Singular("interior-point normal equations".into()))
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(factor_spd(m)?.solve(rhs))
}

/// Replaces an interior solution with the basic solution through its `q`
/// smallest residuals when that vertex is at least as good.
fn polish_vertex(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64, b: DVector<f64>) -> DVector<f64> {
    let n = x.nrows();
    let q = x.ncols();
    let resid = y - x * &b;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        resid[i]
            .abs()
            .partial_cmp(&resid[j].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    // pick rows greedily by residual size, keeping only independent ones
    let row_scale = (0..n).map(|i| x.row(i).norm()).fold(0.0_f64, f64::max);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(q);
    let mut rows = Vec::with_capacity(q);
    for &i in &order {
        if rows.len() == q {
            break;
        }
        let mut v: DVector<f64> = x.row(i).transpose();
        for _ in 0..2 {
            for e in &ortho {
                let proj = e.dot(&v);
                v.axpy(-proj, e, 1.0);
            }
        }
        let norm = v.norm();
        if norm > DEPENDENCE_TOL * row_scale {
            ortho.push(v / norm);
            rows.push(i);
        }
    }
    if rows.len() < q {
        return b;
    }
    let xh = x.select_rows(rows.iter());
    let yh = DVector::from_iterator(q, rows.iter().map(|&i| y[i]));
    let Some(bh) = xh.lu().solve(&yh) else {
        return b;
    };
    if bh.iter().any(|v| !v.is_finite()) {
        return b;
    }
    let obj_interior = objective(x, y, &b, tau);
    let obj_vertex = objective(x, y, &bh, tau);
    if obj_vertex <= obj_interior + 1e-12 * obj_interior.abs().max(1e-300) {
        bh
    } else {
        b
    }
}

/// Coefficients of independent per-column quantile regressions on a shared design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrCoefMatrix {
    /// `q × K_Y`.
    #[serde(with = "matrix_serde")]
    pub coefficients: DMatrix<f64>,
    pub tau: f64,
    pub includes_intercept: bool,
    #[serde(default)]
    pub rank_deficient: bool,
}

impl QrCoefMatrix {
    pub fn n_rows(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.coefficients.ncols()
    }
}

/// Solves one quantile regression per response column.
///
/// Columns are solved in parallel; each solve is deterministic, so the result
/// does not depend on scheduling.
pub fn qr_fit_multi(
    design: &DMatrix<f64>,
    responses: &DMatrix<f64>,
    tau: f64,
    includes_intercept: bool,
) -> Result<QrCoefMatrix> {
    validate_tau(tau)?;
    if design.nrows() != responses.nrows() {
        return Err(FflqrError::DimensionMismatch {
            context: "quantile regression design rows vs responses",
            expected: design.nrows(),
            found: responses.nrows(),
        });
    }
    let solutions: Vec<Result<QrSolution>> = (0..responses.ncols())
        .into_par_iter()
        .map(|k| {
            let problem = QrProblem::new(design.clone(), responses.column(k).into_owned(), tau)?;
            qr_fit(&problem)
        })
        .collect();

    let mut coefficients = DMatrix::zeros(design.ncols(), responses.ncols());
    let mut rank_deficient = false;
    for (k, sol) in solutions.into_iter().enumerate() {
        let sol = sol.map_err(|e| FflqrError::ColumnFailure {
            column: k,
            source: Box::new(e),
        })?;
        rank_deficient |= sol.rank_deficient();
        coefficients.set_column(k, &sol.coefficients);
    }
    Ok(QrCoefMatrix {
        coefficients,
        tau,
        includes_intercept,
        rank_deficient,
    })
}

/// Per-column check-loss objective of `responses − design × coefficients`.
pub fn qr_objective(
    design: &DMatrix<f64>,
    responses: &DMatrix<f64>,
    coefs: &QrCoefMatrix,
) -> Result<Vec<f64>> {
    if design.ncols() != coefs.n_rows() {
        return Err(FflqrError::DimensionMismatch {
            context: "design columns vs coefficient rows",
            expected: coefs.n_rows(),
            found: design.ncols(),
        });
    }
    if design.nrows() != responses.nrows() || responses.ncols() != coefs.n_columns() {
        return Err(FflqrError::DimensionMismatch {
            context: "responses vs design/coefficients",
            expected: coefs.n_columns(),
            found: responses.ncols(),
        });
    }
    let resid = responses - design * &coefs.coefficients;
    Ok(resid
        .column_iter()
        .map(|c| c.iter().map(|&u| rho(u, coefs.tau)).sum())
        .collect())
}

/// Counts of strictly negative, zero (within tolerance) and strictly positive residuals.
pub fn residual_signs(residuals: &[f64], response_scale: f64) -> (usize, usize, usize) {
    let tol = RESIDUAL_TIE_TOL * response_scale.max(1.0);
    residuals.iter().fold((0, 0, 0), |(neg, zero, pos), &r| {
        if r < -tol {
            (neg + 1, zero, pos)
        } else if r > tol {
            (neg, zero, pos + 1)
        } else {
            (neg, zero + 1, pos)
        }
    })
}

/// Largest violation of the subgradient optimality conditions, scaled by the
/// column's absolute sum.
///
/// For each design column `d`, `τ Σ_{r>0} x_d − (1−τ) Σ_{r<0} x_d` must lie in
/// `[−Σ_{r=0}|x_d|, Σ_{r=0}|x_d|]`. Zero means the coefficients are optimal.
pub fn subgradient_violation(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    coef: &DVector<f64>,
    tau: f64,
) -> f64 {
    let resid = response - design * coef;
    let scale = response.amax().max(1.0);
    let tol = RESIDUAL_TIE_TOL * scale;
    let mut worst: f64 = 0.0;
    for col in design.column_iter() {
        let mut g = 0.0;
        let mut slack = 0.0;
        let mut total = 0.0;
        for (r, &xv) in resid.iter().zip(col.iter()) {
            total += xv.abs();
            if *r > tol {
                g += tau * xv;
            } else if *r < -tol {
                g -= (1.0 - tau) * xv;
            } else {
                slack += xv.abs();
            }
        }
        let excess = (g.abs() - slack).max(0.0);
        worst = worst.max(excess / total.max(1.0));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn check_loss_values() {
        assert_eq!(check_loss(0.0, 0.5).unwrap(), 0.0);
        assert_eq!(check_loss(2.0, 0.5).unwrap(), 1.0);
        assert_eq!(check_loss(-2.0, 0.25).unwrap(), 1.5);
        assert!(check_loss(1.0, 0.0).is_err());
        assert!(check_loss(1.0, 1.0).is_err());
        assert!(check_loss(1.0, f64::NAN).is_err());
    }

    #[test]
    fn odd_median() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let sol = qr_fit(&QrProblem::intercept_only(y.clone(), 0.5).unwrap()).unwrap();
        assert_abs_diff_eq!(sol.coefficients[0], 3.0, epsilon = 1e-10);
        let sol = qr_fit(&QrProblem::intercept_only(y, 0.3).unwrap()).unwrap();
        assert_abs_diff_eq!(sol.coefficients[0], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn interpolable_line() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.37 - 1.0).collect();
        let design = DMatrix::from_fn(12, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let y = DVector::from_iterator(12, x.iter().map(|v| 2.0 * v));
        for tau in [0.1, 0.5, 0.83] {
            let sol = qr_fit(&QrProblem::new(design.clone(), y.clone(), tau).unwrap()).unwrap();
            assert_abs_diff_eq!(sol.coefficients[0], 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(sol.coefficients[1], 2.0, epsilon = 1e-9);
            assert!(sol.objective < 1e-9);
        }
    }

    #[test]
    fn problem_validation() {
        let d = DMatrix::from_element(3, 1, 1.0);
        assert!(QrProblem::new(d.clone(), DVector::zeros(4), 0.5).is_err());
        assert!(QrProblem::new(d.clone(), DVector::zeros(3), 1.5).is_err());
        assert!(QrProblem::new(DMatrix::zeros(2, 3), DVector::zeros(2), 0.5).is_err());
        let mut bad = DVector::zeros(3);
        bad[1] = f64::NAN;
        assert!(matches!(
            QrProblem::new(d, bad, 0.5),
            Err(FflqrError::NonFinite { row: 1, .. })
        ));
    }

    #[test]
    fn duplicated_design_column_is_dropped() {
        let x: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64).collect();
        let design = DMatrix::from_fn(20, 3, |i, j| if j == 0 { 1.0 } else { x[i] });
        let y = DVector::from_iterator(20, x.iter().enumerate().map(|(i, v)| v + (i % 3) as f64));
        let sol = qr_fit(&QrProblem::new(design.clone(), y.clone(), 0.5).unwrap()).unwrap();
        assert_eq!(sol.dropped_columns, vec![2]);
        assert_eq!(sol.coefficients[2], 0.0);
        assert!(subgradient_violation(&design, &y, &sol.coefficients, 0.5) < 1e-6);
    }

    #[test]
    fn multi_column_matches_single() {
        let n = 30;
        let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i as f64 * 0.7).sin() });
        let resp = DMatrix::from_fn(n, 2, |i, k| (i as f64 * (k as f64 + 1.3)).cos() + i as f64 * 0.01);
        let multi = qr_fit_multi(&design, &resp, 0.4, true).unwrap();
        for k in 0..2 {
            let p = QrProblem::new(design.clone(), resp.column(k).into_owned(), 0.4).unwrap();
            let single = qr_fit(&p).unwrap();
            assert_eq!(multi.coefficients.column(k), single.coefficients.column(0));
        }
        let obj = qr_objective(&design, &resp, &multi).unwrap();
        assert_eq!(obj.len(), 2);
    }

    #[test]
    fn objective_of_zero_residuals() {
        let design = DMatrix::from_element(4, 1, 1.0);
        let resp = DMatrix::from_element(4, 2, 3.0);
        let coefs = QrCoefMatrix {
            coefficients: DMatrix::from_element(1, 2, 3.0),
            tau: 0.3,
            includes_intercept: true,
            rank_deficient: false,
        };
        assert_eq!(qr_objective(&design, &resp, &coefs).unwrap(), vec![0.0, 0.0]);
        let bad = DMatrix::zeros(4, 3);
        assert!(qr_objective(&bad, &resp, &coefs).is_err());
    }
}
