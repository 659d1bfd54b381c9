//! Function-on-function regression in FPC score space.
//!
//! The response and every predictor are reduced to their leading FPC
//! scores, the score-space regression `Ξ = Π B` is solved column by column
//! (check loss for the quantile model, squared loss for the mean baseline),
//! and predictions are mapped back to curves through the response basis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FflqrError, Result};
use crate::fdata::{fpc_decompose, FpcBasis, FunctionalSample, Grid};
use crate::linalg::least_squares;
use crate::matrix_serde;
use crate::qr::{qr_fit_multi, qr_objective, rho, validate_tau, QrCoefMatrix};

/// Loss minimized in score space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Estimator {
    Quantile { tau: f64 },
    LeastSquares,
}

impl Estimator {
    pub fn tau(&self) -> Option<f64> {
        match self {
            Estimator::Quantile { tau } => Some(*tau),
            Estimator::LeastSquares => None,
        }
    }

    /// Pointwise loss of a residual.
    pub fn loss(&self, u: f64) -> f64 {
        match self {
            Estimator::Quantile { tau } => rho(u, *tau),
            Estimator::LeastSquares => u * u,
        }
    }
}

/// A fitted FPC regression model (quantile or least squares).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FflqrFit {
    estimator: Estimator,
    response_basis: FpcBasis,
    predictor_bases: Vec<FpcBasis>,
    /// `(1 + Σ K_X) × K_Y`; row 0 holds the intercept scores `g_k`.
    #[serde(with = "matrix_serde")]
    coefficients: DMatrix<f64>,
    /// Original positions of the predictors in the caller's predictor list.
    predictor_indices: Vec<usize>,
    rank_deficient: bool,
}

/// Bivariate coefficient function evaluated on `s_grid × t_grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSurface {
    /// `p_s × p_t`, rows indexed by `s`.
    #[serde(with = "matrix_serde")]
    pub values: DMatrix<f64>,
    pub s_grid: Grid,
    pub t_grid: Grid,
    pub predictor_index: usize,
    pub tau: Option<f64>,
}

/// Largest admissible truncation for a sample.
pub fn max_truncation(sample: &FunctionalSample) -> usize {
    sample.n_curves().saturating_sub(1).min(sample.n_points())
}

fn check_inputs(y: &FunctionalSample, xs: &[FunctionalSample], k_y: usize, k_x: usize) -> Result<()> {
    let n = y.n_curves();
    for x in xs {
        if x.n_curves() != n {
            return Err(FflqrError::DimensionMismatch {
                context: "predictor sample size vs response",
                expected: n,
                found: x.n_curves(),
            });
        }
    }
    let max_y = max_truncation(y);
    if k_y == 0 || k_y > max_y {
        return Err(FflqrError::TruncationTooLarge {
            context: "response truncation K_Y",
            requested: k_y,
            max: max_y,
        });
    }
    for x in xs {
        let max_x = max_truncation(x);
        if k_x == 0 || k_x > max_x {
            return Err(FflqrError::TruncationTooLarge {
                context: "predictor truncation K_X",
                requested: k_x,
                max: max_x,
            });
        }
    }
    let q = 1 + xs.len() * k_x;
    if q > n {
        return Err(FflqrError::invalid(
            "K_X",
            format!("score design has {q} columns but only {n} curves"),
        ));
    }
    Ok(())
}

/// Intercept column followed by each predictor's score block.
fn score_design(blocks: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let q = 1 + blocks.iter().map(|b| b.ncols()).sum::<usize>();
    let mut design = DMatrix::zeros(n, q);
    design.column_mut(0).fill(1.0);
    let mut col = 1;
    for b in blocks {
        design.columns_mut(col, b.ncols()).copy_from(b);
        col += b.ncols();
    }
    design
}

/// FPC decompositions of a response and its predictors at maximal truncation,
/// reused across candidate `(K_Y, K_X)` pairs.
#[derive(Debug, Clone)]
pub struct ScoreCache<'a> {
    y: &'a FunctionalSample,
    xs: &'a [FunctionalSample],
    response_basis: FpcBasis,
    predictor_bases: Vec<FpcBasis>,
}

impl<'a> ScoreCache<'a> {
    pub fn new(
        y: &'a FunctionalSample,
        xs: &'a [FunctionalSample],
        k_y_max: usize,
        k_x_max: usize,
    ) -> Result<Self> {
        check_inputs(y, xs, k_y_max, k_x_max)?;
        let (response_basis, _) = fpc_decompose(y, k_y_max)?;
        let predictor_bases = xs
            .iter()
            .map(|x| fpc_decompose(x, k_x_max).map(|(b, _)| b))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreCache {
            y,
            xs,
            response_basis,
            predictor_bases,
        })
    }

    pub fn k_y_max(&self) -> usize {
        self.response_basis.n_components()
    }

    pub fn k_x_max(&self) -> usize {
        self.predictor_bases
            .iter()
            .map(FpcBasis::n_components)
            .min()
            .unwrap_or(usize::MAX)
    }

    /// Fits the score-space regression with the leading `k_y`/`k_x` components.
    pub fn fit(&self, k_y: usize, k_x: usize, estimator: Estimator) -> Result<FflqrFit> {
        if let Estimator::Quantile { tau } = estimator {
            validate_tau(tau)?;
        }
        check_inputs(self.y, self.xs, k_y, k_x)?;
        let response_basis = self.response_basis.truncated(k_y)?;
        let xi = response_basis.project(self.y)?;
        let mut predictor_bases = Vec::with_capacity(self.xs.len());
        let mut blocks = Vec::with_capacity(self.xs.len());
        for (full, x) in self.predictor_bases.iter().zip(self.xs) {
            let basis = full.truncated(k_x)?;
            blocks.push(basis.project(x)?.0);
            predictor_bases.push(basis);
        }
        let design = score_design(&blocks, self.y.n_curves());
        let (coefficients, rank_deficient) = match estimator {
            Estimator::Quantile { tau } => {
                let c = qr_fit_multi(&design, &xi.0, tau, true)?;
                (c.coefficients, c.rank_deficient)
            }
            Estimator::LeastSquares => least_squares(&design, &xi.0)?,
        };
        Ok(FflqrFit {
            estimator,
            response_basis,
            predictor_bases,
            coefficients,
            predictor_indices: (0..self.xs.len()).collect(),
            rank_deficient,
        })
    }
}

fn fit_scores(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    k_y: usize,
    k_x: usize,
    estimator: Estimator,
) -> Result<FflqrFit> {
    if let Estimator::Quantile { tau } = estimator {
        validate_tau(tau)?;
    }
    ScoreCache::new(y, xs, k_y, k_x)?.fit(k_y, k_x, estimator)
}

/// Fits the function-on-function linear quantile regression model at level `tau`.
///
/// The same truncation `k_x` is applied to every predictor. An intercept is
/// always included.
pub fn fit_fflqr(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    tau: f64,
    k_y: usize,
    k_x: usize,
) -> Result<FflqrFit> {
    fit_scores(y, xs, k_y, k_x, Estimator::Quantile { tau })
}

/// Classical FPC mean regression: the same pipeline solved by least squares.
pub fn fit_fpc_ls(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    k_y: usize,
    k_x: usize,
) -> Result<FflqrFit> {
    fit_scores(y, xs, k_y, k_x, Estimator::LeastSquares)
}

impl FflqrFit {
    /// Relabels predictors with their positions in a larger candidate list.
    pub fn with_predictor_indices(mut self, indices: Vec<usize>) -> Result<Self> {
        if indices.len() != self.predictor_bases.len() {
            return Err(FflqrError::DimensionMismatch {
                context: "predictor indices",
                expected: self.predictor_bases.len(),
                found: indices.len(),
            });
        }
        self.predictor_indices = indices;
        Ok(self)
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn tau(&self) -> Option<f64> {
        self.estimator.tau()
    }

    pub fn response_basis(&self) -> &FpcBasis {
        &self.response_basis
    }

    pub fn predictor_bases(&self) -> &[FpcBasis] {
        &self.predictor_bases
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// Score-space coefficients packaged as a quantile coefficient matrix.
    pub fn coef_matrix(&self) -> Option<QrCoefMatrix> {
        self.tau().map(|tau| QrCoefMatrix {
            coefficients: self.coefficients.clone(),
            tau,
            includes_intercept: true,
            rank_deficient: self.rank_deficient,
        })
    }

    pub fn predictor_indices(&self) -> &[usize] {
        &self.predictor_indices
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn k_y(&self) -> usize {
        self.response_basis.n_components()
    }

    pub fn k_x(&self) -> usize {
        self.predictor_bases.first().map_or(0, FpcBasis::n_components)
    }

    pub fn response_grid(&self) -> &Grid {
        self.response_basis.grid()
    }

    /// Design matrix `[1 | ζ_1 | … | ζ_M]` for new predictor curves.
    pub fn design_for(&self, xs: &[FunctionalSample]) -> Result<DMatrix<f64>> {
        if xs.len() != self.predictor_bases.len() {
            return Err(FflqrError::DimensionMismatch {
                context: "number of predictors",
                expected: self.predictor_bases.len(),
                found: xs.len(),
            });
        }
        let n = xs.first().map_or(0, FunctionalSample::n_curves);
        let mut blocks = Vec::with_capacity(xs.len());
        for (basis, x) in self.predictor_bases.iter().zip(xs) {
            if x.n_curves() != n {
                return Err(FflqrError::DimensionMismatch {
                    context: "predictor sample sizes",
                    expected: n,
                    found: x.n_curves(),
                });
            }
            blocks.push(basis.project(x)?.0);
        }
        Ok(score_design(&blocks, n))
    }

    /// Predicted response scores `Π B`.
    pub fn predict_scores(&self, xs: &[FunctionalSample]) -> Result<DMatrix<f64>> {
        Ok(self.design_for(xs)? * &self.coefficients)
    }

    /// Predicted conditional quantile (or mean) curves on the response grid.
    pub fn predict(&self, xs: &[FunctionalSample]) -> Result<FunctionalSample> {
        let scores = self.predict_scores(xs)?;
        let mut values = scores * self.response_basis.eigenfunctions();
        let mean = self.response_basis.mean();
        for (j, mut col) in values.column_iter_mut().enumerate() {
            col.add_scalar_mut(mean[j]);
        }
        FunctionalSample::new(values, self.response_grid().clone())
    }

    /// Intercept function `Σ_k g_k φ_k(t)` (excluding the response mean).
    pub fn intercept_function(&self) -> DVector<f64> {
        (self.coefficients.row(0) * self.response_basis.eigenfunctions()).transpose()
    }

    /// Reconstructs `β̂_m(s, t) = Σ_l Σ_k ψ_ml(s) β̂_mlk φ_k(t)` for the predictor at
    /// position `m` of the fit (not its original index).
    pub fn coefficient_surface(&self, m: usize) -> Result<CoefficientSurface> {
        let basis = self.predictor_bases.get(m).ok_or_else(|| {
            FflqrError::invalid(
                "m",
                format!(
                    "predictor position {m} out of range for {} fitted predictors",
                    self.predictor_bases.len()
                ),
            )
        })?;
        let k_x = basis.n_components();
        let block = self.coefficients.rows(1 + m * k_x, k_x);
        let values =
            basis.eigenfunctions().transpose() * block * self.response_basis.eigenfunctions();
        Ok(CoefficientSurface {
            values,
            s_grid: basis.grid().clone(),
            t_grid: self.response_grid().clone(),
            predictor_index: self.predictor_indices[m],
            tau: self.tau(),
        })
    }

    /// Score-space objective per response coordinate on a data set.
    pub fn score_objective(&self, y: &FunctionalSample, xs: &[FunctionalSample]) -> Result<Vec<f64>> {
        let design = self.design_for(xs)?;
        let xi = self.response_basis.project(y)?;
        match self.coef_matrix() {
            Some(c) => qr_objective(&design, &xi.0, &c),
            None => {
                let resid = &xi.0 - design * &self.coefficients;
                Ok(resid
                    .column_iter()
                    .map(|c| c.iter().map(|u| u * u).sum())
                    .collect())
            }
        }
    }

    /// Score residuals `Ξ − Π B` on a data set.
    pub fn score_residuals(&self, y: &FunctionalSample, xs: &[FunctionalSample]) -> Result<DMatrix<f64>> {
        let design = self.design_for(xs)?;
        let xi = self.response_basis.project(y)?;
        Ok(xi.0 - design * &self.coefficients)
    }

    /// Copy of the fit with the coefficient matrix replaced.
    pub fn with_coefficients(&self, coefficients: DMatrix<f64>) -> Result<Self> {
        if coefficients.shape() != self.coefficients.shape() {
            return Err(FflqrError::DimensionMismatch {
                context: "coefficient matrix shape",
                expected: self.coefficients.nrows(),
                found: coefficients.nrows(),
            });
        }
        let mut fit = self.clone();
        fit.coefficients = coefficients;
        Ok(fit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdata::make_uniform_grid;
    use crate::qr::{qr_fit, QrProblem};
    use approx::assert_abs_diff_eq;

    fn toy_data(n: usize) -> (FunctionalSample, FunctionalSample) {
        let g = make_uniform_grid(25, 0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) / 4.0).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 11 % 13) as f64 - 6.0) / 3.0).collect();
        let x = DMatrix::from_fn(n, 25, |i, j| {
            let s = g.points()[j];
            a[i] * (std::f64::consts::PI * s).sin() + b[i] * s
        });
        let y = DMatrix::from_fn(n, 25, |i, j| {
            let t = g.points()[j];
            1.0 + 2.0 * a[i] * t + ((i * 7 % 5) as f64 - 2.0) * 0.1 * (3.0 * t).cos()
        });
        (
            FunctionalSample::new(y, g.clone()).unwrap(),
            FunctionalSample::new(x, g).unwrap(),
        )
    }

    #[test]
    fn scalar_reduction_matches_scalar_qr() {
        let (y, x) = toy_data(40);
        let fit = fit_fflqr(&y, &[x.clone()], 0.5, 1, 1).unwrap();
        assert_eq!(fit.coefficients().shape(), (2, 1));
        let (_, xi) = fpc_decompose(&y, 1).unwrap();
        let (_, zeta) = fpc_decompose(&x, 1).unwrap();
        let design = DMatrix::from_fn(40, 2, |i, j| if j == 0 { 1.0 } else { zeta.0[(i, 0)] });
        let sol = qr_fit(&QrProblem::new(design, xi.0.column(0).into_owned(), 0.5).unwrap()).unwrap();
        assert_abs_diff_eq!(fit.coefficients()[(1, 0)], sol.coefficients[1], epsilon = 1e-12);
    }

    #[test]
    fn ls_scalar_reduction_is_simple_regression() {
        let (y, x) = toy_data(40);
        let fit = fit_fpc_ls(&y, &[x.clone()], 1, 1).unwrap();
        let (_, xi) = fpc_decompose(&y, 1).unwrap();
        let (_, zeta) = fpc_decompose(&x, 1).unwrap();
        let n = 40.0;
        let (xs, ys) = (zeta.0.column(0), xi.0.column(0));
        let (mx, my) = (xs.sum() / n, ys.sum() / n);
        let cov: f64 = xs.iter().zip(ys.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
        let var: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
        assert_abs_diff_eq!(fit.coefficients()[(1, 0)], cov / var, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.coefficients()[(0, 0)], my - cov / var * mx, epsilon = 1e-10);
    }

    #[test]
    fn duplicated_predictor_flags_rank_deficiency() {
        let (y, x) = toy_data(30);
        let fit = fit_fpc_ls(&y, &[x.clone(), x.clone()], 2, 2).unwrap();
        assert!(fit.rank_deficient());
        let fit = fit_fflqr(&y, &[x.clone(), x], 0.5, 2, 2).unwrap();
        assert!(fit.rank_deficient());
    }

    #[test]
    fn predicting_at_mean_gives_intercept() {
        let (y, x) = toy_data(30);
        let fit = fit_fflqr(&y, &[x.clone()], 0.3, 2, 2).unwrap();
        let mean = fit.predictor_bases()[0].mean().clone();
        let at_mean = DMatrix::from_fn(2, x.n_points(), |_, j| mean[j]);
        let pred = fit
            .predict(&[FunctionalSample::new(at_mean, x.grid().clone()).unwrap()])
            .unwrap();
        let g = fit.intercept_function();
        for j in 0..y.n_points() {
            let expect = fit.response_basis().mean()[j] + g[j];
            assert_abs_diff_eq!(pred.values()[(0, j)], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn surface_cases() {
        let (y, x) = toy_data(30);
        let fit = fit_fflqr(&y, &[x], 0.5, 1, 1).unwrap();
        let mut c = fit.coefficients().clone();
        c[(1, 0)] = 0.0;
        let zero = fit.with_coefficients(c.clone()).unwrap();
        assert!(zero.coefficient_surface(0).unwrap().values.iter().all(|&v| v == 0.0));
        c[(1, 0)] = 1.0;
        let unit = fit.with_coefficients(c).unwrap();
        let surf = unit.coefficient_surface(0).unwrap();
        let psi = unit.predictor_bases()[0].eigenfunction(0);
        let phi = unit.response_basis().eigenfunction(0);
        for j in 0..psi.len() {
            for i in 0..phi.len() {
                assert_abs_diff_eq!(surf.values[(j, i)], psi[j] * phi[i], epsilon = 1e-14);
            }
        }
        assert!(fit.coefficient_surface(1).is_err());
    }

    #[test]
    fn input_validation() {
        let (y, x) = toy_data(30);
        assert!(matches!(
            fit_fflqr(&y, &[x.select_rows(&[0, 1, 2])], 0.5, 1, 1),
            Err(FflqrError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            fit_fflqr(&y, &[x.clone()], 0.5, 30, 1),
            Err(FflqrError::TruncationTooLarge { .. })
        ));
        assert!(fit_fflqr(&y, &[x], 1.0, 1, 1).is_err());
    }
}
