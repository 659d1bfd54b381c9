//! B-spline basis and the basis-expansion least-squares baseline.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FflqrError, Result};
use crate::fdata::{FunctionalSample, Grid};
use crate::linalg::least_squares;
use crate::matrix_serde;

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_N_BASIS: usize = 20;

/// Clamped B-spline basis with uniformly spaced interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsplineBasis {
    knots: Vec<f64>,
    order: usize,
    n_basis: usize,
}

impl BsplineBasis {
    /// `order` is the polynomial degree plus one (4 = cubic).
    pub fn new(n_basis: usize, order: usize, a: f64, b: f64) -> Result<Self> {
        if order < 2 {
            return Err(FflqrError::invalid("order", format!("order must be ≥ 2, got {order}")));
        }
        if n_basis < order {
            return Err(FflqrError::invalid(
                "n_basis",
                format!("n_basis ({n_basis}) must be ≥ order ({order})"),
            ));
        }
        if !(a < b) {
            return Err(FflqrError::invalid("interval", format!("require a < b, got [{a}, {b}]")));
        }
        let interior = n_basis - order;
        let mut knots = Vec::with_capacity(n_basis + order);
        knots.extend(std::iter::repeat_n(a, order));
        for i in 1..=interior {
            knots.push(a + (b - a) * i as f64 / (interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(b, order));
        Ok(BsplineBasis {
            knots,
            order,
            n_basis,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Knot span index `i` with `knots[i] ≤ x < knots[i+1]`, closing the last span.
    fn span(&self, x: f64) -> usize {
        let degree = self.order - 1;
        let last = self.n_basis - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        if x <= self.knots[degree] {
            return degree;
        }
        let mut lo = degree;
        let mut hi = last + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of all basis functions at `x` (Cox-de Boor recursion).
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let degree = self.order - 1;
        let span = self.span(x);
        let mut n = vec![0.0; self.order];
        let mut left = vec![0.0; self.order];
        let mut right = vec![0.0; self.order];
        n[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let mut out = vec![0.0; self.n_basis];
        for (r, v) in n.into_iter().enumerate() {
            out[span - degree + r] = v;
        }
        out
    }

    /// `p × n_basis` evaluation matrix on a grid.
    pub fn design(&self, grid: &Grid) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(grid.len(), self.n_basis);
        for (j, &x) in grid.points().iter().enumerate() {
            for (k, v) in self.evaluate(x).into_iter().enumerate() {
                m[(j, k)] = v;
            }
        }
        m
    }

    /// Least-squares coefficients of each curve in the basis (`n × n_basis`).
    pub fn project(&self, sample: &FunctionalSample) -> Result<DMatrix<f64>> {
        let phi = self.design(sample.grid());
        let gram = phi.transpose() * &phi;
        let chol = gram.cholesky().ok_or_else(|| {
            FflqrError::Singular(format!(
                "B-spline Gram matrix with {} functions on {} grid points (knots too dense for the grid)",
                self.n_basis,
                sample.n_points()
            ))
        })?;
        let rhs = phi.transpose() * sample.values().transpose();
        Ok(chol.solve(&rhs).transpose())
    }

    /// Quadrature Gram matrix `∫ θ θᵀ` on a grid.
    pub fn gram(&self, grid: &Grid) -> DMatrix<f64> {
        let phi = self.design(grid);
        let mut weighted = phi.clone();
        for (j, mut row) in weighted.row_iter_mut().enumerate() {
            row *= grid.weights()[j];
        }
        phi.transpose() * weighted
    }
}

/// Function-on-function least squares in B-spline coefficient space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsplineLsFit {
    response_basis: BsplineBasis,
    response_grid: Grid,
    predictor_bases: Vec<BsplineBasis>,
    predictor_grids: Vec<Grid>,
    /// Precomputed `∫ θ θᵀ` per predictor.
    #[serde(with = "matrix_serde::vec")]
    predictor_grams: Vec<DMatrix<f64>>,
    /// `(1 + M n_basis) × n_basis`.
    #[serde(with = "matrix_serde")]
    coefficients: DMatrix<f64>,
    predictor_indices: Vec<usize>,
    rank_deficient: bool,
}

/// Mean-regression baseline with every curve expanded in a B-spline basis.
///
/// With `X_m = c_mᵀθ`, `Y = dᵀη` and `β_m(s,t) = θ(s)ᵀ B_m η(t)`, the model
/// becomes `d_iᵀ = aᵀ + Σ_m c_imᵀ J_m B_m`, a multivariate linear regression of
/// response coefficients on Gram-weighted predictor coefficients.
pub fn fit_bspline_ls(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    n_basis: usize,
    order: usize,
) -> Result<BsplineLsFit> {
    let n = y.n_curves();
    for x in xs {
        if x.n_curves() != n {
            return Err(FflqrError::DimensionMismatch {
                context: "predictor sample size vs response",
                expected: n,
                found: x.n_curves(),
            });
        }
        if n_basis > x.n_points() {
            return Err(FflqrError::invalid(
                "n_basis",
                format!("{n_basis} basis functions exceed {} grid points", x.n_points()),
            ));
        }
    }
    if n_basis > y.n_points() {
        return Err(FflqrError::invalid(
            "n_basis",
            format!("{n_basis} basis functions exceed {} grid points", y.n_points()),
        ));
    }
    let response_basis = BsplineBasis::new(n_basis, order, y.grid().start(), y.grid().end())?;
    let d = response_basis.project(y)?;

    let mut predictor_bases = Vec::with_capacity(xs.len());
    let mut predictor_grams = Vec::with_capacity(xs.len());
    let mut blocks = Vec::with_capacity(xs.len());
    for x in xs {
        let basis = BsplineBasis::new(n_basis, order, x.grid().start(), x.grid().end())?;
        let c = basis.project(x)?;
        let gram = basis.gram(x.grid());
        blocks.push(c * &gram);
        predictor_bases.push(basis);
        predictor_grams.push(gram);
    }
    let design = stack_design(&blocks, n);
    let (coefficients, rank_deficient) = least_squares(&design, &d)?;
    Ok(BsplineLsFit {
        response_basis,
        response_grid: y.grid().clone(),
        predictor_bases,
        predictor_grids: xs.iter().map(|x| x.grid().clone()).collect(),
        predictor_grams,
        coefficients,
        predictor_indices: (0..xs.len()).collect(),
        rank_deficient,
    })
}

fn stack_design(blocks: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
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

impl BsplineLsFit {
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

    pub fn predictor_indices(&self) -> &[usize] {
        &self.predictor_indices
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn response_basis(&self) -> &BsplineBasis {
        &self.response_basis
    }

    pub fn response_grid(&self) -> &Grid {
        &self.response_grid
    }

    pub fn predict(&self, xs: &[FunctionalSample]) -> Result<FunctionalSample> {
        if xs.len() != self.predictor_bases.len() {
            return Err(FflqrError::DimensionMismatch {
                context: "number of predictors",
                expected: self.predictor_bases.len(),
                found: xs.len(),
            });
        }
        let n = xs.first().map_or(0, FunctionalSample::n_curves);
        let mut blocks = Vec::with_capacity(xs.len());
        for ((basis, grid), (gram, x)) in self
            .predictor_bases
            .iter()
            .zip(&self.predictor_grids)
            .zip(self.predictor_grams.iter().zip(xs))
        {
            grid.ensure_matches(x.grid(), "B-spline predictor grid")?;
            if x.n_curves() != n {
                return Err(FflqrError::DimensionMismatch {
                    context: "predictor sample sizes",
                    expected: n,
                    found: x.n_curves(),
                });
            }
            blocks.push(basis.project(x)? * gram);
        }
        let design = stack_design(&blocks, n);
        let d_hat = design * &self.coefficients;
        let eta = self.response_basis.design(&self.response_grid);
        FunctionalSample::new(d_hat * eta.transpose(), self.response_grid.clone())
    }
}
