//! Discretized functional data: grids with quadrature weights, curve samples,
//! centering and functional principal component decomposition.
//!
//! Curves are stored as rows of an `n × p` matrix evaluated on a shared
//! [`Grid`]. All integrals over the domain are replaced by the grid's
//! trapezoidal quadrature, so the decomposition solves the weighted
//! eigenproblem `W^{1/2} C W^{1/2} v = λ v` and maps back with
//! `φ = W^{-1/2} v`, which makes the eigenfunctions orthonormal under the
//! same quadrature that is later used to compute scores.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FflqrError, Result};
use crate::matrix_serde;

/// Relative tolerance used when comparing grids coming from different files.
const GRID_TOL: f64 = 1e-9;

/// Eigenvalues below this fraction of the leading eigenvalue are treated as zero.
const EIGEN_REL_FLOOR: f64 = 1e-10;

/// Ordered evaluation points in a closed interval with trapezoidal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Builds a grid on arbitrary strictly increasing points with trapezoidal weights.
    pub fn trapezoid(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(FflqrError::invalid(
                "points",
                format!("a grid needs at least 2 points, got {}", points.len()),
            ));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(FflqrError::invalid("points", "grid points must be finite"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FflqrError::invalid(
                "points",
                "grid points must be strictly increasing",
            ));
        }
        let p = points.len();
        let mut weights = vec![0.0; p];
        for j in 0..p - 1 {
            let half = 0.5 * (points[j + 1] - points[j]);
            weights[j] += half;
            weights[j + 1] += half;
        }
        Ok(Grid { points, weights })
    }

    /// Builds a grid from explicit points and weights.
    pub fn with_weights(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let base = Grid::trapezoid(points)?;
        if weights.len() != base.len() {
            return Err(FflqrError::DimensionMismatch {
                context: "grid weights",
                expected: base.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(FflqrError::invalid(
                "weights",
                "quadrature weights must be finite and nonnegative",
            ));
        }
        let total: f64 = weights.iter().sum();
        let length = base.length();
        if (total - length).abs() > 1e-12 * length.max(1.0) {
            return Err(FflqrError::invalid(
                "weights",
                format!("weights sum to {total}, interval length is {length}"),
            ));
        }
        Ok(Grid {
            points: base.points,
            weights,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn length(&self) -> f64 {
        self.end() - self.start()
    }

    /// Whether two grids describe the same evaluation points.
    pub fn matches(&self, other: &Grid) -> bool {
        let scale = self.length().abs().max(1.0);
        self.len() == other.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| (a - b).abs() <= GRID_TOL * scale)
    }

    pub(crate) fn ensure_matches(&self, other: &Grid, what: &str) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(FflqrError::GridMismatch(format!(
                "{what}: expected {} points on [{}, {}], found {} points on [{}, {}]",
                self.len(),
                self.start(),
                self.end(),
                other.len(),
                other.start(),
                other.end()
            )))
        }
    }

    /// Quadrature L2 norm `sqrt(Σ w_j f_j²)`.
    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f)
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Quadrature integral `Σ w_j f_j`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }
}

/// Equally spaced grid on `[a, b]` with trapezoidal weights.
pub fn make_uniform_grid(n_points: usize, a: f64, b: f64) -> Result<Grid> {
    if n_points < 2 {
        return Err(FflqrError::invalid(
            "n_points",
            format!("need at least 2 points, got {n_points}"),
        ));
    }
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(FflqrError::invalid(
            "interval",
            format!("require finite a < b, got [{a}, {b}]"),
        ));
    }
    let h = (b - a) / (n_points - 1) as f64;
    let mut points: Vec<f64> = (0..n_points).map(|j| a + j as f64 * h).collect();
    points[n_points - 1] = b;
    let mut weights = vec![h; n_points];
    weights[0] = 0.5 * h;
    weights[n_points - 1] = 0.5 * h;
    Ok(Grid { points, weights })
}

/// Weighted inner product `Σ_j w_j f_j g_j` on a grid.
pub fn inner_product(f: &[f64], g: &[f64], grid: &Grid) -> Result<f64> {
    if f.len() != grid.len() || g.len() != grid.len() {
        return Err(FflqrError::DimensionMismatch {
            context: "inner product",
            expected: grid.len(),
            found: if f.len() != grid.len() { f.len() } else { g.len() },
        });
    }
    Ok(grid
        .weights
        .iter()
        .zip(f.iter().zip(g))
        .map(|(w, (a, b))| w * a * b)
        .sum())
}

/// `n` curves evaluated on a shared grid, one curve per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    #[serde(with = "matrix_serde")]
    values: DMatrix<f64>,
    grid: Grid,
}

impl FunctionalSample {
    pub fn new(values: DMatrix<f64>, grid: Grid) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(FflqrError::DimensionMismatch {
                context: "sample columns vs grid points",
                expected: grid.len(),
                found: values.ncols(),
            });
        }
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !values[(i, j)].is_finite() {
                    return Err(FflqrError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(FunctionalSample { values, grid })
    }

    pub fn from_rows(rows: &[Vec<f64>], grid: Grid) -> Result<Self> {
        let p = grid.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(FflqrError::Parse {
                    source_name: format!("row {i}"),
                    message: format!("expected {p} values, found {}", row.len()),
                });
            }
        }
        let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        FunctionalSample::new(values, grid)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_curves(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.values.ncols()
    }

    pub fn curve(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Rows selected by index, with repetition allowed.
    pub fn select_rows(&self, rows: &[usize]) -> FunctionalSample {
        let values = self.values.select_rows(rows.iter());
        FunctionalSample {
            values,
            grid: self.grid.clone(),
        }
    }

    /// Pointwise column means.
    pub fn mean_curve(&self) -> DVector<f64> {
        let n = self.n_curves().max(1) as f64;
        DVector::from_iterator(
            self.n_points(),
            self.values.column_iter().map(|c| c.sum() / n),
        )
    }
}

/// Removes the pointwise mean; returns the centered sample and the mean.
pub fn center(sample: &FunctionalSample) -> (FunctionalSample, DVector<f64>) {
    let mean = sample.mean_curve();
    let mut values = sample.values.clone();
    for (j, mut col) in values.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    (
        FunctionalSample {
            values,
            grid: sample.grid.clone(),
        },
        mean,
    )
}

/// FPC scores, one row per curve and one column per component.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(pub DMatrix<f64>);

impl ScoreMatrix {
    pub fn n_curves(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Mean function and leading eigenpairs of a sample covariance operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcBasis {
    #[serde(with = "matrix_serde::vector")]
    mean: DVector<f64>,
    /// `K × p`, one eigenfunction per row.
    #[serde(with = "matrix_serde")]
    eigenfunctions: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    grid: Grid,
    /// Quadrature-integrated pointwise variance of the decomposed sample.
    total_variance: f64,
    /// Set when some retained component lies beyond the numerical rank.
    rank_deficient: bool,
}

impl FpcBasis {
    pub fn new(
        mean: DVector<f64>,
        eigenfunctions: DMatrix<f64>,
        eigenvalues: Vec<f64>,
        grid: Grid,
    ) -> Result<Self> {
        if mean.len() != grid.len() || eigenfunctions.ncols() != grid.len() {
            return Err(FflqrError::DimensionMismatch {
                context: "basis vs grid",
                expected: grid.len(),
                found: if mean.len() != grid.len() {
                    mean.len()
                } else {
                    eigenfunctions.ncols()
                },
            });
        }
        if eigenvalues.len() != eigenfunctions.nrows() {
            return Err(FflqrError::DimensionMismatch {
                context: "eigenvalues vs eigenfunctions",
                expected: eigenfunctions.nrows(),
                found: eigenvalues.len(),
            });
        }
        let total_variance = eigenvalues.iter().sum();
        Ok(FpcBasis {
            mean,
            eigenfunctions,
            eigenvalues,
            grid,
            total_variance,
            rank_deficient: false,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn eigenfunctions(&self) -> &DMatrix<f64> {
        &self.eigenfunctions
    }

    pub fn eigenfunction(&self, k: usize) -> Vec<f64> {
        self.eigenfunctions.row(k).iter().copied().collect()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_components(&self) -> usize {
        self.eigenfunctions.nrows()
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// Scores of (possibly new) curves: `ξ_ik = ⟨y_i − mean, φ_k⟩`.
    pub fn project(&self, sample: &FunctionalSample) -> Result<ScoreMatrix> {
        self.grid.ensure_matches(sample.grid(), "projection onto FPC basis")?;
        let mut centered = sample.values.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
        }
        Ok(ScoreMatrix(self.weighted_scores(&centered)))
    }

    fn weighted_scores(&self, centered: &DMatrix<f64>) -> DMatrix<f64> {
        let mut weighted = self.eigenfunctions.transpose();
        for (j, mut row) in weighted.row_iter_mut().enumerate() {
            row *= self.grid.weights[j];
        }
        centered * weighted
    }

    /// Largest `|⟨φ_j, φ_k⟩ − δ_jk|` over all component pairs.
    pub fn orthonormality_residual(&self) -> f64 {
        let k = self.n_components();
        let mut worst: f64 = 0.0;
        for a in 0..k {
            for b in 0..k {
                let ip: f64 = (0..self.grid.len())
                    .map(|j| {
                        self.grid.weights[j]
                            * self.eigenfunctions[(a, j)]
                            * self.eigenfunctions[(b, j)]
                    })
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).abs());
            }
        }
        worst
    }

    /// Keeps only the first `k` components.
    pub fn truncated(&self, k: usize) -> Result<FpcBasis> {
        if k == 0 || k > self.n_components() {
            return Err(FflqrError::TruncationTooLarge {
                context: "basis truncation",
                requested: k,
                max: self.n_components(),
            });
        }
        let lead = self.eigenvalues.first().copied().unwrap_or(0.0);
        let eigenvalues = self.eigenvalues[..k].to_vec();
        let rank_deficient = eigenvalues.iter().any(|&l| l <= EIGEN_REL_FLOOR * lead);
        Ok(FpcBasis {
            mean: self.mean.clone(),
            eigenfunctions: self.eigenfunctions.rows(0, k).into_owned(),
            eigenvalues,
            grid: self.grid.clone(),
            total_variance: self.total_variance,
            rank_deficient,
        })
    }
}

/// Functional principal component decomposition with `k` retained components.
///
/// Centers internally, forms the `1/n` covariance on the grid and solves the
/// quadrature-weighted eigenproblem. Each eigenfunction's largest-magnitude
/// entry is made positive. A degenerate sample yields zero eigenvalues and a
/// basis flagged as rank deficient rather than an error.
pub fn fpc_decompose(sample: &FunctionalSample, k: usize) -> Result<(FpcBasis, ScoreMatrix)> {
    let n = sample.n_curves();
    let p = sample.n_points();
    if n < 2 {
        return Err(FflqrError::invalid(
            "sample",
            format!("FPC decomposition needs at least 2 curves, got {n}"),
        ));
    }
    let max_k = (n - 1).min(p);
    if k == 0 || k > max_k {
        return Err(FflqrError::TruncationTooLarge {
            context: "FPC decomposition",
            requested: k,
            max: max_k,
        });
    }
    let weights = sample.grid.weights();
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(FflqrError::invalid(
            "grid",
            "FPC decomposition requires strictly positive quadrature weights",
        ));
    }

    let (centered, mean) = center(sample);
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();

    // Work with Yc W^{1/2}; its Gram matrix divided by n is W^{1/2} C W^{1/2}.
    let mut scaled = centered.values.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= sqrt_w[j];
    }
    let sym = (scaled.transpose() * &scaled) / n as f64;
    let total_variance = sym.trace();
    let eig = SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let lead = eig.eigenvalues[order[0]].max(0.0);

    let mut eigenfunctions = DMatrix::zeros(k, p);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut rank_deficient = false;
    for (row, &idx) in order.iter().take(k).enumerate() {
        let mut lambda = eig.eigenvalues[idx];
        if lambda <= EIGEN_REL_FLOOR * lead || lambda < 0.0 {
            lambda = 0.0;
            rank_deficient = true;
        }
        eigenvalues.push(lambda);
        let v = eig.eigenvectors.column(idx);
        let mut phi: Vec<f64> = (0..p).map(|j| v[j] / sqrt_w[j]).collect();
        let (imax, _) = phi
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, x)| {
                if x.abs() > bv {
                    (i, x.abs())
                } else {
                    (bi, bv)
                }
            });
        if phi[imax] < 0.0 {
            phi.iter_mut().for_each(|x| *x = -*x);
        }
        for (j, x) in phi.into_iter().enumerate() {
            eigenfunctions[(row, j)] = x;
        }
    }

    let basis = FpcBasis {
        mean,
        eigenfunctions,
        eigenvalues,
        grid: sample.grid.clone(),
        total_variance,
        rank_deficient,
    };
    let scores = ScoreMatrix(basis.weighted_scores(&centered.values));
    Ok((basis, scores))
}

/// Rebuilds curves as `mean + scores × eigenfunctions`.
pub fn reconstruct(basis: &FpcBasis, scores: &ScoreMatrix) -> Result<FunctionalSample> {
    if scores.n_components() != basis.n_components() {
        return Err(FflqrError::DimensionMismatch {
            context: "score columns vs basis components",
            expected: basis.n_components(),
            found: scores.n_components(),
        });
    }
    let mut values = &scores.0 * &basis.eigenfunctions;
    for (j, mut col) in values.column_iter_mut().enumerate() {
        col.add_scalar_mut(basis.mean[j]);
    }
    Ok(FunctionalSample {
        values,
        grid: basis.grid.clone(),
    })
}
