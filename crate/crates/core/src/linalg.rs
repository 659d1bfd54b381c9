//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{FflqrError, Result};

/// Relative tolerance below which a column is considered dependent on earlier ones.
pub(crate) const DEPENDENCE_TOL: f64 = 1e-9;

/// Indices of a maximal set of linearly independent columns, scanning left to right.
///
/// Uses modified Gram-Schmidt; a column is kept when its component orthogonal
/// to the kept columns exceeds `DEPENDENCE_TOL` times the largest column norm.
pub(crate) fn independent_columns(m: &DMatrix<f64>) -> Vec<usize> {
    let scale = m
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return Vec::new();
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (j, col) in m.column_iter().enumerate() {
        let mut v = col.into_owned();
        // two passes of re-orthogonalization keep this stable for near-collinear columns
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > DEPENDENCE_TOL * scale {
            basis.push(v / norm);
            kept.push(j);
        }
    }
    kept
}

/// Ordinary least squares for each response column with a shared design.
///
/// Dependent design columns are dropped and receive zero coefficients; the
/// second return value reports whether that happened.
pub(crate) fn least_squares(
    design: &DMatrix<f64>,
    responses: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, bool)> {
    if design.nrows() != responses.nrows() {
        return Err(FflqrError::DimensionMismatch {
            context: "least squares rows",
            expected: design.nrows(),
            found: responses.nrows(),
        });
    }
    let keep = independent_columns(design);
    let q = design.ncols();
    let mut coef = DMatrix::zeros(q, responses.ncols());
    if keep.is_empty() {
        return Ok((coef, q > 0));
    }
    let reduced = design.select_columns(keep.iter());
    let qr = reduced.clone().qr();
    let qt_y = qr.q().transpose() * responses;
    let r = qr.r();
    let sol = r
        .solve_upper_triangular(&qt_y)
        .ok_or_else(|| FflqrError::Singular("least-squares triangular factor".into()))?;
    for (row, &j) in keep.iter().enumerate() {
        for k in 0..responses.ncols() {
            coef[(j, k)] = sol[(row, k)];
        }
    }
    Ok((coef, keep.len() < q))
}
