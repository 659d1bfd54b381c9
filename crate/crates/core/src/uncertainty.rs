//! Prediction bands and the prediction metrics (MSPE, coverage deviance,
//! interval score).

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FflqrError, Result};
use crate::fdata::{FunctionalSample, Grid};
use crate::matrix_serde;
use crate::model::{fit_fflqr, ModelSpec};
use crate::rng::rng_for;

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(FflqrError::invalid("alpha", format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Pointwise lower/upper curves for each test curve at nominal level `1 − α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBand {
    #[serde(with = "matrix_serde")]
    lower: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    upper: DMatrix<f64>,
    alpha: f64,
    grid: Grid,
    /// Grid points where the raw bounds crossed and were swapped.
    crossings: usize,
}

impl PredictionBand {
    pub fn new(lower: DMatrix<f64>, upper: DMatrix<f64>, alpha: f64, grid: Grid) -> Result<Self> {
        validate_alpha(alpha)?;
        if lower.shape() != upper.shape() {
            return Err(FflqrError::DimensionMismatch {
                context: "band lower vs upper",
                expected: lower.ncols(),
                found: upper.ncols(),
            });
        }
        if lower.ncols() != grid.len() {
            return Err(FflqrError::DimensionMismatch {
                context: "band vs grid",
                expected: grid.len(),
                found: lower.ncols(),
            });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(FflqrError::invalid("band", "lower bound exceeds upper bound"));
        }
        Ok(PredictionBand {
            lower,
            upper,
            alpha,
            grid,
            crossings: 0,
        })
    }

    /// Builds a band from possibly crossed bounds, swapping crossed points.
    pub fn from_unordered(
        mut lower: DMatrix<f64>,
        mut upper: DMatrix<f64>,
        alpha: f64,
        grid: Grid,
    ) -> Result<Self> {
        if lower.shape() != upper.shape() {
            return Err(FflqrError::DimensionMismatch {
                context: "band lower vs upper",
                expected: lower.ncols(),
                found: upper.ncols(),
            });
        }
        let mut crossings = 0;
        for (l, u) in lower.iter_mut().zip(upper.iter_mut()) {
            if *l > *u {
                std::mem::swap(l, u);
                crossings += 1;
            }
        }
        let mut band = PredictionBand::new(lower, upper, alpha, grid)?;
        band.crossings = crossings;
        Ok(band)
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DMatrix<f64> {
        &self.upper
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn crossings(&self) -> usize {
        self.crossings
    }

    pub fn crossing_rate(&self) -> f64 {
        self.crossings as f64 / self.lower.len().max(1) as f64
    }

    pub fn lower_sample(&self) -> FunctionalSample {
        FunctionalSample::new(self.lower.clone(), self.grid.clone()).expect("band values are finite")
    }

    pub fn upper_sample(&self) -> FunctionalSample {
        FunctionalSample::new(self.upper.clone(), self.grid.clone()).expect("band values are finite")
    }

    /// Whether `other` lies inside this band at every point.
    pub fn contains(&self, other: &PredictionBand) -> bool {
        self.lower.shape() == other.lower.shape()
            && self.lower.iter().zip(other.lower.iter()).all(|(a, b)| a <= b)
            && self.upper.iter().zip(other.upper.iter()).all(|(a, b)| a >= b)
    }

    fn check_truth(&self, y_true: &FunctionalSample) -> Result<()> {
        self.grid.ensure_matches(y_true.grid(), "band vs observed curves")?;
        if y_true.n_curves() != self.lower.nrows() {
            return Err(FflqrError::DimensionMismatch {
                context: "band curves vs observed curves",
                expected: self.lower.nrows(),
                found: y_true.n_curves(),
            });
        }
        Ok(())
    }
}

/// Type-7 (linear interpolation of order statistics) quantile of sorted data.
pub fn quantile_type7(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Mean over curves of the squared quadrature L2 distance.
pub fn mspe(y_true: &FunctionalSample, y_pred: &FunctionalSample) -> Result<f64> {
    y_true.grid().ensure_matches(y_pred.grid(), "predicted vs observed curves")?;
    if y_true.n_curves() != y_pred.n_curves() {
        return Err(FflqrError::DimensionMismatch {
            context: "predicted vs observed curves",
            expected: y_true.n_curves(),
            found: y_pred.n_curves(),
        });
    }
    let n = y_true.n_curves();
    if n == 0 {
        return Err(FflqrError::invalid("Y_true", "no curves to evaluate"));
    }
    let w = y_true.grid().weights();
    let diff = y_true.values() - y_pred.values();
    let total: f64 = diff
        .row_iter()
        .map(|r| r.iter().zip(w).map(|(d, wj)| wj * d * d).sum::<f64>())
        .sum();
    Ok(total / n as f64)
}

/// Absolute gap between nominal coverage `1 − α` and the pooled pointwise coverage.
pub fn cpd(band: &PredictionBand, y_true: &FunctionalSample) -> Result<f64> {
    Ok(((1.0 - band.alpha) - coverage(band, y_true)?).abs())
}

/// Fraction of (curve, grid point) pairs inside the band.
pub fn coverage(band: &PredictionBand, y_true: &FunctionalSample) -> Result<f64> {
    band.check_truth(y_true)?;
    let y = y_true.values();
    let inside = y
        .iter()
        .zip(band.lower.iter().zip(band.upper.iter()))
        .filter(|(v, (l, u))| *l <= *v && *v <= *u)
        .count();
    Ok(inside as f64 / y.len().max(1) as f64)
}

/// Mean over curves of the L2 norm of width plus `2/α`-weighted exceedances.
pub fn interval_score(band: &PredictionBand, y_true: &FunctionalSample) -> Result<f64> {
    band.check_truth(y_true)?;
    let y = y_true.values();
    let scale = 2.0 / band.alpha;
    let n = y.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let pointwise: Vec<f64> = (0..y.ncols())
            .map(|j| {
                let (l, u, v) = (band.lower[(i, j)], band.upper[(i, j)], y[(i, j)]);
                let mut s = u - l;
                if v < l {
                    s += scale * (l - v);
                }
                if v > u {
                    s += scale * (v - u);
                }
                s
            })
            .collect();
        total += band.grid.l2_norm(&pointwise);
    }
    Ok(total / n.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 100,
            seed: 1,
        }
    }
}

/// Test-set predictions from case-resampled refits.
#[derive(Debug, Clone)]
pub struct BootstrapReplicates {
    predictions: Vec<DMatrix<f64>>,
    grid: Grid,
    failed: usize,
    requested: usize,
}

impl BootstrapReplicates {
    pub fn n_successful(&self) -> usize {
        self.predictions.len()
    }

    pub fn n_failed(&self) -> usize {
        self.failed
    }

    pub fn n_requested(&self) -> usize {
        self.requested
    }

    pub fn predictions(&self) -> &[DMatrix<f64>] {
        &self.predictions
    }

    /// Pointwise `α/2` and `1 − α/2` type-7 quantiles across replicates.
    pub fn band(&self, alpha: f64) -> Result<PredictionBand> {
        validate_alpha(alpha)?;
        let first = &self.predictions[0];
        let (n, p) = first.shape();
        let mut lower = DMatrix::zeros(n, p);
        let mut upper = DMatrix::zeros(n, p);
        let mut buf = vec![0.0; self.predictions.len()];
        for j in 0..p {
            for i in 0..n {
                for (slot, pred) in buf.iter_mut().zip(&self.predictions) {
                    *slot = pred[(i, j)];
                }
                buf.sort_by(f64::total_cmp);
                lower[(i, j)] = quantile_type7(&buf, alpha / 2.0);
                upper[(i, j)] = quantile_type7(&buf, 1.0 - alpha / 2.0);
            }
        }
        PredictionBand::new(lower, upper, alpha, self.grid.clone())
    }
}

/// Refits `spec` on `R` case-resampled training sets and predicts `xs_test`.
///
/// Replicate `r` draws its resample from a generator seeded by
/// `(seed, r)`, so results are identical for any thread count. Failed refits
/// are skipped; fewer than `R/2` successes is an error.
pub fn bootstrap_replicates(
    y_train: &FunctionalSample,
    xs_train: &[FunctionalSample],
    xs_test: &[FunctionalSample],
    spec: &ModelSpec,
    config: &BootstrapConfig,
) -> Result<BootstrapReplicates> {
    let r_total = config.replicates;
    if r_total < 2 {
        return Err(FflqrError::invalid("R", format!("need at least 2 replicates, got {r_total}")));
    }
    let n = y_train.n_curves();
    let results: Vec<Result<DMatrix<f64>>> = (0..r_total)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(config.seed, r as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let y = y_train.select_rows(&rows);
            let xs: Vec<FunctionalSample> = xs_train.iter().map(|x| x.select_rows(&rows)).collect();
            let model = spec.fit(&y, &xs)?;
            Ok(model.predict(xs_test)?.into_values())
        })
        .collect();

    let mut predictions = Vec::with_capacity(r_total);
    let mut failed = 0;
    let mut last_error = None;
    for res in results {
        match res {
            Ok(p) => predictions.push(p),
            Err(e) => {
                failed += 1;
                last_error = Some(e.to_string());
            }
        }
    }
    if predictions.len() * 2 < r_total || predictions.is_empty() {
        return Err(FflqrError::TooManyFailures {
            failed,
            total: r_total,
            message: last_error.unwrap_or_default(),
        });
    }
    Ok(BootstrapReplicates {
        predictions,
        grid: y_train.grid().clone(),
        failed,
        requested: r_total,
    })
}

/// Case-sampling bootstrap prediction band at level `1 − α`.
pub fn bootstrap_band(
    y_train: &FunctionalSample,
    xs_train: &[FunctionalSample],
    xs_test: &[FunctionalSample],
    spec: &ModelSpec,
    alpha: f64,
    config: &BootstrapConfig,
) -> Result<PredictionBand> {
    validate_alpha(alpha)?;
    bootstrap_replicates(y_train, xs_train, xs_test, spec, config)?.band(alpha)
}

/// Band from two quantile fits at `τ = α/2` and `τ = 1 − α/2`; crossed points are swapped.
pub fn direct_band(
    y_train: &FunctionalSample,
    xs_train: &[FunctionalSample],
    xs_test: &[FunctionalSample],
    alpha: f64,
    k_y: usize,
    k_x: usize,
) -> Result<PredictionBand> {
    validate_alpha(alpha)?;
    let lo = fit_fflqr(y_train, xs_train, alpha / 2.0, k_y, k_x)?.predict(xs_test)?;
    let hi = fit_fflqr(y_train, xs_train, 1.0 - alpha / 2.0, k_y, k_x)?.predict(xs_test)?;
    PredictionBand::from_unordered(lo.into_values(), hi.into_values(), alpha, y_train.grid().clone())
}

/// Metrics of one method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub model: String,
    pub scenario: String,
    pub replicate: usize,
    pub seed: u64,
    pub mspe: f64,
    pub cpd: Option<f64>,
    pub score: Option<f64>,
    /// Zero-based predictors used by the fitted model.
    pub predictors: Vec<usize>,
    pub k_y: usize,
    pub k_x: usize,
}
