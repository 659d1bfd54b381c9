//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use fflqr_core::{make_uniform_grid, FunctionalSample, Grid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

pub fn qr_objective(x: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>, tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..x.nrows() {
        let mut fit = 0.0;
        for j in 0..x.ncols() {
            fit += x[(i, j)] * b[j];
        }
        total += check_loss(y[i] - fit, tau);
    }
    total
}

/// Minimum check-loss objective over all basic solutions (fits interpolating
/// `q` observations). For a full-column-rank design some optimum is basic, so
/// this is the exact LP optimum. Supports `q ≤ 2`.
pub fn vertex_oracle(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> f64 {
    let (n, q) = x.shape();
    assert!(q == 1 || q == 2, "vertex oracle handles q <= 2");
    let mut best = f64::INFINITY;
    if q == 1 {
        for i in 0..n {
            if x[(i, 0)].abs() > 1e-12 {
                let b = DVector::from_element(1, y[i] / x[(i, 0)]);
                best = best.min(qr_objective(x, y, &b, tau));
            }
        }
        return best;
    }
    for i in 0..n {
        for k in i + 1..n {
            let (a, b, c, d) = (x[(i, 0)], x[(i, 1)], x[(k, 0)], x[(k, 1)]);
            let det = a * d - b * c;
            if det.abs() < 1e-10 {
                continue;
            }
            let b0 = (y[i] * d - b * y[k]) / det;
            let b1 = (a * y[k] - c * y[i]) / det;
            let coef = DVector::from_vec(vec![b0, b1]);
            best = best.min(qr_objective(x, y, &coef, tau));
        }
    }
    best
}

/// Quadrature-weighted mean squared distance by explicit loops.
pub fn naive_mspe(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..a.nrows() {
        let mut s = 0.0;
        for j in 0..a.ncols() {
            let d = a[(i, j)] - b[(i, j)];
            s += w[j] * d * d;
        }
        total += s;
    }
    total / a.nrows() as f64
}

/// Trapezoid weights computed from scratch.
pub fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let p = points.len();
    let mut w = vec![0.0; p];
    for j in 0..p - 1 {
        let h = points[j + 1] - points[j];
        w[j] += h / 2.0;
        w[j + 1] += h / 2.0;
    }
    w
}

/// Random smooth curves: a few random harmonics plus optional white noise.
pub fn random_sample<R: Rng>(rng: &mut R, n: usize, p: usize, harmonics: usize, noise: f64) -> FunctionalSample {
    let grid = make_uniform_grid(p, 0.0, 1.0).unwrap();
    let pts = grid.points().to_vec();
    let values = DMatrix::from_fn(n, p, |_, _| 0.0);
    let mut values = values;
    for i in 0..n {
        let level: f64 = rng.random_range(-1.0..1.0);
        let coefs: Vec<(f64, f64)> = (0..harmonics)
            .map(|h| {
                let s = 1.0 / (h + 1) as f64;
                (rng.random_range(-s..s), rng.random_range(-s..s))
            })
            .collect();
        for (j, &t) in pts.iter().enumerate() {
            let mut v = level;
            for (h, (a, b)) in coefs.iter().enumerate() {
                let f = 2.0 * std::f64::consts::PI * (h + 1) as f64 * t;
                v += a * f.sin() + b * f.cos();
            }
            if noise > 0.0 {
                v += noise * rng.random_range(-1.0..1.0);
            }
            values[(i, j)] = v;
        }
    }
    FunctionalSample::new(values, grid).unwrap()
}

/// Sample of exact rank `k` around a nonzero mean.
pub fn rank_k_sample<R: Rng>(rng: &mut R, n: usize, p: usize, k: usize) -> FunctionalSample {
    let grid = make_uniform_grid(p, 0.0, 1.0).unwrap();
    let pts = grid.points().to_vec();
    let mut values = DMatrix::from_fn(n, p, |_, j| 1.0 + pts[j]);
    for h in 0..k {
        for i in 0..n {
            let s: f64 = rng.random_range(-1.0..1.0) / (h + 1) as f64;
            for (j, &t) in pts.iter().enumerate() {
                values[(i, j)] += s * (std::f64::consts::PI * (h + 1) as f64 * t).cos();
            }
        }
    }
    FunctionalSample::new(values, grid).unwrap()
}

/// Pooled quadrature-integrated pointwise variance (1/n convention).
pub fn integrated_variance(sample: &FunctionalSample) -> f64 {
    let y = sample.values();
    let (n, p) = y.shape();
    let w = trapezoid_weights(sample.grid().points());
    let mut total = 0.0;
    for j in 0..p {
        let mean: f64 = (0..n).map(|i| y[(i, j)]).sum::<f64>() / n as f64;
        let var: f64 = (0..n).map(|i| (y[(i, j)] - mean).powi(2)).sum::<f64>() / n as f64;
        total += w[j] * var;
    }
    total
}

/// Leading eigenvalue of the weighted covariance operator by power iteration.
pub fn leading_eigenvalue(sample: &FunctionalSample) -> f64 {
    let y = sample.values();
    let (n, p) = y.shape();
    let w = trapezoid_weights(sample.grid().points());
    let means: Vec<f64> = (0..p).map(|j| (0..n).map(|i| y[(i, j)]).sum::<f64>() / n as f64).collect();
    let apply = |v: &[f64]| -> Vec<f64> {
        // (C W v)(s) = (1/n) Σ_i yc_i(s) Σ_j w_j yc_i(t_j) v_j
        let mut out = vec![0.0; p];
        for i in 0..n {
            let proj: f64 = (0..p).map(|j| w[j] * (y[(i, j)] - means[j]) * v[j]).sum();
            for (s, o) in out.iter_mut().enumerate() {
                *o += (y[(i, s)] - means[s]) * proj / n as f64;
            }
        }
        out
    };
    let mut v = vec![1.0; p];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let u = apply(&v);
        let norm = (0..p).map(|j| w[j] * u[j] * u[j]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / (0..p).map(|j| w[j] * v[j] * v[j]).sum::<f64>().sqrt();
        v = u.iter().map(|x| x / norm).collect();
    }
    lambda
}

pub fn unit_grid(p: usize) -> Grid {
    make_uniform_grid(p, 0.0, 1.0).unwrap()
}

/// Sample median (mean of the middle pair for even sizes).
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
