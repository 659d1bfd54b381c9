//! Synthetic function-on-function data and the Monte Carlo comparison of
//! the quantile model against the least-squares baselines.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FflqrError, Result};
use crate::fdata::{make_uniform_grid, FunctionalSample, Grid};
use crate::model::{CoefficientSurface, Family, FittedModel, ModelSpec};
use crate::rng::{derive_seed, rng_for};
use crate::selection::{forward_select, select_truncation, ForwardOptions};
use crate::uncertainty::{bootstrap_band, cpd, direct_band, interval_score, mspe, BootstrapConfig, MetricsReport};

/// Number of closed-form coefficient surfaces available.
pub const N_TRUE_SURFACES: usize = 5;

/// Maximum fraction of replicates allowed to fail in a Monte Carlo run.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorDist {
    Normal,
    Chisq1,
}

impl ErrorDist {
    pub fn label(&self) -> &'static str {
        match self {
            ErrorDist::Normal => "normal",
            ErrorDist::Chisq1 => "chisq1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_grid: usize,
    /// Number of candidate predictors.
    pub m: usize,
    /// Number of shared Gaussian-process components between neighbouring predictors.
    pub lag: usize,
    pub sigma: f64,
    pub error_dist: ErrorDist,
    pub ou_gamma: f64,
    pub ou_theta: f64,
    /// Fixed starting value of every error path; drawn as `σ·D` when absent.
    pub ou_initial: Option<f64>,
    pub contamination_rate: f64,
    pub outlier_mean: f64,
    pub outlier_var: f64,
    /// Draw a fresh outlier shift at every grid point instead of once per curve.
    pub outlier_per_point: bool,
    pub tau: f64,
    pub n_replicates: usize,
    pub master_seed: u64,
    /// One-based indices of the predictors that enter the response.
    pub true_predictors: Vec<usize>,
    pub k_y_max: usize,
    pub k_x_max: usize,
    pub ratio_threshold: f64,
    pub fixed_k: usize,
    pub intervals: bool,
    pub alpha: f64,
    pub bootstrap_replicates: usize,
    pub n_basis: usize,
    pub bspline_order: usize,
    /// Inverse squared length scale of the predictor kernel `exp(−c (s − s')²)`.
    pub gp_scale: f64,
    pub scenario: Option<String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_train: 200,
            n_test: 300,
            n_grid: 100,
            m: 5,
            lag: 4,
            sigma: 1.0,
            error_dist: ErrorDist::Normal,
            ou_gamma: 0.0,
            ou_theta: 1.0,
            ou_initial: None,
            contamination_rate: 0.0,
            outlier_mean: 10.0,
            outlier_var: 0.04,
            outlier_per_point: false,
            tau: 0.5,
            n_replicates: 20,
            master_seed: 1,
            true_predictors: vec![2, 4, 5],
            k_y_max: 5,
            k_x_max: 5,
            ratio_threshold: 0.95,
            fixed_k: 2,
            intervals: false,
            alpha: 0.05,
            bootstrap_replicates: 100,
            n_basis: crate::model::bspline::DEFAULT_N_BASIS,
            bspline_order: crate::model::bspline::DEFAULT_ORDER,
            gp_scale: 100.0,
            scenario: None,
        }
    }
}

fn require(ok: bool, field: &'static str, message: String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(FflqrError::invalid(field, message))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.n_train >= 2, "n_train", format!("need at least 2 training curves, got {}", self.n_train))?;
        require(self.n_test >= 1, "n_test", format!("need at least 1 test curve, got {}", self.n_test))?;
        require(self.n_grid >= 2, "n_grid", format!("need at least 2 grid points, got {}", self.n_grid))?;
        require(self.m >= 1, "m", "need at least one predictor".into())?;
        require(
            self.sigma.is_finite() && self.sigma >= 0.0,
            "sigma",
            format!("must be finite and nonnegative, got {}", self.sigma),
        )?;
        require(self.ou_gamma.is_finite(), "ou_gamma", format!("must be finite, got {}", self.ou_gamma))?;
        require(
            self.ou_theta.is_finite() && self.ou_theta > 0.0,
            "ou_theta",
            format!("must be positive, got {}", self.ou_theta),
        )?;
        if let Some(e0) = self.ou_initial {
            require(e0.is_finite(), "ou_initial", format!("must be finite, got {e0}"))?;
        }
        require(
            (0.0..1.0).contains(&self.contamination_rate),
            "contamination_rate",
            format!("must lie in [0, 1), got {}", self.contamination_rate),
        )?;
        require(self.outlier_mean.is_finite(), "outlier_mean", format!("must be finite, got {}", self.outlier_mean))?;
        require(
            self.outlier_var.is_finite() && self.outlier_var >= 0.0,
            "outlier_var",
            format!("must be nonnegative, got {}", self.outlier_var),
        )?;
        require(self.tau > 0.0 && self.tau < 1.0, "tau", format!("must lie in (0, 1), got {}", self.tau))?;
        require(self.n_replicates >= 1, "n_replicates", "need at least one replicate".into())?;
        for &d in &self.true_predictors {
            require(
                d >= 1 && d <= self.m && d <= N_TRUE_SURFACES,
                "true_predictors",
                format!("index {d} outside 1..={}", self.m.min(N_TRUE_SURFACES)),
            )?;
        }
        let mut sorted = self.true_predictors.clone();
        sorted.sort_unstable();
        sorted.dedup();
        require(
            sorted.len() == self.true_predictors.len(),
            "true_predictors",
            "indices must be distinct".into(),
        )?;
        require(self.k_y_max >= 1, "k_y_max", "must be at least 1".into())?;
        require(self.k_x_max >= 1, "k_x_max", "must be at least 1".into())?;
        require(
            self.ratio_threshold > 0.0 && self.ratio_threshold <= 1.0,
            "ratio_threshold",
            format!("must lie in (0, 1], got {}", self.ratio_threshold),
        )?;
        require(self.fixed_k >= 1, "fixed_k", "must be at least 1".into())?;
        require(self.alpha > 0.0 && self.alpha < 1.0, "alpha", format!("must lie in (0, 1), got {}", self.alpha))?;
        require(
            self.bootstrap_replicates >= 2,
            "bootstrap_replicates",
            format!("need at least 2, got {}", self.bootstrap_replicates),
        )?;
        require(self.bspline_order >= 1, "bspline_order", "must be at least 1".into())?;
        require(
            self.n_basis >= self.bspline_order,
            "n_basis",
            format!("must be at least the spline order {}", self.bspline_order),
        )?;
        require(
            self.gp_scale.is_finite() && self.gp_scale >= 0.0,
            "gp_scale",
            format!("must be nonnegative, got {}", self.gp_scale),
        )?;
        Ok(())
    }

    /// Zero-based indices of the true predictors.
    pub fn true_set(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.true_predictors.iter().map(|&m| m - 1).collect();
        d.sort_unstable();
        d
    }

    pub fn scenario_label(&self) -> String {
        self.scenario.clone().unwrap_or_else(|| {
            format!(
                "{}-sigma{}-contam{}",
                self.error_dist.label(),
                self.sigma,
                self.contamination_rate
            )
        })
    }

    pub fn grid(&self) -> Result<Grid> {
        make_uniform_grid(self.n_grid, 0.0, 1.0)
    }
}

/// Squared-exponential kernel `exp(−scale (s − s')²)`.
pub fn squared_exponential(scale: f64) -> impl Fn(f64, f64) -> f64 {
    move |s, u| (-scale * (s - u) * (s - u)).exp()
}

const GP_JITTER: f64 = 1e-10;
const GP_JITTER_ATTEMPTS: usize = 3;

/// Draws `n` mean-zero Gaussian-process paths on `grid`.
pub fn sample_gp<K, R>(kernel: K, grid: &Grid, n: usize, rng: &mut R) -> Result<FunctionalSample>
where
    K: Fn(f64, f64) -> f64,
    R: Rng + ?Sized,
{
    let pts = grid.points();
    let p = pts.len();
    let gram = DMatrix::from_fn(p, p, |i, j| kernel(pts[i], pts[j]));
    if gram.iter().any(|v| !v.is_finite()) {
        return Err(FflqrError::invalid("kernel", "kernel produced non-finite values"));
    }
    if gram.iter().all(|&v| v == 0.0) {
        return FunctionalSample::new(DMatrix::zeros(n, p), grid.clone());
    }
    let mut jitter = GP_JITTER;
    let mut factor = None;
    for _ in 0..GP_JITTER_ATTEMPTS {
        let mut k = gram.clone();
        for i in 0..p {
            k[(i, i)] += jitter;
        }
        if let Some(c) = k.cholesky() {
            factor = Some(c.l());
            break;
        }
        jitter *= 10.0;
    }
    let l = factor.ok_or_else(|| {
        FflqrError::Singular(format!("kernel Gram matrix not factorizable with jitter up to {:e}", jitter / 10.0))
    })?;
    let z = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let paths = (l * z).transpose();
    FunctionalSample::new(paths, grid.clone())
}

/// Correlated predictors `X_m = 10 + Σ_{j=0}^{ℓ} V_{m+j} / √(ℓ + 1)`.
pub fn gen_predictors<R: Rng + ?Sized>(
    config: &SimConfig,
    grid: &Grid,
    n: usize,
    rng: &mut R,
) -> Result<Vec<FunctionalSample>> {
    let kernel = squared_exponential(config.gp_scale);
    let fields = (0..config.m + config.lag)
        .map(|_| sample_gp(&kernel, grid, n, rng))
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / ((config.lag + 1) as f64).sqrt();
    (0..config.m)
        .map(|m| {
            let mut x = DMatrix::from_element(n, grid.len(), 10.0);
            for v in &fields[m..=m + config.lag] {
                x += v.values() * scale;
            }
            FunctionalSample::new(x, grid.clone())
        })
        .collect()
}

/// Value of the `m`-th closed-form coefficient surface (one-based `m`).
pub fn true_beta_value(m: usize, s: f64, t: f64) -> Result<f64> {
    let sq = |v: f64| v * v;
    Ok(match m {
        1 => sq(1.0 - s) * sq(t - 0.5),
        2 => (-3.0 * sq(s - 1.0) - 5.0 * sq(t - 0.5)).exp(),
        3 => {
            (-5.0 * sq(s - 0.5) - 5.0 * sq(t - 0.5)).exp()
                + 8.0 * (-5.0 * sq(s - 1.5) - 5.0 * sq(t - 0.5)).exp()
        }
        4 => (1.5 * PI * s).sin() * (PI * t).sin(),
        5 => (s * t).sqrt(),
        _ => {
            return Err(FflqrError::invalid(
                "m",
                format!("coefficient surface index must be in 1..={N_TRUE_SURFACES}, got {m}"),
            ))
        }
    })
}

/// The `m`-th closed-form coefficient surface on `s_grid × t_grid`.
pub fn true_beta(m: usize, s_grid: &Grid, t_grid: &Grid) -> Result<CoefficientSurface> {
    true_beta_value(m, 0.0, 0.0)?;
    let (s, t) = (s_grid.points(), t_grid.points());
    let values = DMatrix::from_fn(s.len(), t.len(), |i, j| {
        true_beta_value(m, s[i], t[j]).expect("index checked")
    });
    Ok(CoefficientSurface {
        values,
        s_grid: s_grid.clone(),
        t_grid: t_grid.clone(),
        predictor_index: m - 1,
        tau: None,
    })
}

fn standardized_draw<R: Rng + ?Sized>(dist: ErrorDist, rng: &mut R) -> f64 {
    match dist {
        ErrorDist::Normal => rng.sample(StandardNormal),
        ErrorDist::Chisq1 => {
            let c: f64 = ChiSquared::new(1.0).expect("valid degrees of freedom").sample(rng);
            (c - 1.0) / std::f64::consts::SQRT_2
        }
    }
}

fn initial_draw<R: Rng + ?Sized>(dist: ErrorDist, rng: &mut R) -> f64 {
    match dist {
        ErrorDist::Normal => rng.sample(StandardNormal),
        ErrorDist::Chisq1 => ChiSquared::new(1.0).expect("valid degrees of freedom").sample(rng),
    }
}

/// Ornstein-Uhlenbeck error paths by exact discretization on `grid`.
pub fn gen_ou_errors<R: Rng + ?Sized>(
    config: &SimConfig,
    grid: &Grid,
    n: usize,
    rng: &mut R,
) -> Result<FunctionalSample> {
    if !(config.ou_theta > 0.0) {
        return Err(FflqrError::invalid("ou_theta", format!("must be positive, got {}", config.ou_theta)));
    }
    let (gamma, theta, sigma) = (config.ou_gamma, config.ou_theta, config.sigma);
    let pts = grid.points();
    let steps: Vec<(f64, f64)> = pts
        .windows(2)
        .map(|w| {
            let decay = (-theta * (w[1] - w[0])).exp();
            let sd = sigma * ((1.0 - decay * decay) / (2.0 * theta)).sqrt();
            (decay, sd)
        })
        .collect();
    let mut values = DMatrix::zeros(n, pts.len());
    for i in 0..n {
        let start = match config.ou_initial {
            Some(e0) => e0,
            None => sigma * initial_draw(config.error_dist, rng),
        };
        let mut e = start;
        values[(i, 0)] = e;
        for (j, &(decay, sd)) in steps.iter().enumerate() {
            let z = standardized_draw(config.error_dist, rng);
            e = gamma + (e - gamma) * decay + sd * z;
            values[(i, j + 1)] = e;
        }
    }
    FunctionalSample::new(values, grid.clone())
}

/// `Y_i(t) = Σ_{m∈D} ∫ X_im(s) β_m(s, t) ds + ε_i(t)` by quadrature on the
/// predictor grid. `surfaces[k]` pairs with the zero-based predictor index `D[k]`.
pub fn gen_response(
    xs: &[FunctionalSample],
    errors: &FunctionalSample,
    set: &[usize],
    surfaces: &[CoefficientSurface],
) -> Result<FunctionalSample> {
    if set.len() != surfaces.len() {
        return Err(FflqrError::DimensionMismatch {
            context: "index set vs coefficient surfaces",
            expected: set.len(),
            found: surfaces.len(),
        });
    }
    let mut y = errors.values().clone();
    for (&m, beta) in set.iter().zip(surfaces) {
        let x = xs.get(m).ok_or_else(|| {
            FflqrError::invalid("D", format!("predictor index {m} out of range for {} predictors", xs.len()))
        })?;
        if x.n_curves() != errors.n_curves() {
            return Err(FflqrError::DimensionMismatch {
                context: "predictor curves vs error curves",
                expected: errors.n_curves(),
                found: x.n_curves(),
            });
        }
        x.grid().ensure_matches(&beta.s_grid, "predictor vs surface s-grid")?;
        errors.grid().ensure_matches(&beta.t_grid, "errors vs surface t-grid")?;
        let w = DVector::from_column_slice(x.grid().weights());
        let weighted = DMatrix::from_fn(x.n_curves(), x.n_points(), |i, j| x.values()[(i, j)] * w[j]);
        y += weighted * &beta.values;
    }
    FunctionalSample::new(y, errors.grid().clone())
}

/// Shifts `⌊n·rate⌋` randomly chosen curves by `|N(mean, var)|` draws.
///
/// Returns the contaminated sample and the sorted zero-based indices of the
/// shifted curves.
pub fn contaminate<R: Rng + ?Sized>(
    y: &FunctionalSample,
    rate: f64,
    mean: f64,
    var: f64,
    per_point: bool,
    rng: &mut R,
) -> Result<(FunctionalSample, Vec<usize>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(FflqrError::invalid("contamination_rate", format!("must lie in [0, 1), got {rate}")));
    }
    let normal = Normal::new(mean, var.sqrt())
        .map_err(|e| FflqrError::invalid("outlier_var", e.to_string()))?;
    let n = y.n_curves();
    let count = ((n as f64) * rate + 1e-9).floor() as usize;
    let mut rows = sample_indices(rng, n, count).into_vec();
    rows.sort_unstable();
    let mut values = y.values().clone();
    for &i in &rows {
        if per_point {
            for j in 0..values.ncols() {
                values[(i, j)] += normal.sample(rng).abs();
            }
        } else {
            let shift = normal.sample(rng).abs();
            for j in 0..values.ncols() {
                values[(i, j)] += shift;
            }
        }
    }
    Ok((FunctionalSample::new(values, y.grid().clone())?, rows))
}

/// One generated train/test split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y_train: FunctionalSample,
    pub xs_train: Vec<FunctionalSample>,
    pub y_test: FunctionalSample,
    pub xs_test: Vec<FunctionalSample>,
    /// Zero-based training rows shifted by outliers.
    pub contaminated: Vec<usize>,
    pub replicate: usize,
    pub seed: u64,
}

/// Generates the data of one replicate from a stream seeded by
/// `(master_seed, replicate)`. Only the training response is contaminated.
pub fn generate_dataset(config: &SimConfig, replicate: usize) -> Result<Dataset> {
    config.validate()?;
    let seed = derive_seed(config.master_seed, replicate as u64);
    let mut rng = rng_for(config.master_seed, replicate as u64);
    let grid = config.grid()?;
    let n = config.n_train + config.n_test;
    let xs = gen_predictors(config, &grid, n, &mut rng)?;
    let errors = gen_ou_errors(config, &grid, n, &mut rng)?;
    let set = config.true_set();
    let surfaces = set
        .iter()
        .map(|&m| true_beta(m + 1, &grid, &grid))
        .collect::<Result<Vec<_>>>()?;
    let y = gen_response(&xs, &errors, &set, &surfaces)?;

    let train: Vec<usize> = (0..config.n_train).collect();
    let test: Vec<usize> = (config.n_train..n).collect();
    let (y_train, contaminated) = contaminate(
        &y.select_rows(&train),
        config.contamination_rate,
        config.outlier_mean,
        config.outlier_var,
        config.outlier_per_point,
        &mut rng,
    )?;
    Ok(Dataset {
        y_train,
        xs_train: xs.iter().map(|x| x.select_rows(&train)).collect(),
        y_test: y.select_rows(&test),
        xs_test: xs.iter().map(|x| x.select_rows(&test)).collect(),
        contaminated,
        replicate,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fflqr,
    FpcLs,
    BsplineLs,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fflqr, Method::FpcLs, Method::BsplineLs];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Fflqr => "fflqr",
            Method::FpcLs => "fpc-ls",
            Method::BsplineLs => "bspline-ls",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| FflqrError::invalid("methods", format!("unknown method `{s}` (expected fflqr, fpc-ls or bspline-ls)")))
    }

    pub fn family(&self, config: &SimConfig) -> Family {
        match self {
            Method::Fflqr => Family::Fflqr { tau: config.tau },
            Method::FpcLs => Family::FpcLs,
            Method::BsplineLs => Family::BsplineLs {
                n_basis: config.n_basis,
                order: config.bspline_order,
            },
        }
    }
}

/// Which predictors a compared model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    /// All candidate predictors.
    Full,
    /// The predictors that generated the response.
    True,
    /// Predictors chosen by forward selection.
    Selected,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [ModelVariant::Full, ModelVariant::True, ModelVariant::Selected];

    pub fn label(&self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::True => "true",
            ModelVariant::Selected => "selected",
        }
    }

    pub fn parse(s: &str) -> Result<ModelVariant> {
        ModelVariant::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| FflqrError::invalid("models", format!("unknown model `{s}` (expected full, true or selected)")))
    }
}

/// A fitted comparison model together with how it was chosen.
#[derive(Debug, Clone)]
pub struct TunedModel {
    pub spec: ModelSpec,
    pub fitted: FittedModel,
    /// Zero-based predictor indices.
    pub predictors: Vec<usize>,
    pub k_y: usize,
    pub k_x: usize,
}

/// Chooses predictors and truncation for one method and model variant, then fits.
///
/// Truncation is tuned by the method's own criterion; the B-spline baseline
/// has no truncation and reports `K = 0`.
pub fn tune_model(
    config: &SimConfig,
    method: Method,
    variant: ModelVariant,
    y: &FunctionalSample,
    xs: &[FunctionalSample],
) -> Result<TunedModel> {
    let family = method.family(config);
    let (predictors, k_y, k_x) = match variant {
        ModelVariant::Full | ModelVariant::True => {
            let predictors = match variant {
                ModelVariant::Full => (0..xs.len()).collect(),
                _ => config.true_set(),
            };
            let subset: Vec<FunctionalSample> = predictors.iter().map(|&m| xs[m].clone()).collect();
            let (k_y, k_x) = if method == Method::BsplineLs {
                (0, 0)
            } else {
                let choice = select_truncation(y, &subset, &family, config.k_y_max, config.k_x_max)?;
                (choice.k_y, choice.k_x)
            };
            (predictors, k_y, k_x)
        }
        ModelVariant::Selected => {
            let options = ForwardOptions {
                ratio_threshold: config.ratio_threshold,
                fixed_k: config.fixed_k,
                k_y_max: config.k_y_max,
                k_x_max: config.k_x_max,
                tune_after: true,
            };
            let sel = forward_select(y, xs, &family, &options)?;
            (sel.chosen_predictors, sel.chosen_k_y, sel.chosen_k_x)
        }
    };
    let spec = family.spec(k_y, k_x);
    let subset: Vec<FunctionalSample> = predictors.iter().map(|&m| xs[m].clone()).collect();
    let fitted = spec.fit(y, &subset)?.with_predictor_indices(predictors.clone())?;
    Ok(TunedModel {
        spec,
        fitted,
        predictors,
        k_y,
        k_x,
    })
}

fn evaluate_replicate(
    config: &SimConfig,
    methods: &[Method],
    variants: &[ModelVariant],
    replicate: usize,
) -> Result<Vec<MetricsReport>> {
    let data = generate_dataset(config, replicate)?;
    let scenario = config.scenario_label();
    let boot = BootstrapConfig {
        replicates: config.bootstrap_replicates,
        seed: derive_seed(data.seed, 1),
    };
    let mut reports = Vec::new();
    for &variant in variants {
        for &method in methods {
            let tuned = tune_model(config, method, variant, &data.y_train, &data.xs_train)?;
            let xs_train: Vec<FunctionalSample> =
                tuned.predictors.iter().map(|&m| data.xs_train[m].clone()).collect();
            let xs_test: Vec<FunctionalSample> =
                tuned.predictors.iter().map(|&m| data.xs_test[m].clone()).collect();
            let pred = tuned.fitted.predict(&xs_test)?;
            let err = mspe(&data.y_test, &pred)?;
            let report = |label: &str, cpd: Option<f64>, score: Option<f64>| MetricsReport {
                method: label.to_string(),
                model: variant.label().to_string(),
                scenario: scenario.clone(),
                replicate,
                seed: data.seed,
                mspe: err,
                cpd,
                score,
                predictors: tuned.predictors.clone(),
                k_y: tuned.k_y,
                k_x: tuned.k_x,
            };
            if config.intervals {
                let band = bootstrap_band(&data.y_train, &xs_train, &xs_test, &tuned.spec, config.alpha, &boot)?;
                reports.push(report(
                    method.label(),
                    Some(cpd(&band, &data.y_test)?),
                    Some(interval_score(&band, &data.y_test)?),
                ));
                if method == Method::Fflqr {
                    let direct = direct_band(&data.y_train, &xs_train, &xs_test, config.alpha, tuned.k_y, tuned.k_x)?;
                    reports.push(report(
                        "fflqr-direct",
                        Some(cpd(&direct, &data.y_test)?),
                        Some(interval_score(&direct, &data.y_test)?),
                    ));
                }
            } else {
                reports.push(report(method.label(), None, None));
            }
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone)]
pub struct MonteCarloOutcome {
    /// Reports ordered by replicate, then model variant, then method.
    pub reports: Vec<MetricsReport>,
    /// Replicates that failed, with their error messages.
    pub failures: Vec<(usize, String)>,
}

/// Runs `config.n_replicates` independent replicates in parallel.
///
/// Failing replicates are skipped and recorded; more than 20% failures is an error.
pub fn run_monte_carlo(
    config: &SimConfig,
    methods: &[Method],
    variants: &[ModelVariant],
) -> Result<MonteCarloOutcome> {
    config.validate()?;
    if methods.is_empty() {
        return Err(FflqrError::invalid("methods", "no methods requested"));
    }
    if variants.is_empty() {
        return Err(FflqrError::invalid("models", "no model variants requested"));
    }
    let results: Vec<Result<Vec<MetricsReport>>> = (0..config.n_replicates)
        .into_par_iter()
        .map(|r| evaluate_replicate(config, methods, variants, r))
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(mut rep) => reports.append(&mut rep),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * config.n_replicates as f64 {
        let message = failures
            .iter()
            .take(5)
            .map(|(r, e)| format!("replicate {r}: {e}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(FflqrError::TooManyFailures {
            failed: failures.len(),
            total: config.n_replicates,
            message,
        });
    }
    Ok(MonteCarloOutcome { reports, failures })
}
