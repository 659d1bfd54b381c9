//! Information-criterion selection of truncation constants and predictors.
//!
//! Both criteria share a loss term: the in-sample pointwise loss
//! `L(t) = Σ_i loss(Y_i(t) − Ŷ_i(t))` on the response grid, logged and
//! measured in the grid's L2 norm. The truncation criterion adds
//! `(K_Y + K_X) ln n`; the predictor-set criterion adds `|D| ln(n) / (2n)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FflqrError, Result};
use crate::fdata::{FunctionalSample, Grid};
use crate::model::{max_truncation, Family, ScoreCache};

/// Floor applied to the loss before taking logs.
pub const LOSS_FLOOR: f64 = 1e-300;

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: usize,
    pub candidate: String,
    /// Zero-based predictor positions in the candidate model.
    pub predictors: Vec<usize>,
    pub k_y: usize,
    pub k_x: usize,
    /// `None` when the candidate fit failed.
    pub bic: Option<f64>,
    pub accepted: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationChoice {
    pub k_y: usize,
    pub k_x: usize,
    pub bic: f64,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen_k_y: usize,
    pub chosen_k_x: usize,
    /// Zero-based, in order of entry.
    pub chosen_predictors: Vec<usize>,
    pub bic_trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub ratio_threshold: f64,
    pub fixed_k: usize,
    pub k_y_max: usize,
    pub k_x_max: usize,
    /// Re-tune `(K_Y, K_X)` on the selected set after selection.
    pub tune_after: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            ratio_threshold: 0.95,
            fixed_k: 2,
            k_y_max: 5,
            k_x_max: 5,
            tune_after: true,
        }
    }
}

/// Pointwise in-sample loss `L(t_j) = Σ_i loss(y_ij − ŷ_ij)`.
pub fn loss_curve(
    family: &Family,
    y: &FunctionalSample,
    fitted: &FunctionalSample,
) -> Result<Vec<f64>> {
    y.grid().ensure_matches(fitted.grid(), "fitted vs observed response")?;
    if y.n_curves() != fitted.n_curves() {
        return Err(FflqrError::DimensionMismatch {
            context: "fitted vs observed curves",
            expected: y.n_curves(),
            found: fitted.n_curves(),
        });
    }
    let resid = y.values() - fitted.values();
    Ok(resid
        .column_iter()
        .map(|c| c.iter().map(|&u| family.loss(u)).sum())
        .collect())
}

/// `‖ln max(L, floor)‖_{L2}` on the grid.
pub fn log_loss_norm(loss: &[f64], grid: &Grid) -> f64 {
    let logs: Vec<f64> = loss.iter().map(|&l| l.max(LOSS_FLOOR).ln()).collect();
    grid.l2_norm(&logs)
}

/// Criterion value from a loss curve and a penalty.
pub fn bic_from_loss(loss: &[f64], grid: &Grid, penalty: f64) -> f64 {
    log_loss_norm(loss, grid) + penalty
}

pub fn truncation_penalty(k_y: usize, k_x: usize, n: usize) -> f64 {
    (k_y + k_x) as f64 * (n as f64).ln()
}

pub fn candidate_penalty(n_predictors: usize, n: usize) -> f64 {
    let n = n as f64;
    n_predictors as f64 * n.ln() / (2.0 * n)
}

fn in_sample_loss(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    family: &Family,
    k_y: usize,
    k_x: usize,
) -> Result<Vec<f64>> {
    let fitted = family.spec(k_y, k_x).fit(y, xs)?.predict(xs)?;
    loss_curve(family, y, &fitted)
}

/// Truncation criterion `‖ln L‖ + (K_Y + K_X) ln n` of the model fitted at `(k_y, k_x)`.
pub fn bic_truncation(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    family: &Family,
    k_y: usize,
    k_x: usize,
) -> Result<f64> {
    let loss = in_sample_loss(y, xs, family, k_y, k_x)?;
    Ok(bic_from_loss(&loss, y.grid(), truncation_penalty(k_y, k_x, y.n_curves())))
}

/// Predictor-set criterion `‖ln L‖ + |D| ln(n)/(2n)`; `xs` holds exactly the predictors in `D`.
pub fn bic_candidate(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    family: &Family,
    k_y: usize,
    k_x: usize,
) -> Result<f64> {
    if xs.is_empty() {
        return Err(FflqrError::invalid("D", "candidate predictor set is empty"));
    }
    let loss = in_sample_loss(y, xs, family, k_y, k_x)?;
    Ok(bic_from_loss(&loss, y.grid(), candidate_penalty(xs.len(), y.n_curves())))
}

/// Largest usable `(K_Y, K_X)` not exceeding the requested maxima.
pub fn admissible_maxima(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    k_y_max: usize,
    k_x_max: usize,
) -> (usize, usize) {
    let n = y.n_curves();
    let k_y = k_y_max.min(max_truncation(y));
    let mut k_x = xs.iter().map(max_truncation).fold(k_x_max, usize::min);
    if !xs.is_empty() {
        k_x = k_x.min(n.saturating_sub(1) / xs.len());
    }
    (k_y, k_x)
}

fn compare_candidates(a: (f64, usize, usize), b: (f64, usize, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0)
        .then((a.1 + a.2).cmp(&(b.1 + b.2)))
        .then(a.1.cmp(&b.1))
}

fn predictor_label(predictors: &[usize]) -> String {
    predictors
        .iter()
        .map(|p| format!("X{}", p + 1))
        .collect::<Vec<_>>()
        .join("+")
}

/// Exhaustive grid search of the truncation criterion over
/// `1..=k_y_max × 1..=k_x_max` (clipped to admissible values).
///
/// Ties are broken toward smaller `K_Y + K_X`, then smaller `K_Y`.
pub fn select_truncation(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    family: &Family,
    k_y_max: usize,
    k_x_max: usize,
) -> Result<TruncationChoice> {
    select_truncation_at_stage(y, xs, family, k_y_max, k_x_max, 1, None)
}

fn select_truncation_at_stage(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    family: &Family,
    k_y_max: usize,
    k_x_max: usize,
    stage: usize,
    labels: Option<&[usize]>,
) -> Result<TruncationChoice> {
    let Some(estimator) = family.estimator() else {
        return Err(FflqrError::invalid(
            "family",
            "truncation selection applies only to FPC-based methods",
        ));
    };
    if k_y_max == 0 || k_x_max == 0 {
        return Err(FflqrError::invalid("K_max", "truncation maxima must be at least 1"));
    }
    let (ky_top, kx_top) = admissible_maxima(y, xs, k_y_max, k_x_max);
    if ky_top == 0 || kx_top == 0 {
        return Err(FflqrError::TruncationTooLarge {
            context: "truncation search",
            requested: 1,
            max: 0,
        });
    }
    let cache = ScoreCache::new(y, xs, ky_top, kx_top)?;
    let n = y.n_curves();
    let candidates: Vec<(usize, usize)> = (1..=k_y_max)
        .flat_map(|a| (1..=k_x_max).map(move |b| (a, b)))
        .collect();
    let predictors: Vec<usize> = labels.map_or_else(|| (0..xs.len()).collect(), <[usize]>::to_vec);

    let results: Vec<Result<f64>> = candidates
        .par_iter()
        .map(|&(k_y, k_x)| {
            if k_y > ky_top || k_x > kx_top {
                return Err(FflqrError::TruncationTooLarge {
                    context: "truncation candidate",
                    requested: k_y.max(k_x),
                    max: ky_top.min(kx_top),
                });
            }
            let fit = cache.fit(k_y, k_x, estimator)?;
            let fitted = fit.predict(xs)?;
            let loss = loss_curve(family, y, &fitted)?;
            Ok(bic_from_loss(&loss, y.grid(), truncation_penalty(k_y, k_x, n)))
        })
        .collect();

    let mut trace = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, usize, usize, usize)> = None;
    for (idx, (&(k_y, k_x), res)) in candidates.iter().zip(results).enumerate() {
        let (bic, note) = match res {
            Ok(b) => (Some(b), None),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(b) = bic {
            let better = match best {
                None => true,
                Some((bb, by, bx, _)) => {
                    compare_candidates((b, k_y, k_x), (bb, by, bx)) == std::cmp::Ordering::Less
                }
            };
            if better {
                best = Some((b, k_y, k_x, idx));
            }
        }
        trace.push(TraceEntry {
            stage,
            candidate: format!("KY={k_y},KX={k_x}"),
            predictors: predictors.clone(),
            k_y,
            k_x,
            bic,
            accepted: false,
            note,
        });
    }
    let Some((bic, k_y, k_x, idx)) = best else {
        return Err(FflqrError::TooManyFailures {
            failed: trace.len(),
            total: trace.len(),
            message: "every truncation candidate failed".into(),
        });
    };
    trace[idx].accepted = true;
    Ok(TruncationChoice {
        k_y,
        k_x,
        bic,
        trace,
    })
}

/// Forward acceptance rule: the new criterion must improve on the previous one
/// by the fraction `1 − ratio_threshold` of its magnitude.
///
/// For a positive previous value this is `new / prev < ratio_threshold`.
pub fn forward_accepts(prev: f64, new: f64, ratio_threshold: f64) -> bool {
    if prev > 0.0 {
        new / prev < ratio_threshold
    } else {
        prev - new > (1.0 - ratio_threshold) * prev.abs()
    }
}

/// Forward stepwise predictor selection at fixed truncation, followed by
/// truncation tuning on the selected set.
pub fn forward_select(
    y: &FunctionalSample,
    xs: &[FunctionalSample],
    family: &Family,
    options: &ForwardOptions,
) -> Result<SelectionResult> {
    let m = xs.len();
    if m == 0 {
        return Err(FflqrError::invalid("X", "forward selection needs at least one predictor"));
    }
    if options.fixed_k == 0 {
        return Err(FflqrError::invalid("fixed_k", "fixed truncation must be at least 1"));
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut prev_bic: Option<f64> = None;
    let mut stage = 0;

    while selected.len() < m {
        stage += 1;
        let remaining: Vec<usize> = (0..m).filter(|j| !selected.contains(j)).collect();
        let evaluated: Vec<(Vec<usize>, (usize, usize), Result<f64>)> = remaining
            .par_iter()
            .map(|&j| {
                let mut set = selected.clone();
                set.push(j);
                let subset: Vec<FunctionalSample> = set.iter().map(|&i| xs[i].clone()).collect();
                let (ky, kx) = admissible_maxima(y, &subset, options.fixed_k, options.fixed_k);
                let res = if ky == 0 || kx == 0 {
                    Err(FflqrError::TruncationTooLarge {
                        context: "forward selection",
                        requested: options.fixed_k,
                        max: 0,
                    })
                } else {
                    bic_candidate(y, &subset, family, ky, kx)
                };
                (set, (ky, kx), res)
            })
            .collect();

        let stage_start = trace.len();
        let mut best: Option<(f64, usize)> = None;
        for (set, (ky, kx), res) in evaluated {
            let (bic, note) = match res {
                Ok(b) => (Some(b), None),
                Err(e) => (None, Some(e.to_string())),
            };
            if let Some(b) = bic {
                if best.is_none_or(|(bb, _)| b < bb) {
                    best = Some((b, trace.len()));
                }
            }
            trace.push(TraceEntry {
                stage,
                candidate: predictor_label(&set),
                predictors: set,
                k_y: ky,
                k_x: kx,
                bic,
                accepted: false,
                note,
            });
        }
        let Some((bic, idx)) = best else {
            if stage == 1 {
                return Err(FflqrError::TooManyFailures {
                    failed: trace.len() - stage_start,
                    total: trace.len() - stage_start,
                    message: "every single-predictor model failed".into(),
                });
            }
            break;
        };
        let accept = match prev_bic {
            None => true,
            Some(prev) => forward_accepts(prev, bic, options.ratio_threshold),
        };
        if !accept {
            break;
        }
        trace[idx].accepted = true;
        selected = trace[idx].predictors.clone();
        prev_bic = Some(bic);
    }

    let (chosen_k_y, chosen_k_x) = match family.estimator() {
        Some(_) if options.tune_after => {
            let subset: Vec<FunctionalSample> = selected.iter().map(|&i| xs[i].clone()).collect();
            let choice = select_truncation_at_stage(
                y,
                &subset,
                family,
                options.k_y_max,
                options.k_x_max,
                stage + 1,
                Some(&selected),
            )?;
            trace.extend(choice.trace);
            (choice.k_y, choice.k_x)
        }
        Some(_) => {
            let subset: Vec<FunctionalSample> = selected.iter().map(|&i| xs[i].clone()).collect();
            admissible_maxima(y, &subset, options.fixed_k, options.fixed_k)
        }
        None => (0, 0),
    };
    Ok(SelectionResult {
        chosen_k_y,
        chosen_k_x,
        chosen_predictors: selected,
        bic_trace: trace,
    })
}
