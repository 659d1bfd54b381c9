//! Fitting, prediction and persistence of function-on-function regression models.

pub mod bspline;
pub mod fpc;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FflqrError, Result};
use crate::fdata::FunctionalSample;

pub use bspline::{fit_bspline_ls, BsplineBasis, BsplineLsFit};
pub use fpc::{
    fit_fflqr, fit_fpc_ls, max_truncation, CoefficientSurface, Estimator, FflqrFit, ScoreCache,
};

/// Regression method and its tuning constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum ModelSpec {
    Fflqr { tau: f64, k_y: usize, k_x: usize },
    FpcLs { k_y: usize, k_x: usize },
    BsplineLs { n_basis: usize, order: usize },
}

impl ModelSpec {
    pub fn fit(&self, y: &FunctionalSample, xs: &[FunctionalSample]) -> Result<FittedModel> {
        Ok(match *self {
            ModelSpec::Fflqr { tau, k_y, k_x } => FittedModel::Fflqr(fit_fflqr(y, xs, tau, k_y, k_x)?),
            ModelSpec::FpcLs { k_y, k_x } => FittedModel::FpcLs(fit_fpc_ls(y, xs, k_y, k_x)?),
            ModelSpec::BsplineLs { n_basis, order } => {
                FittedModel::BsplineLs(fit_bspline_ls(y, xs, n_basis, order)?)
            }
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::Fflqr { .. } => "fflqr",
            ModelSpec::FpcLs { .. } => "fpc-ls",
            ModelSpec::BsplineLs { .. } => "bspline-ls",
        }
    }
}

/// A regression method without its truncation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Family {
    Fflqr { tau: f64 },
    FpcLs,
    BsplineLs { n_basis: usize, order: usize },
}

impl Family {
    /// Model specification at the given truncation (ignored by the B-spline baseline).
    pub fn spec(&self, k_y: usize, k_x: usize) -> ModelSpec {
        match *self {
            Family::Fflqr { tau } => ModelSpec::Fflqr { tau, k_y, k_x },
            Family::FpcLs => ModelSpec::FpcLs { k_y, k_x },
            Family::BsplineLs { n_basis, order } => ModelSpec::BsplineLs { n_basis, order },
        }
    }

    /// Score-space estimator for FPC families.
    pub fn estimator(&self) -> Option<Estimator> {
        match *self {
            Family::Fflqr { tau } => Some(Estimator::Quantile { tau }),
            Family::FpcLs => Some(Estimator::LeastSquares),
            Family::BsplineLs { .. } => None,
        }
    }

    /// Pointwise loss used by the information criteria: check loss for the
    /// quantile model, squared error for the mean baselines.
    pub fn loss(&self, u: f64) -> f64 {
        match *self {
            Family::Fflqr { tau } => crate::qr::rho(u, tau),
            Family::FpcLs | Family::BsplineLs { .. } => u * u,
        }
    }

    pub fn label(&self) -> &'static str {
        self.spec(1, 1).label()
    }
}

/// Any fitted model; serialized with a `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedModel {
    Fflqr(FflqrFit),
    FpcLs(FflqrFit),
    BsplineLs(BsplineLsFit),
}

impl FittedModel {
    pub fn predict(&self, xs: &[FunctionalSample]) -> Result<FunctionalSample> {
        match self {
            FittedModel::Fflqr(f) | FittedModel::FpcLs(f) => f.predict(xs),
            FittedModel::BsplineLs(f) => f.predict(xs),
        }
    }

    pub fn predictor_indices(&self) -> &[usize] {
        match self {
            FittedModel::Fflqr(f) | FittedModel::FpcLs(f) => f.predictor_indices(),
            FittedModel::BsplineLs(f) => f.predictor_indices(),
        }
    }

    pub fn with_predictor_indices(self, indices: Vec<usize>) -> Result<Self> {
        Ok(match self {
            FittedModel::Fflqr(f) => FittedModel::Fflqr(f.with_predictor_indices(indices)?),
            FittedModel::FpcLs(f) => FittedModel::FpcLs(f.with_predictor_indices(indices)?),
            FittedModel::BsplineLs(f) => FittedModel::BsplineLs(f.with_predictor_indices(indices)?),
        })
    }

    pub fn rank_deficient(&self) -> bool {
        match self {
            FittedModel::Fflqr(f) | FittedModel::FpcLs(f) => f.rank_deficient(),
            FittedModel::BsplineLs(f) => f.rank_deficient(),
        }
    }

    pub fn as_fpc(&self) -> Option<&FflqrFit> {
        match self {
            FittedModel::Fflqr(f) | FittedModel::FpcLs(f) => Some(f),
            FittedModel::BsplineLs(_) => None,
        }
    }

    /// Specification that refits this model on new data.
    pub fn spec(&self) -> ModelSpec {
        match self {
            FittedModel::Fflqr(f) => ModelSpec::Fflqr {
                tau: f.tau().expect("quantile fit has a level"),
                k_y: f.k_y(),
                k_x: f.k_x(),
            },
            FittedModel::FpcLs(f) => ModelSpec::FpcLs {
                k_y: f.k_y(),
                k_x: f.k_x(),
            },
            FittedModel::BsplineLs(f) => ModelSpec::BsplineLs {
                n_basis: f.response_basis().n_basis(),
                order: f.response_basis().order(),
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FittedModel::Fflqr(_) => "fflqr",
            FittedModel::FpcLs(_) => "fpc-ls",
            FittedModel::BsplineLs(_) => "bspline-ls",
        }
    }
}

pub const MODEL_FORMAT: &str = "fflqr-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    model: FittedModel,
}

pub fn model_to_json(model: &FittedModel) -> Result<String> {
    let doc = ModelDocument {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn model_from_json(text: &str) -> Result<FittedModel> {
    let doc: ModelDocument = serde_json::from_str(text)?;
    if doc.format != MODEL_FORMAT {
        return Err(FflqrError::Config(format!(
            "not a model document (format `{}`)",
            doc.format
        )));
    }
    if doc.version != MODEL_FORMAT_VERSION {
        return Err(FflqrError::Config(format!(
            "unsupported model format version {}",
            doc.version
        )));
    }
    Ok(doc.model)
}

pub fn save_model(model: &FittedModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    model_from_json(&fs::read_to_string(path)?)
}
