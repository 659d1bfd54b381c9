//! Function-on-function linear quantile regression.
//!
//! Curves on a shared grid are reduced to functional principal component
//! scores, a multivariate linear quantile regression is solved in score
//! space, and the fitted score coefficients are mapped back to bivariate
//! coefficient surfaces.

pub mod cli;
pub mod error;
pub mod fdata;
pub mod io;
mod linalg;
mod matrix_serde;
pub mod model;
pub mod qr;
pub mod rng;
pub mod selection;
pub mod sim;
pub mod uncertainty;

pub use error::{ErrorKind, FflqrError, Result};
pub use fdata::{fpc_decompose, make_uniform_grid, FpcBasis, FunctionalSample, Grid, ScoreMatrix};
pub use model::{fit_fflqr, fit_fpc_ls, FflqrFit, FittedModel, ModelSpec};
pub use qr::{qr_fit, QrProblem, QrSolution};
