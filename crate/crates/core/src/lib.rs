// Indexed loops over subjects/clusters are clearer in the numerical code.
#![allow(clippy::needless_range_loop)]

//! Model-based clustering of discretely observed curves.
//!
//! Curves are represented through a cubic B-spline basis; subjects are
//! clustered with a Gaussian mixture over the spline coefficients whose
//! covariance structure is cluster-specific, optionally joint with
//! per-subject scalar covariates. Fitting is by EM with closed-form updates;
//! model-selection diagnostics (AIC, BIC, relative log-likelihood change,
//! distortion) score a sweep over cluster counts.

pub mod emfit;
pub mod error;
pub mod gauss;
pub mod kmeans;
pub mod mixmodel;
pub mod modelselect;
pub mod preprocess;
pub mod splinebasis;
pub mod synth;

pub use emfit::{fit, FitConfig, FitReport, InitMode};
pub use error::{Error, Result};
pub use mixmodel::{ModelParams, PosteriorTable, PreparedSubject};
pub use preprocess::{CurveObservation, RawSeries};
pub use splinebasis::{BasisMatrix, BasisSpec};
