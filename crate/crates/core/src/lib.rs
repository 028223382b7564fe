//! Analysis of multi-year trials in which the set of tested treatments
//! changes over time.
//!
//! The crate fits fixed- and random-environment linear models to
//! factor-labelled data, produces environment-adjusted treatment means and
//! their standard errors of difference, computes indirect comparisons
//! through bridge treatments, and renders truthful compact letter displays.

pub mod cli;
pub mod dataset;
pub mod design;
pub mod error;
pub mod formula;
pub mod inference;
pub mod letters;
mod linalg;
pub mod simulator;
pub mod solver;

pub use dataset::{Dataset, Factor, IncidenceTable, TransformKind};
pub use design::{build_design, connectivity, ConnectivityReport, DesignMatrices};
pub use error::{Error, Result};
pub use formula::{parse_formula, render_formula, ModelSpec, Term};
pub use inference::{MeansTable, SedMatrix};
pub use letters::{letter_display, verify_display, LetterDisplay, SignificanceMatrix};
pub use solver::{fit, fit_ols, fit_reml, loglik_reml, Covariance, FittedModel, VarianceComponents};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeDoctests;
