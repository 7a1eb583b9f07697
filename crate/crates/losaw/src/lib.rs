//! Local sample weighting (losaw) for decorrelated feature importance.
//!
//! The crate provides the building blocks for training regressors whose
//! feature importance scores stay reliable under correlated features:
//!
//! * [`weights`]: inverse stabilized-propensity sample weights with a
//!   Kish effective-sample-size floor,
//! * [`propensity`]: stabilized propensity estimation for discrete and
//!   continuous target features,
//! * [`forest`]: a random-forest regressor whose split selection
//!   maximizes the relative weighted impurity decrease under
//!   feature-specific losaw weights, with a matching MDI importance,
//! * [`losawgd`]: mini-batch gradient descent where each step draws the
//!   batch from a losaw-weighted population of a saliency-sampled feature,
//! * [`datagen`]: synthetic benchmark generators (correlated Gaussians,
//!   discrete joint distributions fitted by a constrained QP, regression
//!   models) plus exact finite-distribution oracles,
//! * [`metrics`]: R², pr-AUC over importance thresholds, FI-gap,
//! * [`experiment`]: Monte-Carlo experiment orchestration backing the
//!   `losaw` command-line tool.

pub mod data;
pub mod datagen;
pub mod error;
mod linalg;
pub mod experiment;
pub mod forest;
pub mod losawgd;
pub mod metrics;
pub mod net;
pub mod propensity;
pub mod qp;
pub mod reference_tables;
pub mod rng;
pub mod split;
pub mod weights;

pub use data::{Dataset, FeatureKind};
pub use error::{Error, Result};
