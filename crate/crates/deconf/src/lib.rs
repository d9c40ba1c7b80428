//! Training classifiers whose output score is statistically independent of a
//! declared nuisance variable.
//!
//! A classifier trained on data where a nuisance variable (such as an
//! acquisition artifact) is associated with the label will happily exploit
//! that association, and then degrade when deployed somewhere the association
//! is different. This crate provides:
//!
//! - [`net`]: dense feedforward networks with exact analytic gradients and an
//!   SGD-with-momentum optimizer — the numerical substrate for the classifier
//!   and the adversary.
//! - [`synthgen`]: a synthetic confounded-data generator realizing a causal
//!   graph where the label and the nuisance each leave their own imprint on
//!   the features, with controllable nuisance-label association per domain,
//!   plus an engineered base-rate-imbalance subsampler and CSV I/O.
//! - [`trainers`]: five training strategies sharing one early-stopping
//!   protocol — standard ERM, adversarial deconfounding (minimax against an
//!   adversary that predicts the nuisance from the score), instance
//!   weighting, matched subsampling, and covariate inclusion.
//! - [`diagnostics`]: ROC/AUROC, a nuisance probe trained on the score,
//!   two-sample Kolmogorov-Smirnov statistics, Expected Gradients feature
//!   attributions, and PCA/orthogonality analysis of hidden embeddings.
//!
//! All randomized operations are deterministic given their seed.

pub mod diagnostics;
mod error;
pub mod net;
pub mod synthgen;
pub mod trainers;

pub use error::{Error, Result};
