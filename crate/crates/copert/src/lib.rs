//! Average perturbation effects for compositional covariates.
//!
//! The crate provides, bottom to top:
//! - [`simplex`]: compositions, closure, Gini coefficient, amalgamation;
//! - [`perturb`]: the perturbation catalogue and the derivative-isolating
//!   reparametrizations z -> (L, W) behind it;
//! - [`learn`]: nuisance regression machinery (mean, ridge, random forest
//!   with extractable neighbor weights, cross-validated selection);
//! - [`smooth`]: forest-weighted local polynomial smoothing for derivative
//!   estimation;
//! - [`score`]: conditional score estimation under a location-scale model;
//! - [`estimate`]: plug-in, one-step nonparametric and partially linear
//!   effect estimators with asymptotic confidence intervals;
//! - [`sim`]: seeded synthetic data generators and a coverage harness;
//! - [`dataset`]: CSV ingestion for the command line front end.

pub mod dataset;
pub mod estimate;
pub mod learn;
pub mod perturb;
pub mod score;
pub mod sim;
pub mod simplex;
pub mod smooth;
pub(crate) mod stats;
