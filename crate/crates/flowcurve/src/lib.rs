//! Shape-constrained estimation of traffic density-flow curves.
//!
//! The crate fits concave piecewise-linear density-flow curves to road
//! sensor data. Estimation is available as convex nonparametric least
//! squares (conditional mean), convex quantile regression (an LP with
//! pinball loss), its subgradient-penalized variant, and a weighted
//! formulation over grid-aggregated "bags" of observations that keeps
//! large datasets tractable. A triangular-diagram calibration serves as
//! the deterministic baseline, and an evaluation harness compares
//! in-sample and out-of-sample prediction errors between methods.
//!
//! Pipeline order: [`traffic`] ingests and aggregates per-vehicle records
//! into (density, flow) observations, [`bagging`] compresses them into
//! weighted cell centroids, [`estimators`] builds and solves the fitting
//! problems via [`solver`], [`traffic::extract_traffic_parameters`] reads
//! capacity and densities off the fitted [`curve::PiecewiseLinearCurve`],
//! and [`eval`] scores predictions against held-out periods.

pub mod bagging;
pub mod baseline;
pub mod curve;
pub mod estimators;
pub mod eval;
pub mod solver;
pub mod synth;
pub mod traffic;
pub mod types;
