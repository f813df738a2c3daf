//! Distribution recalibration for probabilistic forecasters.
//!
//! The crate fits a recalibration map over the outputs of any base
//! forecaster so that the composed forecasts are distribution-calibrated,
//! measures the result with proper scoring rules and calibration
//! diagnostics, and provides an online recalibrator for binary event
//! streams built on internal-regret minimization.

pub mod bench;
pub mod data;
pub mod dist;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod online;
pub mod recalibrate;
pub mod scoring;

pub use dist::{
    featurize, CategoricalDist, FeatureKind, Featurization, GaussianDist, PredictiveDistribution,
    QuantileGridDist, DECILES,
};
pub use error::{Error, Result};
