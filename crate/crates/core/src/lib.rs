//! Interpretable additive modelling over numerical, categorical and temporal
//! features.
//!
//! A fitted model has the form
//!
//! ```text
//! y ≈ α + Σ f_i(x_i) + Σ β[z_m] + Σ (trend_k(t_k) + seasonal_k(t_k))
//! ```
//!
//! and is trained by cycling three stages: backfitting of the numerical shape
//! functions, a joint ridge solve for the categorical weights, and a
//! seasonal-trend decomposition for each temporal feature.

pub mod categorical;
pub mod data_model;
pub mod error;
pub mod model;
pub mod smoothers;
pub mod synthgen;
pub mod temporal;
pub mod trainer;

pub use error::{FxamError, Result};
