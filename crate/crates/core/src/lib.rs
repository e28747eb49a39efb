//! Probabilistic trajectory forecasting for agents moving through a fixed
//! scene.
//!
//! Historical tracks are clustered by endpoint intent, each cluster gets a
//! unit-speed vector field and a Gibbs position prior, and forecasts push a
//! grid of weighted point masses through the learned flows to produce
//! per-frame probability rasters.

// Negated comparisons double as NaN rejection in input validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod config;
pub mod error;
pub mod eval;
pub mod fields;
pub mod forecast;
pub mod ingest;
pub mod model;
pub mod priors;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Planar point or vector, scene units unless stated otherwise.
pub type Vec2 = nalgebra::Vector2<f64>;
