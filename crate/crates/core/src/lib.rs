//! Gridded EV charging demand forecasting and charger placement.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod forecast;
pub mod grid;
pub mod heatmap;
pub mod optimizer;
pub mod synth;

pub use error::{Error, Result};
