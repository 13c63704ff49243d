//! Station-level sea-fog forecasting from NWP output.
//!
//! The pipeline runs: [`ingest`] (observations + forecast grids into a
//! [`dataset::Dataset`]), [`tlca`] (lagged-correlation predictor selection),
//! [`featurize`], [`gbdt`] training under an [`objectives`] loss, [`ensemble`]
//! resampling, and [`verify`] scoring. [`synth`] generates seeded data with a
//! known fog rule for testing every stage.

// `!(x >= 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod container;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod featurize;
pub mod gbdt;
pub mod ingest;
pub mod objectives;
pub mod pipeline;
pub mod synth;
pub mod time;
pub mod tlca;
pub mod verify;

pub use error::{Error, Result};
