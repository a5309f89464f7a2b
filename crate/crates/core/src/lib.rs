//! Synthetic training-data selection for linear text classifiers.
//!
//! A multinomial logistic-regression task model scores candidate examples by
//! their estimated influence on validation loss, a greedy n-gram coverage
//! heuristic picks a diverse subset, and the chosen data is used in one of
//! three training regimes.

// `!(x > 0.0)` checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod influence;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod select;

pub use corpus::{Dataset, Example, FeatureVector, Source, Split, Vocabulary};
pub use error::{Error, Result};
pub use influence::{InfluenceRecord, InverseHvpConfig, Method};
pub use model::{ModelParams, ParamVector, Samples, TrainConfig, Trained};
pub use pipeline::{EvalReport, PipelineConfig, Regime};
pub use select::{SelectionResult, Strategy};
