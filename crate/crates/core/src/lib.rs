//! Classifiers that learn their own confidence, and tools for using that
//! confidence to flag out-of-distribution inputs.
//!
//! The network, objective, scorers and metrics are generic over the
//! floating point type ([`Scalar`]); the aliases below fix it to `f64`,
//! which is what training and the command-line tool use.

// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod metrics;
pub mod netcore;
pub mod objective;
pub mod scalar;
pub mod scorers;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type NetworkParams = netcore::NetworkParams<f64>;
pub type ParamGrads = netcore::ParamGrads<f64>;
pub type PredictionOutput = netcore::PredictionOutput<f64>;
pub type ForwardTrace = netcore::ForwardTrace<f64>;
pub type OptimizerState = netcore::OptimizerState<f64>;
pub type LossBreakdown = objective::LossBreakdown<f64>;
pub type MetricReport = metrics::MetricReport<f64>;
pub type EvalRecord = trainer::EvalRecord<f64>;
pub type PerturbConfig = scorers::PerturbConfig<f64>;
pub type ScoredSet = scorers::ScoredSet<f64>;

pub type NetworkParamsF32 = netcore::NetworkParams<f32>;

pub use data::{GridSpec, LabeledDataset, NoiseKind, XorNoise};
pub use metrics::{CalibrationMethod, Detection};
pub use netcore::NetworkSpec;
pub use objective::{BudgetState, HintMask};
pub use scorers::Scorer;
pub use trainer::{TrainConfig, TrainHistory};
