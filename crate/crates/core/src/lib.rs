//! K-segment property valuation.
//!
//! Properties are segmented by the empirical quantile of their prior
//! assessment, a gradient-boosted submodel is fit per segment, and the
//! submodels are blended near segment boundaries by one of several smoothing
//! rules. Fairness is measured with a group-wise pairwise ranking score and
//! a deviation-weighted ratio score, both on sales ratios.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod fairness;
pub mod gbm;
pub mod ksegment;
pub mod segmentation;

pub use config::ExperimentConfig;
pub use dataset::{PropertyRecord, QuantileIndex, SyntheticMarketConfig};
pub use error::{Error, Result};
pub use evaluation::{EvaluationReport, ParetoFrontier, ParetoPoint};
pub use experiment::{run_experiment, run_experiment_with, ExperimentOutput};
pub use fairness::{deviation_weighted_fairness, group_fairness, relative_unfairness, RatioSample};
pub use gbm::{GbmConfig, GbmModel};
pub use ksegment::{train_ksegment, KSegmentModel};
pub use segmentation::{SegmentationScheme, SmoothingMethod, SmoothingSpec};
