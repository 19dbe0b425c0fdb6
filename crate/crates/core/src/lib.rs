//! Design engine for paired geo experiments: pairing, Trimmed Match
//! estimation, power analysis and rerandomization.

pub mod error;
pub mod estimator;
pub mod geo_data;
pub mod pairing;
pub mod pipeline;
pub mod power;
pub mod randomization;
pub mod rng;
pub mod stats;
pub mod synthetic;

pub use error::{DataError, DesignError, EstimationError, Result};
pub use estimator::{PairExperimentData, TrimSpec, TrimmedMatchEstimate};
pub use geo_data::{DateRange, GeoId, GeoPanel, PeriodSplit};
pub use pairing::{DistanceMatrix, Pair, PairSet};
pub use pipeline::{DesignConfig, DesignRun};
pub use power::{DesignEvaluation, EvalInputs};
pub use randomization::{Assignment, BalanceConfig};
pub use synthetic::SynthConfig;
