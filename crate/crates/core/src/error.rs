//! Error types shared across the design engine.

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = DesignError> = std::result::Result<T, E>;

/// Problems found while reading or validating pretest data.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("input contains no data rows")]
    Empty,
    #[error("row {row}: cannot parse {column} value `{value}`")]
    Unparseable {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("row {row}: {column} value {value} is negative")]
    Negative {
        row: usize,
        column: &'static str,
        value: f64,
    },
    #[error("row {row}: duplicate row for geo `{geo}` on {date}")]
    DuplicateRow {
        row: usize,
        geo: String,
        date: NaiveDate,
    },
    #[error("geo `{geo}` has no row for {missing}; dates must be contiguous and shared by all geos")]
    NonContiguous { geo: String, missing: NaiveDate },
    #[error("row {row}: spend column present but empty")]
    PartialSpend { row: usize },
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
}

/// Failures of the trimmed match estimator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("no spend signal: every spend difference is zero")]
    NoSpendSignal,
    #[error("trimmed mean equation has no root for trim count {trim_count}")]
    NoRoot { trim_count: usize },
    #[error("trim count {trim_count} leaves no pairs out of {n}")]
    TrimTooLarge { trim_count: usize, n: usize },
    #[error("invalid experiment data: {0}")]
    InvalidData(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown geo `{0}`")]
    UnknownGeo(String),
    #[error("too many geos for exhaustive enumeration: {n} > {max}")]
    TooLarge { n: usize, max: usize },
    #[error("every one of {replicates} replicates failed to produce an estimate")]
    AllReplicatesFailed { replicates: usize },
    #[error("spend data required but the panel has none; select the response-proportional proxy")]
    MissingSpend,
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<DesignError>,
    },
}

impl DesignError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        DesignError::InvalidArgument(msg.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        DesignError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Short stable identifier used in machine-readable diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            DesignError::Data(_) => "data",
            DesignError::Estimation(_) => "estimation",
            DesignError::InsufficientData(_) => "insufficient_data",
            DesignError::InvalidArgument(_) => "invalid_argument",
            DesignError::UnknownGeo(_) => "unknown_geo",
            DesignError::TooLarge { .. } => "too_large",
            DesignError::AllReplicatesFailed { .. } => "all_replicates_failed",
            DesignError::MissingSpend => "missing_spend",
            DesignError::Context { source, .. } => source.category(),
        }
    }
}
