use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("point ({x}, {y}) lies outside the mesh domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid field prior: {0}")]
    InvalidPrior(String),

    #[error("dense covariance requested for {vertices} vertices (limit {limit}); use the sparse precision path")]
    DenseLimit { vertices: usize, limit: usize },

    #[error("model specification error: {0}")]
    Spec(String),

    #[error("dataset `{dataset}`: {message}")]
    Data { dataset: String, message: String },

    #[error("record {record} of dataset `{dataset}`: {source}")]
    Record {
        dataset: String,
        record: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("region covers {diameter:.4} units but the constant-surface approximation is only valid below {limit:.4}; larger regions need a range-map style treatment")]
    RegionTooLarge { diameter: f64, limit: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_record(self, dataset: &str, record: usize) -> Error {
        Error::Record {
            dataset: dataset.to_string(),
            record,
            source: Box::new(self),
        }
    }

    /// Fills in the dataset name on record-level errors raised without one.
    pub fn with_dataset(self, name: &str) -> Error {
        match self {
            Error::Record {
                dataset,
                record,
                source,
            } if dataset.is_empty() => Error::Record {
                dataset: name.to_string(),
                record,
                source,
            },
            Error::Data { dataset, message } if dataset.is_empty() => Error::Data {
                dataset: name.to_string(),
                message,
            },
            other => other,
        }
    }

    /// True when the root cause is a point falling outside the mesh.
    pub fn is_outside_domain(&self) -> bool {
        match self {
            Error::OutsideDomain { .. } => true,
            Error::Record { source, .. } => source.is_outside_domain(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
