use std::fmt;

use thiserror::Error;

/// A single violated invariant, addressed by its config field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("target ({x:.2}, {y:.2}) mm is outside the reachable annulus")]
    Unreachable { x: f64, y: f64 },
    #[error("joint solution ({0:.3}°, {1:.3}°) violates the joint limits")]
    OutOfLimits(f64, f64),
    #[error("{what} {value} outside [{min}, {max}]")]
    OutOfRange { what: &'static str, value: f64, min: f64, max: f64 },
    #[error("no feasible candidate on the search grid")]
    NoFeasibleCandidate,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("observer threshold has not been calibrated")]
    Uncalibrated,
    #[error("homing timed out after {0:.1} s")]
    HomingTimeout(f64),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
