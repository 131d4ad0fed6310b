use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("control input out of bounds: {0}")]
    BoundsViolation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("measurement for target {got} ingested into model of target {expected}")]
    TargetMismatch { expected: u32, got: u32 },

    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("routing error: no link between sensor {from} and sensor {to}")]
    Routing { from: u32, to: u32 },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("wire format error: {0}")]
    Wire(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
