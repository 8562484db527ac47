//! Infinite-width limiting kernels of deep fully connected networks (the NTK
//! and the auxiliary kernels driving the loss Hessian), asymptotic predictions
//! for the spectrum and moments of the Hessian `H = I + S` at initialization
//! and under gradient flow, and an exact finite-width laboratory to verify
//! every prediction at desk scale.
//!
//! The crate is organized around the pipeline
//!
//! ```text
//! data ──> kernels (Σ, Σ̇, Σ̈, Θ, Υ, Ξ, Φ, Λ) ──> theory (moment predictions)
//!                                                      │
//! widenet (exact finite nets, Jacobians, Hessians) <───┘  comparison
//! ```
//!
//! See the `examples/` directory for one runnable program per capability and
//! the `ntkh` binary for a config-driven front end.

pub mod activations;
pub mod config;
pub mod data;
pub mod gaussmoments;
pub mod kernels;
pub mod linalg;
pub mod losses;
pub mod runner;
pub mod spectral;
pub mod theory;
pub mod widenet;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad user input: unknown names, invalid config fields, caps exceeded.
    #[error("configuration error: {0}")]
    Config(String),
    /// Mathematically invalid input (non-PSD covariance, asymmetry, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// A numerical procedure failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Malformed input file (IDX and friends); offset is into the byte stream.
    #[error("ingestion error at byte {offset}: {msg}")]
    Ingest { offset: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code per the CLI contract: 2 config, 3 numerical/domain.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
