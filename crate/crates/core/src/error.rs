//! Error taxonomy shared across the simulator.
//!
//! Variants map onto the CLI exit codes: validation problems exit 2,
//! constraint violations exit 3, training divergence exits 4.

use thiserror::Error;

/// All failures the library can surface to callers.
#[derive(Debug, Error)]
pub enum Error {
    /// Scenario file could not be parsed at all.
    #[error("scenario parse error: {0}")]
    ConfigParse(String),

    /// Scenario parsed but an invariant does not hold. The message names the
    /// violated invariant so operators can fix the file directly.
    #[error("scenario validation error: {0}")]
    ConfigValidation(String),

    /// A feasibility constraint was violated where the pipeline requires it
    /// to hold (post-projection actions, scheduling output, ...).
    #[error("constraint violation at slot {slot}: {detail}")]
    Constraint { slot: u64, detail: String },

    /// Geometry preconditions broken (zero-distance link, satellite below
    /// the minimum elevation when a link was requested, ...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Neural-stack failures: dimension mismatches, malformed graphs,
    /// checkpoint shape drift.
    #[error("neural stack error: {0}")]
    Nn(String),

    /// The projection could not find any feasible action.
    #[error("action projection failed, binding constraints: {0}")]
    ProjectionInfeasible(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at episode {episode}: {detail}")]
    TrainingDiverged { episode: usize, detail: String },

    /// Unknown policy name passed to a policy factory.
    #[error("unknown policy name: {0}")]
    UnknownPolicy(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
