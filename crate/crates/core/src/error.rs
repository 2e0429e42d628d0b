//! Crate-wide error type.
//!
//! Recoverable failures (bad configuration, malformed datasets, diverging
//! optimisation, a mis-tuned expert) surface as [`Error`] values. Shape
//! mismatches on hot paths — feeding a wrong-length input to a network that
//! was already validated at construction — are programmer errors and panic
//! via `assert!` instead.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All recoverable failures produced by this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A constructor or training entry point was handed inconsistent
    /// settings (empty layer list, zero-width layer, module count < 2, ...).
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A dataset or batch violates a structural invariant (empty trajectory,
    /// non-finite value, task index out of range, too few trajectories to
    /// split, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// The training loss became non-finite.
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    /// The scripted expert failed too often while generating demonstrations,
    /// which means the controller or the task geometry is mis-tuned.
    #[error("expert failed {failures}/{attempts} rollouts on task {task} (tolerated fraction {tolerated})")]
    ExpertFailure {
        task: usize,
        failures: usize,
        attempts: usize,
        tolerated: f64,
    },

    /// An environment was stepped past its episode horizon.
    #[error("episode horizon {horizon} exceeded")]
    HorizonExceeded { horizon: usize },
}
