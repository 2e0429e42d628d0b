//! Modular adaptive policy selection for multi-task imitation learning.
//!
//! A policy is assembled from `M` task-blind proto-policy modules — small
//! MLPs that map the raw state to feature vectors — and a selector network
//! that sees the state plus a one-hot task encoding and produces a softmax
//! score per module. Each module's features are scaled by its score, the
//! scaled blocks are concatenated, and an affine head maps them to an
//! action. Everything is trained jointly with behavioural cloning plus four
//! selector regularisers (sharing, exploration, sparsity, smoothness) that
//! push the gate toward reusable, sparse, temporally stable module
//! assignments.
//!
//! The crate is self-contained and CPU-only:
//!
//! * [`nn`] — the `f64` MLP substrate (init / forward / backward / Adam),
//!   every gradient validated against central finite differences;
//! * [`selector`] — task encodings, gate scores, and the four regularisers
//!   with analytic gradients;
//! * [`policy`] — the composite gated model and its end-to-end loss;
//! * [`envs`] — deterministic 2-D point-mass benchmark suites with scripted
//!   experts and demonstration generation;
//! * [`dataset`] — demonstration containers shared by training and I/O;
//! * [`trainer`] — stratified batching, the joint training loop, and three
//!   behavioural-cloning baselines;
//! * [`eval`] — closed-loop rollouts, success rates, module-usage reports,
//!   ablations, and baseline comparisons.
//!
//! Determinism is a contract, not an accident: all randomness flows from
//! explicit `u64` seeds through ChaCha8 streams, reductions have fixed
//! order, and the same seed reproduces results bit for bit.

pub mod dataset;
pub mod envs;
pub mod error;
pub mod eval;
pub mod nn;
pub mod policy;
pub mod seeding;
pub mod selector;
pub mod trainer;

pub use error::{Error, Result};
