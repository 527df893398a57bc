//! Submatrix selection SVD (SMSSVD).
//!
//! Decomposes a noisy `P × N` data matrix (variables × samples) into a
//! sequence of mutually orthogonal low-rank blocks. Each block is found by
//! choosing a variance-filtered variable subset and a dimension that maximize
//! a projection score, taking the truncated SVD of the filtered matrix, and
//! lifting it back to every variable with a restricted SVD. The data is then
//! deflated and the process repeats.
//!
//! Alongside the engine the crate ships the baselines and benchmark tooling
//! used to evaluate it: truncated SVD, lasso-constrained sparse principal
//! components, a planted-signal generator, greedy per-signal error matching
//! and a Gaussian-mixture AIC scorer.

pub mod engine;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod matrix;
pub mod restricted;
pub mod rng;
pub mod selection;
pub mod spc;
pub mod synthetic;

pub use engine::{smssvd, Decomposition, DecompositionBlock, EngineConfig, StopReason};
pub use error::{Error, Result};
pub use matrix::{svd_truncated, DataMatrix, SvdFactors};
pub use restricted::{restrict_svd, SubspaceBasis};
pub use rng::Rng;
pub use selection::{ProjectionScoreRecord, SelectionMap};
