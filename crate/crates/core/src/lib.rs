//! Differentially private answering of large r-of-k threshold query workloads.
//!
//! The engine learns a relaxed synthetic dataset (rows in `[0,1]^{d'}`, one
//! probability simplex per one-hot feature block) whose surrogate-query
//! answers match privately measured answers on the sensitive data, then
//! answers arbitrary consistent queries from the synthetic dataset alone.
//!
//! The crate is organized along the pipeline:
//!
//! * [`dataset`] — categorical data ingestion, schemas, one-hot encoding,
//!   relaxed synthetic dataset initialization.
//! * [`workload`] — r-of-k thresholds, implicit consistent-query enumeration,
//!   streaming true-answer evaluation.
//! * [`surrogate`] — differentiable polynomial threshold queries with exact
//!   analytic gradients.
//! * [`privacy`] — zCDP budget arithmetic, Gaussian mechanism, Gumbel
//!   report-noisy-max and oneshot top-K selection.
//! * [`projection`] — sparsemax simplex projection and the gradient-descent
//!   relaxed projection step.
//! * [`mechanism`] — the end-to-end mechanism (adaptive and non-adaptive),
//!   baselines, and present-error measurement.
//! * [`generalization`] — feature distributions, distribution drift, and
//!   future (generalization) error estimation.
//! * [`harness`] — experiment grids, seeding, timing, and CSV result rows.

pub mod combinatorics;
pub mod dataset;
pub mod error;
pub mod generalization;
pub mod harness;
pub mod mechanism;
pub mod privacy;
pub mod projection;
pub mod seeding;
pub mod surrogate;
pub mod workload;

pub use error::{Error, Result};
