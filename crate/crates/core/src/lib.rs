//! Benchmarking engine for recommendation algorithms.
//!
//! The pipeline mirrors how experiments are run end to end:
//!
//! 1. [`atomic`] parses typed atomic data files (`.inter`, `.user`, ...).
//! 2. [`dataset`] encodes them into an immutable [`dataset::Dataset`] and
//!    offers preprocessing (k-core filtering, value filters, imputation, ...).
//! 3. [`protocol`] groups, orders and splits interactions and builds the
//!    candidate sets of an evaluation setting such as `TO_LS,uni100`.
//! 4. [`models`] implements the model interface and the model zoo.
//! 5. [`eval`] runs the accelerated top-K evaluation and computes metrics.
//! 6. [`runner`] ties everything together: configuration, training with
//!    early stopping and resume, hyperparameter search and benchmarks.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atomic;
pub mod dataset;
pub mod eval;
pub mod models;
pub mod protocol;
pub mod rng;
pub mod runner;
