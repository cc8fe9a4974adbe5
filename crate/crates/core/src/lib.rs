//! Quality assessment of rehabilitation exercise repetitions from
//! skeleton joint-angle time series.
//!
//! The pipeline reduces each repetition's dimensionality ([`dimred`]),
//! computes a per-repetition performance metric ([`metrics`]), maps metric
//! values to quality scores in `(0, 1)` ([`scoring`]) and trains a
//! spatio-temporal network to regress those scores ([`assessnet`],
//! [`trainer`]). [`report`] renders tables and figures from stored
//! artifacts.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assessnet;
pub mod dataset;
pub mod dimred;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod scoring;
pub mod seed;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
