// SPDX-License-Identifier: MIT OR Apache-2.0

//! Measures how closely speech and text representations line up inside a
//! speech language model.
//!
//! The crate works on dumps of per-layer hidden states for paired
//! speech/text inputs ([`store`]) and provides:
//!
//! - sequence-level layer profiles of cosine similarity and Euclidean
//!   distance between mean-pooled states ([`coarse`]),
//! - token-level alignment paths, their monotonicity and consistency, and
//!   the alignment path score ([`token`]),
//! - the text/speech performance gap and least-squares fits of it against
//!   any of the above ([`regression`]),
//! - angle and length edits of selected speech embeddings ([`intervention`]),
//! - synthetic corpora with a planted alignment ([`fixture`]) and CSV/JSON/SVG
//!   output ([`report`]).

pub mod coarse;
pub mod error;
pub mod fixture;
pub mod intervention;
pub mod matrix;
pub mod metric;
pub mod numeric;
pub mod regression;
pub mod report;
pub mod store;
pub mod svg;
pub mod token;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use metric::Metric;
pub use store::{ActivationSet, LayerStack, Manifest, Modality, SampleEntry};
