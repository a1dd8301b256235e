//! Frame-aligned early fusion of acoustic and linguistic embeddings for
//! three-class cognitive-status classification (CN / MCI / ADRD).
//!
//! The crate covers the whole pipeline after embedding extraction: the
//! binary container format ([`tensorio`]), word-timestamp alignment
//! ([`alignment`]), early and late fusion ([`fusion`]), a transformer
//! classifier ([`classifier`]), TPE hyperparameter search
//! ([`hypersearch`]), the multi-seed evaluation protocol and layer sweeps
//! ([`evaluation`]), and a synthetic corpus generator ([`synthgen`]).

pub mod alignment;
pub mod apportion;
pub mod classifier;
pub mod dataset;
mod error;
pub mod evaluation;
pub mod fusion;
pub mod hypersearch;
mod labels;
pub mod rng;
pub mod synthgen;
pub mod tensorio;

pub use error::{Error, Result};
pub use labels::{Label, Sex, NUM_CLASSES};
