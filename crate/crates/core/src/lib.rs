//! Learned chart and multiple-view scoring with greedy dashboard
//! recommendation.

pub mod chartspec;
pub mod error;
pub mod featurize;
pub mod ingest;
pub mod mvrank;
pub mod neural;
pub mod num;
pub mod pairgen;
pub mod provenance;
pub mod ranker;
pub mod recommend;
pub mod synth;

pub use error::{Error, Result};
pub use num::Scalar;

/// Scorer at training precision.
pub type Scorer = neural::BiLstmScorer<f64>;
/// Scorer at inference precision.
pub type Scorer32 = neural::BiLstmScorer<f32>;
pub type Tensor = neural::Tensor2<f64>;
