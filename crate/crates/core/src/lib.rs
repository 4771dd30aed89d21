//! Exemplar-conditioned visual question generation.
//!
//! A target image is encoded together with its nearest ("supporting") and
//! farthest ("contrasting") training exemplars by three weight-sharing
//! towers. Image and caption embeddings are fused into a context vector,
//! the towers are tied together with a triplet margin loss, and an LSTM
//! decodes the question from the target's context vector.
//!
//! Everything runs on ingested feature vectors; no pretrained network is
//! involved. The crate also carries the n-gram evaluation metrics and the
//! Friedman/Nemenyi rank analysis used to compare trained systems.

pub mod analysis;
pub mod config;
pub mod dataio;
pub mod encoders;
pub mod error;
pub mod exemplar;
pub mod metrics;
pub mod mixture;
pub mod model;
pub mod params;
pub mod selfcheck;
pub mod tensor;

pub use error::{Error, Result};
