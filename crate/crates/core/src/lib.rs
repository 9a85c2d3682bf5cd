//! Landmark object discovery and recognition over local-feature photo
//! collections.
//!
//! The pipeline: quantize local features against a visual vocabulary, index
//! the resulting tf-idf vectors, build a matching graph of spatially verified
//! image pairs, cluster it with Iconoid Shift, then recognize queries, compact
//! the index and name clusters from user tags.

pub mod compaction;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod iconoid;
pub mod index;
pub mod pipeline;
pub mod recognition;
pub mod synth;
pub mod tags;
pub mod vocab;

pub use error::{Error, ErrorClass, Result};
