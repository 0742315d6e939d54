pub mod corpus;
pub mod embedder;
pub mod error;
pub mod linalg;

pub use error::{Error, Result};
pub mod ce;
pub mod checkpoint;
pub mod decoder;
pub mod eval;
pub mod gradcheck;
pub mod kmeans;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod training;
pub mod trie;
