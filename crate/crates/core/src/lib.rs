//! Passage retrieval engine: BM25, a trainable dual encoder with in-batch
//! negatives, exact and HNSW inner-product search, hybrid reranking and an
//! extractive reader.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the two concrete instantiations.

mod binio;
pub mod corpus;
pub mod dense_index;
pub mod dual_encoder;
pub mod error;
pub mod evalbench;
pub mod matrix;
pub mod optim;
pub mod qa_dataset;
pub mod ranking;
pub mod reader;
pub mod retrieval;
pub mod scalar;
pub mod synth;
pub mod seed;
pub mod sparse_index;
pub mod vocab;

pub use error::{Error, Result};
pub use ranking::{PassageId, RankedList, ScoredPassage};
pub use scalar::Scalar;

pub type EncoderF32 = dual_encoder::EncoderParams<f32>;
pub type EncoderF64 = dual_encoder::EncoderParams<f64>;
pub type ReaderF32 = reader::ReaderParams<f32>;
pub type ReaderF64 = reader::ReaderParams<f64>;
