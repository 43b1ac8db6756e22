//! Offline passage embedding and maximum inner product search, exact and
//! approximate.

mod hnsw;
mod vectors;

pub use hnsw::{HnswIndex, HnswParams, NeighborSelection};
pub use vectors::{dot_f64, embed_store, gaussian_vectors, recall_at_k, VectorStore};
