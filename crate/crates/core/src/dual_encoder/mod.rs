//! The trainable two-tower retriever.

mod batch;
mod loss;
mod params;
mod similarity;
mod train;

pub use batch::{batch_loss_and_grad, in_batch_scores, BatchMode, Dropout, TrainBatch};
pub use loss::{nll_loss_and_grad, row_loss_and_grad, triplet_loss_and_grad, LossKind};
pub use params::{EncoderParams, Tower};
pub use similarity::{similarity, similarity_with_grad, SimilarityKind};
pub use train::{
    make_batch, train, train_step, EncodedExample, LossName, OptimizerState, TrainConfig,
    TrainOutcome,
};

use serde::{Deserialize, Serialize};

/// JSON written next to a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub config: TrainConfig,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub dim: usize,
    pub train_examples: usize,
    pub loss_trace: Vec<f64>,
    pub final_loss: Option<f64>,
}
