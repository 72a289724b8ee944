//! A minimal differentiable stack: dense layers with manual gradients, a
//! relational module summing a pair MLP over all ordered region pairs, soft
//! attention over regions, cross-entropy / euclidean distillation losses,
//! Adam/SGD training loops, and finite-difference gradient checking.

mod adam;
mod features;
mod gradcheck;
mod io;
mod loss;
mod model;
mod tensor;
mod train;

pub use adam::{Optimizer, OptimizerKind};
pub use features::extract_object_features;
pub use gradcheck::{grad_check, GradCheckPath};
pub use io::{load_checkpoint, save_checkpoint};
pub use loss::{
    cross_entropy, distill_loss, effective_pi, softmax, DistillConfig, DistillMode, L2Kind,
    LossSpec, Schedule,
};
pub use model::{attention_forward, rn_forward, Grads, QInput, RNModel};
pub use train::{
    accuracy, evaluate, train, train_iterative, EpochMetrics, IterativeOutcome, TrainConfig,
    TrainOutcome, Variant, VqaDataset, VqaSample,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("grid {grid} does not divide image size {size}")]
    BadGrid { grid: usize, size: usize },
    #[error("expected {want} {what}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        want: usize,
        got: usize,
    },
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("student training requires a teacher")]
    TeacherMissing,
    #[error("teacher answers {teacher} classes, student {student}")]
    VocabMismatch { teacher: usize, student: usize },
    #[error("variant needs masked features but the dataset has none")]
    MasksMissing,
    #[error("invalid probability vector: {0}")]
    BadProbability(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Question(#[from] crate::question::QuestionError),
}

/// How the question reaches the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    /// Fixed one-hot (anchor color x template) vector; no learned embedding.
    OneHot,
    /// Mean of learned token embeddings over the question tokens.
    BagOfWords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of region vectors (grid cells).
    pub regions: usize,
    /// Per-region feature dimension.
    pub feat_dim: usize,
    /// Dimension of the question embedding consumed by the pair MLP.
    pub q_dim: usize,
    pub q_mode: QMode,
    /// Token vocabulary size (bag-of-words mode only).
    pub vocab_size: usize,
    /// Pair-MLP widths, all ReLU.
    pub g_widths: [usize; 4],
    /// Readout hidden widths (ReLU); the output layer maps to `n_classes`.
    pub f_hidden: [usize; 3],
    pub n_classes: usize,
    /// Adds the question-conditioned soft-attention stage over regions.
    pub attention: bool,
}

impl ModelConfig {
    pub fn pair_input_dim(&self) -> usize {
        2 * self.feat_dim + self.q_dim
    }
}
