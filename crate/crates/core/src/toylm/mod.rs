//! Desk-scale teacher/student models and the distillation loop.
//!
//! The model is a feed-forward n-gram LM: concatenated byte embeddings,
//! one tanh hidden layer, a linear head. Gradients are hand-derived and
//! exact; training is AdamW with global-norm clipping, single-threaded
//! and deterministic for a fixed seed.

mod corpus;
mod model;
mod optim;
mod train;

pub use corpus::generate_corpus;
pub use model::{ForwardCache, LogitTable, TinyLm, TinyLmDims};
pub use optim::{adamw_step, AdamWState, TrainConfig};
pub use train::{
    distill, distill_table, stride_positions, train_split_end, train_teacher, DistillRun,
    EvalConfig, EvalRecord, HeldOutEval, TableDistillRun, TokenDataset,
};
