//! Word-level knowledge-distillation objectives built around a
//! differentiable ranking loss, plus the top-k consistency metrics and
//! desk-scale teacher/student models used to exercise them.
//!
//! - [`prob`]: distribution primitives (temperature softmax, top-k,
//!   nucleus size, top-k union).
//! - [`softrank`]: the soft ranking operator and its backward pass.
//! - [`objectives`]: KL/RKL/JSD/TVD/AKL, the rank-correlation losses, and
//!   their combination with analytic gradients through the student
//!   softmax.
//! - [`metrics`]: consistency rate (CR), mean overlap rate (MOR),
//!   perplexity, and multi-modal proportion reports.
//! - [`toylm`]: tiny feed-forward language models, AdamW with gradient
//!   clipping, and the distillation loop.
//! - [`gradcheck`]: the finite-difference harness behind the `gradcheck`
//!   CLI command.

pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod objectives;
pub mod prob;
pub mod softrank;
pub mod toylm;

pub use error::{Error, Result};
pub use objectives::{BaseDivergence, LossResult, ObjectiveSpec};
pub use prob::{LogitVector, ProbVector, TopKUnion};
pub use softrank::{SoftRankConfig, SoftRanks};
