//! Knowledge distillation for small autoregressive models with selective
//! teacher intervention during student generation.
//!
//! A student generates its own training sequences, but whenever the
//! Jensen-Shannon divergence between the student's and the teacher's
//! next-token distributions exceeds a step-dependent threshold, the teacher
//! emits that token instead. The threshold decays exponentially with the
//! generated position, so the teacher steps in more often late in long
//! sequences where student errors compound.
//!
//! Module map:
//! - [`numcore`]: matrices, softmax, seeded RNG, gradient checking
//! - [`divergence`]: KL family divergences and their logit gradients
//! - [`lm`]: GRU and single-attention language models with manual backprop
//! - [`policy`]: generation policies and threshold schedules
//! - [`corpus`]: synthetic task corpus and JSONL I/O
//! - [`trainer`]: SFT, KD, SeqKD, SGO and switched distillation loops
//! - [`eval`]: ROUGE-L, length buckets, Spearman, misguidance analysis

pub mod corpus;
pub mod divergence;
pub mod error;
pub mod eval;
pub mod lm;
pub mod numcore;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
