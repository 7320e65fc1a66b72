//! Cross-prompt pre-finetuning for automated short answer scoring.
//!
//! A regression scorer reads a prompt's rubric key phrases together with a
//! student answer. It is first trained on a pool of already graded prompts
//! and then finetuned on a small sample of a new prompt's answers.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
