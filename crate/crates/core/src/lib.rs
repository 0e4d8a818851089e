//! Entity-aware news video captioning: corpus handling, dataset building,
//! entity perception, knowledge extraction, captioning and evaluation.

pub mod builder;
pub mod captioner;
pub mod corpus;
pub mod dates;
pub mod entities;
pub mod error;
pub mod harness;
pub mod jsonl;
pub mod knowledge;
pub mod llm;
pub mod metrics;
pub mod perceiver;
pub mod prompts;
pub mod synth;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
