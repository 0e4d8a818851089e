//! Minimal reverse-mode autograd and a frame-conditioned encoder-decoder
//! transformer, sized for CPU training on small corpora.

pub mod decode;
pub mod layers;
pub mod optim;
pub mod params;
pub mod seq2seq;
pub mod tape;
pub mod tensor;

pub use decode::{generate, DecodeOptions, Decoded};
pub use optim::{AdamW, CosineSchedule};
pub use params::{Gradients, Init, ParamId, ParamSet};
pub use seq2seq::{Seq2Seq, Seq2SeqConfig, SourceTokens};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
}
