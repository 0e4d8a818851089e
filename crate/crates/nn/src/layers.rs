use rand_chacha::ChaCha8Rng;

use crate::params::{Init, ParamId, ParamSet};
use crate::tape::{Tape, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::with_init(ps, name, input, output, Init::Xavier, rng)
    }

    pub fn with_init(
        ps: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = ps.register(format!("{name}.weight"), input, output, init, rng);
        let bias = ps.register(format!("{name}.bias"), 1, output, Init::Zeros, rng);
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let gamma = ps.register(format!("{name}.gamma"), 1, width, Init::Ones, rng);
        let beta = ps.register(format!("{name}.beta"), 1, width, Init::Zeros, rng);
        Self { gamma, beta }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamSet, name: &str, width: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(heads > 0 && width % heads == 0, "width must divide evenly into heads");
        Self {
            query: Linear::new(ps, &format!("{name}.q"), width, width, rng),
            key: Linear::new(ps, &format!("{name}.k"), width, width, rng),
            value: Linear::new(ps, &format!("{name}.v"), width, width, rng),
            out: Linear::new(ps, &format!("{name}.o"), width, width, rng),
            heads,
            width,
        }
    }

    /// Attention of `x` (queries) over `memory` (keys and values).
    pub fn forward(&self, tape: &mut Tape, x: Var, memory: Var, causal: bool) -> Var {
        let q = self.query.forward(tape, x);
        let k = self.key.forward(tape, memory);
        let v = self.value.forward(tape, memory);
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh),
                    tape.slice_cols(k, h * dh, dh),
                    tape.slice_cols(v, h * dh, dh),
                )
            };
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores, causal);
            outs.push(tape.matmul(attn, vh));
        }
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        self.out.forward(tape, joined)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamSet, name: &str, width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            up: Linear::new(ps, &format!("{name}.up"), width, hidden, rng),
            down: Linear::new(ps, &format!("{name}.down"), hidden, width, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.up.forward(tape, x);
        let h = tape.gelu(h);
        self.down.forward(tape, h)
    }
}

/// Pre-norm encoder block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(ps: &mut ParamSet, name: &str, width: usize, heads: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            ln_attn: LayerNorm::new(ps, &format!("{name}.ln_attn"), width, rng),
            attn: MultiHeadAttention::new(ps, &format!("{name}.attn"), width, heads, rng),
            ln_ffn: LayerNorm::new(ps, &format!("{name}.ln_ffn"), width, rng),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), width, hidden, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.ln_attn.forward(tape, x);
        let a = self.attn.forward(tape, h, h, false);
        let x = tape.add(x, a);
        let h = self.ln_ffn.forward(tape, x);
        let f = self.ffn.forward(tape, h);
        tape.add(x, f)
    }
}

/// Pre-norm decoder block: causal self-attention, cross-attention, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new(ps: &mut ParamSet, name: &str, width: usize, heads: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            ln_self: LayerNorm::new(ps, &format!("{name}.ln_self"), width, rng),
            self_attn: MultiHeadAttention::new(ps, &format!("{name}.self_attn"), width, heads, rng),
            ln_cross: LayerNorm::new(ps, &format!("{name}.ln_cross"), width, rng),
            cross_attn: MultiHeadAttention::new(ps, &format!("{name}.cross_attn"), width, heads, rng),
            ln_ffn: LayerNorm::new(ps, &format!("{name}.ln_ffn"), width, rng),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), width, hidden, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, memory: Var) -> Var {
        let h = self.ln_self.forward(tape, x);
        let a = self.self_attn.forward(tape, h, h, true);
        let x = tape.add(x, a);
        let h = self.ln_cross.forward(tape, x);
        let c = self.cross_attn.forward(tape, h, memory, false);
        let x = tape.add(x, c);
        let h = self.ln_ffn.forward(tape, x);
        let f = self.ffn.forward(tape, h);
        tape.add(x, f)
    }
}
