//! Frame-conditioned encoder-decoder transformer.
//!
//! The encoder consumes projected frame features followed by an optional run
//! of auxiliary source tokens, each tagged with a segment id. The decoder is
//! autoregressive over a shared token vocabulary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{DecoderLayer, EncoderLayer, LayerNorm, Linear};
use crate::params::{Init, ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::NnError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqConfig {
    pub feature_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub vocab_size: usize,
    pub max_frames: usize,
    /// Capacity for auxiliary source tokens; zero disables the token pathway.
    pub max_source_tokens: usize,
    /// Longest decoder input, BOS included.
    pub max_target_len: usize,
    /// Segment embeddings; segment 0 tags frames. Zero disables them.
    pub segments: usize,
    /// Std of the output projection init. Small values keep initial logits
    /// near uniform.
    pub output_init_std: f64,
}

impl Seq2SeqConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return bad("width must be a positive multiple of heads");
        }
        if self.vocab_size == 0 || self.feature_dim == 0 || self.max_frames == 0 {
            return bad("vocab_size, feature_dim and max_frames must be positive");
        }
        if self.max_target_len == 0 {
            return bad("max_target_len must be positive");
        }
        if self.max_source_tokens > 0 && self.segments < 2 {
            return bad("a token pathway needs at least two segments");
        }
        Ok(())
    }
}

/// Auxiliary encoder tokens with their segment tags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SourceTokens {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
}

impl SourceTokens {
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }
}

#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub config: Seq2SeqConfig,
    pub params: ParamSet,
    frame_proj: Linear,
    frame_pos: ParamId,
    segment_emb: Option<ParamId>,
    token_emb: ParamId,
    source_pos: Option<ParamId>,
    target_pos: ParamId,
    encoder: Vec<EncoderLayer>,
    encoder_ln: LayerNorm,
    decoder: Vec<DecoderLayer>,
    decoder_ln: LayerNorm,
    output: Linear,
}

impl Seq2Seq {
    pub fn new(config: Seq2SeqConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let w = config.width;
        let emb = Init::Normal(0.1);
        let frame_proj = Linear::new(&mut ps, "frame_proj", config.feature_dim, w, &mut rng);
        let frame_pos = ps.register("frame_pos", config.max_frames, w, emb, &mut rng);
        let segment_emb =
            (config.segments > 0).then(|| ps.register("segment_emb", config.segments, w, emb, &mut rng));
        let token_emb = ps.register("token_emb", config.vocab_size, w, emb, &mut rng);
        let source_pos = (config.max_source_tokens > 0)
            .then(|| ps.register("source_pos", config.max_source_tokens, w, emb, &mut rng));
        let target_pos = ps.register("target_pos", config.max_target_len, w, emb, &mut rng);
        let encoder = (0..config.encoder_layers)
            .map(|i| EncoderLayer::new(&mut ps, &format!("enc{i}"), w, config.heads, config.ffn_hidden, &mut rng))
            .collect();
        let encoder_ln = LayerNorm::new(&mut ps, "enc_ln", w, &mut rng);
        let decoder = (0..config.decoder_layers)
            .map(|i| DecoderLayer::new(&mut ps, &format!("dec{i}"), w, config.heads, config.ffn_hidden, &mut rng))
            .collect();
        let decoder_ln = LayerNorm::new(&mut ps, "dec_ln", w, &mut rng);
        let output = Linear::with_init(
            &mut ps,
            "output",
            w,
            config.vocab_size,
            Init::Normal(config.output_init_std),
            &mut rng,
        );
        Ok(Self {
            config,
            params: ps,
            frame_proj,
            frame_pos,
            segment_emb,
            token_emb,
            source_pos,
            target_pos,
            encoder,
            encoder_ln,
            decoder,
            decoder_ln,
            output,
        })
    }

    pub fn check_source(&self, frames: &Tensor, source: &SourceTokens) -> Result<(), NnError> {
        let c = &self.config;
        if frames.rows == 0 || frames.rows > c.max_frames {
            return Err(NnError::Shape(format!(
                "expected 1..={} frames, got {}",
                c.max_frames, frames.rows
            )));
        }
        if frames.cols != c.feature_dim {
            return Err(NnError::Shape(format!(
                "expected feature dim {}, got {}",
                c.feature_dim, frames.cols
            )));
        }
        if source.ids.len() != source.segments.len() {
            return Err(NnError::Shape("source ids and segments differ in length".into()));
        }
        if source.len() > c.max_source_tokens {
            return Err(NnError::Shape(format!(
                "{} source tokens exceed capacity {}",
                source.len(),
                c.max_source_tokens
            )));
        }
        if let Some(&id) = source.ids.iter().find(|&&id| id >= c.vocab_size) {
            return Err(NnError::Shape(format!("token id {id} outside vocabulary")));
        }
        if let Some(&s) = source.segments.iter().find(|&&s| s == 0 || s >= c.segments) {
            return Err(NnError::Shape(format!("invalid source segment {s}")));
        }
        Ok(())
    }

    /// Encodes frames (and source tokens, when present) into a memory matrix.
    pub fn encode(&self, tape: &mut Tape, frames: &Tensor, source: &SourceTokens) -> Result<Var, NnError> {
        self.check_source(frames, source)?;
        let f = frames.rows;
        let x = tape.constant(frames.clone());
        let x = self.frame_proj.forward(tape, x);
        let fp = tape.param(self.frame_pos);
        let pos_ids: Vec<usize> = (0..f).collect();
        let fp = tape.embed(fp, &pos_ids);
        let mut x = tape.add(x, fp);
        if let Some(seg) = self.segment_emb {
            let table = tape.param(seg);
            let s = tape.embed(table, &vec![0; f]);
            x = tape.add(x, s);
        }
        if !source.is_empty() {
            let table = tape.param(self.token_emb);
            let t = tape.embed(table, &source.ids);
            let sp = tape.param(self.source_pos.expect("validated"));
            let ids: Vec<usize> = (0..source.len()).collect();
            let sp = tape.embed(sp, &ids);
            let t = tape.add(t, sp);
            let seg = tape.param(self.segment_emb.expect("validated"));
            let s = tape.embed(seg, &source.segments);
            let t = tape.add(t, s);
            x = tape.concat_rows(&[x, t]);
        }
        for layer in &self.encoder {
            x = layer.forward(tape, x);
        }
        Ok(self.encoder_ln.forward(tape, x))
    }

    /// Logits (`len x vocab`) for every decoder input position.
    pub fn decode(&self, tape: &mut Tape, memory: Var, inputs: &[usize]) -> Result<Var, NnError> {
        if inputs.is_empty() || inputs.len() > self.config.max_target_len {
            return Err(NnError::Shape(format!(
                "decoder input length {} outside 1..={}",
                inputs.len(),
                self.config.max_target_len
            )));
        }
        if let Some(&id) = inputs.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(NnError::Shape(format!("token id {id} outside vocabulary")));
        }
        let table = tape.param(self.token_emb);
        let x = tape.embed(table, inputs);
        let pos = tape.param(self.target_pos);
        let ids: Vec<usize> = (0..inputs.len()).collect();
        let p = tape.embed(pos, &ids);
        let mut x = tape.add(x, p);
        for layer in &self.decoder {
            x = layer.forward(tape, x, memory);
        }
        let x = self.decoder_ln.forward(tape, x);
        Ok(self.output.forward(tape, x))
    }

    /// Teacher-forced mean token cross-entropy.
    ///
    /// `inputs[i]` is the token preceding `targets[i]`; the two slices have
    /// equal length.
    pub fn loss(
        &self,
        tape: &mut Tape,
        frames: &Tensor,
        source: &SourceTokens,
        inputs: &[usize],
        targets: &[usize],
    ) -> Result<Var, NnError> {
        if inputs.len() != targets.len() {
            return Err(NnError::Shape("decoder inputs and targets differ in length".into()));
        }
        if let Some(&id) = targets.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(NnError::Shape(format!("target id {id} outside vocabulary")));
        }
        let memory = self.encode(tape, frames, source)?;
        let logits = self.decode(tape, memory, inputs)?;
        Ok(tape.cross_entropy(logits, targets))
    }

    /// Raw logits for a teacher-forced pass, convenient for inspection.
    pub fn logits(&self, frames: &Tensor, source: &SourceTokens, inputs: &[usize]) -> Result<Tensor, NnError> {
        let mut tape = Tape::new(&self.params);
        let memory = self.encode(&mut tape, frames, source)?;
        let logits = self.decode(&mut tape, memory, inputs)?;
        Ok(tape.value(logits).clone())
    }
}
