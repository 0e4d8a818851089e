//! Shared training loop, model sizing and the checkpoint container used by
//! both the entity perceiver and the captioner.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use views_nn::{AdamW, CosineSchedule, Gradients, ParamSet, Seq2Seq, Seq2SeqConfig, SourceTokens, Tape, Tensor};

use crate::error::{Error, Result};
use crate::tokenizer::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    /// Longest target sequence, EOS included.
    pub max_target_tokens: usize,
    /// Frames sampled uniformly per video.
    pub frames: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale recipe: 42 epochs, batch 128, learning rate 1e-5, 19 frames.
    pub fn full_scale() -> Self {
        Self {
            epochs: 42,
            batch_size: 128,
            learning_rate: 1e-5,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            max_target_tokens: 100,
            frames: 19,
            seed: 0,
        }
    }

    /// CPU profile that trains the synthetic corpus in well under a minute.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 2e-3,
            warmup_fraction: 0.05,
            weight_decay: 0.01,
            max_target_tokens: 100,
            frames: 6,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Argument("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Argument("warmup_fraction must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.frames == 0 || self.max_target_tokens == 0 {
            return Err(Error::Argument("batch_size, frames and max_target_tokens must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Transformer sizing; vocabulary and input sizes are filled in per model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub output_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 4,
            ffn_hidden: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            output_init_std: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn tiny() -> Self {
        Self {
            width: 8,
            heads: 2,
            ffn_hidden: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            output_init_std: 0.3,
        }
    }

    pub(crate) fn seq2seq(
        &self,
        feature_dim: usize,
        vocab_size: usize,
        frames: usize,
        max_source_tokens: usize,
        max_target_tokens: usize,
    ) -> Seq2SeqConfig {
        Seq2SeqConfig {
            feature_dim,
            width: self.width,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            vocab_size,
            max_frames: frames,
            max_source_tokens,
            max_target_len: max_target_tokens,
            segments: if max_source_tokens > 0 { 4 } else { 0 },
            output_init_std: self.output_init_std,
        }
    }
}

/// One teacher-forced training pair.
#[derive(Clone, Debug)]
pub struct Example {
    pub frames: Tensor,
    pub source: SourceTokens,
    /// Target ids ending in EOS.
    pub target: Vec<usize>,
}

impl Example {
    /// Decoder inputs: BOS followed by the target shifted right.
    pub fn inputs(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.target.len());
        v.push(crate::tokenizer::BOS);
        v.extend_from_slice(&self.target[..self.target.len() - 1]);
        v
    }
}

/// Mean token cross-entropy of one example.
pub fn example_loss(model: &Seq2Seq, ex: &Example) -> Result<f64> {
    let mut tape = Tape::new(&model.params);
    let loss = model.loss(&mut tape, &ex.frames, &ex.source, &ex.inputs(), &ex.target)?;
    Ok(tape.value(loss).data[0])
}

/// AdamW with linear warmup and cosine decay over shuffled mini-batches.
/// Returns the mean training loss of each epoch.
pub fn fit(model: &mut Seq2Seq, examples: &[Example], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Argument("no training examples".into()));
    }
    let batches_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let schedule = CosineSchedule::new(cfg.learning_rate, cfg.warmup_fraction, cfg.epochs * batches_per_epoch);
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let mut grads = Gradients::zeros_like(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.zero();
            for &i in batch {
                let ex = &examples[i];
                let mut tape = Tape::new(&model.params);
                let loss = model.loss(&mut tape, &ex.frames, &ex.source, &ex.inputs(), &ex.target)?;
                total += tape.value(loss).data[0];
                tape.backward(loss, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut model.params, &mut grads, schedule.lr(step));
            step += 1;
        }
        let mean = total / examples.len() as f64;
        log::debug!("epoch {} mean loss {mean:.4}", epoch + 1);
        curve.push(mean);
    }
    Ok(curve)
}

pub const CHECKPOINT_FORMAT: &str = "views-ckpt/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    EntityPerceiver,
    Captioner,
}

/// Self-describing model file: sizing, vocabulary, training recipe, loss
/// curve and parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub kind: ModelKind,
    pub model: Seq2SeqConfig,
    pub vocab: Vocab,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<serde_json::Value>,
    pub loss_curve: Vec<f64>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path, kind: ModelKind) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Integrity(format!(
                "{}: unsupported checkpoint format {:?}",
                path.display(),
                ck.format
            )));
        }
        if ck.kind != kind {
            return Err(Error::Integrity(format!(
                "{}: checkpoint holds {:?}, expected {:?}",
                path.display(),
                ck.kind,
                kind
            )));
        }
        ck.vocab.reindex();
        Ok(ck)
    }

    /// Rebuilds the network and installs the stored parameters.
    pub fn network(&self) -> Result<Seq2Seq> {
        let mut model = Seq2Seq::new(self.model.clone(), 0)?;
        model.params.load_from(self.params.clone())?;
        Ok(model)
    }
}
