//! Captioning model: frames fused with the video-information channels
//! (detected entities, context passage, optional ASR) by concatenation in
//! the encoder, each channel tagged with its own segment embedding.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use views_nn::{generate as nn_generate, DecodeOptions, Seq2Seq, SourceTokens, Tape, Tensor, Var};

use crate::corpus::{CaptionOrigin, CaptionRecord, FrameFeatures, QcStatus, VideoSample, MAX_CAPTION_TOKENS};
use crate::entities::EntitySet;
use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::perceiver::check_target;
use crate::tokenizer::{TextTokenizer, Vocab, WordPunct, BOS, EOS, PAD, UNK};
use crate::train::{fit, Checkpoint, Example, ModelConfig, ModelKind, TrainConfig, CHECKPOINT_FORMAT};

/// Token budget shared by all video-information channels.
pub const MAX_VI_TOKENS: usize = 300;

pub const SEGMENT_ENTITIES: usize = 1;
pub const SEGMENT_CONTEXT: usize = 2;
pub const SEGMENT_ASR: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationConfig {
    pub use_entities: bool,
    pub use_context: bool,
    pub use_asr: bool,
}

impl AblationConfig {
    pub const FULL: Self = Self::new(true, true, false);
    pub const NO_ENTITIES: Self = Self::new(false, true, false);
    pub const NO_KNOWLEDGE: Self = Self::new(true, false, false);
    pub const NO_VI: Self = Self::new(false, false, false);

    pub const fn new(use_entities: bool, use_context: bool, use_asr: bool) -> Self {
        Self {
            use_entities,
            use_context,
            use_asr,
        }
    }

    /// The four rows of the design-choice table, full model first.
    pub fn table_rows() -> [Self; 4] {
        [Self::FULL, Self::NO_ENTITIES, Self::NO_KNOWLEDGE, Self::NO_VI]
    }

    pub fn is_video_only(&self) -> bool {
        !(self.use_entities || self.use_context || self.use_asr)
    }

    /// Row label as printed in tables.
    pub fn label(&self) -> String {
        let base = match (self.use_entities, self.use_context) {
            (true, true) => "Ours",
            (false, true) => "w/o Entities",
            (true, false) => "w/o Knowledge",
            (false, false) => "w/o VI",
        };
        if self.use_asr {
            format!("{base} + ASR")
        } else {
            base.to_string()
        }
    }

    /// Short name used in file names and on the command line.
    pub fn slug(&self) -> String {
        let base = match (self.use_entities, self.use_context) {
            (true, true) => "full",
            (false, true) => "no-entities",
            (true, false) => "no-knowledge",
            (false, false) => "no-vi",
        };
        if self.use_asr {
            format!("{base}+asr")
        } else {
            base.to_string()
        }
    }
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::FULL
    }
}

impl fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.slug())
    }
}

impl FromStr for AblationConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, asr) = match s.strip_suffix("+asr") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let mut a = match base {
            "full" => Self::FULL,
            "no-entities" => Self::NO_ENTITIES,
            "no-knowledge" => Self::NO_KNOWLEDGE,
            "no-vi" => Self::NO_VI,
            other => return Err(Error::Argument(format!("unknown ablation {other:?}"))),
        };
        a.use_asr = asr;
        Ok(a)
    }
}

/// Tokenised video information, already truncated to the budget.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VIBundle {
    pub entity_tokens: Vec<String>,
    pub context_tokens: Vec<String>,
    pub asr_tokens: Vec<String>,
}

impl VIBundle {
    pub fn len(&self) -> usize {
        self.entity_tokens.len() + self.context_tokens.len() + self.asr_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Encoder ids in order entities, context, ASR, with segment tags.
    pub fn source(&self, vocab: &Vocab) -> SourceTokens {
        let mut s = SourceTokens::default();
        for (toks, seg) in [
            (&self.entity_tokens, SEGMENT_ENTITIES),
            (&self.context_tokens, SEGMENT_CONTEXT),
            (&self.asr_tokens, SEGMENT_ASR),
        ] {
            s.ids.extend(vocab.encode_tokens(toks));
            s.segments.extend(std::iter::repeat(seg).take(toks.len()));
        }
        s
    }
}

/// Builds the bundle for the enabled channels. When over budget, entities
/// are kept whole, then the context is cut from the tail, then ASR.
pub fn assemble_vi_bundle(
    es: &EntitySet,
    context: Option<&str>,
    asr: Option<&str>,
    tokenizer: &dyn TextTokenizer,
    ablation: &AblationConfig,
) -> VIBundle {
    let mut budget = MAX_VI_TOKENS;
    let mut take = |mut toks: Vec<String>| {
        toks.truncate(budget);
        budget -= toks.len();
        toks
    };
    let entity_tokens = if ablation.use_entities && !es.is_empty() {
        take(tokenizer.tokenize(&es.to_string()))
    } else {
        Vec::new()
    };
    let context_tokens = match context {
        Some(c) if ablation.use_context => take(tokenizer.tokenize(c)),
        _ => Vec::new(),
    };
    let asr_tokens = match asr {
        Some(a) if ablation.use_asr => take(tokenizer.tokenize(a)),
        _ => Vec::new(),
    };
    VIBundle {
        entity_tokens,
        context_tokens,
        asr_tokens,
    }
}

/// One line of a VI cache file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViRecord {
    pub sample_id: String,
    pub entity_string: String,
    pub context_text: String,
    #[serde(default)]
    pub asr_text: Option<String>,
}

impl ViRecord {
    pub fn bundle(&self, ablation: &AblationConfig) -> Result<VIBundle> {
        let es = if self.entity_string.trim().is_empty() {
            EntitySet::new()
        } else {
            crate::entities::parse_entity_set(&self.entity_string).map_err(|source| Error::EntityOutput {
                raw: self.entity_string.clone(),
                source,
            })?
        };
        let ctx = (!self.context_text.trim().is_empty()).then_some(self.context_text.as_str());
        Ok(assemble_vi_bundle(&es, ctx, self.asr_text.as_deref(), &WordPunct, ablation))
    }
}

pub fn load_vi(path: &Path) -> Result<Vec<ViRecord>> {
    read_jsonl(path)
}

pub fn save_vi(records: &[ViRecord], path: &Path) -> Result<()> {
    write_jsonl(path, records)
}

/// VI records keyed by sample id.
pub fn vi_index(records: &[ViRecord]) -> HashMap<&str, &ViRecord> {
    records.iter().map(|r| (r.sample_id.as_str(), r)).collect()
}

/// Bundle for `sample` under `ablation`, or a data error naming the sample
/// when a required record is missing.
pub fn bundle_for(sample_id: &str, vi: &HashMap<&str, &ViRecord>, ablation: &AblationConfig) -> Result<VIBundle> {
    if ablation.is_video_only() {
        return Ok(VIBundle::default());
    }
    match vi.get(sample_id) {
        Some(r) => r.bundle(ablation),
        None => Err(Error::Data(format!("no video information for sample {sample_id:?}"))),
    }
}

/// Vocabulary over training captions and training VI text.
pub fn caption_vocab<'a>(samples: &[&'a VideoSample], vi: &HashMap<&str, &ViRecord>) -> Vocab {
    let mut texts: Vec<&str> = vec!["{ } [ ] , :"];
    for s in samples {
        if let Some(c) = &s.caption {
            texts.push(&c.text);
        }
        if let Some(r) = vi.get(s.id.as_str()) {
            texts.push(&r.entity_string);
            texts.push(&r.context_text);
            if let Some(a) = &r.asr_text {
                texts.push(a);
            }
        }
    }
    Vocab::build(&WordPunct, texts)
}

#[derive(Clone, Debug)]
pub struct Captioner {
    pub model: Seq2Seq,
    pub vocab: Vocab,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
    pub loss_curve: Vec<f64>,
    pub beam: usize,
}

impl Captioner {
    pub fn new(
        vocab: Vocab,
        feature_dim: usize,
        model: &ModelConfig,
        train: TrainConfig,
        ablation: AblationConfig,
    ) -> Result<Self> {
        Self::with_source_limit(vocab, feature_dim, model, train, ablation, MAX_VI_TOKENS)
    }

    /// As [`Captioner::new`] with a shorter VI window, for small models.
    pub fn with_source_limit(
        vocab: Vocab,
        feature_dim: usize,
        model: &ModelConfig,
        train: TrainConfig,
        ablation: AblationConfig,
        max_source_tokens: usize,
    ) -> Result<Self> {
        train.validate()?;
        if max_source_tokens == 0 || max_source_tokens > MAX_VI_TOKENS {
            return Err(Error::Argument(format!("VI window must lie in 1..={MAX_VI_TOKENS}")));
        }
        if train.max_target_tokens > MAX_CAPTION_TOKENS + 1 {
            return Err(Error::Argument(format!(
                "captions are capped at {MAX_CAPTION_TOKENS} tokens plus EOS"
            )));
        }
        let cfg = model.seq2seq(feature_dim, vocab.len(), train.frames, max_source_tokens, train.max_target_tokens);
        Ok(Self {
            model: Seq2Seq::new(cfg, train.seed)?,
            vocab,
            train,
            ablation,
            loss_curve: Vec::new(),
            beam: 1,
        })
    }

    /// Caption ids with EOS appended; over-length captions are an argument
    /// error.
    pub fn target(&self, caption: &str) -> Result<Vec<usize>> {
        let mut ids = self.vocab.encode(&WordPunct, caption);
        if ids.len() > MAX_CAPTION_TOKENS {
            return Err(Error::Argument(format!(
                "caption of {} tokens exceeds {MAX_CAPTION_TOKENS}",
                ids.len()
            )));
        }
        ids.push(EOS);
        check_target(&ids, self.train.max_target_tokens)?;
        Ok(ids)
    }

    pub fn frames(&self, v: &FrameFeatures) -> Tensor {
        v.sampled_tensor(self.train.frames)
    }

    pub fn loss_var(&self, tape: &mut Tape, v: &FrameFeatures, bundle: &VIBundle, target: &[usize]) -> Result<Var> {
        check_target(target, self.train.max_target_tokens)?;
        let ex = Example {
            frames: self.frames(v),
            source: bundle.source(&self.vocab),
            target: target.to_vec(),
        };
        Ok(self.model.loss(tape, &ex.frames, &ex.source, &ex.inputs(), &ex.target)?)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            kind: ModelKind::Captioner,
            model: self.model.config.clone(),
            vocab: self.vocab.clone(),
            train: self.train.clone(),
            ablation: Some(serde_json::to_value(self.ablation).expect("plain struct")),
            loss_curve: self.loss_curve.clone(),
            params: self.model.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.kind != ModelKind::Captioner {
            return Err(Error::Integrity("checkpoint is not a captioner".into()));
        }
        let ablation = match &ck.ablation {
            Some(v) => serde_json::from_value(v.clone())?,
            None => return Err(Error::Integrity("captioner checkpoint lacks its ablation".into())),
        };
        Ok(Self {
            model: ck.network()?,
            vocab: ck.vocab,
            train: ck.train,
            ablation,
            loss_curve: ck.loss_curve,
            beam: 1,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path, ModelKind::Captioner)?)
    }
}

/// Teacher-forced mean token cross-entropy of the caption.
pub fn cm_loss(cm: &Captioner, v: &FrameFeatures, bundle: &VIBundle, target: &[usize]) -> Result<f64> {
    let mut tape = Tape::new(&cm.model.params);
    let loss = cm.loss_var(&mut tape, v, bundle, target)?;
    Ok(tape.value(loss).data[0])
}

/// Trains on ground-truth captions with VI from `vi` per the model's
/// ablation.
pub fn train_cm(cm: &mut Captioner, samples: &[&VideoSample], vi: &HashMap<&str, &ViRecord>) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let examples = samples
        .iter()
        .map(|s| {
            let caption = s
                .caption
                .as_ref()
                .ok_or_else(|| Error::Data(format!("sample {:?} has no caption", s.id)))?;
            let bundle = bundle_for(&s.id, vi, &cm.ablation)?;
            Ok(Example {
                frames: cm.frames(&s.frame_features),
                source: bundle.source(&cm.vocab),
                target: cm.target(&caption.text)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let train = cm.train.clone();
    let curve = fit(&mut cm.model, &examples, &train)?;
    cm.loss_curve = curve.clone();
    Ok(curve)
}

/// Decodes a caption of at most 100 tokens. An empty decode is returned
/// flagged rather than as an error.
pub fn generate(cm: &Captioner, sample_id: &str, v: &FrameFeatures, bundle: &VIBundle) -> Result<CaptionRecord> {
    let opts = DecodeOptions {
        bos: BOS,
        eos: EOS,
        max_len: MAX_CAPTION_TOKENS.min(cm.train.max_target_tokens.saturating_sub(1)),
        beam: cm.beam,
        banned: vec![PAD, BOS, UNK],
    };
    let out = nn_generate(&cm.model, &cm.frames(v), &bundle.source(&cm.vocab), &opts)?;
    let text = cm.vocab.decode(&WordPunct, &out.tokens);
    let mut rec = CaptionRecord::new(sample_id, text, CaptionOrigin::ModelPrediction);
    if rec.text.is_empty() {
        rec.qc_status = QcStatus::Flagged;
    }
    Ok(rec)
}

/// Captions for `samples` using the VI cache.
pub fn generate_all(cm: &Captioner, samples: &[&VideoSample], vi: &HashMap<&str, &ViRecord>) -> Result<Vec<CaptionRecord>> {
    samples
        .iter()
        .map(|s| generate(cm, &s.id, &s.frame_features, &bundle_for(&s.id, vi, &cm.ablation)?))
        .collect()
}

pub fn load_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    read_jsonl(path)
}

pub fn save_captions(records: &[CaptionRecord], path: &Path) -> Result<()> {
    write_jsonl(path, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::sample;

    fn es20() -> EntitySet {
        // 20 tokens: { P : [ a..n ] }
        EntitySet::new().with("P", &["a b c d e f g h i j k l m n"])
    }

    #[test]
    fn bundle_channels_and_truncation() {
        let es = es20();
        let ctx: String = (0..400).map(|i| format!("w{i} ")).collect();
        let b = assemble_vi_bundle(&es, Some(&ctx), Some("hello there"), &WordPunct, &AblationConfig::FULL);
        assert_eq!(b.entity_tokens.len(), 20);
        assert_eq!(b.context_tokens.len(), 280);
        assert_eq!(b.context_tokens[279], "w279");
        assert!(b.asr_tokens.is_empty());
        assert_eq!(b.len(), MAX_VI_TOKENS);

        let short = assemble_vi_bundle(&es, Some("c d"), Some("x y"), &WordPunct, &AblationConfig::new(true, true, true));
        assert_eq!(short.len(), 24);
        assert_eq!(short.asr_tokens, ["x", "y"]);
        assert!(assemble_vi_bundle(&es, Some("c"), Some("x"), &WordPunct, &AblationConfig::NO_VI).is_empty());
    }

    #[test]
    fn labels_and_slugs_round_trip() {
        let labels: Vec<String> = AblationConfig::table_rows().iter().map(|a| a.label()).collect();
        assert_eq!(labels, ["Ours", "w/o Entities", "w/o Knowledge", "w/o VI"]);
        for a in AblationConfig::table_rows() {
            assert_eq!(a.slug().parse::<AblationConfig>().unwrap(), a);
        }
        let asr: AblationConfig = "full+asr".parse().unwrap();
        assert!(asr.use_asr);
        assert!("half".parse::<AblationConfig>().is_err());
    }

    fn tiny(ablation: AblationConfig) -> Captioner {
        let vocab = Vocab::build(&WordPunct, ["a b c . { } [ ] , : P"]);
        let train = TrainConfig {
            frames: 2,
            max_target_tokens: 8,
            ..TrainConfig::desk()
        };
        Captioner::new(vocab, 4, &ModelConfig::tiny(), train, ablation).unwrap()
    }

    #[test]
    fn empty_bundle_equals_video_only_pass() {
        let cm = tiny(AblationConfig::FULL);
        let s = sample("a", "2015-01-01", 4);
        let frames = cm.frames(&s.frame_features);
        let a = cm.model.logits(&frames, &SourceTokens::default(), &[BOS, 4]).unwrap();
        let b = cm
            .model
            .logits(&frames, &VIBundle::default().source(&cm.vocab), &[BOS, 4])
            .unwrap();
        assert_eq!(a.data, b.data);
        let full = assemble_vi_bundle(&EntitySet::new().with("P", &["a"]), Some("b c"), None, &WordPunct, &cm.ablation);
        let t = cm.target("a b .").unwrap();
        assert!(cm_loss(&cm, &s.frame_features, &full, &t).unwrap().is_finite());
        assert!(cm_loss(&cm, &s.frame_features, &VIBundle::default(), &t).unwrap().is_finite());
    }

    #[test]
    fn missing_vi_names_the_sample() {
        let mut cm = tiny(AblationConfig::FULL);
        let mut s = sample("vid7", "2015-01-01", 4);
        s.caption = Some(CaptionRecord::new("vid7", "a b .", CaptionOrigin::EventDescriptions));
        let err = train_cm(&mut cm, &[&s], &HashMap::new()).unwrap_err();
        assert!(err.to_string().contains("vid7"), "{err}");
        let mut video_only = tiny(AblationConfig::NO_VI);
        assert!(train_cm(&mut video_only, &[&s], &HashMap::new()).is_ok());
    }

    #[test]
    fn untrained_generation_is_well_formed() {
        let cm = tiny(AblationConfig::NO_VI);
        let s = sample("a", "2015-01-01", 4);
        let greedy = generate(&cm, "a", &s.frame_features, &VIBundle::default()).unwrap();
        assert!(greedy.token_count <= MAX_CAPTION_TOKENS);
        assert_eq!(greedy.origin, CaptionOrigin::ModelPrediction);
        let mut beam1 = cm.clone();
        beam1.beam = 1;
        assert_eq!(generate(&beam1, "a", &s.frame_features, &VIBundle::default()).unwrap(), greedy);
        assert!(cm.target(&"a ".repeat(101)).is_err());
    }
}
