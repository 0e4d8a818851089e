//! Entity perceiver: frames in, canonical entity string out. Also the
//! nearest-neighbour retrieval baseline it is compared against.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use views_nn::{generate, DecodeOptions, Seq2Seq, SourceTokens, Tape, Tensor, Var};

use crate::corpus::{FrameFeatures, VideoSample};
use crate::entities::{parse_entity_set, EntitySet};
use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::tokenizer::{Vocab, WordPunct, BOS, EOS, PAD, UNK};
use crate::train::{fit, Checkpoint, Example, ModelConfig, ModelKind, TrainConfig, CHECKPOINT_FORMAT};

#[derive(Clone, Debug)]
pub struct EntityPerceiver {
    pub model: Seq2Seq,
    pub vocab: Vocab,
    pub train: TrainConfig,
    pub loss_curve: Vec<f64>,
    /// Beam width at decode time; 1 is greedy.
    pub beam: usize,
}

/// Vocabulary over the canonical entity strings of `samples`.
pub fn entity_vocab<'a>(samples: impl IntoIterator<Item = &'a VideoSample>) -> Vocab {
    let strings: Vec<String> = samples
        .into_iter()
        .filter_map(|s| s.entities.as_ref().map(|e| e.to_string()))
        .collect();
    // Structural tokens first so that tiny vocabularies still parse.
    let mut texts = vec!["{ } [ ] , :".to_string()];
    texts.extend(strings);
    Vocab::build(&WordPunct, texts.iter().map(String::as_str))
}

impl EntityPerceiver {
    pub fn new(vocab: Vocab, feature_dim: usize, model: &ModelConfig, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let cfg = model.seq2seq(feature_dim, vocab.len(), train.frames, 0, train.max_target_tokens);
        Ok(Self {
            model: Seq2Seq::new(cfg, train.seed)?,
            vocab,
            train,
            loss_curve: Vec::new(),
            beam: 1,
        })
    }

    /// Target ids for an entity set, EOS appended.
    pub fn target(&self, es: &EntitySet) -> Result<Vec<usize>> {
        let mut ids = self.vocab.encode(&WordPunct, &es.to_string());
        ids.push(EOS);
        if ids.len() > self.train.max_target_tokens {
            return Err(Error::Argument(format!(
                "entity target of {} tokens exceeds max_target_tokens {}",
                ids.len(),
                self.train.max_target_tokens
            )));
        }
        Ok(ids)
    }

    pub fn frames(&self, v: &FrameFeatures) -> Tensor {
        v.sampled_tensor(self.train.frames)
    }

    /// Loss node for gradient inspection.
    pub fn loss_var(&self, tape: &mut Tape, v: &FrameFeatures, target: &[usize]) -> Result<Var> {
        check_target(target, self.train.max_target_tokens)?;
        let ex = Example {
            frames: self.frames(v),
            source: SourceTokens::default(),
            target: target.to_vec(),
        };
        Ok(self.model.loss(tape, &ex.frames, &ex.source, &ex.inputs(), &ex.target)?)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            kind: ModelKind::EntityPerceiver,
            model: self.model.config.clone(),
            vocab: self.vocab.clone(),
            train: self.train.clone(),
            ablation: None,
            loss_curve: self.loss_curve.clone(),
            params: self.model.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.kind != ModelKind::EntityPerceiver {
            return Err(Error::Integrity("checkpoint is not an entity perceiver".into()));
        }
        Ok(Self {
            model: ck.network()?,
            vocab: ck.vocab,
            train: ck.train,
            loss_curve: ck.loss_curve,
            beam: 1,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path, ModelKind::EntityPerceiver)?)
    }
}

pub(crate) fn check_target(target: &[usize], max: usize) -> Result<()> {
    if target.is_empty() || *target.last().unwrap() != EOS {
        return Err(Error::Argument("target must be non-empty and end with EOS".into()));
    }
    if target.len() > max {
        return Err(Error::Argument(format!(
            "target of {} tokens exceeds max_target_tokens {max}",
            target.len()
        )));
    }
    Ok(())
}

/// Teacher-forced mean token cross-entropy of `target` given the video.
pub fn ep_loss(ep: &EntityPerceiver, v: &FrameFeatures, target: &[usize]) -> Result<f64> {
    let mut tape = Tape::new(&ep.model.params);
    let loss = ep.loss_var(&mut tape, v, target)?;
    Ok(tape.value(loss).data[0])
}

/// Trains on every sample's ground-truth entities; returns the per-epoch
/// mean loss, also kept on the model.
pub fn train_ep(ep: &mut EntityPerceiver, samples: &[&VideoSample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let examples = samples
        .iter()
        .map(|s| {
            let es = s
                .entities
                .as_ref()
                .ok_or_else(|| Error::Data(format!("sample {:?} has no ground-truth entities", s.id)))?;
            Ok(Example {
                frames: ep.frames(&s.frame_features),
                source: SourceTokens::default(),
                target: ep.target(es)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let train = ep.train.clone();
    let curve = fit(&mut ep.model, &examples, &train)?;
    ep.loss_curve = curve.clone();
    Ok(curve)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityDecode {
    pub entities: EntitySet,
    pub raw: String,
    /// The output could not be parsed even after repair.
    pub failed: bool,
}

/// Closes open brackets after cutting the text back to its last complete
/// list. Returns `None` when nothing usable remains.
pub fn repair_entity_string(raw: &str) -> Option<String> {
    let cut = raw.rfind(']')?;
    let mut s = raw[..=cut].to_string();
    let mut stack = Vec::new();
    for c in s.chars() {
        match c {
            '{' | '[' => stack.push(c),
            '}' | ']' => {
                stack.pop();
            }
            _ => {}
        }
    }
    if !s.trim_start().starts_with('{') {
        s.insert(0, '{');
    }
    while let Some(open) = stack.pop() {
        s.push(if open == '[' { ']' } else { '}' });
    }
    if !s.ends_with('}') {
        s.push('}');
    }
    Some(s)
}

/// Greedy (or beam) decode followed by parsing; malformed output is
/// repaired once, then degrades to an empty set with `failed` set.
pub fn decode_entities(ep: &EntityPerceiver, v: &FrameFeatures) -> Result<EntityDecode> {
    let opts = DecodeOptions {
        bos: BOS,
        eos: EOS,
        max_len: ep.train.max_target_tokens.saturating_sub(1),
        beam: ep.beam,
        banned: vec![PAD, BOS, UNK],
    };
    let out = generate(&ep.model, &ep.frames(v), &SourceTokens::default(), &opts)?;
    let raw = ep.vocab.decode(&WordPunct, &out.tokens);
    if raw.trim().is_empty() {
        return Ok(EntityDecode {
            entities: EntitySet::new(),
            raw,
            failed: false,
        });
    }
    let parsed = parse_entity_set(&raw)
        .ok()
        .or_else(|| repair_entity_string(&raw).and_then(|r| parse_entity_set(&r).ok()));
    Ok(match parsed {
        Some(entities) => EntityDecode {
            entities,
            raw,
            failed: false,
        },
        None => EntityDecode {
            entities: EntitySet::new(),
            raw,
            failed: true,
        },
    })
}

/// One line of an entities file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub sample_id: String,
    pub entity_string: String,
    #[serde(default)]
    pub decode_failed: bool,
}

impl EntityRecord {
    pub fn entities(&self) -> Result<EntitySet> {
        parse_entity_set(&self.entity_string).map_err(|source| Error::EntityOutput {
            raw: self.entity_string.clone(),
            source,
        })
    }
}

pub fn decode_samples(ep: &EntityPerceiver, samples: &[&VideoSample]) -> Result<Vec<EntityRecord>> {
    samples
        .iter()
        .map(|s| {
            let d = decode_entities(ep, &s.frame_features)?;
            Ok(EntityRecord {
                sample_id: s.id.clone(),
                entity_string: d.entities.to_string(),
                decode_failed: d.failed,
            })
        })
        .collect()
}

pub fn load_entity_records(path: &Path) -> Result<Vec<EntityRecord>> {
    read_jsonl(path)
}

pub fn save_entity_records(records: &[EntityRecord], path: &Path) -> Result<()> {
    write_jsonl(path, records)
}

/// Maps frames and entities into one space. The shipped embedder is built
/// from the training split: an entity's embedding is the mean centred
/// feature of the training videos that contain it.
pub trait FrameTextEmbedder: Send + Sync {
    fn embed_frame(&self, frame: &[f32]) -> Vec<f64>;
    /// `None` when the embedder has never seen the entity.
    fn embed_entity(&self, entity_type: &str, surface: &str) -> Option<Vec<f64>>;
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CentroidEmbedder {
    mean: Vec<f64>,
    centroids: HashMap<String, Vec<f64>>,
}

fn entity_key(t: &str, s: &str) -> String {
    format!("{t}={s}")
}

impl CentroidEmbedder {
    pub fn fit(samples: &[&VideoSample]) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.frame_features.dim())
            .ok_or_else(|| Error::Argument("no samples to fit the embedder on".into()))?;
        let means: Vec<Vec<f64>> = samples.iter().map(|s| s.frame_features.mean()).collect();
        let mut mean = vec![0.0; dim];
        for m in &means {
            for (a, b) in mean.iter_mut().zip(m) {
                *a += b / means.len() as f64;
            }
        }
        let mut sums: HashMap<String, (Vec<f64>, usize)> = HashMap::new();
        for (s, m) in samples.iter().zip(&means) {
            let Some(es) = &s.entities else { continue };
            for (t, surface) in es.pairs() {
                let e = sums.entry(entity_key(t, surface)).or_insert_with(|| (vec![0.0; dim], 0));
                for ((a, b), c) in e.0.iter_mut().zip(m).zip(&mean) {
                    *a += b - c;
                }
                e.1 += 1;
            }
        }
        let centroids = sums
            .into_iter()
            .map(|(k, (v, n))| (k, v.into_iter().map(|x| x / n as f64).collect()))
            .collect();
        Ok(Self { mean, centroids })
    }
}

impl FrameTextEmbedder for CentroidEmbedder {
    fn embed_frame(&self, frame: &[f32]) -> Vec<f64> {
        frame.iter().zip(&self.mean).map(|(a, b)| *a as f64 - b).collect()
    }

    fn embed_entity(&self, entity_type: &str, surface: &str) -> Option<Vec<f64>> {
        self.centroids.get(&entity_key(entity_type, surface)).cloned()
    }
}

/// Candidate entities with their embeddings.
#[derive(Clone, Debug, Default)]
pub struct EntityBank {
    entries: Vec<(String, String, Vec<f64>)>,
}

impl EntityBank {
    /// Every distinct typed entity of `samples` the embedder can place.
    pub fn from_samples(samples: &[&VideoSample], embedder: &dyn FrameTextEmbedder) -> Self {
        let mut seen = std::collections::HashSet::new();
        let mut entries = Vec::new();
        for s in samples {
            let Some(es) = &s.entities else { continue };
            for (t, surface) in es.pairs() {
                if seen.insert(entity_key(t, surface)) {
                    if let Some(v) = embedder.embed_entity(t, surface) {
                        entries.push((t.to_string(), surface.to_string(), v));
                    }
                }
            }
        }
        Self { entries }
    }

    pub fn new(entries: Vec<(String, String, Vec<f64>)>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Frames examined by the retrieval baseline.
pub const RETRIEVAL_FRAMES: usize = 6;

/// Nearest bank entity for each of up to six uniformly sampled frames; the
/// union of the hits.
pub fn retrieval_entity_baseline(
    v: &FrameFeatures,
    bank: &EntityBank,
    embedder: &dyn FrameTextEmbedder,
) -> Result<EntitySet> {
    if bank.is_empty() {
        return Err(Error::Argument("retrieval baseline needs a non-empty entity bank".into()));
    }
    let mut out = EntitySet::new();
    for i in v.uniform_indices(RETRIEVAL_FRAMES) {
        let q = embedder.embed_frame(v.frame(i));
        let mut best = (0, f64::NEG_INFINITY);
        for (k, (_, _, e)) in bank.entries.iter().enumerate() {
            let s = cosine(&q, e);
            if s > best.1 {
                best = (k, s);
            }
        }
        let (t, s, _) = &bank.entries[best.0];
        out.insert(t, s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::sample;

    #[test]
    fn repair_cases() {
        assert_eq!(
            repair_entity_string("{PERSON: [A B], GPE: [Ke").as_deref(),
            Some("{PERSON: [A B]}")
        );
        assert_eq!(repair_entity_string("PERSON: [A]").as_deref(), Some("{PERSON: [A]}"));
        assert_eq!(repair_entity_string("{PERSON: [A"), None);
    }

    fn tiny_ep() -> EntityPerceiver {
        let s = sample("a", "2015-01-01", 4);
        let mut s2 = s.clone();
        s2.entities = Some(EntitySet::new().with("PERSON", &["Ann Lee"]));
        let vocab = entity_vocab([&s2]);
        let train = TrainConfig {
            frames: 2,
            max_target_tokens: 12,
            ..TrainConfig::desk()
        };
        EntityPerceiver::new(vocab, 4, &ModelConfig::tiny(), train).unwrap()
    }

    #[test]
    fn untrained_decode_never_panics() {
        let ep = tiny_ep();
        let s = sample("a", "2015-01-01", 4);
        let d = decode_entities(&ep, &s.frame_features).unwrap();
        assert!(d.failed || d.entities.len() <= 1);
    }

    #[test]
    fn target_contract() {
        let ep = tiny_ep();
        let s = sample("a", "2015-01-01", 4);
        let t = ep.target(&EntitySet::new().with("PERSON", &["Ann Lee"])).unwrap();
        assert_eq!(*t.last().unwrap(), EOS);
        assert!(ep_loss(&ep, &s.frame_features, &t).unwrap().is_finite());
        assert!(ep_loss(&ep, &s.frame_features, &t[..t.len() - 1]).is_err());
        let long = EntitySet::new().with("PERSON", &["A B C D E F G H I J K L"]);
        assert!(matches!(ep.target(&long), Err(Error::Argument(_))));
    }

    #[test]
    fn retrieval_single_entity_and_exact_hit() {
        let s = sample("a", "2015-01-01", 2);
        let emb = CentroidEmbedder {
            mean: vec![0.0, 0.0],
            centroids: HashMap::new(),
        };
        let one = EntityBank::new(vec![("GPE".into(), "Peru".into(), vec![0.3, -1.0])]);
        let got = retrieval_entity_baseline(&s.frame_features, &one, &emb).unwrap();
        assert_eq!(got.to_string(), "{GPE: [Peru]}");
        let f0 = s.frame_features.frame(0).iter().map(|x| *x as f64).collect::<Vec<_>>();
        let two = EntityBank::new(vec![
            ("GPE".into(), "Peru".into(), vec![-f0[1], f0[0]]),
            ("PERSON".into(), "Ann".into(), f0),
        ]);
        let got = retrieval_entity_baseline(&s.frame_features, &two, &emb).unwrap();
        assert!(got.surface_keys().contains("ann"));
        assert!(retrieval_entity_baseline(&s.frame_features, &EntityBank::default(), &emb).is_err());
    }
}
