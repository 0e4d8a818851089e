//! Knowledge extraction: entities in, context passage out.
//!
//! Backends are [`LlmClient`]s. [`MockKb`] answers knowledge prompts from a
//! keyed passage file; replay cassettes and the live client come from
//! [`crate::llm`]. The single-stage path skips entities and describes the
//! video directly.

use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{FrameFeatures, VideoSample};
use crate::entities::{flatten_entity_set, normalize_surface, parse_entity_set, EntitySet};
use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::llm::{complete_with_retry, prompt_hash, LlmClient};
use crate::metrics::{bertscore, BertScoreConfig, TokenEmbedder};
use crate::prompts;

pub const STRUCTURED_TEMPLATE_ID: &str = "knowledge/structured@1";
pub const FLAT_TEMPLATE_ID: &str = "knowledge/flat@1";
pub const SINGLE_STAGE_BACKEND: &str = "single_stage";
/// Transport retries for knowledge backends.
pub const KE_MAX_RETRIES: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KEPrompt {
    pub template_id: String,
    pub rendered_text: String,
}

/// Renders the knowledge prompt with either the canonical entity string or
/// the comma-joined surfaces.
pub fn build_ke_prompt(es: &EntitySet, structured: bool) -> KEPrompt {
    let (template_id, payload) = if structured {
        (STRUCTURED_TEMPLATE_ID, es.to_string())
    } else {
        (FLAT_TEMPLATE_ID, flatten_entity_set(es).join(", "))
    };
    let payload = if es.is_empty() { String::new() } else { payload };
    KEPrompt {
        template_id: template_id.to_string(),
        rendered_text: prompts::knowledge_prompt(&payload),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextPassage {
    pub text: String,
    pub backend_id: String,
    pub prompt_hash: String,
    pub source_entities: EntitySet,
    pub created_at: DateTime<Utc>,
}

/// Queries `backend` with the knowledge prompt for `es`.
pub fn extract_context(es: &EntitySet, backend: &dyn LlmClient, structured: bool) -> Result<ContextPassage> {
    let prompt = build_ke_prompt(es, structured);
    let reply = complete_with_retry(backend, &prompt.rendered_text, KE_MAX_RETRIES)?;
    let text = reply.trim();
    if text.is_empty() {
        return Err(Error::EmptyContext {
            backend: backend.id().to_string(),
        });
    }
    Ok(ContextPassage {
        text: text.to_string(),
        backend_id: backend.id().to_string(),
        prompt_hash: prompt_hash(&prompt.rendered_text),
        source_entities: es.clone(),
        created_at: Utc::now(),
    })
}

/// One keyed passage of the mock knowledge base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub entity_signature: EntitySet,
    pub passage: String,
}

pub fn load_kb(path: &Path) -> Result<Vec<KbEntry>> {
    read_jsonl(path)
}

pub fn save_kb(entries: &[KbEntry], path: &Path) -> Result<()> {
    write_jsonl(path, entries)
}

/// Deterministic knowledge backend: returns the passage whose entity
/// signature best overlaps the prompt's entities (Jaccard over typed keys
/// for structured prompts, over bare surfaces for flat ones). Ties go to
/// the earliest entry; no overlap yields an empty reply.
#[derive(Clone, Debug, Default)]
pub struct MockKb {
    entries: Vec<KbEntry>,
}

fn jaccard(a: &std::collections::HashSet<String>, b: &std::collections::HashSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

impl MockKb {
    pub fn new(entries: Vec<KbEntry>) -> Self {
        Self { entries }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(load_kb(path)?))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Best entry for a raw entity payload as it appears in the prompt.
    pub fn lookup(&self, payload: &str) -> Option<&KbEntry> {
        let payload = payload.trim();
        if payload.is_empty() {
            return None;
        }
        let score: Box<dyn Fn(&EntitySet) -> f64> = match parse_entity_set(payload) {
            Ok(es) if payload.starts_with('{') => {
                let q = es.typed_keys();
                Box::new(move |sig: &EntitySet| jaccard(&q, &sig.typed_keys()))
            }
            _ => {
                let q = payload
                    .split(',')
                    .map(normalize_surface)
                    .filter(|s| !s.is_empty())
                    .collect();
                Box::new(move |sig: &EntitySet| jaccard(&q, &sig.surface_keys()))
            }
        };
        let mut best: Option<(&KbEntry, f64)> = None;
        for e in &self.entries {
            let s = score(&e.entity_signature);
            if s > 0.0 && best.map_or(true, |(_, b)| s > b) {
                best = Some((e, s));
            }
        }
        best.map(|(e, _)| e)
    }
}

impl LlmClient for MockKb {
    fn id(&self) -> &str {
        "mock_kb"
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let payload = prompts::section(prompt, "Entities: ").unwrap_or("");
        Ok(self.lookup(payload).map(|e| e.passage.clone()).unwrap_or_default())
    }
}

/// Backend that describes a video directly from its features.
pub trait VideoDescriber: Send + Sync {
    fn id(&self) -> &str;
    fn describe(&self, frames: &FrameFeatures) -> Result<String>;
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v
    } else {
        v.into_iter().map(|x| x / n).collect()
    }
}

/// Returns the caption of the training video whose mean frame feature is
/// closest by cosine. It describes what a similar video showed and has no
/// access to who or where this one is.
#[derive(Clone, Debug, Default)]
pub struct NearestCaptionDescriber {
    bank: Vec<(Vec<f64>, String)>,
}

impl NearestCaptionDescriber {
    pub fn new(bank: Vec<(Vec<f64>, String)>) -> Self {
        Self {
            bank: bank.into_iter().map(|(v, c)| (unit(v), c)).collect(),
        }
    }

    /// Bank from samples that carry a caption.
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a VideoSample>) -> Self {
        Self::new(
            samples
                .into_iter()
                .filter_map(|s| s.caption.as_ref().map(|c| (s.frame_features.mean(), c.text.clone())))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.bank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bank.is_empty()
    }
}

impl VideoDescriber for NearestCaptionDescriber {
    fn id(&self) -> &str {
        SINGLE_STAGE_BACKEND
    }

    fn describe(&self, frames: &FrameFeatures) -> Result<String> {
        let q = unit(frames.mean());
        let mut best: Option<(usize, f64)> = None;
        for (i, (v, _)) in self.bank.iter().enumerate() {
            let s: f64 = q.iter().zip(v).map(|(a, b)| a * b).sum();
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        Ok(best.map(|(i, _)| self.bank[i].1.clone()).unwrap_or_default())
    }
}

/// Digest of the raw feature bytes; stands in for a prompt hash when the
/// request is a video rather than text.
pub fn features_hash(frames: &FrameFeatures) -> String {
    let mut h = Sha256::new();
    h.update((frames.frames() as u32).to_le_bytes());
    h.update((frames.dim() as u32).to_le_bytes());
    for r in 0..frames.frames() {
        for v in frames.frame(r) {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Context straight from video, without detecting entities first.
pub fn extract_context_single_stage(v: &FrameFeatures, describer: &dyn VideoDescriber) -> Result<ContextPassage> {
    let text = describer.describe(v)?;
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::EmptyContext {
            backend: describer.id().to_string(),
        });
    }
    Ok(ContextPassage {
        text: text.to_string(),
        backend_id: SINGLE_STAGE_BACKEND.to_string(),
        prompt_hash: features_hash(v),
        source_entities: EntitySet::new(),
        created_at: Utc::now(),
    })
}

/// BERTScore F1 between passage and reference caption, clamped to [0, 1].
pub fn score_context(passage: &ContextPassage, reference: &str, embedder: &dyn TokenEmbedder) -> Result<f64> {
    score_context_with(passage, reference, embedder, &BertScoreConfig::default())
}

pub fn score_context_with(
    passage: &ContextPassage,
    reference: &str,
    embedder: &dyn TokenEmbedder,
    cfg: &BertScoreConfig,
) -> Result<f64> {
    Ok(bertscore(&passage.text, reference, embedder, cfg)?.f1.clamp(0.0, 1.0))
}

/// Passages that cannot be traced to a backend and a prompt.
pub fn audit_provenance<'a>(passages: impl IntoIterator<Item = &'a ContextRecord>) -> Vec<String> {
    passages
        .into_iter()
        .filter(|r| {
            let p = &r.passage;
            p.backend_id.is_empty()
                || p.prompt_hash.len() != 64
                || !p.prompt_hash.bytes().all(|b| b.is_ascii_hexdigit())
                || p.text.is_empty()
        })
        .map(|r| r.sample_id.clone())
        .collect()
}

/// One line of a context file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub sample_id: String,
    #[serde(flatten)]
    pub passage: ContextPassage,
}

pub fn load_contexts(path: &Path) -> Result<Vec<ContextRecord>> {
    read_jsonl(path)
}

pub fn save_contexts(records: &[ContextRecord], path: &Path) -> Result<()> {
    write_jsonl(path, records)
}

/// Keeps a nested, seed-determined fraction of all (sample, entity) pairs.
///
/// Pairs are shuffled once; level `r` keeps the first `round(r * total)`
/// of them, so a higher level always keeps a superset.
pub fn degrade_entities(sets: &[EntitySet], fraction: f64, seed: u64) -> Vec<EntitySet> {
    let mut all: Vec<(usize, String, String)> = sets
        .iter()
        .enumerate()
        .flat_map(|(i, es)| es.pairs().map(move |(t, s)| (i, t.to_string(), s.to_string())))
        .collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let keep = (fraction.clamp(0.0, 1.0) * all.len() as f64).round() as usize;
    let kept: std::collections::HashSet<(usize, String, String)> = all.into_iter().take(keep).collect();
    sets.iter()
        .enumerate()
        .map(|(i, es)| {
            let mut out = EntitySet::new();
            for (t, s) in es.pairs() {
                if kept.contains(&(i, t.to_string(), s.to_string())) {
                    out.insert(t, s);
                }
            }
            out
        })
        .collect()
}

/// Corpus-mean context score with a fraction of ground-truth entities fed
/// to the backend. Empty contexts score zero.
pub fn context_score_at_recall(
    gt: &[EntitySet],
    references: &[String],
    fraction: f64,
    backend: &dyn LlmClient,
    embedder: &dyn TokenEmbedder,
    seed: u64,
) -> Result<f64> {
    if gt.len() != references.len() || gt.is_empty() {
        return Err(Error::Argument("need equal, non-zero numbers of entity sets and references".into()));
    }
    let fed = degrade_entities(gt, fraction, seed);
    let mut total = 0.0;
    for (es, r) in fed.iter().zip(references) {
        total += match extract_context(es, backend, true) {
            Ok(p) => score_context(&p, r, embedder)?,
            Err(Error::EmptyContext { .. }) => 0.0,
            Err(e) => return Err(e),
        };
    }
    Ok(total / gt.len() as f64)
}
