//! Caption metrics (BLEU-4, ROUGE-L, CIDEr-D), entity F1, the strict
//! hallucination criterion, caption entity extraction and BERTScore.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::entities::{normalize_surface, parse_embedded_entity_set, EntitySet};
use crate::error::{Error, Result};
use crate::llm::LlmClient;
use crate::prompts;
use crate::tokenizer::{TextTokenizer, WordPunct};

/// Lower-cased word tokens; punctuation is dropped.
pub fn metric_tokens(text: &str) -> Vec<String> {
    WordPunct
        .tokenize(&text.to_lowercase())
        .into_iter()
        .filter(|t| t.chars().any(|c| c.is_alphanumeric()))
        .collect()
}

type Counts<'a> = BTreeMap<&'a [String], usize>;

fn ngram_counts(tokens: &[String], n: usize) -> Counts<'_> {
    let mut m = BTreeMap::new();
    if n > 0 {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn check_pairs(preds: &[String], refs: &[String]) -> Result<()> {
    if preds.len() != refs.len() {
        return Err(Error::Argument(format!(
            "{} predictions but {} references",
            preds.len(),
            refs.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Argument("at least one prediction/reference pair is required".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BleuSmoothing {
    #[default]
    None,
    /// Add one to numerator and denominator for n > 1.
    AddOne,
}

/// Corpus BLEU-4 with a single reference per prediction, x100.
pub fn bleu4(preds: &[String], refs: &[String]) -> Result<f64> {
    bleu4_with(preds, refs, BleuSmoothing::None)
}

pub fn bleu4_with(preds: &[String], refs: &[String], smoothing: BleuSmoothing) -> Result<f64> {
    check_pairs(preds, refs)?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (p, rf) in preds.iter().zip(refs) {
        let h = metric_tokens(p);
        let g = metric_tokens(rf);
        c += h.len();
        r += g.len();
        for n in 1..=4 {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&g, n);
            total[n - 1] += h.len().saturating_sub(n - 1);
            matched[n - 1] += hc
                .iter()
                .map(|(k, &v)| v.min(rc.get(k).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        let (m, t) = match smoothing {
            BleuSmoothing::AddOne if n > 0 => (matched[n] as f64 + 1.0, total[n] as f64 + 1.0),
            _ => (matched[n] as f64, total[n] as f64),
        };
        if m == 0.0 {
            return Ok(0.0);
        }
        log_p += (m / t).ln() / 4.0;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(100.0 * bp * log_p.exp())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// Mean per-pair ROUGE-L F-measure (beta 1.2), x100.
pub fn rouge_l(preds: &[String], refs: &[String]) -> Result<f64> {
    check_pairs(preds, refs)?;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    let total: f64 = preds
        .iter()
        .zip(refs)
        .map(|(p, r)| {
            let h = metric_tokens(p);
            let g = metric_tokens(r);
            let l = lcs_len(&h, &g) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let prec = l / h.len() as f64;
            let rec = l / g.len() as f64;
            (1.0 + b2) * prec * rec / (rec + b2 * prec)
        })
        .sum();
    Ok(100.0 * total / preds.len() as f64)
}

pub const CIDER_SIGMA: f64 = 6.0;

struct TfIdf {
    vecs: [BTreeMap<Vec<String>, f64>; 4],
    norms: [f64; 4],
    bigrams: usize,
}

/// CIDEr-D over the corpus (one reference per prediction), on the 0-100
/// table scale: the usual x10 score multiplied by 10 again.
pub fn cider_d(preds: &[String], refs: &[String]) -> Result<f64> {
    check_pairs(preds, refs)?;
    if refs.len() < 2 {
        return Err(Error::Argument("CIDEr-D needs at least two references to estimate idf".into()));
    }
    let ref_toks: Vec<Vec<String>> = refs.iter().map(|r| metric_tokens(r)).collect();
    let mut df: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    for t in &ref_toks {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for n in 1..=4 {
            seen.extend(t.windows(n));
        }
        for g in seen {
            *df.entry(g.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    let log_n = (refs.len() as f64).ln();
    let vectorize = |tokens: &[String]| -> TfIdf {
        let mut vecs: [BTreeMap<Vec<String>, f64>; 4] = Default::default();
        let mut norms = [0.0; 4];
        for n in 1..=4 {
            for (g, tf) in ngram_counts(tokens, n) {
                let d = df.get(g).copied().unwrap_or(0.0).max(1.0);
                let w = tf as f64 * (log_n - d.ln());
                norms[n - 1] += w * w;
                vecs[n - 1].insert(g.to_vec(), w);
            }
        }
        TfIdf {
            vecs,
            norms: norms.map(f64::sqrt),
            bigrams: tokens.len().saturating_sub(1),
        }
    };
    let mut total = 0.0;
    for (p, rt) in preds.iter().zip(&ref_toks) {
        let h = vectorize(&metric_tokens(p));
        let r = vectorize(rt);
        let delta = h.bigrams as f64 - r.bigrams as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        let mut sum = 0.0;
        for n in 0..4 {
            let dot: f64 = h.vecs[n]
                .iter()
                .map(|(g, &hw)| {
                    let rw = r.vecs[n].get(g).copied().unwrap_or(0.0);
                    hw.min(rw) * rw
                })
                .sum();
            if h.norms[n] != 0.0 && r.norms[n] != 0.0 {
                sum += dot / (h.norms[n] * r.norms[n]) * penalty;
            }
        }
        total += sum / 4.0 * 10.0;
    }
    Ok(total / preds.len() as f64 * 10.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Micro,
    Macro,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    SurfaceFold,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMatchConfig {
    pub normalization: Normalization,
    pub aggregation: Aggregation,
    pub type_sensitive: bool,
}

fn keys(es: &EntitySet, cfg: &EntityMatchConfig) -> HashSet<String> {
    if cfg.type_sensitive {
        es.typed_keys()
    } else {
        es.surface_keys()
    }
}

/// Precision, recall and F1 (fractions) of one prediction.
pub fn entity_prf(pred: &EntitySet, gt: &EntitySet, cfg: &EntityMatchConfig) -> (f64, f64, f64) {
    let p = keys(pred, cfg);
    let g = keys(gt, cfg);
    prf(p.intersection(&g).count(), p.len(), g.len())
}

fn prf(tp: usize, np: usize, ng: usize) -> (f64, f64, f64) {
    if np == 0 && ng == 0 {
        return (1.0, 1.0, 1.0);
    }
    let p = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
    let r = if ng == 0 { 0.0 } else { tp as f64 / ng as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Entity F1 x100. When neither side has any entity the score is 100.
pub fn entity_f1(preds: &[EntitySet], gts: &[EntitySet], cfg: &EntityMatchConfig) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::Argument(format!(
            "{} predicted entity sets but {} ground-truth sets",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Argument("entity F1 needs at least one sample".into()));
    }
    let f = match cfg.aggregation {
        Aggregation::Micro => {
            let (mut tp, mut np, mut ng) = (0, 0, 0);
            for (p, g) in preds.iter().zip(gts) {
                let pk = keys(p, cfg);
                let gk = keys(g, cfg);
                tp += pk.intersection(&gk).count();
                np += pk.len();
                ng += gk.len();
            }
            prf(tp, np, ng).2
        }
        Aggregation::Macro => {
            preds.iter().zip(gts).map(|(p, g)| entity_prf(p, g, cfg).2).sum::<f64>() / preds.len() as f64
        }
    };
    Ok(100.0 * f)
}

/// True iff the prediction names at least one entity absent from the ground
/// truth (normalised surface comparison).
pub fn hallucination_strict(pred: &EntitySet, gt: &EntitySet) -> bool {
    let g = gt.surface_keys();
    pred.surface_keys().iter().any(|p| !g.contains(p))
}

/// Percentage of samples flagged by [`hallucination_strict`].
pub fn hallucination_rate(preds: &[EntitySet], gts: &[EntitySet]) -> Result<f64> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Argument("hallucination rate needs equal, non-empty lists".into()));
    }
    let n = preds.iter().zip(gts).filter(|(p, g)| hallucination_strict(p, g)).count();
    Ok(100.0 * n as f64 / preds.len() as f64)
}

/// Pulls entities out of free text.
pub trait EntityExtractor: Send + Sync {
    fn extract(&self, caption: &str) -> Result<EntitySet>;
}

/// Dictionary matcher over normalised token sequences. At each position the
/// longest entry wins; a surface listed under several types takes the first.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Gazetteer {
    entries: Vec<(String, String)>,
    #[serde(skip)]
    index: Vec<(Vec<String>, usize)>,
}

impl Gazetteer {
    pub fn new<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut g = Self {
            entries: entries.into_iter().map(|(t, s)| (t.to_string(), s.to_string())).collect(),
            index: Vec::new(),
        };
        g.reindex();
        g
    }

    pub fn from_sets<'a>(sets: impl IntoIterator<Item = &'a EntitySet>) -> Self {
        let mut pairs = Vec::new();
        for es in sets {
            for (t, s) in es.pairs() {
                pairs.push((t.to_string(), s.to_string()));
            }
        }
        Self::new(pairs.iter().map(|(t, s)| (t.as_str(), s.as_str())))
    }

    pub fn reindex(&mut self) {
        let mut seen = HashSet::new();
        self.index = self
            .entries
            .iter()
            .enumerate()
            .filter_map(|(i, (_, s))| {
                let toks = metric_tokens(&normalize_surface(s));
                (!toks.is_empty() && seen.insert(toks.clone())).then_some((toks, i))
            })
            .collect();
        self.index.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, text: &str) -> EntitySet {
        let toks = metric_tokens(text);
        let mut out = EntitySet::new();
        let mut i = 0;
        while i < toks.len() {
            let hit = self
                .index
                .iter()
                .find(|(g, _)| toks.len() - i >= g.len() && toks[i..i + g.len()] == g[..]);
            match hit {
                Some((g, e)) => {
                    let (t, s) = &self.entries[*e];
                    out.insert(t, s);
                    i += g.len();
                }
                None => i += 1,
            }
        }
        out
    }
}

impl EntityExtractor for Gazetteer {
    fn extract(&self, caption: &str) -> Result<EntitySet> {
        Ok(self.find(caption))
    }
}

/// Extraction through an LLM using the entity-extraction prompt.
pub struct LlmExtractor<C> {
    pub client: C,
}

impl<C: LlmClient> EntityExtractor for LlmExtractor<C> {
    fn extract(&self, caption: &str) -> Result<EntitySet> {
        let raw = self.client.complete(&prompts::entity_prompt(caption))?;
        parse_embedded_entity_set(&raw).map_err(|source| Error::EntityOutput { raw, source })
    }
}

pub fn extract_caption_entities(caption: &str, extractor: &dyn EntityExtractor) -> Result<EntitySet> {
    if caption.trim().is_empty() {
        return Err(Error::Argument("caption is empty".into()));
    }
    extractor.extract(caption)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub entity_f1: f64,
    pub hallucination_rate: f64,
    pub n_samples: usize,
}

/// All caption metrics for a prediction set. Entities come from `extractor`
/// applied to both sides; empty predictions count as having no entities.
pub fn evaluate(
    preds: &[String],
    refs: &[String],
    extractor: &dyn EntityExtractor,
    cfg: &EntityMatchConfig,
) -> Result<MetricReport> {
    check_pairs(preds, refs)?;
    let ents = |texts: &[String]| -> Result<Vec<EntitySet>> {
        texts
            .iter()
            .map(|t| if t.trim().is_empty() { Ok(EntitySet::new()) } else { extractor.extract(t) })
            .collect()
    };
    let pe = ents(preds)?;
    let ge = ents(refs)?;
    Ok(MetricReport {
        bleu4: bleu4(preds, refs)?,
        rouge_l: rouge_l(preds, refs)?,
        cider: if preds.len() >= 2 { cider_d(preds, refs)? } else { 0.0 },
        entity_f1: entity_f1(&pe, &ge, cfg)?,
        hallucination_rate: hallucination_rate(&pe, &ge)?,
        n_samples: preds.len(),
    })
}

/// Produces one embedding per token.
pub trait TokenEmbedder: Send + Sync {
    fn embed(&self, tokens: &[String]) -> Vec<Vec<f64>>;

    /// Cosine similarity of every candidate token against every reference
    /// token.
    fn similarities(&self, candidate: &[String], reference: &[String]) -> Vec<Vec<f64>> {
        let ce = self.embed(candidate);
        let re = self.embed(reference);
        ce.iter().map(|x| re.iter().map(|y| cosine(x, y)).collect()).collect()
    }
}

/// Deterministic embedder: each token is a one-hot vector at its FNV-1a hash
/// bucket. With `window > 0`, neighbours within the window are mixed in at
/// half weight, giving a crude notion of context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashEmbedder {
    pub dim: usize,
    pub window: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 1 << 16, window: 0 }
    }
}

pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl HashEmbedder {
    fn sparse(&self, tokens: &[String]) -> Vec<BTreeMap<usize, f64>> {
        let buckets: Vec<usize> = tokens.iter().map(|t| (fnv1a(t) % self.dim as u64) as usize).collect();
        (0..tokens.len())
            .map(|i| {
                let mut v = BTreeMap::new();
                *v.entry(buckets[i]).or_insert(0.0) += 1.0;
                let lo = i.saturating_sub(self.window);
                let hi = (i + self.window + 1).min(tokens.len());
                for (j, &b) in buckets.iter().enumerate().take(hi).skip(lo) {
                    if j != i {
                        *v.entry(b).or_insert(0.0) += 0.5;
                    }
                }
                v
            })
            .collect()
    }
}

impl TokenEmbedder for HashEmbedder {
    fn embed(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        self.sparse(tokens)
            .into_iter()
            .map(|m| {
                let mut v = vec![0.0; self.dim];
                m.into_iter().for_each(|(k, x)| v[k] = x);
                v
            })
            .collect()
    }

    fn similarities(&self, candidate: &[String], reference: &[String]) -> Vec<Vec<f64>> {
        let norm = |m: &BTreeMap<usize, f64>| m.values().map(|x| x * x).sum::<f64>().sqrt();
        let c = self.sparse(candidate);
        let r = self.sparse(reference);
        c.iter()
            .map(|x| {
                r.iter()
                    .map(|y| {
                        let dot: f64 = x.iter().filter_map(|(k, a)| y.get(k).map(|b| a * b)).sum();
                        if dot == 0.0 {
                            0.0
                        } else {
                            dot / (norm(x) * norm(y))
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BertScoreConfig {
    /// Token idf weights; tokens missing from the map weigh 1.
    pub idf: Option<BTreeMap<String, f64>>,
    /// Baseline for rescaling: `(f - b) / (1 - b)`.
    pub baseline: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy-matching BERTScore between a candidate and a reference text.
pub fn bertscore(candidate: &str, reference: &str, embedder: &dyn TokenEmbedder, cfg: &BertScoreConfig) -> Result<BertScore> {
    let c = metric_tokens(candidate);
    let r = metric_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return Err(Error::Argument("BERTScore needs non-empty candidate and reference".into()));
    }
    let sim = embedder.similarities(&c, &r);
    let weight = |t: &String| cfg.idf.as_ref().and_then(|m| m.get(t).copied()).unwrap_or(1.0);
    let weighted = |toks: &[String], best: &dyn Fn(usize) -> f64| -> f64 {
        let (num, den) = toks
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(n, d), (i, t)| (n + weight(t) * best(i), d + weight(t)));
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    };
    let precision = weighted(&c, &|i| sim[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let recall = weighted(&r, &|j| sim.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max));
    let mut f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    if let Some(b) = cfg.baseline {
        f1 = (f1 - b) / (1.0 - b);
    }
    Ok(BertScore { precision, recall, f1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn bleu_hand_value() {
        // Clipped precisions 5/6, 3/5, 2/4, 1/3 with equal lengths.
        let got = bleu4(&s(&["the cat sat on the mat"]), &s(&["the cat sat on a mat"])).unwrap();
        let want = 100.0 * (5.0 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0f64).powf(0.25);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn bleu_zero_without_shared_four_gram_and_smoothing_rescues() {
        let p = s(&["a b c d"]);
        let r = s(&["a b c e"]);
        assert_eq!(bleu4(&p, &r).unwrap(), 0.0);
        assert!(bleu4_with(&p, &r, BleuSmoothing::AddOne).unwrap() > 0.0);
        assert!(bleu4(&p, &s(&["x", "y"])).is_err());
    }

    #[test]
    fn rouge_hand_value() {
        // LCS 2, P = 2/3, R = 1.
        let got = rouge_l(&s(&["the cat sat"]), &s(&["the cat"])).unwrap();
        let (p, r, b2) = (2.0 / 3.0, 1.0, 1.44);
        let want = 100.0 * (1.0 + b2) * p * r / (r + b2 * p);
        assert!((got - want).abs() < 1e-9);
        assert_eq!(rouge_l(&s(&["a b"]), &s(&["c d"])).unwrap(), 0.0);
        assert_eq!(rouge_l(&s(&["a b"]), &s(&["a b"])).unwrap(), 100.0);
    }

    #[test]
    fn cider_identity_and_disjoint() {
        let refs = s(&["one two three four five", "six seven eight nine ten", "alpha beta gamma delta eps"]);
        let same = cider_d(&refs, &refs).unwrap();
        assert!((same - 100.0).abs() < 1e-9, "{same}");
        let other = s(&["zz yy xx ww vv", "uu tt ss rr qq", "pp oo nn mm ll"]);
        assert_eq!(cider_d(&other, &refs).unwrap(), 0.0);
        assert!(cider_d(&refs[..1], &refs[..1]).is_err());
    }

    #[test]
    fn entity_f1_cases() {
        let cfg = EntityMatchConfig::default();
        let a = EntitySet::new().with("PERSON", &["Bush"]).with("GPE", &["Ghana"]);
        let b = EntitySet::new().with("PERSON", &["Bush"]).with("GPE", &["Liberia"]);
        assert_eq!(entity_f1(&[a.clone()], &[a.clone()], &cfg).unwrap(), 100.0);
        assert_eq!(entity_f1(&[a.clone()], &[b.clone()], &cfg).unwrap(), 50.0);
        assert_eq!(entity_f1(&[EntitySet::new()], &[b.clone()], &cfg).unwrap(), 0.0);
        assert_eq!(entity_f1(&[EntitySet::new()], &[EntitySet::new()], &cfg).unwrap(), 100.0);
        assert!(entity_f1(&[a], &[], &cfg).is_err());
    }

    #[test]
    fn type_sensitivity_switch() {
        let p = EntitySet::new().with("ORG", &["Jordan"]);
        let g = EntitySet::new().with("PERSON", &["Jordan"]);
        let mut cfg = EntityMatchConfig::default();
        assert_eq!(entity_f1(&[p.clone()], &[g.clone()], &cfg).unwrap(), 100.0);
        cfg.type_sensitive = true;
        assert_eq!(entity_f1(&[p], &[g], &cfg).unwrap(), 0.0);
    }

    #[test]
    fn hallucination_cases() {
        let g = EntitySet::new().with("PERSON", &["Bush"]).with("GPE", &["Liberia"]);
        assert!(!hallucination_strict(&EntitySet::new().with("X", &["bush"]), &g));
        assert!(hallucination_strict(&EntitySet::new().with("GPE", &["Ghana"]), &g));
        assert!(!hallucination_strict(&EntitySet::new(), &EntitySet::new()));
    }

    #[test]
    fn gazetteer_prefers_longest() {
        let g = Gazetteer::new([("PERSON", "George Bush"), ("GPE", "Liberia"), ("PERSON", "Bush")]);
        let found = g.find("George Bush landed in Liberia");
        assert_eq!(found.to_string(), "{PERSON: [George Bush], GPE: [Liberia]}");
        assert!(g.find("Nothing here").is_empty());
    }

    #[test]
    fn bertscore_anchors() {
        let e = HashEmbedder::default();
        let cfg = BertScoreConfig::default();
        assert!((bertscore("a b c", "a b c", &e, &cfg).unwrap().f1 - 1.0).abs() < 1e-12);
        assert_eq!(bertscore("a b c", "x y z", &e, &cfg).unwrap().f1, 0.0);
        assert!(bertscore("", "x", &e, &cfg).is_err());
    }
}
