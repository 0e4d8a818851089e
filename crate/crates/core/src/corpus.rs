//! Corpus data model, JSONL ingestion and train/dev/test splits.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::entities::EntitySet;
use crate::error::{Error, Result};
use crate::tokenizer::token_count;

pub const SCHEMA_V1: &str = "views-corpus/1";
pub const MAX_CAPTION_TOKENS: usize = 100;
const SIDECAR_MAGIC: &[u8; 8] = b"VFEAT1\0\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// `frames x dim` matrix of precomputed per-frame features.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FrameFeatures {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Integrity(format!("frame features must be non-empty, got {frames}x{dim}")));
        }
        if data.len() != frames * dim {
            return Err(Error::Integrity(format!(
                "frame feature buffer has {} values, expected {frames}x{dim}",
                data.len()
            )));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Integrity(format!(
                "frame {i} has {} dims while frame 0 has {dim}",
                r.len()
            )));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f32>> {
        (0..self.frames).map(|i| self.frame(i).to_vec()).collect()
    }

    /// Mean over frames.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for i in 0..self.frames {
            for (o, v) in out.iter_mut().zip(self.frame(i)) {
                *o += *v as f64;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.frames as f64);
        out
    }

    /// Indices of `n` frames spread uniformly over the clip (all frames when
    /// the clip is shorter).
    pub fn uniform_indices(&self, n: usize) -> Vec<usize> {
        uniform_indices(self.frames, n)
    }

    /// `n` uniformly sampled frames as an `f64` tensor.
    pub fn sampled_tensor(&self, n: usize) -> views_nn::Tensor {
        let idx = self.uniform_indices(n);
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in &idx {
            data.extend(self.frame(i).iter().map(|&v| v as f64));
        }
        views_nn::Tensor::from_vec(idx.len(), self.dim, data)
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.data.len() * 4);
        buf.extend_from_slice(SIDECAR_MAGIC);
        buf.extend_from_slice(&(self.frames as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_sidecar(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Integrity(format!("{}: {m}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != SIDECAR_MAGIC {
            return Err(bad("not a frame-feature sidecar"));
        }
        let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != frames * dim * 4 {
            return Err(bad("sidecar length does not match its header"));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(frames, dim, data)
    }
}

pub fn uniform_indices(total: usize, n: usize) -> Vec<usize> {
    if n == 0 || total == 0 {
        return Vec::new();
    }
    if total <= n {
        return (0..total).collect();
    }
    if n == 1 {
        return vec![total / 2];
    }
    let mut out: Vec<usize> = (0..n)
        .map(|i| ((i as f64) * (total - 1) as f64 / (n - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionOrigin {
    EventDescriptions,
    PairedArticle,
    ModelPrediction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcStatus {
    Unreviewed,
    AutoPass,
    Flagged,
    Corrected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub sample_id: String,
    pub text: String,
    pub token_count: usize,
    pub origin: CaptionOrigin,
    pub qc_status: QcStatus,
}

impl CaptionRecord {
    pub fn new(sample_id: impl Into<String>, text: impl Into<String>, origin: CaptionOrigin) -> Self {
        let text = text.into();
        Self {
            sample_id: sample_id.into(),
            token_count: token_count(&text),
            text,
            origin,
            qc_status: QcStatus::Unreviewed,
        }
    }

    pub fn is_ground_truth(&self) -> bool {
        self.origin != CaptionOrigin::ModelPrediction
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub source: String,
    pub publish_date: NaiveDate,
    pub title: String,
    pub article_text: String,
    pub bullet_summaries: Vec<String>,
    pub frame_features: FrameFeatures,
    pub asr_text: Option<String>,
    pub split: Option<Split>,
    /// Ground-truth caption, once the builder has produced one.
    pub caption: Option<CaptionRecord>,
    /// Ground-truth entities, once extracted.
    pub entities: Option<EntitySet>,
}

/// On-disk caption payload; `sample_id` and `token_count` are implied.
#[derive(Serialize, Deserialize)]
struct CaptionField {
    text: String,
    origin: CaptionOrigin,
    qc_status: QcStatus,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    source: String,
    publish_date: NaiveDate,
    title: String,
    article_text: String,
    bullet_summaries: Vec<String>,
    frame_features: Value,
    asr_text: Option<String>,
    split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caption: Option<CaptionField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entities: Option<EntitySet>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
}

/// Validated, immutable-after-load collection of samples.
#[derive(Clone, Debug)]
pub struct Corpus {
    samples: Vec<VideoSample>,
    index: HashMap<String, usize>,
    feature_dim: usize,
}

impl Corpus {
    /// Builds a corpus, enforcing id uniqueness, constant feature dim, date
    /// sanity and caption length.
    pub fn from_samples(samples: Vec<VideoSample>) -> Result<Self> {
        let today = chrono::Local::now().date_naive();
        let mut index = HashMap::with_capacity(samples.len());
        let mut feature_dim = None;
        for (i, s) in samples.iter().enumerate() {
            if s.id.is_empty() {
                return Err(Error::Integrity(format!("sample #{i} has an empty id")));
            }
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate sample id {:?}", s.id)));
            }
            let d = s.frame_features.dim();
            match feature_dim {
                None => feature_dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::Integrity(format!(
                        "sample {:?} has feature dim {d}, corpus dim is {expected}",
                        s.id
                    )))
                }
                _ => {}
            }
            if s.publish_date > today {
                return Err(Error::Integrity(format!(
                    "sample {:?} is dated {} which is after ingestion ({today})",
                    s.id, s.publish_date
                )));
            }
            if let Some(c) = &s.caption {
                if c.sample_id != s.id {
                    return Err(Error::Integrity(format!("caption of {:?} names sample {:?}", s.id, c.sample_id)));
                }
                if c.is_ground_truth() && c.token_count > MAX_CAPTION_TOKENS {
                    return Err(Error::Integrity(format!(
                        "caption of {:?} has {} tokens (max {MAX_CAPTION_TOKENS})",
                        s.id, c.token_count
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            index,
            feature_dim: feature_dim.unwrap_or(0),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn samples(&self) -> &[VideoSample] {
        &self.samples
    }

    pub fn get(&self, id: &str) -> Option<&VideoSample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    pub fn into_samples(self) -> Vec<VideoSample> {
        self.samples
    }

    /// Copy with `f` applied to every sample; revalidated.
    pub fn map_samples(&self, mut f: impl FnMut(&mut VideoSample)) -> Result<Corpus> {
        let mut samples = self.samples.clone();
        samples.iter_mut().for_each(&mut f);
        Corpus::from_samples(samples)
    }

    /// Copy with each sample's `split` field set from `split`.
    pub fn with_split(&self, split: &CorpusSplit) -> Result<Corpus> {
        let lookup = split.lookup();
        self.map_samples(|s| s.split = lookup.get(s.id.as_str()).copied())
    }

    /// Samples whose `split` field (or the given split) marks them as `which`.
    pub fn subset<'a>(&'a self, split: &'a CorpusSplit, which: Split) -> Vec<&'a VideoSample> {
        split.ids(which).iter().filter_map(|id| self.get(id)).collect()
    }
}

fn parse_features(value: &Value, base: &Path, path: &Path, line: usize) -> Result<FrameFeatures> {
    let perr = |m: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: m,
    };
    match value {
        Value::String(rel) => {
            let p = base.join(rel);
            FrameFeatures::read_sidecar(&p)
        }
        Value::Array(_) => {
            let rows: Vec<Vec<f32>> =
                serde_json::from_value(value.clone()).map_err(|e| perr(format!("frame_features: {e}")))?;
            FrameFeatures::from_rows(&rows)
        }
        _ => Err(perr("frame_features must be an array of frames or a sidecar path".into())),
    }
}

/// Loads and validates a JSONL corpus.
///
/// The first non-empty line must be a header `{"schema": ...}` equal to
/// `schema_version`.
pub fn load_corpus(path: &Path, schema_version: &str) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut samples = Vec::new();
    let mut seen_header = false;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: m,
        };
        if !seen_header {
            let h: Header = serde_json::from_str(&line).map_err(|e| perr(format!("bad header: {e}")))?;
            if h.schema != schema_version {
                return Err(perr(format!(
                    "unsupported schema {:?} (expected {schema_version:?})",
                    h.schema
                )));
            }
            seen_header = true;
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        let frame_features = parse_features(&rec.frame_features, &base, path, lineno).map_err(|e| match e {
            Error::Integrity(m) => Error::Integrity(format!("{}:{lineno}: sample {:?}: {m}", path.display(), rec.id)),
            other => other,
        })?;
        let caption = rec
            .caption
            .map(|c| CaptionRecord {
                sample_id: rec.id.clone(),
                token_count: token_count(&c.text),
                text: c.text,
                origin: c.origin,
                qc_status: c.qc_status,
            });
        samples.push(VideoSample {
            id: rec.id,
            source: rec.source,
            publish_date: rec.publish_date,
            title: rec.title,
            article_text: rec.article_text,
            bullet_summaries: rec.bullet_summaries,
            frame_features,
            asr_text: rec.asr_text,
            split: rec.split,
            caption,
            entities: rec.entities,
        });
    }
    if !seen_header {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "missing schema header".into(),
        });
    }
    Corpus::from_samples(samples)
}

fn to_record(s: &VideoSample, features: Value) -> SampleRecord {
    SampleRecord {
        id: s.id.clone(),
        source: s.source.clone(),
        publish_date: s.publish_date,
        title: s.title.clone(),
        article_text: s.article_text.clone(),
        bullet_summaries: s.bullet_summaries.clone(),
        frame_features: features,
        asr_text: s.asr_text.clone(),
        split: s.split,
        caption: s.caption.as_ref().map(|c| CaptionField {
            text: c.text.clone(),
            origin: c.origin,
            qc_status: c.qc_status,
        }),
        entities: s.entities.clone(),
    }
}

/// Writes the corpus as JSONL with inline features.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_corpus(corpus, path, None)
}

/// Writes the corpus with features in per-sample sidecar files under
/// `sidecar_dir` (relative to the corpus file's directory).
pub fn save_corpus_with_sidecars(corpus: &Corpus, path: &Path, sidecar_dir: &str) -> Result<()> {
    write_corpus(corpus, path, Some(sidecar_dir))
}

fn write_corpus(corpus: &Corpus, path: &Path, sidecar_dir: Option<&str>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &Header { schema: SCHEMA_V1.into() })?;
    w.write_all(b"\n").map_err(io)?;
    for s in corpus.samples() {
        let features = match sidecar_dir {
            None => serde_json::to_value(s.frame_features.rows())?,
            Some(dir) => {
                let rel: PathBuf = Path::new(dir).join(format!("{}.feat", sanitize(&s.id)));
                let abs = base.join(&rel);
                if let Some(p) = abs.parent() {
                    fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
                }
                s.frame_features.write_sidecar(&abs)?;
                Value::String(rel.to_string_lossy().into_owned())
            }
        };
        serde_json::to_writer(&mut w, &to_record(s, features))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Disjoint id lists for the three splits, each in corpus order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train_ids: Vec<String>,
    pub dev_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub cutoff_date: Option<NaiveDate>,
}

impl CorpusSplit {
    pub fn ids(&self, which: Split) -> &[String] {
        match which {
            Split::Train => &self.train_ids,
            Split::Dev => &self.dev_ids,
            Split::Test => &self.test_ids,
        }
    }

    pub fn lookup(&self) -> HashMap<&str, Split> {
        let mut m = HashMap::new();
        for which in [Split::Train, Split::Dev, Split::Test] {
            for id in self.ids(which) {
                m.insert(id.as_str(), which);
            }
        }
        m
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.train_ids
            .iter()
            .chain(&self.dev_ids)
            .chain(&self.test_ids)
            .all(|id| seen.insert(id))
    }

    /// Splits recorded in the samples' own `split` fields.
    pub fn from_corpus_fields(corpus: &Corpus) -> Result<Self> {
        let mut out = CorpusSplit::default();
        for s in corpus.samples() {
            match s.split {
                Some(Split::Train) => out.train_ids.push(s.id.clone()),
                Some(Split::Dev) => out.dev_ids.push(s.id.clone()),
                Some(Split::Test) => out.test_ids.push(s.id.clone()),
                None => return Err(Error::Data(format!("sample {:?} has no split", s.id))),
            }
        }
        Ok(out)
    }
}

/// Seeded random split; the remainder after dev and test is train.
pub fn split_random(corpus: &Corpus, dev_n: usize, test_n: usize, seed: u64) -> Result<CorpusSplit> {
    if dev_n + test_n >= corpus.len() {
        return Err(Error::Argument(format!(
            "dev ({dev_n}) + test ({test_n}) must be smaller than the corpus ({})",
            corpus.len()
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tag = vec![Split::Train; corpus.len()];
    for &i in &order[..dev_n] {
        tag[i] = Split::Dev;
    }
    for &i in &order[dev_n..dev_n + test_n] {
        tag[i] = Split::Test;
    }
    let mut out = CorpusSplit::default();
    for (s, t) in corpus.samples().iter().zip(tag) {
        match t {
            Split::Train => out.train_ids.push(s.id.clone()),
            Split::Dev => out.dev_ids.push(s.id.clone()),
            Split::Test => out.test_ids.push(s.id.clone()),
        }
    }
    Ok(out)
}

/// Train strictly before `cutoff`; samples on or after it are evaluation.
///
/// Evaluation samples, ordered by (date, id), alternate test/dev starting
/// with test.
pub fn split_by_date(corpus: &Corpus, cutoff: NaiveDate) -> Result<CorpusSplit> {
    if corpus.is_empty() {
        return Err(Error::Argument("cannot split an empty corpus".into()));
    }
    let mut out = CorpusSplit {
        cutoff_date: Some(cutoff),
        ..Default::default()
    };
    let mut eval: Vec<&VideoSample> = Vec::new();
    for s in corpus.samples() {
        if s.publish_date < cutoff {
            out.train_ids.push(s.id.clone());
        } else {
            eval.push(s);
        }
    }
    if out.train_ids.is_empty() || eval.is_empty() {
        return Err(Error::Argument(format!(
            "cutoff {cutoff} leaves {} training and {} evaluation samples",
            out.train_ids.len(),
            eval.len()
        )));
    }
    eval.sort_by(|a, b| (a.publish_date, &a.id).cmp(&(b.publish_date, &b.id)));
    let mut test = HashSet::new();
    let mut dev = HashSet::new();
    for (i, s) in eval.iter().enumerate() {
        if i % 2 == 0 {
            test.insert(s.id.as_str());
        } else {
            dev.insert(s.id.as_str());
        }
    }
    for s in corpus.samples() {
        if test.contains(s.id.as_str()) {
            out.test_ids.push(s.id.clone());
        } else if dev.contains(s.id.as_str()) {
            out.dev_ids.push(s.id.clone());
        }
    }
    Ok(out)
}

/// Ids violating the date boundary of a cutoff split: training samples on or
/// after the cutoff, evaluation samples before it, and ids present in more
/// than one split.
pub fn audit_date_leakage(corpus: &Corpus, split: &CorpusSplit) -> Vec<String> {
    let Some(cutoff) = split.cutoff_date else {
        return Vec::new();
    };
    let mut bad = Vec::new();
    let mut seen = HashSet::new();
    for which in [Split::Train, Split::Dev, Split::Test] {
        for id in split.ids(which) {
            if !seen.insert(id.clone()) {
                bad.push(id.clone());
                continue;
            }
            let Some(s) = corpus.get(id) else { continue };
            let leaked = match which {
                Split::Train => s.publish_date >= cutoff,
                _ => s.publish_date < cutoff,
            };
            if leaked {
                bad.push(id.clone());
            }
        }
    }
    bad
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn sample(id: &str, date: &str, dim: usize) -> VideoSample {
        VideoSample {
            id: id.into(),
            source: "AP".into(),
            publish_date: date.parse().unwrap(),
            title: format!("Title {id}"),
            article_text: "- a\n- b".into(),
            bullet_summaries: vec!["a".into(), "b".into()],
            frame_features: FrameFeatures::new(2, dim, vec![0.25; 2 * dim]).unwrap(),
            asr_text: None,
            split: None,
            caption: None,
            entities: None,
        }
    }

    fn corpus_of(n: usize) -> Corpus {
        Corpus::from_samples((0..n).map(|i| sample(&format!("s{i}"), "2015-01-01", 2)).collect()).unwrap()
    }

    fn write_lines(dir: &Path, lines: &[String]) -> PathBuf {
        let p = dir.join("c.jsonl");
        fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    fn line(id: &str, dim: usize) -> String {
        let feats = vec![vec![0.5f32; dim]; 2];
        serde_json::json!({
            "id": id, "source": "BBC", "publish_date": "2016-05-01", "title": "t",
            "article_text": "x", "bullet_summaries": ["a"], "frame_features": feats,
            "asr_text": null, "split": null
        })
        .to_string()
    }

    const HEADER: &str = r#"{"schema": "views-corpus/1"}"#;

    #[test]
    fn loads_valid_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), &[HEADER.into(), line("a", 64), line("b", 64), line("c", 64)]);
        let c = load_corpus(&p, SCHEMA_V1).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.feature_dim(), 64);
    }

    #[test]
    fn duplicate_id_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), &[HEADER.into(), line("dup", 4), line("dup", 4)]);
        match load_corpus(&p, SCHEMA_V1) {
            Err(Error::Integrity(m)) => assert!(m.contains("dup"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn feature_dim_mismatch_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), &[HEADER.into(), line("a", 64), line("b", 63)]);
        assert!(matches!(load_corpus(&p, SCHEMA_V1), Err(Error::Integrity(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), &[HEADER.into(), line("a", 4), "{not json".into()]);
        match load_corpus(&p, SCHEMA_V1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_schema_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), &[r#"{"schema": "views-corpus/9"}"#.into(), line("a", 4)]);
        assert!(matches!(load_corpus(&p, SCHEMA_V1), Err(Error::Parse { line: 1, .. })));
        let p = write_lines(dir.path(), &[line("a", 4)]);
        assert!(load_corpus(&p, SCHEMA_V1).is_err());
    }

    #[test]
    fn future_dates_and_empty_frames_rejected() {
        let mut s = sample("a", "2015-01-01", 2);
        s.publish_date = chrono::Local::now().date_naive() + chrono::Days::new(3);
        assert!(matches!(Corpus::from_samples(vec![s]), Err(Error::Integrity(_))));
        assert!(FrameFeatures::new(0, 4, vec![]).is_err());
    }

    #[test]
    fn overlong_ground_truth_caption_rejected() {
        let mut s = sample("a", "2015-01-01", 2);
        s.caption = Some(CaptionRecord::new("a", "w ".repeat(101), CaptionOrigin::EventDescriptions));
        assert!(matches!(Corpus::from_samples(vec![s]), Err(Error::Integrity(_))));
    }

    #[test]
    fn roundtrip_inline_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = sample("x/1", "2014-02-03", 3);
        s.frame_features = FrameFeatures::new(2, 3, vec![0.1, -2.5, 3.25e-7, 1.0, 0.0, -0.3]).unwrap();
        s.asr_text = Some("hello".into());
        s.split = Some(Split::Dev);
        s.caption = Some(CaptionRecord::new("x/1", "Bush lands.", CaptionOrigin::EventDescriptions));
        s.entities = Some(EntitySet::new().with("PERSON", &["Bush"]));
        let c = Corpus::from_samples(vec![s, sample("y", "2019-12-31", 3)]).unwrap();

        let p = dir.path().join("inline.jsonl");
        save_corpus(&c, &p).unwrap();
        let back = load_corpus(&p, SCHEMA_V1).unwrap();
        assert_eq!(back.samples(), c.samples());

        let p = dir.path().join("side.jsonl");
        save_corpus_with_sidecars(&c, &p, "features").unwrap();
        assert!(dir.path().join("features/x_1.feat").exists());
        let back = load_corpus(&p, SCHEMA_V1).unwrap();
        assert_eq!(back.samples(), c.samples());
    }

    #[test]
    fn random_split_is_deterministic_and_sized() {
        let c = corpus_of(10);
        let a = split_random(&c, 2, 2, 7).unwrap();
        let b = split_random(&c, 2, 2, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train_ids.len(), a.dev_ids.len(), a.test_ids.len()), (6, 2, 2));
        assert!(a.is_disjoint());
        assert!(matches!(split_random(&c, 5, 5, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn random_split_at_full_scale() {
        let base = sample("s", "2015-01-01", 1);
        let samples: Vec<VideoSample> = (0..144_000)
            .map(|i| VideoSample {
                id: format!("v{i}"),
                ..base.clone()
            })
            .collect();
        let c = Corpus::from_samples(samples).unwrap();
        let s = split_random(&c, 1600, 1600, 0).unwrap();
        assert_eq!(s.train_ids.len(), 140_800);
    }

    #[test]
    fn date_split_boundaries() {
        let c = Corpus::from_samples(vec![
            sample("old", "2016-05-01", 2),
            sample("new", "2018-03-02", 2),
            sample("edge", "2017-01-01", 2),
        ])
        .unwrap();
        let cutoff: NaiveDate = "2017-01-01".parse().unwrap();
        let s = split_by_date(&c, cutoff).unwrap();
        assert_eq!(s.train_ids, vec!["old"]);
        let eval: HashSet<&String> = s.dev_ids.iter().chain(&s.test_ids).collect();
        assert!(eval.contains(&"new".to_string()) && eval.contains(&"edge".to_string()));
        assert!(audit_date_leakage(&c, &s).is_empty());

        let late: NaiveDate = "2010-01-01".parse().unwrap();
        assert!(matches!(split_by_date(&c, late), Err(Error::Argument(_))));
    }

    #[test]
    fn leakage_audit_flags_injected_sample() {
        let c = Corpus::from_samples(vec![sample("old", "2016-05-01", 2), sample("new", "2018-03-02", 2)]).unwrap();
        let mut s = split_by_date(&c, "2017-01-01".parse().unwrap()).unwrap();
        s.train_ids.push("new".into());
        let bad = audit_date_leakage(&c, &s);
        assert!(bad.contains(&"new".to_string()));
    }

    #[test]
    fn uniform_frame_sampling() {
        assert_eq!(uniform_indices(19, 6), vec![0, 4, 7, 11, 14, 18]);
        assert_eq!(uniform_indices(3, 6), vec![0, 1, 2]);
        assert_eq!(uniform_indices(5, 1), vec![2]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn random_split_partitions(n in 3usize..60, dev in 0usize..20, test in 0usize..20, seed: u64) {
                prop_assume!(dev + test < n);
                let c = corpus_of(n);
                let s = split_random(&c, dev, test, seed).unwrap();
                prop_assert!(s.is_disjoint());
                let mut all: Vec<&String> = s.train_ids.iter().chain(&s.dev_ids).chain(&s.test_ids).collect();
                all.sort();
                let mut want: Vec<String> = c.ids().map(String::from).collect();
                want.sort();
                prop_assert_eq!(all.into_iter().cloned().collect::<Vec<_>>(), want);
            }

            #[test]
            fn date_split_never_leaks(days in proptest::collection::vec(0i64..3000, 2..40), cut in 1i64..2999) {
                let origin: NaiveDate = "2010-01-01".parse().unwrap();
                let samples: Vec<VideoSample> = days.iter().enumerate().map(|(i, d)| {
                    let mut s = sample(&format!("s{i}"), "2010-01-01", 2);
                    s.publish_date = origin + chrono::Duration::days(*d);
                    s
                }).collect();
                let c = Corpus::from_samples(samples).unwrap();
                let cutoff = origin + chrono::Duration::days(cut);
                if let Ok(split) = split_by_date(&c, cutoff) {
                    for id in &split.train_ids {
                        prop_assert!(c.get(id).unwrap().publish_date < cutoff);
                    }
                    prop_assert!(audit_date_leakage(&c, &split).is_empty());
                }
            }
        }
    }
}
