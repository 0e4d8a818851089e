//! Experiment orchestration: the staged pipeline (perceiver, knowledge,
//! captioner, evaluation) with file-cached intermediates, the ablation
//! table, the time-split study and the knowledge-extraction studies.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::captioner::{
    bundle_for, caption_vocab, generate_all, load_captions, load_vi, save_captions, save_vi, train_cm, vi_index,
    AblationConfig, Captioner, ViRecord,
};
use crate::corpus::{
    audit_date_leakage, load_corpus, split_by_date, split_random, CaptionRecord, Corpus, CorpusSplit, Split,
    VideoSample, SCHEMA_V1,
};
use crate::entities::EntitySet;
use crate::error::{Error, Result};
use crate::knowledge::{
    audit_provenance, context_score_at_recall, extract_context, extract_context_single_stage, load_contexts,
    save_contexts, score_context, ContextPassage, ContextRecord, MockKb, NearestCaptionDescriber,
};
use crate::llm::{HttpLlm, LlmClient, ReplayLlm};
use crate::metrics::{
    entity_f1, evaluate, EntityExtractor, EntityMatchConfig, Gazetteer, HashEmbedder, LlmExtractor, MetricReport,
};
use crate::perceiver::{
    decode_samples, entity_vocab, load_entity_records, save_entity_records, train_ep, EntityPerceiver, EntityRecord,
};
use crate::train::{ModelConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Seeded random dev/test draw; the rest is train.
    Random { dev: usize, test: usize, seed: u64 },
    /// Train before the cutoff, evaluate on or after it.
    Date { cutoff: NaiveDate },
    /// Use the split recorded on each sample.
    Fields,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Random {
            dev: 40,
            test: 40,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl StageSpec {
    pub fn ep_default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 40,
                max_target_tokens: 32,
                ..TrainConfig::desk()
            },
        }
    }

    pub fn cm_default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 40,
                max_target_tokens: 48,
                ..TrainConfig::desk()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeBackendSpec {
    Mock { kb: PathBuf },
    Replay { cassette: PathBuf },
    Live { endpoint: String, model: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeSpec {
    pub backend: KeBackendSpec,
    #[serde(default = "yes")]
    pub structured: bool,
    /// Include the single-stage row in knowledge studies.
    #[serde(default = "yes")]
    pub single_stage: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorSpec {
    /// Dictionary matcher; without a file, the corpus's ground-truth entities.
    #[default]
    Gazetteer,
    GazetteerFile { path: PathBuf },
    Llm { endpoint: String, model: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSpec {
    #[serde(default)]
    pub extractor: ExtractorSpec,
    #[serde(default)]
    pub entity_match: EntityMatchConfig,
}

/// Experiment description, usually read from TOML. Relative paths are
/// resolved against the spec file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub corpus: PathBuf,
    #[serde(default = "default_schema")]
    pub schema_version: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "StageSpec::ep_default")]
    pub ep: StageSpec,
    #[serde(default = "StageSpec::cm_default")]
    pub cm: StageSpec,
    #[serde(default = "default_ablations")]
    pub ablations: Vec<String>,
    pub ke: KeSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
    /// Replace EP/KE outputs with ground-truth entities and the paired
    /// article, bounding what better VI could buy.
    #[serde(default)]
    pub oracle_vi: bool,
    #[serde(default = "default_eval_splits")]
    pub eval_splits: Vec<Split>,
    /// Fail when the ablation ordering does not hold.
    #[serde(default)]
    pub strict: bool,
}

fn default_schema() -> String {
    SCHEMA_V1.to_string()
}

fn default_ablations() -> Vec<String> {
    AblationConfig::table_rows().iter().map(|a| a.slug()).collect()
}

fn default_eval_splits() -> Vec<Split> {
    vec![Split::Test]
}

impl ExperimentSpec {
    /// Defaults for everything but the inputs and the output directory.
    pub fn new(corpus: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, backend: KeBackendSpec) -> Self {
        Self {
            corpus: corpus.into(),
            schema_version: default_schema(),
            output_dir: output_dir.into(),
            seed: 0,
            split: SplitSpec::default(),
            ep: StageSpec::ep_default(),
            cm: StageSpec::cm_default(),
            ablations: default_ablations(),
            ke: KeSpec {
                backend,
                structured: true,
                single_stage: true,
            },
            metrics: MetricsSpec::default(),
            oracle_vi: false,
            eval_splits: default_eval_splits(),
            strict: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: ExperimentSpec = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.resolve_paths(base);
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.output_dir);
        match &mut self.ke.backend {
            KeBackendSpec::Mock { kb } => fix(kb),
            KeBackendSpec::Replay { cassette } => fix(cassette),
            KeBackendSpec::Live { .. } => {}
        }
        if let ExtractorSpec::GazetteerFile { path } = &mut self.metrics.extractor {
            fix(path);
        }
    }

    pub fn ablation_configs(&self) -> Result<Vec<AblationConfig>> {
        self.ablations.iter().map(|s| s.parse()).collect()
    }

    /// Checks every referenced input before anything runs.
    pub fn validate(&self) -> Result<()> {
        let need = |p: &Path, what: &str| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Argument(format!("{what} {} does not exist", p.display())))
            }
        };
        need(&self.corpus, "corpus")?;
        match &self.ke.backend {
            KeBackendSpec::Mock { kb } => need(kb, "knowledge base")?,
            KeBackendSpec::Replay { cassette } => need(cassette, "cassette")?,
            KeBackendSpec::Live { .. } => {}
        }
        if let ExtractorSpec::GazetteerFile { path } = &self.metrics.extractor {
            need(path, "gazetteer")?;
        }
        if self.ablations.is_empty() {
            return Err(Error::Argument("no ablations requested".into()));
        }
        self.ablation_configs()?;
        self.ep.train.validate()?;
        self.cm.train.validate()?;
        Ok(())
    }
}

pub fn load_gazetteer(path: &Path) -> Result<Gazetteer> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut g: Gazetteer = serde_json::from_str(&text)?;
    g.reindex();
    Ok(g)
}

pub fn save_gazetteer(g: &Gazetteer, path: &Path) -> Result<()> {
    let text = serde_json::to_string(g)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A spec with its inputs loaded.
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub corpus: Corpus,
    pub split: CorpusSplit,
    pub backend: Arc<dyn LlmClient>,
    pub extractor: Arc<dyn EntityExtractor>,
}

pub fn make_split(corpus: &Corpus, spec: &SplitSpec) -> Result<CorpusSplit> {
    match spec {
        SplitSpec::Random { dev, test, seed } => split_random(corpus, *dev, *test, *seed),
        SplitSpec::Date { cutoff } => {
            check_cutoff(corpus, *cutoff)?;
            split_by_date(corpus, *cutoff)
        }
        SplitSpec::Fields => CorpusSplit::from_corpus_fields(corpus),
    }
}

fn check_cutoff(corpus: &Corpus, cutoff: NaiveDate) -> Result<()> {
    let dates = corpus.samples().iter().map(|s| s.publish_date);
    let (lo, hi) = (dates.clone().min(), dates.max());
    match (lo, hi) {
        (Some(lo), Some(hi)) if lo < cutoff && cutoff <= hi => Ok(()),
        (Some(lo), Some(hi)) => Err(Error::Argument(format!(
            "cutoff {cutoff} lies outside the corpus date range {lo}..={hi}"
        ))),
        _ => Err(Error::Argument("empty corpus".into())),
    }
}

impl Experiment {
    /// Validates the spec, then loads corpus, split, backend and extractor.
    pub fn from_spec(spec: ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let corpus = load_corpus(&spec.corpus, &spec.schema_version)?;
        let split = make_split(&corpus, &spec.split)?;
        let backend: Arc<dyn LlmClient> = match &spec.ke.backend {
            KeBackendSpec::Mock { kb } => Arc::new(MockKb::load(kb)?),
            KeBackendSpec::Replay { cassette } => Arc::new(ReplayLlm::load(cassette)?),
            KeBackendSpec::Live { endpoint, model } => Arc::new(HttpLlm::from_env(endpoint, model)?),
        };
        let extractor: Arc<dyn EntityExtractor> = match &spec.metrics.extractor {
            ExtractorSpec::Gazetteer => Arc::new(Gazetteer::from_sets(
                corpus.samples().iter().filter_map(|s| s.entities.as_ref()),
            )),
            ExtractorSpec::GazetteerFile { path } => Arc::new(load_gazetteer(path)?),
            ExtractorSpec::Llm { endpoint, model } => Arc::new(LlmExtractor {
                client: HttpLlm::from_env(endpoint, model)?,
            }),
        };
        Self::new(spec, corpus, split, backend, extractor)
    }

    pub fn new(
        spec: ExperimentSpec,
        corpus: Corpus,
        split: CorpusSplit,
        backend: Arc<dyn LlmClient>,
        extractor: Arc<dyn EntityExtractor>,
    ) -> Result<Self> {
        if !split.is_disjoint() {
            return Err(Error::Integrity("split lists overlap".into()));
        }
        let corpus = corpus.with_split(&split)?;
        Ok(Self {
            spec,
            corpus,
            split,
            backend,
            extractor,
        })
    }

    pub fn samples(&self, which: Split) -> Vec<&VideoSample> {
        self.corpus.subset(&self.split, which)
    }

    fn path(&self, name: &str) -> PathBuf {
        let dir = &self.spec.output_dir;
        if self.spec.oracle_vi && (name.starts_with("vi") || name.starts_with("cm_") || name.starts_with("preds_")) {
            dir.join("oracle").join(name)
        } else {
            dir.join(name)
        }
    }

    fn ep_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.spec.seed,
            ..self.spec.ep.train.clone()
        }
    }

    fn cm_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.spec.seed,
            ..self.spec.cm.train.clone()
        }
    }
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f().map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name.to_string(),
            message: other.to_string(),
        },
    });
    log::info!("stage {name} finished in {:.1}s", t.elapsed().as_secs_f64());
    out
}

/// Trains the perceiver, or loads it from `ep.json`.
pub fn ep_stage(exp: &Experiment) -> Result<EntityPerceiver> {
    stage("ep-train", || {
        let path = exp.path("ep.json");
        if path.is_file() {
            return EntityPerceiver::load(&path);
        }
        let train = exp.samples(Split::Train);
        let mut ep = EntityPerceiver::new(
            entity_vocab(train.iter().copied()),
            exp.corpus.feature_dim(),
            &exp.spec.ep.model,
            exp.ep_train(),
        )?;
        train_ep(&mut ep, &train)?;
        ep.save(&path)?;
        Ok(ep)
    })
}

/// Decoded entities for every sample, cached in `entities.jsonl`.
pub fn entities_stage(exp: &Experiment, ep: &EntityPerceiver) -> Result<Vec<EntityRecord>> {
    stage("ep-decode", || {
        let path = exp.path("entities.jsonl");
        if path.is_file() {
            return load_entity_records(&path);
        }
        let all: Vec<&VideoSample> = exp.corpus.samples().iter().collect();
        let recs = decode_samples(ep, &all)?;
        save_entity_records(&recs, &path)?;
        Ok(recs)
    })
}

/// Context per sample from its entities. Samples whose backend reply is
/// empty get no record.
pub fn contexts_for(
    entities: &[(String, EntitySet)],
    backend: &dyn LlmClient,
    structured: bool,
) -> Result<Vec<ContextRecord>> {
    let mut out = Vec::new();
    for (id, es) in entities {
        match extract_context(es, backend, structured) {
            Ok(passage) => out.push(ContextRecord {
                sample_id: id.clone(),
                passage,
            }),
            Err(Error::EmptyContext { .. }) => log::debug!("empty context for {id}"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn parsed_entities(records: &[EntityRecord]) -> Result<Vec<(String, EntitySet)>> {
    records.iter().map(|r| Ok((r.sample_id.clone(), r.entities()?))).collect()
}

/// Knowledge passages for every sample, cached in `context.jsonl`.
pub fn context_stage(exp: &Experiment, entities: &[EntityRecord]) -> Result<Vec<ContextRecord>> {
    stage("ke-extract", || {
        let path = exp.path("context.jsonl");
        if path.is_file() {
            return load_contexts(&path);
        }
        let recs = contexts_for(&parsed_entities(entities)?, exp.backend.as_ref(), exp.spec.ke.structured)?;
        let orphans = audit_provenance(&recs);
        if !orphans.is_empty() {
            return Err(Error::Integrity(format!("passages without provenance: {orphans:?}")));
        }
        save_contexts(&recs, &path)?;
        Ok(recs)
    })
}

/// One VI record per corpus sample from decoded entities and passages;
/// samples missing from either get an empty field.
pub fn join_vi(corpus: &Corpus, entities: &[EntityRecord], contexts: &[ContextRecord]) -> Vec<ViRecord> {
    let ents: HashMap<&str, &EntityRecord> = entities.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    let ctx: HashMap<&str, &ContextRecord> = contexts.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    corpus
        .samples()
        .iter()
        .map(|s| ViRecord {
            sample_id: s.id.clone(),
            entity_string: ents.get(s.id.as_str()).map(|r| r.entity_string.clone()).unwrap_or_default(),
            context_text: ctx.get(s.id.as_str()).map(|r| r.passage.text.clone()).unwrap_or_default(),
            asr_text: s.asr_text.clone(),
        })
        .collect()
}

/// Joins entities, context and ASR into `vi.jsonl`.
pub fn vi_stage(exp: &Experiment, entities: &[EntityRecord], contexts: &[ContextRecord]) -> Result<Vec<ViRecord>> {
    stage("vi", || {
        let path = exp.path("vi.jsonl");
        if path.is_file() {
            return load_vi(&path);
        }
        let recs = join_vi(&exp.corpus, entities, contexts);
        save_vi(&recs, &path)?;
        Ok(recs)
    })
}

/// Ground-truth entities and the paired article as VI.
pub fn oracle_vi_stage(exp: &Experiment) -> Result<Vec<ViRecord>> {
    stage("oracle-vi", || {
        let path = exp.path("vi.jsonl");
        let recs: Vec<ViRecord> = exp
            .corpus
            .samples()
            .iter()
            .map(|s| ViRecord {
                sample_id: s.id.clone(),
                entity_string: s.entities.as_ref().map(|e| e.to_string()).unwrap_or_default(),
                context_text: s.article_text.clone(),
                asr_text: s.asr_text.clone(),
            })
            .collect();
        save_vi(&recs, &path)?;
        Ok(recs)
    })
}

pub fn cm_stage(exp: &Experiment, ablation: AblationConfig, vi: &[ViRecord]) -> Result<Captioner> {
    stage(&format!("cm-train[{ablation}]"), || {
        let path = exp.path(&format!("cm_{}.json", ablation.slug()));
        if path.is_file() {
            return Captioner::load(&path);
        }
        let index = vi_index(vi);
        let train = exp.samples(Split::Train);
        let mut cm = Captioner::new(
            caption_vocab(&train, &index),
            exp.corpus.feature_dim(),
            &exp.spec.cm.model,
            exp.cm_train(),
            ablation,
        )?;
        train_cm(&mut cm, &train, &index)?;
        cm.save(&path)?;
        Ok(cm)
    })
}

/// Predictions for every dev and test sample.
pub fn predict_stage(exp: &Experiment, cm: &Captioner, vi: &[ViRecord]) -> Result<Vec<CaptionRecord>> {
    stage(&format!("generate[{}]", cm.ablation), || {
        let path = exp.path(&format!("preds_{}.jsonl", cm.ablation.slug()));
        if path.is_file() {
            return load_captions(&path);
        }
        let mut eval = exp.samples(Split::Dev);
        eval.extend(exp.samples(Split::Test));
        let index = vi_index(vi);
        // Fail before decoding anything if VI is incomplete.
        for s in &eval {
            bundle_for(&s.id, &index, &cm.ablation)?;
        }
        let preds = generate_all(cm, &eval, &index)?;
        save_captions(&preds, &path)?;
        Ok(preds)
    })
}

/// Metrics of `preds` against ground-truth captions of `ids`.
pub fn evaluate_ids(exp: &Experiment, preds: &[CaptionRecord], ids: &[String]) -> Result<MetricReport> {
    let by_id: HashMap<&str, &CaptionRecord> = preds.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let mut p = Vec::with_capacity(ids.len());
    let mut r = Vec::with_capacity(ids.len());
    for id in ids {
        let pred = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("no prediction for sample {id:?}")))?;
        let sample = exp.corpus.get(id).ok_or_else(|| Error::Data(format!("unknown sample {id:?}")))?;
        let reference = sample
            .caption
            .as_ref()
            .ok_or_else(|| Error::Data(format!("sample {id:?} has no reference caption")))?;
        p.push(pred.text.clone());
        r.push(reference.text.clone());
    }
    if p.is_empty() {
        return Err(Error::Argument("nothing to evaluate".into()));
    }
    evaluate(&p, &r, exp.extractor.as_ref(), &exp.spec.metrics.entity_match)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub ablation: AblationConfig,
    pub label: String,
    pub split: Split,
    pub metrics: MetricReport,
    pub checkpoint: PathBuf,
    pub predictions: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub seed: u64,
    pub crate_version: String,
    pub oracle_vi: bool,
    pub structured_ke: bool,
    pub ke_backend: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub cells: Vec<ReportCell>,
    pub loss_curves: BTreeMap<String, Vec<f64>>,
    pub fingerprint: Option<Fingerprint>,
    pub wall_clock_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExperimentReport {
    pub fn cell(&self, ablation: AblationConfig, split: Split) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.ablation == ablation && c.split == split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Everything the captioner stages need, computed once.
pub struct PipelineState {
    pub ep: Option<EntityPerceiver>,
    pub entities: Vec<EntityRecord>,
    pub vi: Vec<ViRecord>,
}

/// EP, decode, KE and VI stages (or the oracle VI in their place).
pub fn upstream(exp: &Experiment, report: &mut ExperimentReport) -> Result<PipelineState> {
    if exp.spec.oracle_vi {
        return Ok(PipelineState {
            ep: None,
            entities: Vec::new(),
            vi: oracle_vi_stage(exp)?,
        });
    }
    let ep = ep_stage(exp)?;
    report.loss_curves.insert("ep".into(), ep.loss_curve.clone());
    let entities = entities_stage(exp, &ep)?;
    let contexts = context_stage(exp, &entities)?;
    let vi = vi_stage(exp, &entities, &contexts)?;
    Ok(PipelineState {
        ep: Some(ep),
        entities,
        vi,
    })
}

fn run_inner(exp: &Experiment, ablations: &[AblationConfig], report: &mut ExperimentReport) -> Result<()> {
    let state = upstream(exp, report)?;
    for &ab in ablations {
        let cm = cm_stage(exp, ab, &state.vi)?;
        report.loss_curves.insert(format!("cm[{}]", ab.slug()), cm.loss_curve.clone());
        let preds = predict_stage(exp, &cm, &state.vi)?;
        for &split in &exp.spec.eval_splits {
            let ids = exp.split.ids(split);
            if ids.is_empty() {
                continue;
            }
            let metrics = stage("eval", || evaluate_ids(exp, &preds, ids))?;
            report.cells.push(ReportCell {
                ablation: ab,
                label: ab.label(),
                split,
                metrics,
                checkpoint: exp.path(&format!("cm_{}.json", ab.slug())),
                predictions: exp.path(&format!("preds_{}.jsonl", ab.slug())),
            });
        }
    }
    Ok(())
}

/// EP train, EP decode, KE extract, CM train, generate and evaluate for
/// every ablation in the spec. Completed stages are reused from the output
/// directory; on failure the report records the stage and is still written.
pub fn run_pipeline(exp: &Experiment) -> Result<ExperimentReport> {
    let ablations = exp.spec.ablation_configs()?;
    run_with(exp, &ablations)
}

pub fn run_with(exp: &Experiment, ablations: &[AblationConfig]) -> Result<ExperimentReport> {
    let t = Instant::now();
    std::fs::create_dir_all(&exp.spec.output_dir).map_err(|e| Error::io(&exp.spec.output_dir, e))?;
    let mut report = ExperimentReport {
        fingerprint: Some(Fingerprint {
            seed: exp.spec.seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            oracle_vi: exp.spec.oracle_vi,
            structured_ke: exp.spec.ke.structured,
            ke_backend: exp.backend.id().to_string(),
        }),
        ..Default::default()
    };
    let result = run_inner(exp, ablations, &mut report);
    report.wall_clock_secs = t.elapsed().as_secs_f64();
    if let Err(e) = &result {
        if let Error::Stage { stage, message } = e {
            report.failed_stage = Some(stage.clone());
            report.error = Some(message.clone());
        } else {
            report.error = Some(e.to_string());
        }
    }
    let name = if exp.spec.oracle_vi { "report_oracle.json" } else { "report.json" };
    report.save(&exp.spec.output_dir.join(name))?;
    result.map(|_| report)
}

const COLUMNS: [&str; 5] = ["B-4", "R-L", "CIDEr", "Ent F1", "Hall."];

/// Plain-text table with one row per (label, metrics).
pub fn render_table(title: &str, rows: &[(String, MetricReport)]) -> String {
    let w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    writeln!(out, "{title}").unwrap();
    write!(out, "{:<w$}", "Method").unwrap();
    for c in COLUMNS {
        write!(out, " {c:>8}").unwrap();
    }
    out.push('\n');
    for (label, m) in rows {
        write!(out, "{label:<w$}").unwrap();
        for v in [m.bleu4, m.rouge_l, m.cider, m.entity_f1, m.hallucination_rate] {
            write!(out, " {v:>8.2}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub split: Split,
    pub rows: Vec<(String, MetricReport)>,
    pub ordering_holds: bool,
    pub violations: Vec<String>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        render_table(&format!("Design-choice ablation ({:?} split)", self.split), &self.rows)
    }

    pub fn cider(&self, label: &str) -> Option<f64> {
        self.rows.iter().find(|(l, _)| l == label).map(|(_, m)| m.cider)
    }
}

/// Checks full VI above each partial row and each partial row above
/// video-only, by CIDEr.
pub fn ablation_ordering(rows: &[(AblationConfig, f64)]) -> Vec<String> {
    let get = |a: AblationConfig| rows.iter().find(|(r, _)| *r == a).map(|(_, c)| *c);
    let mut v = Vec::new();
    let (Some(full), Some(none)) = (get(AblationConfig::FULL), get(AblationConfig::NO_VI)) else {
        return vec!["table lacks the full or the video-only row".into()];
    };
    for partial in [AblationConfig::NO_ENTITIES, AblationConfig::NO_KNOWLEDGE] {
        if let Some(p) = get(partial) {
            if full <= p {
                v.push(format!("{} CIDEr {full:.2} is not above {} {p:.2}", AblationConfig::FULL.label(), partial.label()));
            }
            if p <= none {
                v.push(format!("{} CIDEr {p:.2} is not above {} {none:.2}", partial.label(), AblationConfig::NO_VI.label()));
            }
        }
    }
    if full <= none {
        v.push(format!("full VI CIDEr {full:.2} is not above video-only {none:.2}"));
    }
    v
}

/// The four-row design-choice table on the first evaluation split.
pub fn run_ablation_table(exp: &Experiment) -> Result<(AblationTable, ExperimentReport)> {
    let rows = AblationConfig::table_rows();
    let report = run_with(exp, &rows)?;
    let split = *exp
        .spec
        .eval_splits
        .first()
        .ok_or_else(|| Error::Argument("no evaluation split".into()))?;
    let mut table_rows = Vec::new();
    let mut ciders = Vec::new();
    for ab in rows {
        let cell = report
            .cell(ab, split)
            .ok_or_else(|| Error::Data(format!("missing cell for {}", ab.label())))?;
        table_rows.push((ab.label(), cell.metrics.clone()));
        ciders.push((ab, cell.metrics.cider));
    }
    let violations = ablation_ordering(&ciders);
    let table = AblationTable {
        split,
        rows: table_rows,
        ordering_holds: violations.is_empty(),
        violations,
    };
    std::fs::write(exp.spec.output_dir.join("ablation.txt"), table.render())
        .map_err(|e| Error::io(exp.spec.output_dir.join("ablation.txt"), e))?;
    Ok((table, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSplitReport {
    pub cutoff: NaiveDate,
    pub train_n: usize,
    pub eval_n: usize,
    pub rows: Vec<(String, MetricReport)>,
    pub leakage: Vec<String>,
}

impl TimeSplitReport {
    pub fn render(&self) -> String {
        render_table(
            &format!(
                "Train before {}, evaluate after ({} train / {} eval)",
                self.cutoff, self.train_n, self.eval_n
            ),
            &self.rows,
        )
    }
}

/// Trains on pre-cutoff samples and evaluates video-only against full VI on
/// every post-cutoff sample. Any date leakage is a hard failure.
pub fn run_time_generalization(exp: &Experiment) -> Result<TimeSplitReport> {
    let cutoff = exp
        .split
        .cutoff_date
        .ok_or_else(|| Error::Argument("time generalisation needs a date split".into()))?;
    check_cutoff(&exp.corpus, cutoff)?;
    let leakage = audit_date_leakage(&exp.corpus, &exp.split);
    if !leakage.is_empty() {
        return Err(Error::Integrity(format!("date leakage across the cutoff: {leakage:?}")));
    }
    let rows_ab = [AblationConfig::NO_VI, AblationConfig::FULL];
    let report = run_with(exp, &rows_ab)?;
    let mut eval_ids: Vec<String> = exp.split.dev_ids.clone();
    eval_ids.extend(exp.split.test_ids.iter().cloned());
    let mut rows = Vec::new();
    for ab in rows_ab {
        let preds = load_captions(&exp.path(&format!("preds_{}.jsonl", ab.slug())))?;
        let label = if ab.is_video_only() { "Video only" } else { "+ VI" };
        rows.push((label.to_string(), evaluate_ids(exp, &preds, &eval_ids)?));
    }
    let out = TimeSplitReport {
        cutoff,
        train_n: exp.split.train_ids.len(),
        eval_n: eval_ids.len(),
        rows,
        leakage,
    };
    let _ = report;
    std::fs::write(exp.spec.output_dir.join("timesplit.txt"), out.render())
        .map_err(|e| Error::io(exp.spec.output_dir.join("timesplit.txt"), e))?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeStudyRow {
    pub method: String,
    /// Entity-F1 of passage text against the reference caption.
    pub passage_entity_f1: f64,
    /// Mean context score; empty contexts count as zero.
    pub context_score: f64,
    pub empty_contexts: usize,
    pub prompt_hashes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeStudyReport {
    pub sample_ids: Vec<String>,
    pub rows: Vec<KeStudyRow>,
    /// (fraction of ground-truth entities fed, mean context score).
    pub recall_sweep: Vec<(f64, f64)>,
}

impl KeStudyReport {
    pub fn row(&self, method: &str) -> Option<&KeStudyRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn render(&self) -> String {
        let mut out = format!("Knowledge extraction ({} samples)\n", self.sample_ids.len());
        writeln!(out, "{:<26} {:>10} {:>10} {:>6}", "Method", "Ent F1", "BSc", "empty").unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<26} {:>10.2} {:>10.2} {:>6}",
                r.method,
                r.passage_entity_f1,
                100.0 * r.context_score,
                r.empty_contexts
            )
            .unwrap();
        }
        out.push_str("Entity recall -> context score\n");
        for (r, s) in &self.recall_sweep {
            writeln!(out, "{:>5.0}% {:>10.4}", 100.0 * r, s).unwrap();
        }
        out
    }
}

pub const KE_STRUCTURED: &str = "Two-Stage KE (structured)";
pub const KE_FLAT: &str = "Two-Stage KE (flat)";
pub const KE_SINGLE: &str = "Single-Stage KE";
pub const RECALL_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn study_row(
    exp: &Experiment,
    method: &str,
    ids: &[String],
    passages: &HashMap<String, ContextPassage>,
) -> Result<KeStudyRow> {
    let embedder = HashEmbedder::default();
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut score = 0.0;
    let mut hashes = Vec::new();
    for id in ids {
        let reference = exp
            .corpus
            .get(id)
            .and_then(|s| s.caption.as_ref())
            .ok_or_else(|| Error::Data(format!("sample {id:?} has no reference caption")))?;
        gts.push(exp.extractor.extract(&reference.text)?);
        match passages.get(id) {
            Some(p) => {
                preds.push(exp.extractor.extract(&p.text)?);
                score += score_context(p, &reference.text, &embedder)?;
                hashes.push(p.prompt_hash.clone());
            }
            None => preds.push(EntitySet::new()),
        }
    }
    Ok(KeStudyRow {
        method: method.to_string(),
        passage_entity_f1: entity_f1(&preds, &gts, &exp.spec.metrics.entity_match)?,
        context_score: score / ids.len().max(1) as f64,
        empty_contexts: ids.len() - hashes.len(),
        prompt_hashes: hashes,
    })
}

/// Structured vs flat two-stage extraction and the single-stage stub,
/// scored on passages for `ids` (default: the first evaluation split), plus
/// the entity-recall sweep with ground-truth entities.
pub fn run_ke_studies(exp: &Experiment, ids: Option<&[String]>) -> Result<KeStudyReport> {
    let mut scratch = ExperimentReport::default();
    let ep = ep_stage(exp)?;
    scratch.loss_curves.insert("ep".into(), ep.loss_curve.clone());
    let entities = entities_stage(exp, &ep)?;
    let ids: Vec<String> = match ids {
        Some(v) => v.to_vec(),
        None => {
            let split = exp.spec.eval_splits.first().copied().unwrap_or(Split::Test);
            exp.split.ids(split).to_vec()
        }
    };
    let decoded: HashMap<&str, &EntityRecord> = entities.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    let mut subset = Vec::new();
    for id in &ids {
        let r = decoded
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("no decoded entities for {id:?}")))?;
        subset.push((id.clone(), r.entities()?));
    }
    let mut rows = Vec::new();
    for (method, structured) in [(KE_STRUCTURED, true), (KE_FLAT, false)] {
        let recs = contexts_for(&subset, exp.backend.as_ref(), structured)?;
        let map = recs.into_iter().map(|r| (r.sample_id, r.passage)).collect();
        rows.push(study_row(exp, method, &ids, &map)?);
    }
    if exp.spec.ke.single_stage {
        // Studied samples never describe themselves.
        let bank: Vec<&VideoSample> =
            exp.samples(Split::Train).into_iter().filter(|s| !ids.contains(&s.id)).collect();
        let describer = NearestCaptionDescriber::from_samples(bank);
        let mut map = HashMap::new();
        for id in &ids {
            let s = exp.corpus.get(id).expect("id from corpus");
            match extract_context_single_stage(&s.frame_features, &describer) {
                Ok(p) => {
                    map.insert(id.clone(), p);
                }
                Err(Error::EmptyContext { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        rows.push(study_row(exp, KE_SINGLE, &ids, &map)?);
    }
    let gt: Vec<EntitySet> = ids
        .iter()
        .map(|id| exp.corpus.get(id).and_then(|s| s.entities.clone()).unwrap_or_default())
        .collect();
    let refs: Vec<String> = ids
        .iter()
        .map(|id| exp.corpus.get(id).and_then(|s| s.caption.as_ref()).map(|c| c.text.clone()).unwrap_or_default())
        .collect();
    let embedder = HashEmbedder::default();
    let mut sweep = Vec::new();
    for level in RECALL_LEVELS {
        let s = context_score_at_recall(&gt, &refs, level, exp.backend.as_ref(), &embedder, exp.spec.seed)?;
        sweep.push((level, s));
    }
    let report = KeStudyReport {
        sample_ids: ids,
        rows,
        recall_sweep: sweep,
    };
    std::fs::create_dir_all(&exp.spec.output_dir).map_err(|e| Error::io(&exp.spec.output_dir, e))?;
    std::fs::write(exp.spec.output_dir.join("ke_studies.txt"), report.render())
        .map_err(|e| Error::io(exp.spec.output_dir.join("ke_studies.txt"), e))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSweep {
    /// (seed, full-VI CIDEr, video-only CIDEr)
    pub runs: Vec<(u64, f64, f64)>,
    pub sign_stable: bool,
}

/// Full VI against video-only for each seed, each in its own subdirectory.
pub fn run_seed_sweep(exp: &Experiment, seeds: &[u64]) -> Result<SeedSweep> {
    let split = *exp
        .spec
        .eval_splits
        .first()
        .ok_or_else(|| Error::Argument("no evaluation split".into()))?;
    let mut runs = Vec::new();
    for &seed in seeds {
        let mut spec = exp.spec.clone();
        spec.seed = seed;
        spec.output_dir = exp.spec.output_dir.join(format!("seed-{seed}"));
        let sub = Experiment {
            spec,
            corpus: exp.corpus.clone(),
            split: exp.split.clone(),
            backend: exp.backend.clone(),
            extractor: exp.extractor.clone(),
        };
        let report = run_with(&sub, &[AblationConfig::FULL, AblationConfig::NO_VI])?;
        let c = |a| report.cell(a, split).map(|c| c.metrics.cider).unwrap_or(0.0);
        runs.push((seed, c(AblationConfig::FULL), c(AblationConfig::NO_VI)));
    }
    let signs: Vec<bool> = runs.iter().map(|(_, f, n)| f > n).collect();
    let sign_stable = signs.windows(2).all(|w| w[0] == w[1]);
    Ok(SeedSweep { runs, sign_stable })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_checks() {
        let ok = [
            (AblationConfig::FULL, 30.0),
            (AblationConfig::NO_ENTITIES, 20.0),
            (AblationConfig::NO_KNOWLEDGE, 22.0),
            (AblationConfig::NO_VI, 10.0),
        ];
        assert!(ablation_ordering(&ok).is_empty());
        let bad = [
            (AblationConfig::FULL, 30.0),
            (AblationConfig::NO_ENTITIES, 31.0),
            (AblationConfig::NO_KNOWLEDGE, 5.0),
            (AblationConfig::NO_VI, 10.0),
        ];
        assert_eq!(ablation_ordering(&bad).len(), 2);
    }

    #[test]
    fn table_layout_uses_row_labels() {
        let rows: Vec<(String, MetricReport)> = AblationConfig::table_rows()
            .iter()
            .map(|a| (a.label(), MetricReport::default()))
            .collect();
        let t = render_table("t", &rows);
        let labels: Vec<&str> = t.lines().skip(2).map(|l| l.split("  ").next().unwrap().trim()).collect();
        assert_eq!(labels, ["Ours", "w/o Entities", "w/o Knowledge", "w/o VI"]);
        assert!(t.lines().nth(1).unwrap().contains("CIDEr"));
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = ExperimentSpec {
            corpus: "c.jsonl".into(),
            schema_version: SCHEMA_V1.into(),
            output_dir: "out".into(),
            seed: 3,
            split: SplitSpec::Date {
                cutoff: NaiveDate::from_ymd_opt(2017, 1, 1).unwrap(),
            },
            ep: StageSpec::ep_default(),
            cm: StageSpec::cm_default(),
            ablations: default_ablations(),
            ke: KeSpec {
                backend: KeBackendSpec::Mock { kb: "kb.jsonl".into() },
                structured: true,
                single_stage: true,
            },
            metrics: MetricsSpec::default(),
            oracle_vi: false,
            eval_splits: vec![Split::Test],
            strict: false,
        };
        let text = spec.to_toml().unwrap();
        let back: ExperimentSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let minimal: ExperimentSpec =
            toml::from_str("corpus = \"c\"\noutput_dir = \"o\"\n[ke.backend]\nkind = \"mock\"\nkb = \"k\"\n").unwrap();
        assert_eq!(minimal.ablations.len(), 4);
        assert!(minimal.ke.structured);
    }

    #[test]
    fn missing_inputs_fail_validation() {
        let spec: ExperimentSpec = toml::from_str(
            "corpus = \"/nonexistent/c.jsonl\"\noutput_dir = \"o\"\n[ke.backend]\nkind = \"mock\"\nkb = \"k\"\n",
        )
        .unwrap();
        assert!(matches!(Experiment::from_spec(spec), Err(Error::Argument(_))));
    }
}
