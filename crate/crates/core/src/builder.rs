//! Dataset construction: bullet-summary filtering, caption generation,
//! ground-truth entity extraction, rater QC and the correction queue.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionOrigin, CaptionRecord, Corpus, QcStatus, Split, VideoSample, MAX_CAPTION_TOKENS};
use crate::dates::{contains_date, strip_dates};
use crate::entities::{parse_embedded_entity_set, EntitySet};
use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::llm::{complete_with_retry, LlmClient};
use crate::prompts;
use crate::tokenizer::{TextTokenizer, WordPunct};

fn bullet_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*•]\s*|\d+[.)]\s+)(\S.*)$").unwrap())
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Bullet lines from every block of two or more consecutive marker lines
/// (`-`, `*`, `•`, `1.` or `1)`), markers stripped and whitespace collapsed.
pub fn filter_bullet_summaries(article_text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run: Vec<String> = Vec::new();
    let mut flush = |run: &mut Vec<String>| {
        if run.len() >= 2 {
            out.append(run);
        }
        run.clear();
    };
    for line in article_text.lines() {
        match bullet_line().captures(line) {
            Some(c) => run.push(collapse_ws(&c[1])),
            None => flush(&mut run),
        }
    }
    flush(&mut run);
    out
}

/// The Context payload of the caption and rater prompts: the title on the
/// first line, then one bullet per line.
pub fn caption_context(title: &str, bullets: &[String]) -> String {
    let mut lines = Vec::with_capacity(bullets.len() + 1);
    if !title.trim().is_empty() {
        lines.push(collapse_ws(title));
    }
    lines.extend(bullets.iter().cloned());
    lines.join("\n")
}

fn bullet_text(bullets: &[String]) -> String {
    bullets.join("\n")
}

fn truncate_tokens(text: &str, max: usize) -> String {
    let toks = WordPunct.tokenize(text);
    if toks.len() <= max {
        text.to_string()
    } else {
        WordPunct.detokenize(&toks[..max])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuilderConfig {
    pub workers: usize,
    /// Transport retries per LLM call.
    pub max_retries: usize,
    /// Also rate training captions.
    pub qc_train: bool,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            max_retries: 2,
            qc_train: false,
        }
    }
}

/// Caption for one sample from its bullets and title. Dates are stripped
/// from the reply; if any survive, the prompt is re-sent once with a
/// reminder appended.
pub fn generate_caption(
    sample_id: &str,
    bullets: &[String],
    title: &str,
    llm: &dyn LlmClient,
    max_retries: usize,
) -> Result<CaptionRecord> {
    if bullets.is_empty() {
        return Err(Error::Argument(format!("sample {sample_id:?} has no bullet summaries")));
    }
    let prompt = prompts::caption_prompt(&caption_context(title, bullets));
    let mut text = strip_dates(complete_with_retry(llm, &prompt, max_retries)?.trim());
    if contains_date(&text) {
        let retry = format!("{prompt}\n{}.", prompts::DATE_REMINDER);
        text = strip_dates(complete_with_retry(llm, &retry, max_retries)?.trim());
    }
    let text = collapse_ws(&truncate_tokens(&text, MAX_CAPTION_TOKENS));
    if text.is_empty() {
        return Err(Error::Data(format!("caption for {sample_id:?} is empty after date removal")));
    }
    Ok(CaptionRecord::new(sample_id, text, CaptionOrigin::EventDescriptions))
}

/// Ground-truth entities from the bullets; DATE entries are dropped.
pub fn extract_gt_entities(bullets: &[String], llm: &dyn LlmClient, max_retries: usize) -> Result<EntitySet> {
    if bullets.is_empty() {
        return Err(Error::Argument("no bullet summaries to extract entities from".into()));
    }
    let raw = complete_with_retry(llm, &prompts::entity_prompt(&bullet_text(bullets)), max_retries)?;
    parse_embedded_entity_set(&raw).map_err(|source| Error::EntityOutput { raw, source })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    MissingEntities,
    Hallucination,
    MissingCriticalInfo,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [
        Criterion::MissingEntities,
        Criterion::Hallucination,
        Criterion::MissingCriticalInfo,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QCVerdict {
    pub sample_id: String,
    pub rater_pass: bool,
    pub criteria_flags: BTreeSet<Criterion>,
    pub rater_raw_output: String,
}

fn reason_flags(reply: &str) -> BTreeSet<Criterion> {
    static RES: OnceLock<[(Criterion, Regex); 3]> = OnceLock::new();
    let res = RES.get_or_init(|| {
        [
            (Criterion::MissingEntities, Regex::new(r"(?i)entit|\bnames?\b|people|places?|organi[sz]ations?").unwrap()),
            (
                Criterion::Hallucination,
                Regex::new(r"(?i)hallucinat|fabricat|invent|not (?:present|mentioned|found) in|unsupported|made up").unwrap(),
            ),
            (
                Criterion::MissingCriticalInfo,
                Regex::new(r"(?i)critical|omit|leaves? out|left out|incomplete|key (?:information|details?)|important (?:information|details?)").unwrap(),
            ),
        ]
    });
    res.iter().filter(|(_, re)| re.is_match(reply)).map(|(c, _)| *c).collect()
}

/// Interprets a rater reply. A leading yes/no decides; reasons given after a
/// "No" become flags, all flags when none is recognised.
pub fn parse_rater_reply(sample_id: &str, reply: &str) -> Result<QCVerdict> {
    static HEAD: OnceLock<Regex> = OnceLock::new();
    let head = HEAD.get_or_init(|| Regex::new(r"(?i)^\s*(yes|no)\b").unwrap());
    let verdict = head
        .captures(reply)
        .ok_or_else(|| Error::RaterReply { raw: reply.to_string() })?;
    let pass = verdict[1].eq_ignore_ascii_case("yes");
    let criteria_flags = if pass {
        BTreeSet::new()
    } else {
        let rest = &reply[verdict.get(0).unwrap().end()..];
        let flags = reason_flags(rest);
        if flags.is_empty() {
            Criterion::ALL.into_iter().collect()
        } else {
            flags
        }
    };
    Ok(QCVerdict {
        sample_id: sample_id.to_string(),
        rater_pass: pass,
        criteria_flags,
        rater_raw_output: reply.to_string(),
    })
}

pub fn rate_caption(
    sample_id: &str,
    context: &str,
    caption: &str,
    llm: &dyn LlmClient,
    max_retries: usize,
) -> Result<QCVerdict> {
    if context.trim().is_empty() || caption.trim().is_empty() {
        return Err(Error::Argument(format!("rating {sample_id:?} needs a context and a caption")));
    }
    let reply = complete_with_retry(llm, &prompts::rater_prompt(context, caption), max_retries)?;
    parse_rater_reply(sample_id, &reply)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Corrected,
    AcceptedAsIs,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionQueueEntry {
    pub sample_id: String,
    pub original_caption: String,
    pub corrected_caption: Option<String>,
    pub status: ReviewStatus,
}

/// Flagged captions awaiting human review. Single writer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorrectionQueue {
    entries: Vec<CorrectionQueueEntry>,
}

impl CorrectionQueue {
    /// One entry per failed verdict on a dev/test sample, in verdict order.
    pub fn build(verdicts: &[QCVerdict], corpus: &Corpus) -> Result<Self> {
        let mut entries: Vec<CorrectionQueueEntry> = Vec::new();
        for v in verdicts.iter().filter(|v| !v.rater_pass) {
            let s = corpus
                .get(&v.sample_id)
                .ok_or_else(|| Error::Argument(format!("verdict for unknown sample {:?}", v.sample_id)))?;
            if entries.iter().any(|e| e.sample_id == v.sample_id) {
                continue;
            }
            let caption = s
                .caption
                .as_ref()
                .ok_or_else(|| Error::Data(format!("flagged sample {:?} has no caption", s.id)))?;
            entries.push(CorrectionQueueEntry {
                sample_id: s.id.clone(),
                original_caption: caption.text.clone(),
                corrected_caption: None,
                status: ReviewStatus::Pending,
            });
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[CorrectionQueueEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pending(&self) -> impl Iterator<Item = &CorrectionQueueEntry> {
        self.entries.iter().filter(|e| e.status == ReviewStatus::Pending)
    }

    fn pending_mut(&mut self, sample_id: &str) -> Result<&mut CorrectionQueueEntry> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.sample_id == sample_id)
            .ok_or_else(|| Error::Argument(format!("{sample_id:?} is not in the correction queue")))?;
        if e.status != ReviewStatus::Pending {
            return Err(Error::State(format!("entry {sample_id:?} was already reviewed ({:?})", e.status)));
        }
        Ok(e)
    }

    pub fn apply_correction(&mut self, sample_id: &str, corrected: &str) -> Result<&CorrectionQueueEntry> {
        let text = collapse_ws(corrected);
        if text.is_empty() {
            return Err(Error::Argument("corrected caption is empty".into()));
        }
        let e = self.pending_mut(sample_id)?;
        e.corrected_caption = Some(text);
        e.status = ReviewStatus::Corrected;
        Ok(e)
    }

    pub fn accept_as_is(&mut self, sample_id: &str) -> Result<&CorrectionQueueEntry> {
        let e = self.pending_mut(sample_id)?;
        e.status = ReviewStatus::AcceptedAsIs;
        Ok(e)
    }

    /// Corpus copy with corrected captions substituted.
    pub fn apply_to_corpus(&self, corpus: &Corpus) -> Result<Corpus> {
        let fixes: HashMap<&str, &CorrectionQueueEntry> =
            self.entries.iter().map(|e| (e.sample_id.as_str(), e)).collect();
        corpus.map_samples(|s| {
            let Some(e) = fixes.get(s.id.as_str()) else { return };
            if let (ReviewStatus::Corrected, Some(text), Some(c)) = (e.status, &e.corrected_caption, s.caption.as_mut()) {
                let origin = c.origin;
                *c = CaptionRecord::new(&s.id, text.clone(), origin);
                c.qc_status = QcStatus::Corrected;
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self {
            entries: read_jsonl(path)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.entries)
    }
}


fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))
}

fn bullets_of(s: &VideoSample) -> Vec<String> {
    if s.bullet_summaries.is_empty() {
        filter_bullet_summaries(&s.article_text)
    } else {
        s.bullet_summaries.clone()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionBuildReport {
    pub captioned: usize,
    /// Samples without a bullet block, dropped from the output corpus.
    pub excluded: Vec<String>,
}

/// Fills bullets and captions for every sample. Samples with no bullet
/// block are left out of the returned corpus.
pub fn build_captions(corpus: &Corpus, llm: &dyn LlmClient, cfg: &BuilderConfig) -> Result<(Corpus, CaptionBuildReport)> {
    let results: Vec<Result<Option<VideoSample>>> = pool(cfg.workers)?.install(|| {
        corpus
            .samples()
            .par_iter()
            .map(|s| {
                let bullets = bullets_of(s);
                if bullets.is_empty() {
                    return Ok(None);
                }
                let caption = generate_caption(&s.id, &bullets, &s.title, llm, cfg.max_retries)?;
                let mut out = s.clone();
                out.bullet_summaries = bullets;
                out.caption = Some(caption);
                Ok(Some(out))
            })
            .collect()
    });
    let mut kept = Vec::new();
    let mut report = CaptionBuildReport::default();
    for (s, r) in corpus.samples().iter().zip(results) {
        match r? {
            Some(out) => kept.push(out),
            None => report.excluded.push(s.id.clone()),
        }
    }
    report.captioned = kept.len();
    Ok((Corpus::from_samples(kept)?, report))
}

/// Fills ground-truth entities for every sample that has bullets.
pub fn build_entities(corpus: &Corpus, llm: &dyn LlmClient, cfg: &BuilderConfig) -> Result<Corpus> {
    let sets: Vec<Result<Option<EntitySet>>> = pool(cfg.workers)?.install(|| {
        corpus
            .samples()
            .par_iter()
            .map(|s| {
                let bullets = bullets_of(s);
                if bullets.is_empty() {
                    return Ok(None);
                }
                extract_gt_entities(&bullets, llm, cfg.max_retries).map(Some)
            })
            .collect()
    });
    let sets: Vec<Option<EntitySet>> = sets.into_iter().collect::<Result<_>>()?;
    let mut it = sets.into_iter();
    corpus.map_samples(|s| {
        if let Some(es) = it.next().flatten() {
            s.entities = Some(es);
        }
    })
}

pub struct QcOutcome {
    pub corpus: Corpus,
    pub verdicts: Vec<QCVerdict>,
    pub queue: CorrectionQueue,
}

/// Rates captions of dev/test samples (and train when `qc_train`), marks
/// qc_status and queues the flagged ones.
pub fn run_qc(corpus: &Corpus, llm: &dyn LlmClient, cfg: &BuilderConfig) -> Result<QcOutcome> {
    let eligible = |s: &VideoSample| match s.split {
        Some(Split::Dev) | Some(Split::Test) => true,
        Some(Split::Train) => cfg.qc_train,
        None => false,
    };
    let todo: Vec<&VideoSample> = corpus
        .samples()
        .iter()
        .filter(|s| eligible(s) && s.caption.is_some())
        .collect();
    let verdicts: Vec<QCVerdict> = pool(cfg.workers)?.install(|| {
        todo.par_iter()
            .map(|s| {
                let ctx = caption_context(&s.title, &bullets_of(s));
                rate_caption(&s.id, &ctx, &s.caption.as_ref().unwrap().text, llm, cfg.max_retries)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let by_id: HashMap<&str, bool> = verdicts.iter().map(|v| (v.sample_id.as_str(), v.rater_pass)).collect();
    let rated = corpus.map_samples(|s| {
        if let (Some(&pass), Some(c)) = (by_id.get(s.id.as_str()), s.caption.as_mut()) {
            c.qc_status = if pass { QcStatus::AutoPass } else { QcStatus::Flagged };
        }
    })?;
    let queue = CorrectionQueue::build(&verdicts, &rated)?;
    Ok(QcOutcome {
        corpus: rated,
        verdicts,
        queue,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterAudit {
    pub n: usize,
    pub human_flagged: usize,
    pub missed_by_rater: usize,
    /// Percentage of human-flagged captions the rater passed.
    pub miss_rate: f64,
}

/// Compares rater verdicts with human labels (`true` = human flagged).
pub fn rater_audit(gold: &[(String, bool)], verdicts: &[QCVerdict]) -> Result<RaterAudit> {
    let by_id: HashMap<&str, &QCVerdict> = verdicts.iter().map(|v| (v.sample_id.as_str(), v)).collect();
    let mut human_flagged = 0;
    let mut missed = 0;
    for (id, flagged) in gold {
        let v = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("no verdict for gold sample {id:?}")))?;
        if *flagged {
            human_flagged += 1;
            if v.rater_pass {
                missed += 1;
            }
        }
    }
    Ok(RaterAudit {
        n: gold.len(),
        human_flagged,
        missed_by_rater: missed,
        miss_rate: if human_flagged == 0 {
            0.0
        } else {
            100.0 * missed as f64 / human_flagged as f64
        },
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReviewSummary {
    pub corrected: usize,
    pub accepted: usize,
    pub skipped: usize,
}

/// Line-oriented review loop over pending entries: `a` accepts, `e` reads
/// the corrected caption from the next line, `s` skips, `q` stops.
pub fn review_session<R: BufRead, W: Write>(queue: &mut CorrectionQueue, mut input: R, mut out: W) -> Result<ReviewSummary> {
    let io = |e| Error::io("<terminal>", e);
    let ids: Vec<(String, String)> = queue
        .pending()
        .map(|e| (e.sample_id.clone(), e.original_caption.clone()))
        .collect();
    let mut summary = ReviewSummary::default();
    let total = ids.len();
    let mut read = |buf: &mut String| -> Result<bool> {
        buf.clear();
        Ok(input.read_line(buf).map_err(io)? > 0)
    };
    let mut line = String::new();
    'entries: for (i, (id, caption)) in ids.iter().enumerate() {
        loop {
            write!(out, "[{}/{total}] {id}\n  {caption}\n(a)ccept, (e)dit, (s)kip, (q)uit > ", i + 1).map_err(io)?;
            out.flush().map_err(io)?;
            if !read(&mut line)? {
                break 'entries;
            }
            match line.trim() {
                "a" => {
                    queue.accept_as_is(id)?;
                    summary.accepted += 1;
                }
                "e" => {
                    write!(out, "corrected caption > ").map_err(io)?;
                    out.flush().map_err(io)?;
                    if !read(&mut line)? {
                        break 'entries;
                    }
                    if line.trim().is_empty() {
                        writeln!(out, "empty caption ignored").map_err(io)?;
                        continue;
                    }
                    queue.apply_correction(id, &line)?;
                    summary.corrected += 1;
                }
                "s" => summary.skipped += 1,
                "q" => break 'entries,
                _ => continue,
            }
            break;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::sample;
    use crate::llm::{Fallback, MockLlm};

    #[test]
    fn bullet_grammar() {
        assert_eq!(
            filter_bullet_summaries("Intro.\n- Bush arrives in Monrovia\n- Crowd waves flags\nOutro."),
            ["Bush arrives in Monrovia", "Crowd waves flags"]
        );
        assert_eq!(
            filter_bullet_summaries("1. Shot of palace\n2. Minister speaks"),
            ["Shot of palace", "Minister speaks"]
        );
        assert!(filter_bullet_summaries("No markers here.\nJust prose.").is_empty());
        assert!(filter_bullet_summaries("- lonely bullet\nprose").is_empty());
        assert_eq!(
            filter_bullet_summaries("  *  Wide   shot\n  • Close up\n3) Crowd"),
            ["Wide shot", "Close up", "Crowd"]
        );
        assert!(filter_bullet_summaries("3.5 percent\n4.0 percent").is_empty());
    }

    #[test]
    fn caption_from_echo_and_dates() {
        let b = vec!["x".to_string()];
        let c = generate_caption("s", &b, "T", &MockLlm::fixed("X happened."), 0).unwrap();
        assert_eq!(c.text, "X happened.");
        assert_eq!(c.origin, CaptionOrigin::EventDescriptions);
        let c = generate_caption("s", &b, "T", &MockLlm::fixed("On March 3, 2008, Bush landed."), 0).unwrap();
        assert!(!c.text.contains("March 3, 2008"));
        assert!(!contains_date(&c.text));
        assert!(matches!(generate_caption("s", &[], "T", &MockLlm::echo(), 0), Err(Error::Argument(_))));
        let failing = MockLlm::new(Fallback::Fail);
        assert!(matches!(
            generate_caption("s", &b, "T", &failing, 2),
            Err(Error::Transport { attempts: 3, .. })
        ));
    }

    #[test]
    fn entity_extraction_contract() {
        let b = vec!["Bush arrives".to_string()];
        let es = extract_gt_entities(&b, &MockLlm::fixed("{PERSON: [George Bush], GPE: [Liberia]}"), 0).unwrap();
        assert_eq!(es, EntitySet::new().with("PERSON", &["George Bush"]).with("GPE", &["Liberia"]));
        let es = extract_gt_entities(&b, &MockLlm::fixed("{DATE: [2008], GPE: [Iran]}"), 0).unwrap();
        assert_eq!(es.to_string(), "{GPE: [Iran]}");
        assert!(matches!(
            extract_gt_entities(&b, &MockLlm::fixed("not a map"), 0),
            Err(Error::EntityOutput { .. })
        ));
    }

    #[test]
    fn rater_parsing() {
        let v = parse_rater_reply("a", "Yes").unwrap();
        assert!(v.rater_pass && v.criteria_flags.is_empty());
        let v = parse_rater_reply("a", "No. It hallucinates.").unwrap();
        assert!(!v.rater_pass && v.criteria_flags.contains(&Criterion::Hallucination));
        let v = parse_rater_reply("a", "  no").unwrap();
        assert_eq!(v.criteria_flags.len(), 3);
        let v = parse_rater_reply("a", "NO - it leaves out critical information").unwrap();
        assert_eq!(v.criteria_flags, [Criterion::MissingCriticalInfo].into_iter().collect());
        assert!(matches!(parse_rater_reply("a", "Maybe"), Err(Error::RaterReply { .. })));
        assert!(parse_rater_reply("a", "Yesterday").is_err());
    }

    fn captioned(n: usize) -> Corpus {
        let samples = (0..n)
            .map(|i| {
                let mut s = sample(&format!("s{i}"), "2015-01-01", 2);
                s.caption = Some(CaptionRecord::new(&s.id, format!("caption {i}"), CaptionOrigin::EventDescriptions));
                s.split = Some(if i % 2 == 0 { Split::Dev } else { Split::Train });
                s
            })
            .collect();
        Corpus::from_samples(samples).unwrap()
    }

    #[test]
    fn queue_counts_and_transitions() {
        let corpus = captioned(10);
        let verdicts: Vec<QCVerdict> = (0..10)
            .map(|i| parse_rater_reply(&format!("s{i}"), if i < 3 { "No" } else { "Yes" }).unwrap())
            .collect();
        let mut q = CorrectionQueue::build(&verdicts, &corpus).unwrap();
        assert_eq!(q.len(), 3);
        q.apply_correction("s0", "Fixed caption.").unwrap();
        assert!(matches!(q.apply_correction("s0", "again"), Err(Error::State(_))));
        q.accept_as_is("s1").unwrap();
        let fixed = q.apply_to_corpus(&corpus).unwrap();
        let c0 = fixed.get("s0").unwrap().caption.as_ref().unwrap();
        assert_eq!((c0.text.as_str(), c0.qc_status), ("Fixed caption.", QcStatus::Corrected));
        assert_eq!(fixed.get("s1").unwrap().caption.as_ref().unwrap().text, "caption 1");
    }

    #[test]
    fn qc_only_touches_dev_and_test() {
        let corpus = captioned(6);
        let out = run_qc(&corpus, &MockLlm::fixed("No, it hallucinates"), &BuilderConfig::default()).unwrap();
        let queued: Vec<&str> = out.queue.entries().iter().map(|e| e.sample_id.as_str()).collect();
        assert_eq!(queued, ["s0", "s2", "s4"]);
        assert_eq!(out.corpus.get("s1").unwrap().caption.as_ref().unwrap().qc_status, QcStatus::Unreviewed);
    }

    #[test]
    fn review_loop_applies_commands() {
        let corpus = captioned(6);
        let verdicts: Vec<QCVerdict> =
            ["s0", "s2", "s4"].iter().map(|id| parse_rater_reply(id, "No").unwrap()).collect();
        let mut q = CorrectionQueue::build(&verdicts, &corpus).unwrap();
        let mut out = Vec::new();
        let s = review_session(&mut q, "a\ne\nNew text\nq\n".as_bytes(), &mut out).unwrap();
        assert_eq!((s.accepted, s.corrected), (1, 1));
        assert_eq!(q.pending().count(), 1);
        assert_eq!(q.entries()[1].corrected_caption.as_deref(), Some("New text"));
    }

    #[test]
    fn audit_counts_misses() {
        let verdicts = vec![parse_rater_reply("a", "Yes").unwrap(), parse_rater_reply("b", "No").unwrap()];
        let gold = vec![("a".to_string(), true), ("b".to_string(), true)];
        let a = rater_audit(&gold, &verdicts).unwrap();
        assert_eq!((a.human_flagged, a.missed_by_rater), (2, 1));
        assert_eq!(a.miss_rate, 50.0);
    }
}
