//! Text-completion clients: deterministic mock, cassette replay/recording,
//! and a live HTTP backend.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::prompts;

pub const API_KEY_ENV: &str = "VIEWS_LLM_API_KEY";

/// A text-in, text-out model. Implementations must tolerate concurrent calls;
/// wrap non-reentrant clients in [`Serialized`].
pub trait LlmClient: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String>;
}

impl<T: LlmClient + ?Sized> LlmClient for Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

/// Hex SHA-256 of the prompt bytes.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Calls `client`, retrying transport failures up to `max_retries` times.
/// Other errors are returned immediately.
pub fn complete_with_retry(client: &dyn LlmClient, prompt: &str, max_retries: usize) -> Result<String> {
    let mut last = String::new();
    for attempt in 1..=max_retries + 1 {
        match client.complete(prompt) {
            Ok(reply) => return Ok(reply),
            Err(Error::Transport { message, .. }) => {
                log::warn!("{}: attempt {attempt} failed: {message}", client.id());
                last = message;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Transport {
        attempts: max_retries + 1,
        message: last,
    })
}

/// What the mock answers when no fixture matches.
#[derive(Clone)]
pub enum Fallback {
    /// Reply with the prompt itself.
    Echo,
    /// Template-aware canned behaviour: captions are the first 40 words of
    /// the context, ratings are "Yes", entities are capitalised word runs,
    /// knowledge replies restate the entity payload.
    Heuristic,
    Fixed(String),
    Responder(Arc<dyn Fn(&str) -> String + Send + Sync>),
    /// Fail with a transport error.
    Fail,
}

/// Deterministic in-process client: exact-prompt fixtures, then a fallback.
#[derive(Clone)]
pub struct MockLlm {
    id: String,
    fixtures: HashMap<String, String>,
    fallback: Fallback,
}

impl MockLlm {
    pub fn new(fallback: Fallback) -> Self {
        Self {
            id: "mock".into(),
            fixtures: HashMap::new(),
            fallback,
        }
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        Self::new(Fallback::Fixed(reply.into()))
    }

    pub fn echo() -> Self {
        Self::new(Fallback::Echo)
    }

    pub fn heuristic() -> Self {
        Self::new(Fallback::Heuristic)
    }

    pub fn responder(f: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        Self::new(Fallback::Responder(Arc::new(f)))
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_fixture(mut self, prompt: &str, reply: impl Into<String>) -> Self {
        self.fixtures.insert(prompt_hash(prompt), reply.into());
        self
    }

    /// Adds fixtures from a cassette-format JSONL file.
    pub fn with_fixture_file(mut self, path: &Path) -> Result<Self> {
        for entry in read_cassette(path)? {
            self.fixtures.insert(entry.prompt_hash, entry.reply);
        }
        Ok(self)
    }
}

impl LlmClient for MockLlm {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        if let Some(reply) = self.fixtures.get(&prompt_hash(prompt)) {
            return Ok(reply.clone());
        }
        match &self.fallback {
            Fallback::Echo => Ok(prompt.to_string()),
            Fallback::Heuristic => Ok(heuristic_reply(prompt)),
            Fallback::Fixed(s) => Ok(s.clone()),
            Fallback::Responder(f) => Ok(f(prompt)),
            Fallback::Fail => Err(Error::Transport {
                attempts: 1,
                message: format!("{}: no fixture for prompt {}", self.id, prompt_hash(prompt)),
            }),
        }
    }
}

fn template_prefix(template: &str) -> &str {
    let cut = template.find('<').unwrap_or(template.len());
    &template[..cut]
}

fn heuristic_reply(prompt: &str) -> String {
    if prompt.starts_with(template_prefix(prompts::CAPTION_TEMPLATE)) {
        let ctx = prompts::section(prompt, "Context: ").unwrap_or("");
        return ctx.split_whitespace().take(40).collect::<Vec<_>>().join(" ");
    }
    if prompt.starts_with(template_prefix(prompts::RATER_TEMPLATE)) {
        return "Yes".into();
    }
    if prompt.starts_with(template_prefix(prompts::ENTITY_TEMPLATE)) {
        let text = prompts::section(prompt, "Text: ").unwrap_or("");
        let mut es = crate::entities::EntitySet::new();
        for run in capitalised_runs(text) {
            es.insert("ENTITY", &run);
        }
        return es.to_string();
    }
    if prompt.starts_with(template_prefix(prompts::KNOWLEDGE_TEMPLATE)) {
        let ents = prompts::section(prompt, "Entities: ").unwrap_or("");
        return format!("News coverage involving {ents}.");
    }
    prompt.to_string()
}

const STOP_CAPS: &[&str] = &[
    "A", "An", "The", "In", "On", "At", "Of", "And", "But", "Or", "For", "To", "With", "As", "By", "From", "This",
    "That", "These", "Those", "He", "She", "It", "They", "We", "I", "His", "Her", "Their", "Its", "Shot", "Crowd",
];

fn capitalised_runs(text: &str) -> Vec<String> {
    let mut runs = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    let flush = |cur: &mut Vec<&str>, runs: &mut Vec<String>| {
        if !cur.is_empty() {
            runs.push(cur.join(" "));
            cur.clear();
        }
    };
    for raw in text.split_whitespace() {
        let word = raw.trim_matches(|c: char| !c.is_alphanumeric());
        let capital = word.chars().next().is_some_and(char::is_uppercase);
        if capital && !(cur.is_empty() && STOP_CAPS.contains(&word)) {
            cur.push(word);
        } else {
            flush(&mut cur, &mut runs);
        }
        if raw.ends_with(|c: char| matches!(c, ',' | '.' | ';' | ':' | '!' | '?')) {
            flush(&mut cur, &mut runs);
        }
    }
    flush(&mut cur, &mut runs);
    runs
}

/// One cassette line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub prompt_hash: String,
    pub prompt: String,
    pub reply: String,
}

impl CassetteEntry {
    pub fn new(prompt: &str, reply: impl Into<String>) -> Self {
        Self {
            prompt_hash: prompt_hash(prompt),
            prompt: prompt.to_string(),
            reply: reply.into(),
        }
    }
}

pub fn read_cassette(path: &Path) -> Result<Vec<CassetteEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_cassette<'a>(path: &Path, entries: impl IntoIterator<Item = &'a CassetteEntry>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Answers from a recorded cassette; unknown prompts are an error.
pub struct ReplayLlm {
    id: String,
    replies: HashMap<String, String>,
}

impl ReplayLlm {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_entries(read_cassette(path)?))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        Self {
            id: "replay".into(),
            replies: entries.into_iter().map(|e| (e.prompt_hash, e.reply)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl LlmClient for ReplayLlm {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let hash = prompt_hash(prompt);
        self.replies
            .get(&hash)
            .cloned()
            .ok_or_else(|| Error::Data(format!("cassette has no reply for prompt {hash}")))
    }
}

/// Wraps a client and records every successful exchange.
pub struct RecordingLlm<C> {
    inner: C,
    entries: Mutex<BTreeMap<String, CassetteEntry>>,
}

impl<C: LlmClient> RecordingLlm<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    /// Recorded entries ordered by prompt hash, so output does not depend on
    /// call interleaving.
    pub fn entries(&self) -> Vec<CassetteEntry> {
        self.entries.lock().unwrap().values().cloned().collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_cassette(path, &self.entries())
    }
}

impl<C: LlmClient> LlmClient for RecordingLlm<C> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let reply = self.inner.complete(prompt)?;
        let entry = CassetteEntry::new(prompt, reply.clone());
        self.entries.lock().unwrap().insert(entry.prompt_hash.clone(), entry);
        Ok(reply)
    }
}

/// Serialises calls to a client that must not be used concurrently.
pub struct Serialized<C> {
    inner: C,
    gate: Mutex<()>,
}

impl<C: LlmClient> Serialized<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            gate: Mutex::new(()),
        }
    }
}

impl<C: LlmClient> LlmClient for Serialized<C> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let _guard = self.gate.lock().unwrap();
        self.inner.complete(prompt)
    }
}

/// OpenAI-compatible chat-completions endpoint.
pub struct HttpLlm {
    id: String,
    endpoint: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpLlm {
    /// Reads the API key from `VIEWS_LLM_API_KEY`.
    pub fn from_env(endpoint: &str, model: &str) -> Result<Self> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::Argument(format!("{API_KEY_ENV} is not set; the live backend needs it")))?;
        Ok(Self {
            id: format!("live:{model}"),
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build(),
        })
    }
}

impl LlmClient for HttpLlm {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let transport = |m: String| Error::Transport {
            attempts: 1,
            message: m,
        };
        let resp = self
            .agent
            .post(&self.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| transport(e.to_string()))?;
        let v: serde_json::Value = resp.into_json().map_err(|e| transport(e.to_string()))?;
        let choice = &v["choices"][0];
        choice["message"]["content"]
            .as_str()
            .or_else(|| choice["text"].as_str())
            .map(str::to_string)
            .ok_or_else(|| transport(format!("unexpected response shape: {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        failures: usize,
        calls: AtomicUsize,
    }

    impl LlmClient for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _: &str) -> Result<String> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(Error::Transport {
                    attempts: 1,
                    message: "down".into(),
                })
            } else {
                Ok("ok".into())
            }
        }
    }

    #[test]
    fn retries_transport_errors_only() {
        let c = Flaky {
            failures: 2,
            calls: AtomicUsize::new(0),
        };
        assert_eq!(complete_with_retry(&c, "p", 2).unwrap(), "ok");
        let c = Flaky {
            failures: 5,
            calls: AtomicUsize::new(0),
        };
        match complete_with_retry(&c, "p", 2) {
            Err(Error::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn fixtures_take_precedence() {
        let m = MockLlm::echo().with_fixture("a", "b");
        assert_eq!(m.complete("a").unwrap(), "b");
        assert_eq!(m.complete("c").unwrap(), "c");
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RecordingLlm::new(MockLlm::fixed("reply"));
        rec.complete("one").unwrap();
        rec.complete("two").unwrap();
        let path = dir.path().join("c.jsonl");
        rec.save(&path).unwrap();
        let replay = ReplayLlm::load(&path).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.complete("two").unwrap(), "reply");
        assert!(matches!(replay.complete("three"), Err(Error::Data(_))));
    }

    #[test]
    fn prompt_hash_is_stable() {
        assert_eq!(
            prompt_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn heuristic_handles_each_template() {
        let m = MockLlm::heuristic();
        let cap = m.complete(&prompts::caption_prompt("Bush arrives in Monrovia")).unwrap();
        assert_eq!(cap, "Bush arrives in Monrovia");
        assert_eq!(m.complete(&prompts::rater_prompt("x", "y")).unwrap(), "Yes");
        let ents = m
            .complete(&prompts::entity_prompt("George Bush arrives in Monrovia. The crowd waves."))
            .unwrap();
        assert_eq!(ents, "{ENTITY: [George Bush, Monrovia]}");
    }

    #[test]
    fn live_backend_requires_key() {
        if std::env::var(API_KEY_ENV).is_err() {
            assert!(matches!(
                HttpLlm::from_env("http://localhost:1", "m"),
                Err(Error::Argument(_))
            ));
        }
    }
}
