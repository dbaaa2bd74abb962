//! Aspect-guided synthetic query generation.
//!
//! A passage is rendered into a prompt, sent to a [`CompletionBackend`], and
//! the response is parsed from numbered `Aspect:` / `Query:` line pairs.
//! Calls run concurrently on a bounded pool; results are assembled in corpus
//! order.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Passage};
use crate::error::{Error, Result};
use crate::seed;
use crate::text::tokenize;

pub const MAX_ASPECTS: usize = 5;
pub const DEFAULT_MAX_RETRIES: u32 = 2;

const ASPECT_INSTRUCTION: &str = "First identify 1 - 5 different aspects covered in the passage. \
Then write one question for each aspect that the passage answers.";
const BASIC_INSTRUCTION: &str = "Write 1 - 5 questions that the passage answers.";
const CONTENT_OPEN: &str = "<<<";
const CONTENT_CLOSE: &str = ">>>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectQuery {
    pub aspect: String,
    pub query_text: String,
}

impl AspectQuery {
    pub fn new(aspect: impl Into<String>, query_text: impl Into<String>) -> Self {
        Self {
            aspect: aspect.into(),
            query_text: query_text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub passage_id: String,
    pub items: Vec<AspectQuery>,
    pub raw_response: String,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPassage {
    pub passage_id: String,
    pub attempt_count: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationOutput {
    pub results: Vec<GenerationResult>,
    pub skipped: Vec<SkippedPassage>,
}

/// A generated query as stored in the queries file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub id: String,
    pub passage_id: String,
    pub aspect: String,
    pub text: String,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    AspectGuided,
    Basic,
}

impl std::str::FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aspect_guided" | "aspect-guided" | "aspect" => Ok(Self::AspectGuided),
            "basic" => Ok(Self::Basic),
            other => Err(Error::Usage(format!(
                "unknown prompt mode `{other}` (expected aspect_guided or basic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Connection or server-side failure; retried with backoff.
    Transport(String),
    /// The backend answered but the answer was unusable.
    Response(String),
}

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendError::Transport(m) => write!(f, "transport: {m}"),
            BackendError::Response(m) => write!(f, "response: {m}"),
        }
    }
}

pub trait CompletionBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

pub fn build_prompt(p: &Passage, mode: PromptMode, few_shot: &[String]) -> Result<String> {
    if p.content.trim().is_empty() {
        return Err(Error::invalid(format!("passage `{}` has empty content", p.id)));
    }
    let mut prompt = String::new();
    prompt.push_str(
        "You are an expert in Vietnamese law. Read the legal passage below and write \
search queries that a citizen could ask and that the passage answers.\n",
    );
    prompt.push_str(match mode {
        PromptMode::AspectGuided => ASPECT_INSTRUCTION,
        PromptMode::Basic => BASIC_INSTRUCTION,
    });
    prompt.push('\n');
    prompt.push_str(
        "Answer only with numbered pairs of lines in this format:\n\
1. Aspect: <short description>\n   Query: <question>\n",
    );
    if !few_shot.is_empty() {
        prompt.push_str("\nExamples:\n");
        for example in few_shot {
            prompt.push_str(example.trim_end());
            prompt.push_str("\n---\n");
        }
    }
    prompt.push_str(&format!(
        "\nDomain: {}\nTitle: {}\nHeader: {}\nContent:\n{CONTENT_OPEN}\n{}\n{CONTENT_CLOSE}\n",
        p.domain, p.title, p.header, p.content
    ));
    Ok(prompt)
}

/// Strips list numbering, bullets and emphasis markers from the start of a line.
fn strip_numbering(line: &str) -> &str {
    let mut s = line.trim();
    loop {
        let before = s;
        s = s.trim_start_matches(['*', '-', '•', '#', '_']).trim_start();
        let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if digits > 0 {
            let rest = &s[digits..];
            if let Some(r) = rest.strip_prefix(['.', ')']) {
                s = r.trim_start();
            }
        }
        if s == before {
            return s;
        }
    }
}

/// Returns the value of a `label[ n]:` line, label matched case-insensitively.
fn labeled_value<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let head = line.get(..label.len())?;
    if !head.eq_ignore_ascii_case(label) {
        return None;
    }
    let rest = line[label.len()..]
        .trim_start()
        .trim_start_matches(|c: char| c.is_ascii_digit())
        .trim_start_matches(['*', '_'])
        .trim_start();
    let value = rest.strip_prefix(':')?;
    Some(value.trim().trim_matches(['*', '_']).trim())
}

/// Extracts ordered (aspect, query) pairs. An aspect without a following
/// query line is dropped; a query without a pending aspect is ignored.
pub fn parse_generation(raw: &str) -> Vec<AspectQuery> {
    let mut out = Vec::new();
    let mut pending: Option<String> = None;
    for line in raw.lines() {
        let line = strip_numbering(line);
        if let Some(aspect) = labeled_value(line, "aspect") {
            pending = (!aspect.is_empty()).then(|| aspect.to_owned());
        } else if let Some(query) =
            labeled_value(line, "query").or_else(|| labeled_value(line, "question"))
        {
            if let Some(aspect) = pending.take() {
                if !query.is_empty() {
                    out.push(AspectQuery::new(aspect, query));
                }
            }
        }
    }
    out
}

/// Renders items in the labeled format [`parse_generation`] reads.
pub fn render_generation(items: &[AspectQuery]) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        out.push_str(&format!(
            "{}. Aspect: {}\n   Query: {}\n",
            i + 1,
            item.aspect,
            item.query_text
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct GenerationOptions {
    pub mode: PromptMode,
    pub few_shot: Vec<String>,
    pub max_retries: u32,
    pub concurrency: usize,
    /// First backoff delay after a transport error; doubles per retry.
    pub backoff: Duration,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            mode: PromptMode::AspectGuided,
            few_shot: Vec::new(),
            max_retries: DEFAULT_MAX_RETRIES,
            concurrency: 4,
            backoff: Duration::from_millis(500),
        }
    }
}

fn generate_one(
    p: &Passage,
    backend: &dyn CompletionBackend,
    opts: &GenerationOptions,
) -> std::result::Result<GenerationResult, SkippedPassage> {
    let prompt = build_prompt(p, opts.mode, &opts.few_shot).map_err(|e| SkippedPassage {
        passage_id: p.id.clone(),
        attempt_count: 0,
        reason: e.to_string(),
    })?;
    let attempts = opts.max_retries + 1;
    let mut reason = String::new();
    for attempt in 1..=attempts {
        match backend.complete(&prompt) {
            Ok(raw) => {
                let mut items = parse_generation(&raw);
                if items.is_empty() {
                    reason = "no parseable aspect/query pair".to_owned();
                    continue;
                }
                if items.len() > MAX_ASPECTS {
                    log::warn!(
                        "passage {}: truncating {} generated pairs to {MAX_ASPECTS}",
                        p.id,
                        items.len()
                    );
                    items.truncate(MAX_ASPECTS);
                }
                return Ok(GenerationResult {
                    passage_id: p.id.clone(),
                    items,
                    raw_response: raw,
                    attempt_count: attempt,
                });
            }
            Err(BackendError::Transport(m)) => {
                reason = format!("transport error: {m}");
                if attempt < attempts && !opts.backoff.is_zero() {
                    std::thread::sleep(opts.backoff * 2u32.saturating_pow(attempt - 1));
                }
            }
            Err(BackendError::Response(m)) => {
                reason = format!("bad response: {m}");
            }
        }
    }
    Err(SkippedPassage {
        passage_id: p.id.clone(),
        attempt_count: attempts,
        reason,
    })
}

/// Generates queries for every passage. Failures after the retry budget are
/// reported as skips; output order follows corpus order.
pub fn generate_for_corpus(
    corpus: &Corpus,
    backend: &dyn CompletionBackend,
    opts: &GenerationOptions,
) -> Result<GenerationOutput> {
    use rayon::prelude::*;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| {
        corpus
            .passages()
            .par_iter()
            .map(|p| generate_one(p, backend, opts))
            .collect()
    });
    let mut out = GenerationOutput::default();
    for outcome in outcomes {
        match outcome {
            Ok(r) => out.results.push(r),
            Err(s) => out.skipped.push(s),
        }
    }
    Ok(out)
}

/// Flattens results into query records named `<passage_id>:q<k>`.
pub fn to_synthetic_queries(results: &[GenerationResult]) -> Vec<SyntheticQuery> {
    results
        .iter()
        .flat_map(|r| {
            r.items.iter().enumerate().map(move |(k, item)| SyntheticQuery {
                id: format!("{}:q{k}", r.passage_id),
                passage_id: r.passage_id.clone(),
                aspect: item.aspect.clone(),
                text: item.query_text.clone(),
                source: "synthetic".to_owned(),
            })
        })
        .collect()
}

pub fn write_queries<W: Write>(sink: W, queries: &[SyntheticQuery]) -> Result<usize> {
    crate::io::write_json_lines(sink, queries)
}

pub fn read_queries<R: BufRead>(source: R) -> Result<Vec<SyntheticQuery>> {
    crate::io::read_json_lines(source)
}

/// Groups queries by source passage, preserving input order within groups.
pub fn queries_by_passage(queries: &[SyntheticQuery]) -> BTreeMap<String, Vec<SyntheticQuery>> {
    let mut map: BTreeMap<String, Vec<SyntheticQuery>> = BTreeMap::new();
    for q in queries {
        map.entry(q.passage_id.clone()).or_default().push(q.clone());
    }
    map
}

/// Deterministic stand-in for an LLM.
///
/// The response is a pure function of the prompt and the mock's seed. Queries
/// are assembled from words of the prompt's content block (aspect-guided
/// mode) or of its title line (basic mode), so retrieval-based filters have
/// something real to accept or reject.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    fixed_pairs: Option<usize>,
    self_reference_rate: f64,
}

const QUESTION_TAILS: &[&str] = &[
    "được quy định như thế nào?",
    "là gì?",
    "phải làm gì?",
    "gồm những nội dung nào?",
    "có trách nhiệm gì?",
];

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            fixed_pairs: None,
            self_reference_rate: 0.0,
        }
    }

    /// Always emit exactly `n` pairs.
    pub fn with_pairs(mut self, n: usize) -> Self {
        self.fixed_pairs = Some(n);
        self
    }

    /// Fraction of queries phrased as referring to "this regulation", the kind
    /// the self-reference filter removes.
    pub fn with_self_reference_rate(mut self, rate: f64) -> Self {
        self.self_reference_rate = rate.clamp(0.0, 1.0);
        self
    }

    fn content_block(prompt: &str) -> &str {
        let start = prompt
            .rfind(&format!("{CONTENT_OPEN}\n"))
            .map(|i| i + CONTENT_OPEN.len() + 1);
        let end = prompt.rfind(&format!("\n{CONTENT_CLOSE}"));
        match (start, end) {
            (Some(s), Some(e)) if s <= e => &prompt[s..e],
            _ => "",
        }
    }

    fn title_line(prompt: &str) -> &str {
        prompt
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("Title: "))
            .unwrap_or("")
    }
}

impl CompletionBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let aspect_mode = prompt.contains(ASPECT_INSTRUCTION);
        let source = if aspect_mode {
            Self::content_block(prompt)
        } else {
            Self::title_line(prompt)
        };
        let words: Vec<String> = tokenize(source)
            .into_iter()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_owned())
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            return Ok(String::from("Không có nội dung."));
        }
        let mut rng = seed::rng(seed::keyed_hash(self.seed, prompt.as_bytes()));
        let n_pairs = self
            .fixed_pairs
            .unwrap_or_else(|| rng.gen_range(1..=MAX_ASPECTS));
        let mut items = Vec::with_capacity(n_pairs);
        for _ in 0..n_pairs {
            let anchor = words.choose(&mut rng).expect("non-empty").clone();
            let extra = rng.gen_range(2..=4).min(words.len());
            let mut query_words = vec![anchor.clone()];
            query_words.extend(words.choose_multiple(&mut rng, extra).cloned());
            let tail = QUESTION_TAILS.choose(&mut rng).expect("non-empty");
            let mut text = format!("{} {}", query_words.join(" "), tail);
            if rng.gen_bool(self.self_reference_rate) {
                text = format!("Theo quy định này, {text}");
            }
            let mut chars = text.chars();
            let text = match chars.next() {
                Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
                None => text,
            };
            items.push(AspectQuery::new(format!("Quy định về {anchor}"), text));
        }
        Ok(render_generation(&items))
    }
}

/// OpenAI-style `/completions` client.
///
/// Configured from `VLR_LLM_BASE_URL`, `VLR_LLM_API_KEY` and
/// `VLR_LLM_MODEL`. Sampling options (temperature and so on) are passed
/// through verbatim into the request body.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    model: String,
    options: BTreeMap<String, serde_json::Value>,
}

pub const ENV_BASE_URL: &str = "VLR_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "VLR_LLM_API_KEY";
pub const ENV_MODEL: &str = "VLR_LLM_MODEL";

impl HttpBackend {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            api_key,
            model: model.into(),
            options: BTreeMap::new(),
        })
    }

    pub fn from_env(timeout: Duration) -> Result<Self> {
        let base = std::env::var(ENV_BASE_URL)
            .map_err(|_| Error::Usage(format!("{ENV_BASE_URL} is not set")))?;
        let key = std::env::var(ENV_API_KEY).ok();
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_owned());
        Self::new(base, key, model, timeout)
    }

    pub fn with_option(mut self, key: impl Into<String>, value: serde_json::Value) -> Self {
        self.options.insert(key.into(), value);
        self
    }

    fn extract_text(body: &serde_json::Value) -> Option<String> {
        let choice = body.get("choices")?.get(0)?;
        choice
            .get("text")
            .and_then(|t| t.as_str())
            .or_else(|| choice.get("message")?.get("content")?.as_str())
            .map(str::to_owned)
    }
}

impl CompletionBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut body = serde_json::Map::new();
        body.insert("model".into(), self.model.clone().into());
        body.insert("prompt".into(), prompt.into());
        for (k, v) in &self.options {
            body.insert(k.clone(), v.clone());
        }
        let mut request = self
            .client
            .post(format!("{}/completions", self.base_url))
            .json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Response(format!("HTTP {status}")));
        }
        let value: serde_json::Value = response
            .json()
            .map_err(|e| BackendError::Response(e.to_string()))?;
        Self::extract_text(&value)
            .ok_or_else(|| BackendError::Response("no completion text in response".into()))
    }
}
