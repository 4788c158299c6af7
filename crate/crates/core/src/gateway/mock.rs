//! Deterministic offline providers.
//!
//! [`MockChat`] is a pure function of `(seed, request)`. It answers from a
//! script first (substring rules, then exact user-prompt matches) and
//! otherwise recognizes which shipped prompt it was sent and synthesizes a
//! plausible extractive response, so the whole pipeline runs without a
//! model. [`MockEmbedder`] hashes character trigrams into a fixed-dim
//! signed vector.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    approx_tokens, ChatProvider, ChatRequest, ChatResponse, Embedder, InFlightLimiter,
    ProviderError, Usage, UsageSnapshot,
};
use crate::prompts;

/// 64-bit FNV-1a over a seed followed by each part. Stable across builds.
pub(crate) fn fnv1a(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for b in seed.to_le_bytes() {
        feed(b);
    }
    for part in parts {
        for &b in *part {
            feed(b);
        }
        feed(0xff);
    }
    h
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    /// Substring the user prompt must contain.
    #[serde(default)]
    pub contains: Option<String>,
    /// Substring the system prompt must contain.
    #[serde(default)]
    pub system_contains: Option<String>,
    #[serde(default)]
    pub response: Option<String>,
    /// Fail the call as if the provider were unreachable.
    #[serde(default)]
    pub fail: bool,
}

impl MockRule {
    pub fn respond(contains: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            contains: Some(contains.into()),
            response: Some(response.into()),
            ..Default::default()
        }
    }

    pub fn fail_on(contains: impl Into<String>) -> Self {
        Self {
            contains: Some(contains.into()),
            fail: true,
            ..Default::default()
        }
    }

    fn matches(&self, req: &ChatRequest) -> bool {
        self.contains
            .as_ref()
            .is_none_or(|c| req.user_prompt.contains(c.as_str()))
            && self
                .system_contains
                .as_ref()
                .is_none_or(|c| req.system_prompt.contains(c.as_str()))
    }
}

/// Canned responses. On disk either `{"responses": {...}, "rules": [...]}`
/// or a plain JSON map from exact user prompt to response.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Full(MockScript),
    Map(BTreeMap<String, String>),
}

impl MockScript {
    pub fn from_map<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            responses: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            rules: Vec::new(),
        }
    }

    pub fn parse(json: &str) -> Result<Self, ProviderError> {
        match serde_json::from_str::<ScriptFile>(json)
            .map_err(|e| ProviderError::Config(format!("mock script: {e}")))?
        {
            ScriptFile::Full(s) => Ok(s),
            ScriptFile::Map(m) => Ok(Self::from_map(m)),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

pub struct MockChat {
    seed: u64,
    script: MockScript,
    delay: Duration,
    limiter: InFlightLimiter,
    usage: Usage,
}

impl MockChat {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            script: MockScript::default(),
            delay: Duration::ZERO,
            limiter: InFlightLimiter::new(4),
            usage: Usage::default(),
        }
    }

    pub fn with_script(mut self, script: MockScript) -> Self {
        self.script = script;
        self
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.script.rules.push(rule);
        self
    }

    pub fn with_delay_ms(mut self, ms: u64) -> Self {
        self.delay = Duration::from_millis(ms);
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter = InFlightLimiter::new(n);
        self
    }

    /// The response text for a request, or `None` for a scripted failure.
    pub fn respond(&self, req: &ChatRequest) -> Option<String> {
        if let Some(rule) = self.script.rules.iter().find(|r| r.matches(req)) {
            return if rule.fail {
                None
            } else {
                Some(rule.response.clone().unwrap_or_default())
            };
        }
        if let Some(text) = self.script.responses.get(&req.user_prompt) {
            return Some(text.clone());
        }
        Some(self.synthesize(req))
    }

    fn synthesize(&self, req: &ChatRequest) -> String {
        let sys = req.system_prompt.as_str();
        let user = req.user_prompt.as_str();
        if sys == prompts::DESCRIBE {
            synth_description(user)
        } else if sys == prompts::SUMMARIZE {
            synth_summary(after(user, "Text:\n"))
        } else if sys == prompts::KEYWORDS {
            synth_keywords(user)
        } else if sys == prompts::QA_GENERATION_SYSTEM {
            synth_qa(self.seed, user)
        } else if sys.starts_with(template_prefix(prompts::JUDGE_TEMPLATE)) {
            "4".to_string()
        } else if let Some(rest) = sys.strip_prefix(template_prefix(prompts::GENERATION_TEMPLATE)) {
            synth_generation(user, rest.trim())
        } else {
            let h = fnv1a(self.seed, &[sys.as_bytes(), user.as_bytes()]);
            format!("mock response {h:016x}")
        }
    }
}

fn template_prefix(template: &str) -> &str {
    &template[..template.find('{').unwrap_or(template.len())]
}

impl ChatProvider for MockChat {
    fn identity(&self) -> String {
        format!("mock-chat:seed={}", self.seed)
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let _permit = self.limiter.acquire();
        let start = Instant::now();
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let Some(text) = self.respond(request) else {
            self.usage.record_failure(1);
            return Err(ProviderError::ProviderUnavailable {
                attempts: 1,
                reason: "scripted failure".into(),
            });
        };
        let completion_tokens = approx_tokens(&text);
        if completion_tokens > request.max_tokens as u64 {
            self.usage.record_failure(1);
            return Err(ProviderError::ResponseTooLong {
                max_tokens: request.max_tokens,
            });
        }
        let prompt_tokens = approx_tokens(&request.system_prompt) + approx_tokens(&request.user_prompt);
        self.usage.record_success(prompt_tokens, completion_tokens, 1);
        Ok(ChatResponse {
            text,
            prompt_tokens,
            completion_tokens,
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
            attempts: 1,
        })
    }

    fn usage(&self) -> UsageSnapshot {
        self.usage.snapshot()
    }
}

fn after<'a>(haystack: &'a str, marker: &str) -> &'a str {
    haystack
        .rfind(marker)
        .map(|i| &haystack[i + marker.len()..])
        .unwrap_or(haystack)
}

fn line_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(key)).map(str::trim)
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub(crate) fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c == '\n' {
            if !current.trim().is_empty() {
                out.push(one_line(&current));
            }
            current.clear();
            continue;
        }
        current.push(c);
        let boundary = matches!(c, '.' | '!' | '?')
            && chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if boundary {
            if !current.trim().is_empty() {
                out.push(one_line(&current));
            }
            current.clear();
        }
    }
    if !current.trim().is_empty() {
        out.push(one_line(&current));
    }
    out
}

const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "also", "among", "been", "before", "being", "below",
    "between", "both", "could", "does", "each", "from", "have", "having", "here", "into",
    "itself", "more", "most", "must", "only", "other", "over", "same", "should", "some", "such",
    "than", "that", "their", "them", "then", "there", "these", "they", "this", "those",
    "through", "under", "until", "very", "were", "what", "when", "where", "which", "while",
    "will", "with", "within", "without", "would", "your", "page", "section", "following",
    "shows", "presents", "information", "text", "element", "figure", "table",
];

fn content_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '-')
        .map(|w| w.trim_matches('-').to_lowercase())
        .filter(|w| {
            w.chars().count() >= 4
                && w.chars().next().is_some_and(char::is_alphabetic)
                && !STOPWORDS.contains(&w.as_str())
        })
        .collect()
}

fn synth_description(user: &str) -> String {
    let kind = line_value(user, "Element kind:").unwrap_or("element");
    let page = line_value(user, "Page:").unwrap_or("?");
    let content = one_line(after(user, "Content:\n"));
    if content.is_empty() || content == "(no extractable text)" {
        format!("The {kind} on page {page} contains no legible text.")
    } else {
        format!("The {kind} on page {page} presents the following information: {content}")
    }
}

fn synth_summary(text: &str) -> String {
    let mut words = 0;
    let mut picked = Vec::new();
    for s in split_sentences(text) {
        words += s.split_whitespace().count();
        picked.push(s);
        if words >= 40 {
            break;
        }
    }
    let out = picked.join(" ");
    if out.is_empty() {
        "Empty section.".into()
    } else {
        out
    }
}

fn synth_keywords(user: &str) -> String {
    let count: usize = user
        .split_whitespace()
        .skip_while(|w| *w != "exactly")
        .nth(1)
        .and_then(|n| n.parse().ok())
        .unwrap_or(3);
    let excluded: HashSet<String> = line_value(user, "Already extracted, do not repeat:")
        .map(|l| l.split(';').map(|k| k.trim().to_lowercase()).collect())
        .unwrap_or_default();
    let text = after(user, "Text:\n");

    let mut freq: HashMap<String, (usize, usize)> = HashMap::new();
    for (pos, w) in content_words(text).into_iter().enumerate() {
        freq.entry(w).or_insert((0, pos)).0 += 1;
    }
    let mut ranked: Vec<(String, usize, usize)> =
        freq.into_iter().map(|(w, (n, first))| (w, n, first)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked
        .into_iter()
        .filter(|(w, _, _)| !excluded.contains(w))
        .take(count)
        .map(|(w, _, _)| w)
        .collect::<Vec<_>>()
        .join("\n")
}

fn synth_qa(seed: u64, user: &str) -> String {
    let body = after(user, "### text:\n");
    let (text, rest) = match body.find("\n### keywords: ") {
        Some(i) => (&body[..i], &body[i + "\n### keywords: ".len()..]),
        None => (body, ""),
    };
    let keywords: Vec<String> = rest
        .lines()
        .next()
        .and_then(|l| serde_json::from_str(l).ok())
        .unwrap_or_default();
    // Keywords are part of the tag: a summary can repeat its first child's
    // text verbatim, but never with the same keyword request.
    let tag = fnv1a(seed, &[text.as_bytes(), rest.lines().next().unwrap_or("").as_bytes()]) & 0xff_ffff;
    let sentences = split_sentences(text);
    let mut out = String::new();
    for kw in keywords {
        let lower = kw.to_lowercase();
        let answer = sentences
            .iter()
            .find(|s| s.to_lowercase().contains(&lower))
            .or(sentences.first())
            .map(|s| s.split_whitespace().take(40).collect::<Vec<_>>().join(" "))
            .unwrap_or_else(|| kw.clone());
        out.push_str(&format!(
            "Reasoning: the passage mentions {kw}.\nQuestion: Regarding passage {tag:06x}, what is stated about {kw}?\nAnswer: {answer}\n\n"
        ));
    }
    out
}

fn synth_generation(user: &str, not_answerable: &str) -> String {
    let (context, question) = match user.rfind("\n\nQuestion: ") {
        Some(i) => (&user[..i], &user[i + "\n\nQuestion: ".len()..]),
        None => (user, ""),
    };
    let context = context.strip_prefix("Context:\n").unwrap_or(context);
    let q: HashSet<String> = content_words(question).into_iter().collect();
    let best = split_sentences(context)
        .into_iter()
        .map(|s| {
            let overlap = content_words(&s).iter().filter(|w| q.contains(*w)).count();
            (overlap, s)
        })
        .fold(None::<(usize, String)>, |best, cand| match best {
            Some(b) if b.0 >= cand.0 => Some(b),
            _ => Some(cand),
        });
    match best {
        Some((n, s)) if n > 0 => s,
        _ => not_answerable.to_string(),
    }
}

/// Character-trigram feature hashing embedder.
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
    delay: Duration,
    usage: Usage,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim: dim.max(1),
            seed,
            delay: Duration::ZERO,
            usage: Usage::default(),
        }
    }

    pub fn with_delay_ms(mut self, ms: u64) -> Self {
        self.delay = Duration::from_millis(ms);
        self
    }

    pub fn vector(&self, text: &str) -> Vec<f32> {
        let padded: Vec<char> = format!("  {}  ", text.trim().to_lowercase()).chars().collect();
        let mut v = vec![0.0f32; self.dim];
        let mut buf = [0u8; 16];
        for gram in padded.windows(3) {
            let mut len = 0;
            for c in gram {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = fnv1a(self.seed, &[&buf[..len]]);
            let slot = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
        if v.iter().all(|&x| x == 0.0) {
            let h = fnv1a(self.seed, &[text.as_bytes()]);
            v[(h % self.dim as u64) as usize] = 1.0;
        }
        v
    }
}

impl Embedder for MockEmbedder {
    fn fingerprint(&self) -> String {
        format!("mock-embed:dim={}:seed={}", self.dim, self.seed)
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let tokens: u64 = texts.iter().map(|t| approx_tokens(t)).sum();
        self.usage.record_success(tokens, 0, 1);
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }

    fn usage(&self) -> UsageSnapshot {
        self.usage.snapshot()
    }
}
