//! Query-time routing between stored answers and generation.
//!
//! A query whose best QA-bank match scores at least `threshold` gets the
//! stored answer verbatim and never touches the chat provider. Otherwise the
//! chunks backing the top-k hits become the context for one generation call.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::{ChunkNode, ChunkTree};
use crate::gateway::{ChatProvider, ChatRequest, Embedder, ProviderError};
use crate::index::{IndexError, QAIndex, ScoredHit};
use crate::prompts;

/// Slack applied to `score >= threshold` so that exact self-matches still
/// route Direct at a threshold of 1.0.
pub const SCORE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("invalid router config: {0}")]
    InvalidConfig(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("node {0} is referenced by the index but missing from the chunk store")]
    ContextResolution(String),
    #[error("index was built with embedder {index:?} but the configured embedder is {configured:?}")]
    FingerprintMismatch { index: String, configured: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(IndexError),
}

impl From<IndexError> for RouterError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::EmptyIndex => RouterError::EmptyIndex,
            IndexError::Provider(p) => RouterError::Provider(p),
            other => RouterError::Index(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RouterConfig {
    pub threshold: f64,
    pub top_k: usize,
    pub max_context_tokens: usize,
    /// Overrides the shipped generation prompt when set.
    pub generation_prompt: Option<String>,
    pub not_answerable_text: String,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            top_k: 3,
            max_context_tokens: 4096,
            generation_prompt: None,
            not_answerable_text: "Not answerable".into(),
            temperature: 0.2,
            max_tokens: 512,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<(), RouterError> {
        check_threshold(self.threshold)?;
        if self.top_k < 1 {
            return Err(RouterError::InvalidConfig("top_k must be >= 1".into()));
        }
        if self.max_context_tokens < 1 {
            return Err(RouterError::InvalidConfig("max_context_tokens must be >= 1".into()));
        }
        Ok(())
    }

    pub fn system_prompt(&self) -> String {
        match &self.generation_prompt {
            Some(p) => p.clone(),
            None => prompts::generation_system_prompt(&self.not_answerable_text),
        }
    }

    /// Copy with the generation prompt spelled out, as served to clients.
    pub fn effective(&self) -> RouterConfig {
        RouterConfig {
            generation_prompt: Some(self.system_prompt()),
            ..self.clone()
        }
    }
}

pub fn check_threshold(t: f64) -> Result<(), RouterError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(RouterError::InvalidThreshold(t));
    }
    Ok(())
}

pub fn routes_direct(top_score: f32, threshold: f64) -> bool {
    top_score as f64 + SCORE_TOLERANCE >= threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteMode {
    Direct,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub mode: RouteMode,
    pub top_score: f32,
    pub hits: Vec<ScoredHit>,
    /// Direct: the node behind the rank-1 hit. Generated: every context node.
    pub source_node_ids: Vec<String>,
    pub latency_ms: f64,
}

/// Every tree node by id; the fallback context source.
#[derive(Debug, Clone, Default)]
pub struct ChunkStore {
    nodes: HashMap<String, ChunkNode>,
}

impl ChunkStore {
    pub fn from_trees<'a>(trees: impl IntoIterator<Item = &'a ChunkTree>) -> Self {
        let nodes = trees
            .into_iter()
            .flat_map(|t| t.nodes.values().cloned())
            .map(|n| (n.node_id.clone(), n))
            .collect();
        Self { nodes }
    }

    pub fn get(&self, node_id: &str) -> Option<&ChunkNode> {
        self.nodes.get(node_id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every node referenced by the index must be present.
    pub fn covers(&self, index: &QAIndex) -> Result<(), RouterError> {
        for id in index.ids() {
            let node = &index.meta(id).expect("indexed id has metadata").node_id;
            if !self.nodes.contains_key(node) {
                return Err(RouterError::ContextResolution(node.clone()));
            }
        }
        Ok(())
    }
}

/// Keeps the first `max_tokens` whitespace tokens, dropping the tail.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            if seen == max_tokens {
                return text[..i].trim_end();
            }
            seen += 1;
            in_token = true;
        }
    }
    text
}

pub fn generation_user_prompt(context: &str, query: &str) -> String {
    format!("Context:\n{context}\n\nQuestion: {query}")
}

/// Holds everything a query needs; cheap to clone and share across threads.
#[derive(Clone)]
pub struct Router {
    index: Arc<QAIndex>,
    store: Arc<ChunkStore>,
    embedder: Arc<dyn Embedder>,
    chat: Arc<dyn ChatProvider>,
    config: RouterConfig,
}

impl Router {
    /// Fails when the embedder cannot produce vectors comparable with the
    /// index (unless `force`), or when index metadata points at unknown nodes.
    pub fn new(
        index: Arc<QAIndex>,
        store: Arc<ChunkStore>,
        embedder: Arc<dyn Embedder>,
        chat: Arc<dyn ChatProvider>,
        config: RouterConfig,
        force: bool,
    ) -> Result<Self, RouterError> {
        config.validate()?;
        let configured = embedder.fingerprint();
        if configured != index.fingerprint() && !force {
            return Err(RouterError::FingerprintMismatch {
                index: index.fingerprint().to_string(),
                configured,
            });
        }
        store.covers(&index)?;
        Ok(Self {
            index,
            store,
            embedder,
            chat,
            config,
        })
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    pub fn index(&self) -> &QAIndex {
        &self.index
    }

    pub fn store(&self) -> &ChunkStore {
        &self.store
    }

    pub fn chat(&self) -> &dyn ChatProvider {
        self.chat.as_ref()
    }

    /// Answers with the configured threshold unless `threshold` overrides it
    /// for this call.
    pub fn answer_query(&self, query: &str, threshold: Option<f64>) -> Result<Answer, RouterError> {
        let start = Instant::now();
        let threshold = threshold.unwrap_or(self.config.threshold);
        check_threshold(threshold)?;
        if query.trim().is_empty() {
            return Err(RouterError::EmptyQuery);
        }
        if self.index.is_empty() {
            return Err(RouterError::EmptyIndex);
        }
        let q = self.embedder.embed_one(query)?;
        let hits = self.index.search(&q, self.config.top_k)?;
        let top = &hits[0];
        let top_score = top.score;

        if routes_direct(top_score, threshold) {
            let meta = self.index.meta(&top.qa_id).expect("hit has metadata");
            return Ok(Answer {
                text: meta.answer.clone(),
                mode: RouteMode::Direct,
                top_score,
                source_node_ids: vec![meta.node_id.clone()],
                hits,
                latency_ms: start.elapsed().as_secs_f64() * 1000.0,
            });
        }

        let nodes = self.context_nodes(&hits)?;
        let joined = nodes.iter().map(|n| n.text.as_str()).collect::<Vec<_>>().join("\n\n");
        let context = truncate_tokens(&joined, self.config.max_context_tokens);
        let req = ChatRequest::new(self.config.system_prompt(), generation_user_prompt(context, query))
            .temperature(self.config.temperature)
            .max_tokens(self.config.max_tokens);
        let resp = self.chat.complete(&req)?;
        Ok(Answer {
            text: resp.text.trim().to_string(),
            mode: RouteMode::Generated,
            top_score,
            source_node_ids: nodes.iter().map(|n| n.node_id.clone()).collect(),
            hits,
            latency_ms: start.elapsed().as_secs_f64() * 1000.0,
        })
    }

    /// Distinct backing nodes, summaries before leaves, then document order.
    fn context_nodes(&self, hits: &[ScoredHit]) -> Result<Vec<&ChunkNode>, RouterError> {
        let mut seen = HashSet::new();
        let mut nodes = Vec::new();
        for h in hits {
            let id = &self.index.meta(&h.qa_id).expect("hit has metadata").node_id;
            if seen.insert(id.as_str()) {
                let node = self
                    .store
                    .get(id)
                    .ok_or_else(|| RouterError::ContextResolution(id.clone()))?;
                nodes.push(node);
            }
        }
        nodes.sort_by(|a, b| {
            b.level
                .cmp(&a.level)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
                .then_with(|| a.position.cmp(&b.position))
        });
        Ok(nodes)
    }

    /// Best inner-product score per query; no chat calls.
    pub fn top_scores(&self, queries: &[String]) -> Result<Vec<f32>, RouterError> {
        if self.index.is_empty() {
            return Err(RouterError::EmptyIndex);
        }
        let vectors = self.embedder.embed(queries)?;
        vectors
            .iter()
            .map(|v| Ok(self.index.search(v, 1)?[0].score))
            .collect()
    }

    /// Dry-run fraction of `queries` that would route Direct at each threshold.
    pub fn route_fraction(&self, queries: &[String], thresholds: &[f64]) -> Result<Vec<(f64, f64)>, RouterError> {
        if queries.is_empty() {
            return Err(RouterError::EmptyQuery);
        }
        for &t in thresholds {
            check_threshold(t)?;
        }
        let scores = self.top_scores(queries)?;
        Ok(fractions_at(&scores, thresholds))
    }
}

/// Fraction of `scores` routing Direct at each threshold.
pub fn fractions_at(scores: &[f32], thresholds: &[f64]) -> Vec<(f64, f64)> {
    thresholds
        .iter()
        .map(|&t| {
            let direct = scores.iter().filter(|&&s| routes_direct(s, t)).count();
            (t, direct as f64 / scores.len().max(1) as f64)
        })
        .collect()
}
