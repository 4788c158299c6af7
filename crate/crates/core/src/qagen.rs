//! QA pair generation over chunk-tree nodes.
//!
//! Each node gets one generation call asking for as many pairs as it has
//! keywords. The QA-generation instruction block is the system prompt; the
//! criteria prompt, the worked example, the node text, its keywords and the
//! most recent questions already generated for the document form the user
//! prompt. Surviving pairs must avoid the banned referential phrases and
//! must not repeat an earlier question of the same document.

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::{ChunkNode, ChunkTree};
use crate::gateway::{ChatProvider, ChatRequest, ProviderError, UsageSnapshot};
use crate::keywords::{extract_keywords, KeywordScale, KeywordSet};
use crate::prompts;

pub const BANK_FILE: &str = "bank.jsonl";
pub const MANIFEST_FILE: &str = "bank.manifest.json";

#[derive(Debug, Error)]
pub enum QaGenError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no Question:/Answer: blocks in provider output")]
    Unparseable,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("corrupt bank: {0}")]
    CorruptBank(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub qa_id: String,
    pub doc_id: String,
    pub node_id: String,
    pub node_level: u32,
    pub question: String,
    pub answer: String,
    pub keywords_used: Vec<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaGenConfig {
    /// Case-insensitive phrases a question may not contain.
    pub banned_phrases: Vec<String>,
    /// Most recent prior questions shown to the model, per document.
    pub prior_window: usize,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for QaGenConfig {
    fn default() -> Self {
        Self {
            banned_phrases: vec!["in the document".into(), "according to the document".into()],
            prior_window: 20,
            temperature: 0.2,
            max_tokens: 2048,
        }
    }
}

/// Lowercase, collapse whitespace, strip terminal punctuation.
pub fn normalize_question(q: &str) -> String {
    let lower = q.to_lowercase();
    let collapsed = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

pub fn contains_banned_phrase(question: &str, banned: &[String]) -> bool {
    let q = question.to_lowercase();
    banned.iter().any(|b| q.contains(&b.to_lowercase()))
}

pub fn user_prompt(text: &str, keywords: &[String], recent_questions: &[String]) -> String {
    let mut p = String::new();
    p.push_str(prompts::QA_GENERATION);
    p.push_str("\nExample:\n");
    p.push_str(prompts::QA_FEWSHOT);
    p.push_str("\n### text:\n");
    p.push_str(text.trim());
    p.push_str("\n### keywords: ");
    p.push_str(&serde_json::to_string(keywords).expect("strings serialize"));
    p.push_str("\n### previously generated questions:\n");
    if recent_questions.is_empty() {
        p.push_str("(none)\n");
    }
    for q in recent_questions {
        p.push_str("- ");
        p.push_str(q);
        p.push('\n');
    }
    p.push_str(&format!(
        "\nGenerate exactly {} question-answer pairs, one for each keyword.\n",
        keywords.len()
    ));
    p
}

fn label_content<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let l = line.trim_start_matches(['*', '-', '#', ' ']);
    let head = l.get(..label.len())?;
    if head.eq_ignore_ascii_case(label) {
        Some(l[label.len()..].trim_start_matches('*').trim())
    } else {
        None
    }
}

/// Extracts `Question:` / `Answer:` blocks. Continuation lines are joined;
/// an answer ends at a blank line or the next question. Other lines
/// (reasoning steps) are ignored.
pub fn parse_qa_blocks(output: &str) -> Vec<(String, String)> {
    enum State {
        Idle,
        Question(String),
        Answer(String, String),
    }
    let mut pairs = Vec::new();
    let mut state = State::Idle;
    let finish = |state: State, pairs: &mut Vec<(String, String)>| {
        if let State::Answer(q, a) = state {
            if !q.is_empty() && !a.is_empty() {
                pairs.push((q, a));
            }
        }
    };
    for line in output.lines() {
        let trimmed = line.trim();
        if let Some(q) = label_content(trimmed, "question:") {
            finish(std::mem::replace(&mut state, State::Idle), &mut pairs);
            state = State::Question(q.to_string());
        } else if let Some(a) = label_content(trimmed, "answer:") {
            state = match state {
                State::Question(q) | State::Answer(q, _) => State::Answer(q, a.to_string()),
                State::Idle => State::Idle,
            };
        } else if trimmed.is_empty() {
            if let State::Answer(..) = state {
                finish(std::mem::replace(&mut state, State::Idle), &mut pairs);
            }
        } else {
            match &mut state {
                State::Question(q) => {
                    if !q.is_empty() {
                        q.push(' ');
                    }
                    q.push_str(trimmed);
                }
                State::Answer(_, a) => {
                    if !a.is_empty() {
                        a.push(' ');
                    }
                    a.push_str(trimmed);
                }
                State::Idle => {}
            }
        }
    }
    finish(state, &mut pairs);
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    BannedPhrase,
    Duplicate,
    Surplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedPair {
    pub question: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeQa {
    pub pairs: Vec<QAPair>,
    pub dropped: Vec<DroppedPair>,
    pub shortfall: bool,
}

/// Generates up to `|keywords|` pairs for one node. `prior_questions` is the
/// document's full question history in generation order; only the most
/// recent `prior_window` are shown to the model, but all are used for
/// duplicate suppression.
pub fn generate_qa_for_node(
    node: &ChunkNode,
    keywords: &KeywordSet,
    prior_questions: &[String],
    cfg: &QaGenConfig,
    chat: &dyn ChatProvider,
) -> Result<NodeQa, QaGenError> {
    if keywords.keywords.is_empty() {
        return Err(QaGenError::InvalidInput(format!("node {} has no keywords", node.node_id)));
    }
    if node.text.trim().is_empty() {
        return Err(QaGenError::InvalidInput(format!("node {} has no text", node.node_id)));
    }
    let recent = &prior_questions[prior_questions.len().saturating_sub(cfg.prior_window)..];
    let req = ChatRequest::new(
        prompts::QA_GENERATION_SYSTEM,
        user_prompt(&node.text, &keywords.keywords, recent),
    )
    .temperature(cfg.temperature)
    .max_tokens(cfg.max_tokens);
    let resp = chat.complete(&req)?;
    let parsed = parse_qa_blocks(&resp.text);
    if parsed.is_empty() {
        return Err(QaGenError::Unparseable);
    }

    let mut seen: HashSet<String> = prior_questions.iter().map(|q| normalize_question(q)).collect();
    let wanted = keywords.keywords.len();
    let created_at = Utc::now();
    let mut pairs = Vec::new();
    let mut dropped = Vec::new();
    for (question, answer) in parsed {
        let reason = if contains_banned_phrase(&question, &cfg.banned_phrases) {
            Some(DropReason::BannedPhrase)
        } else if seen.contains(&normalize_question(&question)) {
            Some(DropReason::Duplicate)
        } else if pairs.len() >= wanted {
            Some(DropReason::Surplus)
        } else {
            None
        };
        if let Some(reason) = reason {
            dropped.push(DroppedPair { question, reason });
            continue;
        }
        seen.insert(normalize_question(&question));
        let index = pairs.len();
        let haystack = format!("{question} {answer}").to_lowercase();
        let mut used: Vec<String> = keywords
            .keywords
            .iter()
            .filter(|k| haystack.contains(&k.to_lowercase()))
            .cloned()
            .collect();
        if used.is_empty() {
            used.extend(keywords.keywords.get(index).cloned());
        }
        pairs.push(QAPair {
            qa_id: format!("{}:Q{index:02}", node.node_id),
            doc_id: node.doc_id.clone(),
            node_id: node.node_id.clone(),
            node_level: node.level,
            question,
            answer,
            keywords_used: used,
            created_at,
        });
    }
    Ok(NodeQa {
        shortfall: pairs.len() < wanted,
        pairs,
        dropped,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLedger {
    pub stage: String,
    pub wall_ms: f64,
    pub items: usize,
    pub calls: u64,
    pub failures: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl StageLedger {
    pub fn from_usage(stage: &str, wall_ms: f64, items: usize, usage: UsageSnapshot) -> Self {
        Self {
            stage: stage.into(),
            wall_ms,
            items,
            calls: usage.calls,
            failures: usage.failures,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub node_id: String,
    pub level: u32,
    pub requested: usize,
    pub produced: usize,
    pub shortfall: bool,
    pub dropped: Vec<DroppedPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildFailure {
    pub doc_id: String,
    pub node_id: Option<String>,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub bank_id: String,
    pub config_hash: String,
    pub chat_provider: String,
    pub prompt_hashes: std::collections::BTreeMap<String, String>,
    pub total_pairs: usize,
    pub keyword_sets: Vec<KeywordSet>,
    pub nodes: Vec<NodeEntry>,
    pub failures: Vec<BuildFailure>,
    pub ledger: Vec<StageLedger>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QABank {
    pub bank_id: String,
    pub qa_pairs: Vec<QAPair>,
    pub manifest: BankManifest,
}

/// Content-derived id: stable for identical questions and answers.
fn bank_id(pairs: &[QAPair]) -> String {
    let mut h = String::new();
    for p in pairs {
        h.push_str(&p.qa_id);
        h.push('\u{1f}');
        h.push_str(&p.question);
        h.push('\u{1f}');
        h.push_str(&p.answer);
        h.push('\u{1e}');
    }
    prompts::sha256_hex(&h)[..16].to_string()
}

struct DocResult {
    pairs: Vec<QAPair>,
    nodes: Vec<NodeEntry>,
    failures: Vec<BuildFailure>,
}

/// Keywords for every node of every tree (parallel), then QA generation per
/// document (documents in parallel, nodes of a document sequentially from
/// the root down so the question history accumulates in a fixed order).
pub fn generate_bank(
    trees: &[ChunkTree],
    scale: KeywordScale,
    keyword_temperature: f32,
    cfg: &QaGenConfig,
    chat: &dyn ChatProvider,
) -> Result<QABank, QaGenError> {
    scale
        .validate()
        .map_err(|e| QaGenError::InvalidInput(e.to_string()))?;
    let mut failures = Vec::new();
    let valid: Vec<&ChunkTree> = trees
        .iter()
        .filter(|t| match t.validate() {
            Ok(()) => true,
            Err(e) => {
                failures.push(BuildFailure {
                    doc_id: t.doc_id.clone(),
                    node_id: None,
                    stage: "tree".into(),
                    error: e.to_string(),
                });
                false
            }
        })
        .collect();

    let jobs: Vec<(usize, &ChunkNode)> = valid
        .iter()
        .enumerate()
        .flat_map(|(i, t)| t.top_down().into_iter().map(move |n| (i, n)))
        .collect();

    let before = chat.usage();
    let start = Instant::now();
    let keyword_results: Vec<_> = jobs
        .par_iter()
        .map(|(_, node)| extract_keywords(node, scale.count(node.level), chat, keyword_temperature))
        .collect();
    let keyword_usage = chat.usage().since(&before);
    let keyword_ledger = StageLedger::from_usage(
        "keyword_extraction",
        start.elapsed().as_secs_f64() * 1e3,
        jobs.len(),
        keyword_usage,
    );

    let mut per_doc: Vec<Vec<(&ChunkNode, KeywordSet)>> = vec![Vec::new(); valid.len()];
    let mut keyword_sets = Vec::new();
    for ((doc, node), result) in jobs.iter().zip(keyword_results) {
        match result {
            Ok(set) => {
                keyword_sets.push(set.clone());
                per_doc[*doc].push((node, set));
            }
            Err(e) => failures.push(BuildFailure {
                doc_id: node.doc_id.clone(),
                node_id: Some(node.node_id.clone()),
                stage: "keyword_extraction".into(),
                error: e.to_string(),
            }),
        }
    }

    let before = chat.usage();
    let start = Instant::now();
    let doc_results: Vec<DocResult> = per_doc
        .par_iter()
        .map(|nodes| {
            let mut out = DocResult {
                pairs: Vec::new(),
                nodes: Vec::new(),
                failures: Vec::new(),
            };
            let mut history: Vec<String> = Vec::new();
            for (node, set) in nodes {
                match generate_qa_for_node(node, set, &history, cfg, chat) {
                    Ok(nq) => {
                        history.extend(nq.pairs.iter().map(|p| p.question.clone()));
                        out.nodes.push(NodeEntry {
                            node_id: node.node_id.clone(),
                            level: node.level,
                            requested: set.keywords.len(),
                            produced: nq.pairs.len(),
                            shortfall: nq.shortfall,
                            dropped: nq.dropped,
                        });
                        out.pairs.extend(nq.pairs);
                    }
                    Err(e) => out.failures.push(BuildFailure {
                        doc_id: node.doc_id.clone(),
                        node_id: Some(node.node_id.clone()),
                        stage: "qa_generation".into(),
                        error: e.to_string(),
                    }),
                }
            }
            out
        })
        .collect();
    let qa_usage = chat.usage().since(&before);
    let qa_wall = start.elapsed().as_secs_f64() * 1e3;

    let mut qa_pairs = Vec::new();
    let mut nodes = Vec::new();
    for r in doc_results {
        qa_pairs.extend(r.pairs);
        nodes.extend(r.nodes);
        failures.extend(r.failures);
    }
    let id = bank_id(&qa_pairs);
    let manifest = BankManifest {
        bank_id: id.clone(),
        config_hash: String::new(),
        chat_provider: chat.identity(),
        prompt_hashes: prompts::prompt_hashes(),
        total_pairs: qa_pairs.len(),
        keyword_sets,
        ledger: vec![
            keyword_ledger,
            StageLedger::from_usage("qa_generation", qa_wall, qa_pairs.len(), qa_usage),
        ],
        nodes,
        failures,
    };
    Ok(QABank {
        bank_id: id,
        qa_pairs,
        manifest,
    })
}

impl QABank {
    pub fn to_jsonl(&self) -> String {
        write_jsonl(&self.qa_pairs)
    }

    pub fn save(&self, dir: &Path) -> Result<(), QaGenError> {
        std::fs::write(dir.join(BANK_FILE), self.to_jsonl())?;
        let mut m = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        m.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), m)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<QABank, QaGenError> {
        let qa_pairs = read_jsonl(&std::fs::read_to_string(dir.join(BANK_FILE))?)?;
        let manifest: BankManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)
                .map_err(|e| QaGenError::CorruptBank(format!("manifest: {e}")))?;
        Ok(QABank {
            bank_id: manifest.bank_id.clone(),
            qa_pairs,
            manifest,
        })
    }
}

pub fn write_jsonl(pairs: &[QAPair]) -> String {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&serde_json::to_string(p).expect("pair serializes"));
        s.push('\n');
    }
    s
}

/// Parses `bank.jsonl`, enforcing unique qa_ids and non-empty texts.
pub fn read_jsonl(text: &str) -> Result<Vec<QAPair>, QaGenError> {
    let mut ids = HashSet::new();
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: QAPair = serde_json::from_str(line)
            .map_err(|e| QaGenError::CorruptBank(format!("line {}: {e}", i + 1)))?;
        if p.question.trim().is_empty() || p.answer.trim().is_empty() {
            return Err(QaGenError::CorruptBank(format!("line {}: empty question or answer", i + 1)));
        }
        if !ids.insert(p.qa_id.clone()) {
            return Err(QaGenError::CorruptBank(format!("duplicate qa_id {}", p.qa_id)));
        }
        pairs.push(p);
    }
    Ok(pairs)
}
