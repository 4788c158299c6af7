//! Per-node keyword extraction with level-scaled keyword counts.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::ChunkNode;
use crate::gateway::{ChatProvider, ChatRequest, ProviderError};
use crate::prompts;

#[derive(Debug, Error, PartialEq)]
pub enum KeywordError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unparseable keyword output: {0}")]
    Unparseable(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordScale {
    pub base: u32,
    pub step: u32,
    pub cap: u32,
}

impl Default for KeywordScale {
    fn default() -> Self {
        Self {
            base: 3,
            step: 2,
            cap: 10,
        }
    }
}

impl KeywordScale {
    pub fn validate(&self) -> Result<(), KeywordError> {
        if self.base < 1 || self.cap < self.base {
            return Err(KeywordError::InvalidParameter(format!(
                "need base >= 1 and cap >= base, got base {} cap {}",
                self.base, self.cap
            )));
        }
        Ok(())
    }

    pub fn count(&self, level: u32) -> u32 {
        keyword_count(level, self.base, self.step, self.cap)
    }
}

/// `min(base + step * level, cap)`.
pub fn keyword_count(level: u32, base: u32, step: u32, cap: u32) -> u32 {
    base.saturating_add(step.saturating_mul(level)).min(cap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub node_id: String,
    pub level: u32,
    pub keywords: Vec<String>,
    pub requested: u32,
    /// Fewer distinct keywords than requested survived the refill attempt.
    #[serde(default)]
    pub shortfall: bool,
}

pub fn user_prompt(text: &str, count: u32, already: &[String]) -> String {
    let mut p = format!("Extract exactly {count} keywords from the text below.\n");
    if !already.is_empty() {
        p.push_str(&format!("Already extracted, do not repeat: {}\n", already.join("; ")));
    }
    p.push_str(&format!("\nText:\n{text}"));
    p
}

/// One keyword per line; tolerates `- ` bullets, rejects numbered lists.
pub fn parse_keyword_lines(output: &str) -> Result<Vec<String>, KeywordError> {
    let mut out = Vec::new();
    for line in output.lines() {
        let mut l = line.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(rest) = l.strip_prefix("- ") {
            l = rest.trim();
        }
        let digits = l.chars().take_while(char::is_ascii_digit).count();
        if digits > 0 && matches!(l[digits..].chars().next(), Some('.' | ')')) {
            return Err(KeywordError::Unparseable(format!("numbered line {line:?}")));
        }
        if !l.is_empty() {
            out.push(l.to_string());
        }
    }
    if out.is_empty() {
        return Err(KeywordError::Unparseable("no keyword lines".into()));
    }
    Ok(out)
}

fn merge_distinct(into: &mut Vec<String>, seen: &mut HashSet<String>, candidates: Vec<String>, limit: usize) {
    for k in candidates {
        if into.len() >= limit {
            break;
        }
        if seen.insert(k.to_lowercase()) {
            into.push(k);
        }
    }
}

/// Asks for `count` keywords; if duplicates or a short list leave fewer than
/// `count`, re-prompts once for the missing ones and flags any remainder.
pub fn extract_keywords(
    node: &ChunkNode,
    count: u32,
    chat: &dyn ChatProvider,
    temperature: f32,
) -> Result<KeywordSet, KeywordError> {
    if count < 1 {
        return Err(KeywordError::InvalidParameter("count must be >= 1".into()));
    }
    if node.text.trim().is_empty() {
        return Err(KeywordError::InvalidParameter(format!("node {} has no text", node.node_id)));
    }
    let limit = count as usize;
    let ask = |already: &[String], n: u32| -> Result<Vec<String>, KeywordError> {
        let req = ChatRequest::new(prompts::KEYWORDS, user_prompt(&node.text, n, already))
            .temperature(temperature)
            .max_tokens(256);
        parse_keyword_lines(&chat.complete(&req)?.text)
    };

    let mut keywords = Vec::new();
    let mut seen = HashSet::new();
    merge_distinct(&mut keywords, &mut seen, ask(&[], count)?, limit);
    if keywords.len() < limit {
        let missing = (limit - keywords.len()) as u32;
        match ask(&keywords, missing) {
            Ok(more) => merge_distinct(&mut keywords, &mut seen, more, limit),
            Err(KeywordError::Unparseable(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(KeywordSet {
        node_id: node.node_id.clone(),
        level: node.level,
        shortfall: keywords.len() < limit,
        requested: count,
        keywords,
    })
}
