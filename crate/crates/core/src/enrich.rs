//! Table and figure description.
//!
//! Tables and figures are replaced by a generated paragraph; text regions pass
//! through unchanged. Only a textual payload (raw region content, kind, page,
//! image reference) is sent to the provider.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatProvider, ChatRequest, ProviderError};
use crate::ingest::{ElementKind, LayoutElement, ParsedDocument};
use crate::prompts;

pub const PLACEHOLDER: &str = "[description unavailable]";
pub const ENRICHED_EXTENSION: &str = ".enriched.json";

#[derive(Debug, Error, PartialEq)]
pub enum EnrichError {
    #[error("element {0} is a text region; only tables and figures are described")]
    NotDescribable(String),
    #[error("element {0} has neither content nor an image reference")]
    NothingToDescribe(String),
    #[error("provider returned an empty description for element {0}")]
    EmptyDescription(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Ocr,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedElement {
    pub element_id: String,
    pub page: u32,
    pub order: u32,
    pub bbox: [f64; 4],
    pub kind: ElementKind,
    #[serde(rename = "content")]
    pub text: String,
    #[serde(default)]
    pub image_ref: Option<String>,
    pub provenance: Provenance,
}

impl EnrichedElement {
    fn from_layout(el: &LayoutElement, text: String, provenance: Provenance) -> Self {
        Self {
            element_id: el.element_id.clone(),
            page: el.page,
            order: el.order,
            bbox: el.bbox,
            kind: el.kind,
            text,
            image_ref: el.image_ref.clone(),
            provenance,
        }
    }
}

/// On-disk `<doc_id>.enriched.json`: the interchange schema plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedDocument {
    pub doc_id: String,
    pub source_path: String,
    #[serde(default)]
    pub domain_tag: Option<String>,
    pub page_count: u32,
    #[serde(default)]
    pub config_hash: String,
    pub elements: Vec<EnrichedElement>,
}

impl EnrichedDocument {
    pub fn file_name(&self) -> String {
        format!("{}{}", self.doc_id, ENRICHED_EXTENSION)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementFailure {
    pub element_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichOutcome {
    pub document: EnrichedDocument,
    /// Elements kept with [`PLACEHOLDER`] because description failed.
    pub failures: Vec<ElementFailure>,
}

pub fn describe_user_prompt(el: &LayoutElement) -> String {
    let mut p = format!("Element kind: {}\nPage: {}\n", el.kind, el.page);
    if let Some(r) = &el.image_ref {
        p.push_str(&format!("Image reference: {r}\n"));
    }
    let content = el.content.trim();
    p.push_str("Content:\n");
    p.push_str(if content.is_empty() {
        "(no extractable text)"
    } else {
        content
    });
    p
}

pub fn describe_element(
    el: &LayoutElement,
    chat: &dyn ChatProvider,
    temperature: f32,
) -> Result<EnrichedElement, EnrichError> {
    if el.kind == ElementKind::Text {
        return Err(EnrichError::NotDescribable(el.element_id.clone()));
    }
    if el.content.trim().is_empty() && el.image_ref.is_none() {
        return Err(EnrichError::NothingToDescribe(el.element_id.clone()));
    }
    let req = ChatRequest::new(prompts::DESCRIBE, describe_user_prompt(el)).temperature(temperature);
    let resp = chat.complete(&req)?;
    let text = strip_markdown(&resp.text);
    if text.is_empty() {
        return Err(EnrichError::EmptyDescription(el.element_id.clone()));
    }
    Ok(EnrichedElement::from_layout(el, text, Provenance::Generated))
}

/// Describes every table and figure concurrently; output order and length
/// match the input. Failed descriptions become placeholders.
pub fn enrich_document(
    doc: &ParsedDocument,
    chat: &dyn ChatProvider,
    temperature: f32,
) -> EnrichOutcome {
    let results: Vec<(EnrichedElement, Option<ElementFailure>)> = doc
        .elements
        .par_iter()
        .map(|el| {
            if el.kind == ElementKind::Text {
                return (EnrichedElement::from_layout(el, el.content.clone(), Provenance::Ocr), None);
            }
            match describe_element(el, chat, temperature) {
                Ok(e) => (e, None),
                Err(e) => {
                    tracing::warn!(element = %el.element_id, error = %e, "description failed");
                    let failure = ElementFailure {
                        element_id: el.element_id.clone(),
                        error: e.to_string(),
                    };
                    (EnrichedElement::from_layout(el, PLACEHOLDER.into(), Provenance::Generated), Some(failure))
                }
            }
        })
        .collect();

    let (elements, failures): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let failures: Vec<ElementFailure> = failures.into_iter().flatten().collect();
    EnrichOutcome {
        document: EnrichedDocument {
            doc_id: doc.doc_id.clone(),
            source_path: doc.source_path.clone(),
            domain_tag: doc.domain_tag.clone(),
            page_count: doc.page_count,
            config_hash: String::new(),
            elements,
        },
        failures,
    }
}

/// Reduces markdown to a single plain paragraph: drops headings, list and
/// quote markers, fences, rules and table separators, unwraps emphasis,
/// inline code and links.
pub fn strip_markdown(s: &str) -> String {
    let mut lines = Vec::new();
    for raw in s.lines() {
        let mut line = raw.trim();
        if line.starts_with("```") || line.starts_with("~~~") || is_rule(line) || is_table_separator(line) {
            continue;
        }
        while let Some(rest) = line.strip_prefix('>') {
            line = rest.trim_start();
        }
        let hashes = line.chars().take_while(|&c| c == '#').count();
        if hashes > 0 && line[hashes..].starts_with(char::is_whitespace) {
            line = line[hashes..].trim_start();
        }
        for marker in ["- ", "* ", "+ "] {
            if let Some(rest) = line.strip_prefix(marker) {
                line = rest.trim_start();
                break;
            }
        }
        let digits = line.chars().take_while(char::is_ascii_digit).count();
        if digits > 0 {
            let rest = &line[digits..];
            if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
                line = r.trim_start();
            }
        }
        lines.push(line.replace('|', " "));
    }
    let joined = unwrap_inline(&lines.join(" "));
    joined.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_rule(line: &str) -> bool {
    let compact: String = line.chars().filter(|c| !c.is_whitespace()).collect();
    compact.len() >= 3
        && (compact.chars().all(|c| c == '-')
            || compact.chars().all(|c| c == '*')
            || compact.chars().all(|c| c == '_'))
}

fn is_table_separator(line: &str) -> bool {
    line.contains('-') && line.chars().all(|c| matches!(c, '|' | '-' | ':' | ' '))
}

fn unwrap_inline(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        // ![alt](url) and [text](url) keep only the visible text
        let link_start = if c == '!' && chars.get(i + 1) == Some(&'[') {
            Some(i + 2)
        } else if c == '[' {
            Some(i + 1)
        } else {
            None
        };
        if let Some(start) = link_start {
            if let Some(close) = chars[start..].iter().position(|&c| c == ']').map(|p| p + start) {
                if chars.get(close + 1) == Some(&'(') {
                    if let Some(end) = chars[close + 2..].iter().position(|&c| c == ')') {
                        out.extend(&chars[start..close]);
                        i = close + 2 + end + 1;
                        continue;
                    }
                }
            }
        }
        match c {
            '`' => {}
            '*' => {}
            '_' if chars.get(i + 1) == Some(&'_') => i += 1,
            '~' if chars.get(i + 1) == Some(&'~') => i += 1,
            _ => out.push(c),
        }
        i += 1;
    }
    out
}
