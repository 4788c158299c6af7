//! Layout-analysis interchange files.
//!
//! A `.layout.json` file holds one document as an ordered stream of page
//! regions (text, table, figure) produced by an external layout/OCR tool.
//! Reading order comes from the `order` field and is never re-derived from
//! coordinates; bounding boxes are carried along as provenance only.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LAYOUT_EXTENSION: &str = ".layout.json";

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("invalid geometry for element {element_id}: bbox {bbox:?}")]
    InvalidGeometry { element_id: String, bbox: [f64; 4] },
    #[error("duplicate order index {order} (elements {first} and {second})")]
    DuplicateOrder {
        order: u32,
        first: String,
        second: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Text,
    Table,
    Figure,
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElementKind::Text => "text",
            ElementKind::Table => "table",
            ElementKind::Figure => "figure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutElement {
    pub element_id: String,
    /// Owning document; filled from the enclosing file, not serialized per element.
    #[serde(skip)]
    pub doc_id: String,
    pub page: u32,
    pub order: u32,
    pub bbox: [f64; 4],
    pub kind: ElementKind,
    #[serde(default)]
    pub content: String,
    #[serde(default)]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedDocument {
    pub doc_id: String,
    pub source_path: String,
    #[serde(default)]
    pub domain_tag: Option<String>,
    pub page_count: u32,
    pub elements: Vec<LayoutElement>,
}

impl ParsedDocument {
    /// Checks every document and element invariant, sorting elements by
    /// reading order first. Invalid input is rejected, never repaired.
    pub fn validated(mut self) -> Result<Self, IngestError> {
        if !is_safe_id(&self.doc_id) {
            return Err(IngestError::MalformedInput(format!(
                "doc_id {:?} must be non-empty and use only [A-Za-z0-9._-]",
                self.doc_id
            )));
        }
        if self.page_count == 0 {
            return Err(IngestError::MalformedInput("page_count must be >= 1".into()));
        }

        let mut ids = HashSet::new();
        for el in &mut self.elements {
            el.doc_id = self.doc_id.clone();
            if el.element_id.trim().is_empty() {
                return Err(IngestError::MalformedInput("empty element_id".into()));
            }
            if !ids.insert(el.element_id.clone()) {
                return Err(IngestError::MalformedInput(format!(
                    "duplicate element_id {}",
                    el.element_id
                )));
            }
            if el.page == 0 || el.page > self.page_count {
                return Err(IngestError::MalformedInput(format!(
                    "element {} on page {} outside 1..={}",
                    el.element_id, el.page, self.page_count
                )));
            }
            let [x0, y0, x1, y1] = el.bbox;
            if !el.bbox.iter().all(|v| v.is_finite()) || x0 >= x1 || y0 >= y1 {
                return Err(IngestError::InvalidGeometry {
                    element_id: el.element_id.clone(),
                    bbox: el.bbox,
                });
            }
            if el.kind == ElementKind::Text && el.content.trim().is_empty() {
                return Err(IngestError::MalformedInput(format!(
                    "text element {} has empty content",
                    el.element_id
                )));
            }
        }

        self.elements.sort_by_key(|e| e.order);
        for pair in self.elements.windows(2) {
            if pair[0].order == pair[1].order {
                return Err(IngestError::DuplicateOrder {
                    order: pair[0].order,
                    first: pair[0].element_id.clone(),
                    second: pair[1].element_id.clone(),
                });
            }
        }
        if let Some((i, el)) = self
            .elements
            .iter()
            .enumerate()
            .find(|(i, e)| e.order as usize != *i)
        {
            return Err(IngestError::MalformedInput(format!(
                "order indices are not dense: expected {i}, found {} on element {}",
                el.order, el.element_id
            )));
        }
        Ok(self)
    }

    /// Canonical form: pretty JSON, elements in reading order, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document serializes");
        s.push('\n');
        s
    }

    pub fn file_name(&self) -> String {
        format!("{}{}", self.doc_id, LAYOUT_EXTENSION)
    }
}

/// Identifiers that end up in file names.
pub(crate) fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

pub fn parse_layout_file(bytes: &[u8]) -> Result<ParsedDocument, IngestError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| IngestError::MalformedInput(format!("not UTF-8: {e}")))?;
    let doc: ParsedDocument = serde_json::from_str(text)
        .map_err(|e| IngestError::MalformedInput(e.to_string()))?;
    doc.validated()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub text: usize,
    pub table: usize,
    pub figure: usize,
}

impl KindCounts {
    fn bump(&mut self, kind: ElementKind) {
        match kind {
            ElementKind::Text => self.text += 1,
            ElementKind::Table => self.table += 1,
            ElementKind::Figure => self.figure += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.text + self.table + self.figure
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCounts {
    pub documents: usize,
    pub pages: usize,
    pub elements: KindCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub documents: usize,
    pub pages: usize,
    pub elements: KindCounts,
    /// Keyed by domain tag; untagged documents go under `"untagged"`.
    pub per_domain: BTreeMap<String, DomainCounts>,
}

pub fn validate_corpus(documents: &[ParsedDocument]) -> CorpusReport {
    let mut report = CorpusReport::default();
    for doc in documents {
        let tag = doc.domain_tag.clone().unwrap_or_else(|| "untagged".into());
        let domain = report.per_domain.entry(tag).or_default();
        domain.documents += 1;
        domain.pages += doc.page_count as usize;
        report.documents += 1;
        report.pages += doc.page_count as usize;
        for el in &doc.elements {
            domain.elements.bump(el.kind);
            report.elements.bump(el.kind);
        }
    }
    report
}
