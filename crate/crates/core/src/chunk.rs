//! Hierarchical chunk tree.
//!
//! Leaves are contiguous, token-bounded slices of the enriched document text
//! and partition it exactly: concatenating leaf texts in order gives back
//! [`document_text`]. Internal nodes summarize consecutive windows of
//! `fan_out` children; the single top node summarizes the whole document.
//!
//! Node ids are `{doc_id}:L{level:02}:N{position:05}`, so lexicographic order
//! is (level, position) order within a document.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrich::EnrichedElement;
use crate::gateway::{ChatProvider, ChatRequest, ProviderError};
use crate::prompts;

pub const TREE_EXTENSION: &str = ".tree.json";
const ELEMENT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error, PartialEq)]
pub enum ChunkError {
    #[error("document has no elements")]
    EmptyDocument,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("element {0} has no text")]
    EmptyElement(String),
    #[error("summary for node {node_id} failed: {source}")]
    Summary {
        node_id: String,
        #[source]
        source: ProviderError,
    },
    #[error("provider returned an empty summary for node {0}")]
    EmptySummary(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
}

/// Whitespace token count. This is the unit of every size in the tree.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn node_id(doc_id: &str, level: u32, position: u32) -> String {
    format!("{doc_id}:L{level:02}:N{position:05}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkNode {
    pub node_id: String,
    pub doc_id: String,
    pub level: u32,
    /// Index among the nodes of the same level, in document order.
    pub position: u32,
    pub text: String,
    pub token_count: usize,
    #[serde(default)]
    pub child_ids: Vec<String>,
    #[serde(default)]
    pub source_element_ids: Vec<String>,
}

impl ChunkNode {
    pub fn is_leaf(&self) -> bool {
        self.level == 0
    }
}

/// The exact text the leaves partition: each element's text followed by a
/// blank-line separator.
pub fn document_text(elements: &[EnrichedElement]) -> String {
    elements
        .iter()
        .map(|e| format!("{}{ELEMENT_SEPARATOR}", e.text))
        .collect()
}

struct LeafBuilder {
    doc_id: String,
    leaves: Vec<ChunkNode>,
    text: String,
    tokens: usize,
    element_ids: Vec<String>,
}

impl LeafBuilder {
    fn flush(&mut self) {
        if self.text.is_empty() {
            return;
        }
        let position = self.leaves.len() as u32;
        self.leaves.push(ChunkNode {
            node_id: node_id(&self.doc_id, 0, position),
            doc_id: self.doc_id.clone(),
            level: 0,
            position,
            text: std::mem::take(&mut self.text),
            token_count: std::mem::take(&mut self.tokens),
            child_ids: Vec::new(),
            source_element_ids: std::mem::take(&mut self.element_ids),
        });
    }

    fn push(&mut self, segment: &str, tokens: usize, element_id: &str) {
        self.text.push_str(segment);
        self.tokens += tokens;
        if self.element_ids.last().map(String::as_str) != Some(element_id) {
            self.element_ids.push(element_id.to_string());
        }
    }
}

/// Byte offset where each whitespace-delimited token starts.
fn token_starts(text: &str) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            starts.push(i);
            in_token = true;
        }
    }
    starts
}

/// Greedy packing of consecutive element texts into leaves of at most
/// `target_tokens`. An element larger than the target is cut at whitespace
/// into pieces of `target_tokens` (the last one shorter), each its own leaf.
pub fn build_leaves(
    doc_id: &str,
    elements: &[EnrichedElement],
    target_tokens: usize,
) -> Result<Vec<ChunkNode>, ChunkError> {
    if elements.is_empty() {
        return Err(ChunkError::EmptyDocument);
    }
    if target_tokens == 0 {
        return Err(ChunkError::InvalidParameter("target_tokens must be > 0".into()));
    }
    let mut b = LeafBuilder {
        doc_id: doc_id.to_string(),
        leaves: Vec::new(),
        text: String::new(),
        tokens: 0,
        element_ids: Vec::new(),
    };
    for el in elements {
        let segment = format!("{}{ELEMENT_SEPARATOR}", el.text);
        let tokens = token_count(&segment);
        if tokens == 0 {
            return Err(ChunkError::EmptyElement(el.element_id.clone()));
        }
        if tokens > target_tokens {
            b.flush();
            let starts = token_starts(&segment);
            let cuts: Vec<usize> = starts.iter().step_by(target_tokens).skip(1).copied().collect();
            let mut from = 0;
            for (i, &cut) in cuts.iter().chain(std::iter::once(&segment.len())).enumerate() {
                let n = if i < cuts.len() {
                    target_tokens
                } else {
                    tokens - target_tokens * cuts.len()
                };
                b.push(&segment[from..cut], n, &el.element_id);
                b.flush();
                from = cut;
            }
        } else {
            if b.tokens + tokens > target_tokens {
                b.flush();
            }
            b.push(&segment, tokens, &el.element_id);
        }
    }
    b.flush();
    Ok(b.leaves)
}

pub fn summary_user_prompt(children: &[&ChunkNode]) -> String {
    let joined = children
        .iter()
        .map(|c| c.text.trim())
        .collect::<Vec<_>>()
        .join("\n\n");
    format!("Summarize the following text.\n\nText:\n{joined}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkTree {
    pub doc_id: String,
    pub root_id: String,
    pub height: u32,
    pub nodes: BTreeMap<String, ChunkNode>,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    doc_id: String,
    root_id: String,
    height: u32,
    #[serde(default)]
    config_hash: String,
    nodes: Vec<ChunkNode>,
}

/// Number of nodes in each level above the leaves for `leaves` leaves.
pub fn internal_level_sizes(leaves: usize, fan_out: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut n = leaves;
    while n > 1 {
        n = n.div_ceil(fan_out);
        sizes.push(n);
    }
    sizes
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub fan_out: usize,
    pub temperature: f32,
    pub summary_max_tokens: u32,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            fan_out: 5,
            temperature: 0.2,
            summary_max_tokens: 400,
        }
    }
}

/// Summarizes consecutive windows of `fan_out` nodes, level by level, until
/// one node remains. Any failed summary aborts the build.
pub fn build_tree(
    leaves: Vec<ChunkNode>,
    params: TreeParams,
    chat: &dyn ChatProvider,
) -> Result<ChunkTree, ChunkError> {
    if leaves.is_empty() {
        return Err(ChunkError::EmptyDocument);
    }
    if params.fan_out < 2 {
        return Err(ChunkError::InvalidParameter("fan_out must be >= 2".into()));
    }
    let doc_id = leaves[0].doc_id.clone();
    let mut nodes: BTreeMap<String, ChunkNode> = BTreeMap::new();
    let mut current = leaves;
    let mut level = 0u32;
    while current.len() > 1 {
        level += 1;
        let parents: Vec<ChunkNode> = current
            .par_chunks(params.fan_out)
            .enumerate()
            .map(|(position, group)| {
                let id = node_id(&doc_id, level, position as u32);
                let children: Vec<&ChunkNode> = group.iter().collect();
                let req = ChatRequest::new(prompts::SUMMARIZE, summary_user_prompt(&children))
                    .temperature(params.temperature)
                    .max_tokens(params.summary_max_tokens);
                let resp = chat.complete(&req).map_err(|source| ChunkError::Summary {
                    node_id: id.clone(),
                    source,
                })?;
                let text = resp.text.trim().to_string();
                let tokens = token_count(&text);
                if tokens == 0 {
                    return Err(ChunkError::EmptySummary(id));
                }
                Ok(ChunkNode {
                    node_id: id,
                    doc_id: doc_id.clone(),
                    level,
                    position: position as u32,
                    text,
                    token_count: tokens,
                    child_ids: group.iter().map(|c| c.node_id.clone()).collect(),
                    source_element_ids: Vec::new(),
                })
            })
            .collect::<Result<_, _>>()?;
        nodes.extend(current.into_iter().map(|n| (n.node_id.clone(), n)));
        current = parents;
    }
    let root = current.pop().expect("one node remains");
    let tree = ChunkTree {
        doc_id,
        root_id: root.node_id.clone(),
        height: level,
        nodes: {
            nodes.insert(root.node_id.clone(), root);
            nodes
        },
    };
    tree.validate()?;
    Ok(tree)
}

impl ChunkTree {
    pub fn root(&self) -> &ChunkNode {
        &self.nodes[&self.root_id]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &ChunkNode> {
        self.nodes.values().filter(|n| n.is_leaf())
    }

    pub fn leaf_text(&self) -> String {
        self.leaves().map(|n| n.text.as_str()).collect()
    }

    /// Root first, then each level downwards, left to right.
    pub fn top_down(&self) -> Vec<&ChunkNode> {
        let mut v: Vec<&ChunkNode> = self.nodes.values().collect();
        v.sort_by(|a, b| b.level.cmp(&a.level).then(a.position.cmp(&b.position)));
        v
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        let bad = |m: String| Err(ChunkError::InvalidTree(m));
        let Some(root) = self.nodes.get(&self.root_id) else {
            return bad(format!("root {} missing", self.root_id));
        };
        if root.level != self.height {
            return bad(format!("height {} but root level {}", self.height, root.level));
        }
        let mut parent_of: BTreeMap<&str, &str> = BTreeMap::new();
        for (id, node) in &self.nodes {
            if id != &node.node_id {
                return bad(format!("key {id} holds node {}", node.node_id));
            }
            if node.doc_id != self.doc_id {
                return bad(format!("node {id} belongs to {}", node.doc_id));
            }
            if node.token_count != token_count(&node.text) || node.token_count == 0 {
                return bad(format!("node {id} has inconsistent token_count"));
            }
            if node.is_leaf() != node.child_ids.is_empty() {
                return bad(format!("node {id}: level 0 iff no children"));
            }
            let mut max_child = None;
            for c in &node.child_ids {
                let Some(child) = self.nodes.get(c) else {
                    return bad(format!("node {id} references missing child {c}"));
                };
                if let Some(p) = parent_of.insert(c.as_str(), id.as_str()) {
                    return bad(format!("node {c} has two parents ({p}, {id})"));
                }
                max_child = max_child.max(Some(child.level));
            }
            if let Some(m) = max_child {
                if node.level != m + 1 {
                    return bad(format!("node {id} level {} but max child level {m}", node.level));
                }
            }
        }
        let roots: Vec<&String> = self
            .nodes
            .keys()
            .filter(|id| !parent_of.contains_key(id.as_str()))
            .collect();
        if roots != [&self.root_id] {
            return bad(format!("expected single root {}, found {roots:?}", self.root_id));
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.root_id.as_str()];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                return bad(format!("cycle through {id}"));
            }
            stack.extend(self.nodes[id].child_ids.iter().map(String::as_str));
        }
        if seen.len() != self.nodes.len() {
            return bad("unreachable nodes".into());
        }
        Ok(())
    }

    pub fn to_json(&self, config_hash: &str) -> String {
        let file = TreeFile {
            doc_id: self.doc_id.clone(),
            root_id: self.root_id.clone(),
            height: self.height,
            config_hash: config_hash.to_string(),
            nodes: self.nodes.values().cloned().collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("tree serializes");
        s.push('\n');
        s
    }

    /// Parses a tree file; returns the tree and the config hash it carries.
    pub fn from_json(json: &str) -> Result<(ChunkTree, String), ChunkError> {
        let file: TreeFile =
            serde_json::from_str(json).map_err(|e| ChunkError::InvalidTree(e.to_string()))?;
        let mut nodes = BTreeMap::new();
        for n in file.nodes {
            if let Some(dup) = nodes.insert(n.node_id.clone(), n) {
                return Err(ChunkError::InvalidTree(format!("duplicate node {}", dup.node_id)));
            }
        }
        let tree = ChunkTree {
            doc_id: file.doc_id,
            root_id: file.root_id,
            height: file.height,
            nodes,
        };
        tree.validate()?;
        Ok((tree, file.config_hash))
    }

    pub fn file_name(&self) -> String {
        format!("{}{}", self.doc_id, TREE_EXTENSION)
    }
}
