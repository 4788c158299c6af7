//! Prompt texts shipped with the pipeline.
//!
//! Every prompt lives in `prompts/` as a plain text file and is compiled in
//! with `include_str!`, so the bytes sent to a provider are exactly the bytes
//! checked into the repository. The bank manifest records [`prompt_hashes`]
//! so two banks can be compared for prompt drift.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

/// System prompt for turning tables and figures into a descriptive paragraph.
pub const DESCRIBE: &str = include_str!("../prompts/describe.txt");

/// Chain-of-thought QA generation prompt (criteria for RAG-style questions).
pub const QA_GENERATION: &str = include_str!("../prompts/qa_generation.txt");

/// Instruction block sent as the system prompt of every QA generation call.
pub const QA_GENERATION_SYSTEM: &str = include_str!("../prompts/qa_generation_system.txt");

/// Worked example appended to the QA generation prompt.
pub const QA_FEWSHOT: &str = include_str!("../prompts/qa_fewshot.txt");

/// System prompt for internal-node summaries of the chunk tree.
pub const SUMMARIZE: &str = include_str!("../prompts/summarize.txt");

/// System prompt for per-node keyword extraction.
pub const KEYWORDS: &str = include_str!("../prompts/keywords.txt");

/// Fallback answer generation. Contains a `{not_answerable}` placeholder.
pub const GENERATION_TEMPLATE: &str = include_str!("../prompts/generation.txt");

/// Judge rubric. Contains `{dimension}` and `{definition}` placeholders.
pub const JUDGE_TEMPLATE: &str = include_str!("../prompts/judge.txt");

pub fn generation_system_prompt(not_answerable: &str) -> String {
    GENERATION_TEMPLATE.replace("{not_answerable}", not_answerable)
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Name → SHA-256 of every shipped prompt.
pub fn prompt_hashes() -> BTreeMap<String, String> {
    [
        ("describe", DESCRIBE),
        ("qa_generation", QA_GENERATION),
        ("qa_generation_system", QA_GENERATION_SYSTEM),
        ("qa_fewshot", QA_FEWSHOT),
        ("summarize", SUMMARIZE),
        ("keywords", KEYWORDS),
        ("generation", GENERATION_TEMPLATE),
        ("judge", JUDGE_TEMPLATE),
    ]
    .into_iter()
    .map(|(name, text)| (name.to_string(), sha256_hex(text)))
    .collect()
}
