//! Rubric-prompted LLM judging of generated QA pairs, one call per dimension.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatProvider, ChatRequest, ProviderError};
use crate::prompts;
use crate::qagen::QAPair;

#[derive(Debug, Error, PartialEq)]
pub enum JudgeError {
    #[error("context is empty")]
    EmptyContext,
    #[error("{dimension}: no score in 1..=5 in {output:?}")]
    Unparseable { dimension: &'static str, output: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Cqar,
    Answerability,
    Clarity,
    Fluency,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Cqar,
        Dimension::Answerability,
        Dimension::Clarity,
        Dimension::Fluency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Cqar => "Context-Question-Answer Relevance (CQAR)",
            Dimension::Answerability => "Answerability",
            Dimension::Clarity => "Clarity",
            Dimension::Fluency => "Fluency",
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            Dimension::Cqar => {
                "assesses how well the generated question and answer align contextually with the source document"
            }
            Dimension::Answerability => {
                "measures the extent to which the generated question is answerable given the provided context"
            }
            Dimension::Clarity => "evaluates the preciseness and unambiguity of the generated QAs",
            Dimension::Fluency => "reflects the grammatical correctness and naturalness of the generated text",
        }
    }

    pub fn system_prompt(self) -> String {
        prompts::JUDGE_TEMPLATE
            .replace("{dimension}", self.name())
            .replace("{definition}", self.definition())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QAQualityScores {
    pub cqar: f64,
    pub answerability: f64,
    pub clarity: f64,
    pub fluency: f64,
}

impl QAQualityScores {
    fn set(&mut self, d: Dimension, v: f64) {
        match d {
            Dimension::Cqar => self.cqar = v,
            Dimension::Answerability => self.answerability = v,
            Dimension::Clarity => self.clarity = v,
            Dimension::Fluency => self.fluency = v,
        }
    }

    /// Per-dimension arithmetic mean; `None` for an empty sample.
    pub fn mean(scores: &[QAQualityScores]) -> Option<QAQualityScores> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        let sum = |f: fn(&QAQualityScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
        Some(QAQualityScores {
            cqar: sum(|s| s.cqar),
            answerability: sum(|s| s.answerability),
            clarity: sum(|s| s.clarity),
            fluency: sum(|s| s.fluency),
        })
    }
}

pub fn judge_user_prompt(qa: &QAPair, context: &str) -> String {
    format!(
        "Context:\n{context}\n\nQuestion: {}\nAnswer: {}",
        qa.question, qa.answer
    )
}

/// Accepts output containing exactly one integer token, which must be 1..=5.
pub fn parse_score(output: &str) -> Option<u8> {
    let mut numbers = output
        .split(|c: char| !c.is_ascii_alphanumeric() && c != '.')
        .map(|t| t.trim_end_matches('.'))
        .filter(|t| !t.is_empty() && t.chars().all(|c| c.is_ascii_digit() || c == '.'));
    let first = numbers.next()?;
    if numbers.next().is_some() {
        return None;
    }
    match first.parse::<u8>() {
        Ok(v @ 1..=5) => Some(v),
        _ => None,
    }
}

/// Scores one QA pair on all four dimensions. An unparseable or out-of-range
/// reply is retried once before failing.
pub fn judge_qa_quality(
    qa: &QAPair,
    context: &str,
    chat: &dyn ChatProvider,
    temperature: f32,
) -> Result<QAQualityScores, JudgeError> {
    if context.trim().is_empty() {
        return Err(JudgeError::EmptyContext);
    }
    let user = judge_user_prompt(qa, context);
    let mut scores = QAQualityScores {
        cqar: 0.0,
        answerability: 0.0,
        clarity: 0.0,
        fluency: 0.0,
    };
    for d in Dimension::ALL {
        let req = ChatRequest::new(d.system_prompt(), user.clone())
            .temperature(temperature)
            .max_tokens(8);
        let mut last = String::new();
        let mut score = None;
        for _ in 0..2 {
            last = chat.complete(&req)?.text;
            score = parse_score(&last);
            if score.is_some() {
                break;
            }
        }
        let v = score.ok_or(JudgeError::Unparseable {
            dimension: d.name(),
            output: last,
        })?;
        scores.set(d, v as f64);
    }
    Ok(scores)
}
