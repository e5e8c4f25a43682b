//! Answer-candidate datasets and selection methods.

mod align;
mod evaluate;
mod linguistic;
pub mod sal;
mod span_extraction;

use serde::{Deserialize, Serialize};

use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::text::{char_len, char_slice, find_chars};

pub use align::{
    align_answer_sets, answers_by_passage, overlap_stats, AlignedAnswerSet, AlignedRecord, AnswerSource,
    OverlapStats, WireAnswer,
};
pub use evaluate::{evaluate_candidates, Prf};
pub use linguistic::{
    select_linguistic_candidates, Annotation, LabelledSpan, LinguisticAnnotator, LinguisticMode, TokenTag,
};
pub use sal::{select_sal_candidates, Encoding, TokenEncoder};
pub use span_extraction::{
    answer_question, rank_spans, select_span_extraction_candidates, RankedSpan, SpanDistributions, SpanPredictor,
};

/// Default maximum answer length, in tokens.
pub const DEFAULT_MAX_ANSWER_LEN: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceDataset {
    Squad,
    AqaBidaf,
    AqaBert,
    AqaRoberta,
    Synthetic,
}

/// A character-addressed span of a passage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub passage_id: String,
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
    pub source_dataset: SourceDataset,
}

impl AnswerSpan {
    pub fn from_offsets(passage: &Passage, start: usize, end: usize, source: SourceDataset) -> Result<Self> {
        let mismatch = |detail: String| Error::SpanMismatch {
            passage_id: passage.id.clone(),
            detail,
        };
        if start >= end {
            return Err(mismatch(format!("empty or reversed span [{start}, {end})")));
        }
        let text = char_slice(&passage.text, start, end)
            .ok_or_else(|| mismatch(format!("span [{start}, {end}) exceeds passage length")))?;
        Ok(AnswerSpan {
            passage_id: passage.id.clone(),
            char_start: start,
            char_end: end,
            text: text.to_string(),
            source_dataset: source,
        })
    }

    /// Span for `start` with the given expected text; fails if the passage
    /// slice differs.
    pub fn with_text(passage: &Passage, start: usize, text: &str, source: SourceDataset) -> Result<Self> {
        let span = Self::from_offsets(passage, start, start + char_len(text), source)?;
        if span.text != text {
            return Err(Error::SpanMismatch {
                passage_id: passage.id.clone(),
                detail: format!("expected {text:?} at {start}, found {:?}", span.text),
            });
        }
        Ok(span)
    }

    /// First occurrence of `text` in the passage.
    pub fn locate(passage: &Passage, text: &str, source: SourceDataset) -> Option<Self> {
        let start = find_chars(&passage.text, text)?;
        Self::from_offsets(passage, start, start + char_len(text), source).ok()
    }

    pub fn validate(&self, passage: &Passage) -> Result<()> {
        let ok = self.passage_id == passage.id
            && self.char_start < self.char_end
            && char_slice(&passage.text, self.char_start, self.char_end) == Some(self.text.as_str());
        if ok {
            Ok(())
        } else {
            Err(Error::SpanMismatch {
                passage_id: passage.id.clone(),
                detail: format!(
                    "span {:?} [{}, {}) does not match passage `{}`",
                    self.text, self.char_start, self.char_end, self.passage_id
                ),
            })
        }
    }

    pub fn offsets(&self) -> (usize, usize) {
        (self.char_start, self.char_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    PosExtended,
    NounChunks,
    NamedEntities,
    SpanExtraction,
    Generative,
    Sal,
}

impl SelectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMethod::PosExtended => "pos_extended",
            SelectionMethod::NounChunks => "noun_chunks",
            SelectionMethod::NamedEntities => "named_entities",
            SelectionMethod::SpanExtraction => "span_extraction",
            SelectionMethod::Generative => "generative",
            SelectionMethod::Sal => "sal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub span: AnswerSpan,
    /// In `[0, 1]`; 1.0 for methods without calibrated scores.
    pub confidence: f64,
    pub method: SelectionMethod,
}

/// Candidate output JSONL record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub passage_id: String,
    pub method: SelectionMethod,
    pub candidates: Vec<CandidateEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub confidence: f64,
}

impl CandidateRecord {
    pub fn new(passage_id: &str, method: SelectionMethod, candidates: &[AnswerCandidate]) -> Self {
        CandidateRecord {
            passage_id: passage_id.to_string(),
            method,
            candidates: candidates
                .iter()
                .map(|c| CandidateEntry {
                    start: c.span.char_start,
                    end: c.span.char_end,
                    text: c.span.text.clone(),
                    confidence: c.confidence,
                })
                .collect(),
        }
    }
}
