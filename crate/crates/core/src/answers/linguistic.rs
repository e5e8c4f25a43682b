//! Candidate extraction from linguistic annotations (POS, entities, chunks,
//! clauses). The tagging itself is provided by a [`LinguisticAnnotator`].

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{AnswerCandidate, AnswerSpan, SelectionMethod, SourceDataset};
use crate::corpus::Passage;
use crate::error::{Error, Result};

/// One token with its universal POS tag (`NOUN`, `PROPN`, `ADJ`, `NUM`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTag {
    pub start: usize,
    pub end: usize,
    pub pos: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelledSpan {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub label: String,
}

/// Annotator output for one passage. Offsets are char offsets into the
/// passage text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(default)]
    pub tokens: Vec<TokenTag>,
    #[serde(default)]
    pub entities: Vec<LabelledSpan>,
    #[serde(default)]
    pub noun_chunks: Vec<LabelledSpan>,
    #[serde(default)]
    pub clauses: Vec<LabelledSpan>,
}

pub trait LinguisticAnnotator: Send + Sync {
    fn annotate(&self, passage: &Passage) -> Result<Annotation>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinguisticMode {
    NounChunks,
    NamedEntities,
    PosExtended,
}

impl LinguisticMode {
    pub fn method(self) -> SelectionMethod {
        match self {
            LinguisticMode::NounChunks => SelectionMethod::NounChunks,
            LinguisticMode::NamedEntities => SelectionMethod::NamedEntities,
            LinguisticMode::PosExtended => SelectionMethod::PosExtended,
        }
    }
}

fn pos_spans<'a>(ann: &'a Annotation, tag: &'a str) -> impl Iterator<Item = (usize, usize)> + 'a {
    ann.tokens.iter().filter(move |t| t.pos == tag).map(|t| (t.start, t.end))
}

fn span_list(spans: &[LabelledSpan]) -> impl Iterator<Item = (usize, usize)> + '_ {
    spans.iter().map(|s| (s.start, s.end))
}

/// Extracts candidates for `mode`. The extended mode is the union of named
/// entities, adjectives, noun chunks, numbers, distinct proper nouns and
/// clauses, deduplicated by offsets in that order.
pub fn select_linguistic_candidates(
    passage: &Passage,
    annotator: &dyn LinguisticAnnotator,
    mode: LinguisticMode,
) -> Result<Vec<AnswerCandidate>> {
    let ann = annotator
        .annotate(passage)
        .map_err(|e| Error::backend(format!("annotator on passage `{}`", passage.id), e))?;

    let offsets: Vec<(usize, usize)> = match mode {
        LinguisticMode::NamedEntities => span_list(&ann.entities).collect(),
        LinguisticMode::NounChunks => span_list(&ann.noun_chunks).collect(),
        LinguisticMode::PosExtended => {
            let mut seen_propn = HashSet::new();
            let propn: Vec<(usize, usize)> = pos_spans(&ann, "PROPN")
                .filter(|&(s, e)| seen_propn.insert(crate::text::char_slice(&passage.text, s, e)))
                .collect();
            span_list(&ann.entities)
                .chain(pos_spans(&ann, "ADJ"))
                .chain(span_list(&ann.noun_chunks))
                .chain(pos_spans(&ann, "NUM"))
                .chain(propn)
                .chain(span_list(&ann.clauses))
                .collect()
        }
    };

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (s, e) in offsets {
        if !seen.insert((s, e)) {
            continue;
        }
        let span = AnswerSpan::from_offsets(passage, s, e, SourceDataset::Synthetic)?;
        out.push(AnswerCandidate {
            span,
            confidence: 1.0,
            method: mode.method(),
        });
    }
    Ok(out)
}
