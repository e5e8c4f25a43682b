//! Passage ingestion, text normalization and n-gram decontamination.

mod squad;

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use squad::{load_squad, passage_id_for, QaExample, SquadFile};

/// Default shingle window, in words.
pub const DEFAULT_NGRAM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageSource {
    SquadTrain,
    External,
    EvalSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
    #[default]
    None,
}

/// A unit of source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    pub source: PassageSource,
    #[serde(default)]
    pub split: Split,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: PassageSource) -> Self {
        Passage {
            id: id.into(),
            title: String::new(),
            text: text.into(),
            source,
            split: Split::None,
        }
    }
}

/// Checks that ids are unique and texts non-empty.
pub fn validate_passages(passages: &[Passage]) -> Result<()> {
    let mut seen = HashSet::new();
    for p in passages {
        if p.text.is_empty() {
            return Err(Error::invalid(format!("passage `{}` has empty text", p.id)));
        }
        if !seen.insert(p.id.as_str()) {
            return Err(Error::invalid(format!("duplicate passage id `{}`", p.id)));
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct PassageRow {
    id: String,
    #[serde(default)]
    title: String,
    text: String,
    source: Option<PassageSource>,
    #[serde(default)]
    split: Split,
}

/// Loads passages from a SQuAD-format `.json` file or from JSONL rows of
/// `{id, text, title?, source?, split?}`. `source` fills rows that lack one.
pub fn load_passages(path: impl AsRef<Path>, source: PassageSource) -> Result<Vec<Passage>> {
    let path = path.as_ref();
    let passages = if path.extension().is_some_and(|e| e == "json") {
        load_squad(path, source, Split::None)?.0
    } else {
        crate::io::read_jsonl::<PassageRow>(path)?
            .into_iter()
            .map(|r| Passage {
                id: r.id,
                title: r.title,
                text: r.text,
                source: r.source.unwrap_or(source),
                split: r.split,
            })
            .collect()
    };
    validate_passages(&passages)?;
    Ok(passages)
}

/// Lower-cases, keeps Unicode letters and digits, and joins the resulting
/// words with single spaces.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Set of distinct normalized n-word windows of a passage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    pub passage_id: String,
    pub n: usize,
    /// Each shingle is its words joined by a single space; words never
    /// contain spaces so string equality is sequence equality.
    pub shingles: HashSet<String>,
}

fn shingles_of(text: &str, n: usize) -> HashSet<String> {
    let normalized = normalize_text(text);
    let words: Vec<&str> = normalized.split(' ').filter(|w| !w.is_empty()).collect();
    if words.len() < n {
        return HashSet::new();
    }
    words.windows(n).map(|w| w.join(" ")).collect()
}

pub fn build_shingles(passage: &Passage, n: usize) -> Result<ShingleSet> {
    if n < 1 {
        return Err(Error::invalid("shingle size must be at least 1"));
    }
    Ok(ShingleSet {
        passage_id: passage.id.clone(),
        n,
        shingles: shingles_of(&passage.text, n),
    })
}

/// Index of evaluation-side shingles. Passages are the default stream;
/// further text (questions, answers) can be added with [`EvalIndex::add_text`].
#[derive(Debug, Clone)]
pub struct EvalIndex {
    n: usize,
    shingles: HashSet<String>,
}

impl EvalIndex {
    pub fn new(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::invalid("shingle size must be at least 1"));
        }
        Ok(EvalIndex {
            n,
            shingles: HashSet::new(),
        })
    }

    pub fn from_passages<'a>(passages: impl IntoIterator<Item = &'a Passage>, n: usize) -> Result<Self> {
        let mut index = Self::new(n)?;
        for p in passages {
            index.add_text(&p.text);
        }
        Ok(index)
    }

    pub fn add_text(&mut self, text: &str) {
        self.shingles.extend(shingles_of(text, self.n));
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }

    /// True if `text` shares at least one normalized n-word window with the index.
    pub fn overlaps(&self, text: &str) -> bool {
        let normalized = normalize_text(text);
        let words: Vec<&str> = normalized.split(' ').filter(|w| !w.is_empty()).collect();
        words.len() >= self.n && words.windows(self.n).any(|w| self.shingles.contains(&w.join(" ")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub n: usize,
    pub total: usize,
    pub dropped: usize,
    pub dropped_fraction: f64,
}

impl OverlapReport {
    fn new(n: usize, total: usize, dropped: usize) -> Self {
        let dropped_fraction = if total == 0 { 0.0 } else { dropped as f64 / total as f64 };
        OverlapReport {
            n,
            total,
            dropped,
            dropped_fraction,
        }
    }

    /// Combine reports from disjoint partitions of the candidate set.
    pub fn merge(self, other: OverlapReport) -> Result<OverlapReport> {
        if self.n != other.n {
            return Err(Error::invalid("cannot merge reports with different n"));
        }
        Ok(OverlapReport::new(self.n, self.total + other.total, self.dropped + other.dropped))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Decontaminated {
    pub kept: Vec<Passage>,
    pub dropped: Vec<Passage>,
    pub report: OverlapReport,
}

/// Drops every candidate sharing a normalized n-word window with any eval
/// passage. Candidate order is preserved within `kept` and `dropped`.
pub fn decontaminate(candidates: &[Passage], eval_corpora: &[Passage], n: usize) -> Result<Decontaminated> {
    let index = EvalIndex::from_passages(eval_corpora, n)?;
    Ok(decontaminate_with(candidates, &index))
}

pub fn decontaminate_with(candidates: &[Passage], index: &EvalIndex) -> Decontaminated {
    let flags: Vec<bool> = candidates.par_iter().map(|p| index.overlaps(&p.text)).collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (p, hit) in candidates.iter().zip(flags) {
        if hit {
            dropped.push(p.clone());
        } else {
            kept.push(p.clone());
        }
    }
    let report = OverlapReport::new(index.n(), candidates.len(), dropped.len());
    Decontaminated { kept, dropped, report }
}
