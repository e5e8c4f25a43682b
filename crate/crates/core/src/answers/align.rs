use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{AnswerSpan, SourceDataset};
use crate::corpus::{Passage, QaExample, Split};
use crate::error::{Error, Result};

/// Annotated answers from one dataset, keyed by passage id. Each answer is
/// `(char_start, text)`.
#[derive(Debug, Clone, Default)]
pub struct AnswerSource {
    pub dataset: Option<SourceDataset>,
    pub answers: BTreeMap<String, Vec<(usize, String)>>,
}

impl AnswerSource {
    pub fn new(dataset: SourceDataset, answers: BTreeMap<String, Vec<(usize, String)>>) -> Self {
        AnswerSource {
            dataset: Some(dataset),
            answers,
        }
    }
}

/// Groups QA example answers by passage.
pub fn answers_by_passage(examples: &[QaExample]) -> BTreeMap<String, Vec<(usize, String)>> {
    let mut out: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for ex in examples {
        out.entry(ex.passage_id.clone()).or_default().extend(ex.answers.iter().cloned());
    }
    out
}

/// All distinct annotated answers for one passage, sorted by offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedAnswerSet {
    pub passage: Passage,
    pub answers: Vec<AnswerSpan>,
}

/// Aligned dataset JSONL record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedRecord {
    pub passage_id: String,
    pub split: Split,
    pub text: String,
    pub answers: Vec<WireAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireAnswer {
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub source_dataset: SourceDataset,
}

impl AlignedAnswerSet {
    pub fn to_record(&self, split: Split) -> AlignedRecord {
        AlignedRecord {
            passage_id: self.passage.id.clone(),
            split,
            text: self.passage.text.clone(),
            answers: self
                .answers
                .iter()
                .map(|a| WireAnswer {
                    start: a.char_start,
                    end: a.char_end,
                    text: a.text.clone(),
                    source_dataset: a.source_dataset,
                })
                .collect(),
        }
    }
}

/// Merges answers from several datasets over shared passages, deduplicating
/// by offsets (the first dataset to contribute a span owns it), and groups
/// the resulting sets by split. Only passages with at least one answer
/// appear in the output.
pub fn align_answer_sets(
    passages: &[Passage],
    datasets: &[AnswerSource],
    passage_splits: &HashMap<String, Split>,
) -> Result<BTreeMap<Split, Vec<AlignedAnswerSet>>> {
    let by_id: HashMap<&str, &Passage> = passages.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut merged: BTreeMap<&str, BTreeMap<(usize, usize), AnswerSpan>> = BTreeMap::new();
    for source in datasets {
        let dataset = source.dataset.unwrap_or(SourceDataset::Squad);
        for (pid, answers) in &source.answers {
            let passage = by_id
                .get(pid.as_str())
                .ok_or_else(|| Error::UnknownPassage(pid.clone()))?;
            let slot = merged.entry(passage.id.as_str()).or_default();
            for (start, text) in answers {
                let span = AnswerSpan::with_text(passage, *start, text, dataset)?;
                slot.entry(span.offsets()).or_insert(span);
            }
        }
    }
    let mut out: BTreeMap<Split, Vec<AlignedAnswerSet>> = BTreeMap::new();
    for (pid, spans) in merged {
        let split = *passage_splits
            .get(pid)
            .ok_or_else(|| Error::invalid(format!("passage `{pid}` has no split assignment")))?;
        let passage = (*by_id[pid]).clone();
        out.entry(split).or_default().push(AlignedAnswerSet {
            passage: Passage { split, ..passage },
            answers: spans.into_values().collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub answers_per_passage: f64,
    pub pct_overlapping_answers: f64,
    pub pct_passages_with_overlap: f64,
}

/// Answer-overlap statistics. An answer overlaps if its character interval
/// intersects another answer's interval in the same passage.
pub fn overlap_stats(sets: &[AlignedAnswerSet]) -> Result<OverlapStats> {
    if sets.is_empty() {
        return Err(Error::Empty("no answer sets"));
    }
    let mut total = 0usize;
    let mut overlapping = 0usize;
    let mut passages_with = 0usize;
    for set in sets {
        // Sweep over spans sorted by start; a span overlaps iff it starts
        // before the furthest end seen so far, or a later span starts before
        // its own end.
        let mut spans: Vec<(usize, usize)> = set.answers.iter().map(AnswerSpan::offsets).collect();
        spans.sort_unstable();
        let mut flags = vec![false; spans.len()];
        let mut reach: Option<(usize, usize)> = None; // (end, index)
        for (i, &(s, e)) in spans.iter().enumerate() {
            if let Some((reach_end, j)) = reach {
                if s < reach_end {
                    flags[i] = true;
                    flags[j] = true;
                }
            }
            if reach.is_none_or(|(re, _)| e > re) {
                reach = Some((e, i));
            }
        }
        let n = flags.iter().filter(|&&f| f).count();
        total += spans.len();
        overlapping += n;
        passages_with += usize::from(n > 0);
    }
    Ok(OverlapStats {
        answers_per_passage: total as f64 / sets.len() as f64,
        pct_overlapping_answers: if total == 0 { 0.0 } else { 100.0 * overlapping as f64 / total as f64 },
        pct_passages_with_overlap: 100.0 * passages_with as f64 / sets.len() as f64,
    })
}
