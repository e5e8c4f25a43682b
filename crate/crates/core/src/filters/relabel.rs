//! Self-training relabelling from ensemble agreement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EnsembleVerdict, ExampleState, SyntheticExample};
use crate::answers::{AnswerSpan, SourceDataset};
use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::metrics::normalize_answer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelDecision {
    pub state: ExampleState,
    /// Agreed answer text (a member's prediction), absent when discarded.
    pub answer: Option<String>,
}

impl RelabelDecision {
    fn discard() -> Self {
        RelabelDecision {
            state: ExampleState::Discarded,
            answer: None,
        }
    }
}

struct Group<'a> {
    count: usize,
    confidence: f64,
    best_text: &'a str,
    best_conf: f64,
}

/// Keep / relabel / discard from the largest agreement group among member
/// predictions (compared after answer normalization; empty predictions never
/// form a group).
///
/// With `m` the size of the largest group and `a` its answer: `m >= keep_at`
/// keeps `a`; `relabel_at <= m < keep_at` relabels to `a`, or keeps when `a`
/// already matches the prompted answer; otherwise discard. Several groups of
/// size `m` are separated by summed member confidence; an exact tie discards.
pub fn self_train_relabel(
    verdict: &EnsembleVerdict,
    prompted: &str,
    keep_at: usize,
    relabel_at: usize,
) -> Result<RelabelDecision> {
    let n = verdict.n_members();
    if n == 0 {
        return Err(Error::Empty("verdict has no member predictions"));
    }
    if relabel_at > keep_at || keep_at > n {
        return Err(Error::invalid(format!(
            "need relabel_at <= keep_at <= n_members, got {relabel_at} / {keep_at} / {n}"
        )));
    }

    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for p in &verdict.predictions {
        let key = normalize_answer(&p.text);
        if key.is_empty() {
            continue;
        }
        let g = groups.entry(key).or_insert(Group {
            count: 0,
            confidence: 0.0,
            best_text: &p.text,
            best_conf: f64::NEG_INFINITY,
        });
        g.count += 1;
        g.confidence += p.confidence;
        if p.confidence > g.best_conf {
            g.best_conf = p.confidence;
            g.best_text = &p.text;
        }
    }

    let Some(m) = groups.values().map(|g| g.count).max() else {
        return Ok(RelabelDecision::discard());
    };
    let leaders: Vec<(&String, &Group)> = groups.iter().filter(|(_, g)| g.count == m).collect();
    let top = leaders.iter().map(|(_, g)| g.confidence).fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<_> = leaders.iter().filter(|(_, g)| g.confidence == top).collect();
    if winners.len() != 1 {
        return Ok(RelabelDecision::discard());
    }
    let (key, group) = winners[0];
    let answer = Some(group.best_text.to_string());

    let state = if m >= keep_at {
        ExampleState::Kept
    } else if m >= relabel_at {
        if **key == normalize_answer(prompted) {
            ExampleState::Kept
        } else {
            ExampleState::Relabelled
        }
    } else {
        return Ok(RelabelDecision::discard());
    };
    Ok(RelabelDecision { state, answer })
}

/// Applies a decision to an example. Agreed answers that differ from the
/// prompted one must be locatable in the passage (first occurrence), or
/// the example is discarded.
pub fn apply_relabel(example: &SyntheticExample, decision: &RelabelDecision, passage: &Passage) -> SyntheticExample {
    let mut out = example.clone();
    let agreed = match (&decision.state, &decision.answer) {
        (ExampleState::Kept | ExampleState::Relabelled, Some(a)) => a,
        _ => {
            out.state = ExampleState::Discarded;
            out.final_answer = None;
            return out;
        }
    };
    if normalize_answer(agreed) == normalize_answer(&example.answer.text) {
        out.state = ExampleState::Kept;
        out.final_answer = Some(example.answer.clone());
        return out;
    }
    match AnswerSpan::locate(passage, agreed, SourceDataset::Synthetic) {
        Some(span) => {
            out.state = decision.state;
            out.final_answer = Some(span);
        }
        None => {
            out.state = ExampleState::Discarded;
            out.final_answer = None;
        }
    }
    out
}
