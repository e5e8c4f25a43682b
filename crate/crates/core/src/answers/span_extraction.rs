//! Top-k span decoding over start/end token distributions.

use std::collections::HashSet;

use super::{AnswerCandidate, AnswerSpan, SelectionMethod, SourceDataset};
use crate::corpus::Passage;
use crate::error::{Error, Result};

/// Per-token start/end probabilities for one encoded input.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanDistributions {
    /// Char offsets `[start, end)` of each token in the passage, `None` for
    /// tokens that do not map into it (special or question tokens).
    pub offsets: Vec<Option<(usize, usize)>>,
    /// Token range `[lo, hi)` covering the passage.
    pub passage_range: (usize, usize),
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
}

impl SpanDistributions {
    fn check(&self) -> Result<()> {
        let n = self.offsets.len();
        if self.p_start.len() != n || self.p_end.len() != n {
            return Err(Error::Shape(format!(
                "{} offsets vs {} start / {} end probabilities",
                n,
                self.p_start.len(),
                self.p_end.len()
            )));
        }
        let (lo, hi) = self.passage_range;
        if lo > hi || hi > n {
            return Err(Error::invalid(format!("passage range [{lo}, {hi}) outside 0..{n}")));
        }
        if self.p_start.iter().chain(&self.p_end).any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("span probabilities must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Anything that can produce span distributions for a passage, optionally
/// conditioned on a question.
pub trait SpanPredictor: Send + Sync {
    fn predict(&self, passage: &Passage, question: Option<&str>) -> Result<SpanDistributions>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedSpan {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// All admissible `(start, end)` token pairs ranked by `p_start * p_end`,
/// ties broken by earlier start, then shorter span.
pub fn rank_spans(dist: &SpanDistributions, max_answer_len: usize) -> Result<Vec<RankedSpan>> {
    dist.check()?;
    if max_answer_len == 0 {
        return Err(Error::invalid("max_answer_len must be at least 1"));
    }
    let (lo, hi) = dist.passage_range;
    let mut out = Vec::new();
    for i in lo..hi {
        if dist.offsets[i].is_none() {
            continue;
        }
        for j in i..hi.min(i + max_answer_len) {
            if dist.offsets[j].is_none() {
                continue;
            }
            out.push(RankedSpan {
                start: i,
                end: j,
                score: dist.p_start[i] * dist.p_end[j],
            });
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.start.cmp(&b.start))
            .then(a.end.cmp(&b.end))
    });
    Ok(out)
}

fn to_span(passage: &Passage, dist: &SpanDistributions, r: &RankedSpan) -> Option<AnswerSpan> {
    let (cs, _) = dist.offsets[r.start]?;
    let (_, ce) = dist.offsets[r.end]?;
    AnswerSpan::from_offsets(passage, cs, ce, SourceDataset::Synthetic).ok()
}

/// Top-k passage spans from a passage-only prediction. Confidence is the
/// joint score renormalized over all admissible spans.
pub fn select_span_extraction_candidates(
    passage: &Passage,
    span_model: &dyn SpanPredictor,
    k: usize,
    max_answer_len: usize,
) -> Result<Vec<AnswerCandidate>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let dist = span_model
        .predict(passage, None)
        .map_err(|e| Error::backend(format!("span model on passage `{}`", passage.id), e))?;
    let ranked = rank_spans(&dist, max_answer_len)?;
    let total: f64 = ranked.iter().map(|r| r.score).sum();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in &ranked {
        if out.len() == k {
            break;
        }
        let Some(span) = to_span(passage, &dist, r) else {
            continue;
        };
        if !seen.insert(span.offsets()) {
            continue;
        }
        out.push(AnswerCandidate {
            span,
            confidence: if total > 0.0 { (r.score / total).min(1.0) } else { 0.0 },
            method: SelectionMethod::SpanExtraction,
        });
    }
    Ok(out)
}

/// Best span answering `question`, with its joint score.
pub fn answer_question(
    passage: &Passage,
    model: &dyn SpanPredictor,
    question: &str,
    max_answer_len: usize,
) -> Result<Option<(AnswerSpan, f64)>> {
    let dist = model.predict(passage, Some(question))?;
    let ranked = rank_spans(&dist, max_answer_len)?;
    Ok(ranked
        .iter()
        .find_map(|r| to_span(passage, &dist, r).map(|s| (s, r.score))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PassageSource;
    use proptest::prelude::*;

    struct Fixed(SpanDistributions);

    impl SpanPredictor for Fixed {
        fn predict(&self, _: &Passage, _: Option<&str>) -> Result<SpanDistributions> {
            Ok(self.0.clone())
        }
    }

    // "aa bb cc dd": four two-char tokens.
    fn four_tokens(ps: [f64; 4], pe: [f64; 4]) -> (Passage, Fixed) {
        let p = Passage::new("p", "aa bb cc dd", PassageSource::External);
        let d = SpanDistributions {
            offsets: vec![Some((0, 2)), Some((3, 5)), Some((6, 8)), Some((9, 11))],
            passage_range: (0, 4),
            p_start: ps.to_vec(),
            p_end: pe.to_vec(),
        };
        (p, Fixed(d))
    }

    #[test]
    fn top_three_by_enumeration() {
        let ps = [0.1, 0.5, 0.3, 0.1];
        let pe = [0.05, 0.2, 0.6, 0.15];
        let (p, m) = four_tokens(ps, pe);
        // Oracle: every (i, j) with i <= j, sorted by product.
        let mut all = Vec::new();
        for i in 0..4 {
            for j in i..4 {
                all.push((ps[i] * pe[j], i, j));
            }
        }
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let out = select_span_extraction_candidates(&p, &m, 3, 30).unwrap();
        let expect: Vec<_> = all[..3].iter().map(|&(_, i, j)| (i * 3, j * 3 + 2)).collect();
        let got: Vec<_> = out.iter().map(|c| c.span.offsets()).collect();
        assert_eq!(got, expect);
        let total: f64 = all.iter().map(|a| a.0).sum();
        assert!((out[0].confidence - all[0].0 / total).abs() < 1e-12);
    }

    #[test]
    fn k_one_is_argmax_and_large_k_is_all() {
        let (p, m) = four_tokens([0.1, 0.6, 0.2, 0.1], [0.1, 0.1, 0.7, 0.1]);
        let one = select_span_extraction_candidates(&p, &m, 1, 30).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].span.text, "bb cc");
        let all = select_span_extraction_candidates(&p, &m, 100, 30).unwrap();
        assert_eq!(all.len(), 10);
        let short = select_span_extraction_candidates(&p, &m, 100, 2).unwrap();
        assert_eq!(short.len(), 7);
        assert!(select_span_extraction_candidates(&p, &m, 0, 30).is_err());
    }

    #[test]
    fn unmapped_tokens_are_skipped() {
        let p = Passage::new("p", "aa bb", PassageSource::External);
        let m = Fixed(SpanDistributions {
            offsets: vec![None, Some((0, 2)), Some((3, 5)), None],
            passage_range: (1, 3),
            p_start: vec![0.9, 0.05, 0.05, 0.0],
            p_end: vec![0.0, 0.05, 0.05, 0.9],
        });
        let out = select_span_extraction_candidates(&p, &m, 10, 30).unwrap();
        assert_eq!(out.len(), 3);
        let (span, _) = answer_question(&p, &m, "?", 30).unwrap().unwrap();
        assert_eq!(span.text, "aa");
    }

    #[test]
    fn shape_errors() {
        let p = Passage::new("p", "aa", PassageSource::External);
        let m = Fixed(SpanDistributions {
            offsets: vec![Some((0, 2))],
            passage_range: (0, 1),
            p_start: vec![1.0, 0.0],
            p_end: vec![1.0],
        });
        assert!(select_span_extraction_candidates(&p, &m, 1, 30).is_err());
    }

    proptest! {
        #[test]
        fn k_prefix(ps in proptest::collection::vec(0u8..5, 4), pe in proptest::collection::vec(0u8..5, 4), k in 1usize..10) {
            let f = |v: &Vec<u8>| { let a: Vec<f64> = v.iter().map(|&x| f64::from(x) / 4.0).collect(); [a[0], a[1], a[2], a[3]] };
            let (p, m) = four_tokens(f(&ps), f(&pe));
            let a = select_span_extraction_candidates(&p, &m, k, 30).unwrap();
            let b = select_span_extraction_candidates(&p, &m, k + 1, 30).unwrap();
            prop_assert!(a.len() <= k);
            prop_assert_eq!(&b[..a.len()], &a[..]);
        }
    }
}
