//! Self-attention labelling (SAL): a multi-label span head that scores every
//! candidate `(start, end)` token pair with
//! `sigmoid(Q Kᵀ / sqrt(d_k))`, where `Q` holds projected start
//! representations and `K` projected end representations.

use ndarray::Array2;

use super::{AnswerCandidate, AnswerSpan, SelectionMethod, SourceDataset};
use crate::corpus::Passage;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Projected start queries and end keys for one encoded input.
#[derive(Debug, Clone, PartialEq)]
pub struct SalProjections {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
}

impl SalProjections {
    pub fn new(q: Array2<f64>, k: Array2<f64>) -> Result<Self> {
        if q.dim() != k.dim() {
            return Err(Error::Shape(format!("Q is {:?} but K is {:?}", q.dim(), k.dim())));
        }
        if q.ncols() == 0 {
            return Err(Error::Shape("d_k must be at least 1".into()));
        }
        Ok(SalProjections { q, k })
    }

    pub fn len(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.q.nrows() == 0
    }

    pub fn d_k(&self) -> usize {
        self.q.ncols()
    }

    fn logits(&self) -> Array2<f64> {
        self.q.dot(&self.k.t()) / (self.d_k() as f64).sqrt()
    }
}

/// Probabilities for every `(start, end)` cell plus the admissibility mask.
/// Masked cells hold 0.0 and must not be read.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScoreMatrix {
    pub probs: Array2<f64>,
    pub mask: Array2<bool>,
}

/// Admissible spans: `i <= j`, `j - i + 1 <= max_answer_len`, and both ends
/// inside `passage_range = [lo, hi)`.
pub fn sal_mask(len: usize, max_answer_len: usize, passage_range: (usize, usize)) -> Result<Array2<bool>> {
    let (lo, hi) = passage_range;
    if max_answer_len < 1 {
        return Err(Error::invalid("max_answer_len must be at least 1"));
    }
    if lo > hi || hi > len {
        return Err(Error::invalid(format!("passage range [{lo}, {hi}) outside 0..{len}")));
    }
    Ok(Array2::from_shape_fn((len, len), |(i, j)| {
        i <= j && j - i < max_answer_len && i >= lo && j < hi
    }))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_mask(proj: &SalProjections, mask: &Array2<bool>) -> Result<()> {
    let l = proj.len();
    if mask.dim() != (l, l) {
        return Err(Error::Shape(format!("mask is {:?} but sequence length is {l}", mask.dim())));
    }
    Ok(())
}

pub fn sal_forward(proj: &SalProjections, mask: &Array2<bool>) -> Result<CandidateScoreMatrix> {
    check_mask(proj, mask)?;
    let mut probs = proj.logits().mapv(sigmoid);
    probs.zip_mut_with(mask, |p, &m| {
        if !m {
            *p = 0.0;
        }
    });
    Ok(CandidateScoreMatrix {
        probs,
        mask: mask.clone(),
    })
}

/// Several heads over the same input, combined by elementwise max.
pub fn sal_forward_heads(heads: &[SalProjections], mask: &Array2<bool>) -> Result<CandidateScoreMatrix> {
    let (first, rest) = heads.split_first().ok_or(Error::Empty("no SAL heads"))?;
    let mut out = sal_forward(first, mask)?;
    for h in rest {
        let other = sal_forward(h, mask)?;
        out.probs.zip_mut_with(&other.probs, |a, &b| *a = a.max(b));
    }
    Ok(out)
}

fn check_gold(mask: &Array2<bool>, gold: &Array2<bool>, pos_weight: f64) -> Result<()> {
    if gold.dim() != mask.dim() {
        return Err(Error::Shape(format!("gold is {:?} but mask is {:?}", gold.dim(), mask.dim())));
    }
    if !(pos_weight > 0.0 && pos_weight.is_finite()) {
        return Err(Error::invalid("pos_weight must be positive"));
    }
    if let Some(((i, j), _)) = gold.indexed_iter().find(|(ix, &g)| g && !mask[*ix]) {
        return Err(Error::invalid(format!("gold marks masked cell ({i}, {j}) as an answer")));
    }
    Ok(())
}

/// Weighted binary cross-entropy averaged over admissible cells. Masked cells
/// contribute nothing; an all-masked matrix has zero loss.
pub fn sal_loss(scores: &CandidateScoreMatrix, gold: &Array2<bool>, pos_weight: f64) -> Result<f64> {
    check_gold(&scores.mask, gold, pos_weight)?;
    const EPS: f64 = 1e-15;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((ix, &p), &m) in scores.probs.indexed_iter().zip(scores.mask.iter()) {
        if !m {
            continue;
        }
        let p = p.clamp(EPS, 1.0 - EPS);
        sum += if gold[ix] { -pos_weight * p.ln() } else { -(1.0 - p).ln() };
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// `(#admissible - #positive) / #positive`, floored at 1.
pub fn default_pos_weight(mask: &Array2<bool>, gold: &Array2<bool>) -> f64 {
    let admissible = mask.iter().filter(|&&m| m).count();
    let positives = gold.iter().zip(mask.iter()).filter(|(&g, &m)| g && m).count();
    if positives == 0 {
        return 1.0;
    }
    ((admissible - positives) as f64 / positives as f64).max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalGradients {
    pub loss: f64,
    pub d_q: Array2<f64>,
    pub d_k: Array2<f64>,
}

/// Loss (computed from logits) and its gradient with respect to Q and K.
pub fn sal_loss_and_grad(
    proj: &SalProjections,
    mask: &Array2<bool>,
    gold: &Array2<bool>,
    pos_weight: f64,
) -> Result<SalGradients> {
    check_mask(proj, mask)?;
    check_gold(mask, gold, pos_weight)?;
    let z = proj.logits();
    let n = mask.iter().filter(|&&m| m).count();
    let scale = (proj.d_k() as f64).sqrt();
    let mut g = Array2::<f64>::zeros(z.dim());
    let mut loss = 0.0;
    if n > 0 {
        for ((ix, &zij), gij) in z.indexed_iter().zip(g.iter_mut()) {
            if !mask[ix] {
                continue;
            }
            let p = sigmoid(zij);
            if gold[ix] {
                loss += pos_weight * softplus(-zij);
                *gij = -pos_weight * (1.0 - p) / n as f64;
            } else {
                loss += softplus(zij);
                *gij = p / n as f64;
            }
        }
        loss /= n as f64;
    }
    // z = Q Kᵀ / s  =>  dQ = G K / s,  dK = Gᵀ Q / s
    let d_q = g.dot(&proj.k) / scale;
    let d_k = g.t().dot(&proj.q) / scale;
    Ok(SalGradients { loss, d_q, d_k })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodedCandidates {
    pub candidates: Vec<AnswerCandidate>,
    /// Cells above threshold whose tokens could not be mapped back to a
    /// passage span.
    pub unmapped: usize,
}

/// Every admissible cell with probability `>= threshold`, as a char span,
/// sorted by descending probability (ties: earlier start, shorter span).
pub fn decode_sal_candidates(
    scores: &CandidateScoreMatrix,
    token_to_char: &[Option<(usize, usize)>],
    passage: &Passage,
    threshold: f64,
) -> Result<DecodedCandidates> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} not in (0, 1)")));
    }
    if token_to_char.len() != scores.probs.nrows() {
        return Err(Error::Shape(format!(
            "{} token offsets for a {}-token score matrix",
            token_to_char.len(),
            scores.probs.nrows()
        )));
    }
    let mut hits: Vec<(f64, usize, usize)> = scores
        .probs
        .indexed_iter()
        .filter(|&((i, j), &p)| scores.mask[(i, j)] && p >= threshold)
        .map(|((i, j), &p)| (p, i, j))
        .collect();
    hits.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut out = DecodedCandidates::default();
    for (p, i, j) in hits {
        let span = match (token_to_char[i], token_to_char[j]) {
            (Some((cs, _)), Some((_, ce))) => AnswerSpan::from_offsets(passage, cs, ce, SourceDataset::Synthetic).ok(),
            _ => None,
        };
        match span {
            Some(span) => out.candidates.push(AnswerCandidate {
                span,
                confidence: p,
                method: SelectionMethod::Sal,
            }),
            None => out.unmapped += 1,
        }
    }
    Ok(out)
}

/// Encoder output for one passage: token offsets plus per-head projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub offsets: Vec<Option<(usize, usize)>>,
    pub passage_range: (usize, usize),
    pub heads: Vec<SalProjections>,
}

pub trait TokenEncoder: Send + Sync {
    fn encode(&self, passage: &Passage) -> Result<Encoding>;
}

/// Runs the full SAL path for one passage.
pub fn select_sal_candidates(
    passage: &Passage,
    encoder: &dyn TokenEncoder,
    max_answer_len: usize,
    threshold: f64,
) -> Result<DecodedCandidates> {
    let enc = encoder
        .encode(passage)
        .map_err(|e| Error::backend(format!("encoder on passage `{}`", passage.id), e))?;
    let mask = sal_mask(enc.offsets.len(), max_answer_len, enc.passage_range)?;
    let scores = sal_forward_heads(&enc.heads, &mask)?;
    decode_sal_candidates(&scores, &enc.offsets, passage, threshold)
}

/// A trainable single SAL head: linear start/end projections of hidden
/// states `H` (L × hidden), `Q = H W_q`, `K = H W_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SalHead {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
}

impl SalHead {
    pub fn new(w_q: Array2<f64>, w_k: Array2<f64>) -> Result<Self> {
        if w_q.dim() != w_k.dim() {
            return Err(Error::Shape("W_q and W_k differ in shape".into()));
        }
        Ok(SalHead { w_q, w_k })
    }

    pub fn project(&self, hidden: &Array2<f64>) -> Result<SalProjections> {
        if hidden.ncols() != self.w_q.nrows() {
            return Err(Error::Shape(format!(
                "hidden size {} but projection expects {}",
                hidden.ncols(),
                self.w_q.nrows()
            )));
        }
        SalProjections::new(hidden.dot(&self.w_q), hidden.dot(&self.w_k))
    }

    /// One SGD step; returns the loss before the update.
    pub fn train_step(
        &mut self,
        hidden: &Array2<f64>,
        mask: &Array2<bool>,
        gold: &Array2<bool>,
        pos_weight: f64,
        lr: f64,
    ) -> Result<f64> {
        let proj = self.project(hidden)?;
        let grads = sal_loss_and_grad(&proj, mask, gold, pos_weight)?;
        let ht = hidden.t();
        self.w_q.scaled_add(-lr, &ht.dot(&grads.d_q));
        self.w_k.scaled_add(-lr, &ht.dot(&grads.d_k));
        Ok(grads.loss)
    }
}

pub fn admissible_count(mask: &Array2<bool>) -> usize {
    mask.iter().filter(|&&m| m).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PassageSource;
    use ndarray::array;
    use proptest::prelude::*;

    fn all_true(l: usize) -> Array2<bool> {
        Array2::from_elem((l, l), true)
    }

    #[test]
    fn mask_examples() {
        let m = sal_mask(3, 2, (0, 3)).unwrap();
        let cells: Vec<_> = m.indexed_iter().filter(|(_, &v)| v).map(|(ix, _)| ix).collect();
        assert_eq!(cells, vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]);
        let m = sal_mask(3, 3, (1, 3)).unwrap();
        assert!(m.row(0).iter().all(|&v| !v));
        assert!(m.column(0).iter().all(|&v| !v));
        assert!(sal_mask(3, 0, (0, 3)).is_err());
        assert!(sal_mask(3, 2, (2, 4)).is_err());
        assert!(sal_mask(3, 2, (2, 1)).is_err());
        assert_eq!(admissible_count(&sal_mask(3, 2, (0, 3)).unwrap()), 5);
    }

    #[test]
    fn forward_examples() {
        let zero = SalProjections::new(Array2::zeros((3, 2)), Array2::zeros((3, 2))).unwrap();
        let s = sal_forward(&zero, &all_true(3)).unwrap();
        assert!(s.probs.iter().all(|&p| p == 0.5));

        let one = SalProjections::new(array![[2.0]], array![[2.0]]).unwrap();
        let s = sal_forward(&one, &all_true(1)).unwrap();
        assert!((s.probs[(0, 0)] - 0.982_013_790_037_908_4).abs() < 1e-12);

        // Raw dot product 4 at d_k = 4 is scaled by 1/2.
        let four = SalProjections::new(array![[1.0, 1.0, 1.0, 1.0]], array![[1.0, 1.0, 1.0, 1.0]]).unwrap();
        let s = sal_forward(&four, &all_true(1)).unwrap();
        assert!((s.probs[(0, 0)] - 0.880_797_077_977_882_3).abs() < 1e-12);

        assert!(SalProjections::new(Array2::zeros((2, 2)), Array2::zeros((3, 2))).is_err());
        assert!(sal_forward(&zero, &all_true(2)).is_err());
    }

    #[test]
    fn heads_combine_by_max() {
        let a = SalProjections::new(array![[1.0], [0.0]], array![[1.0], [0.0]]).unwrap();
        let b = SalProjections::new(array![[-1.0], [0.0]], array![[1.0], [3.0]]).unwrap();
        let m = all_true(2);
        let s = sal_forward_heads(&[a.clone(), b.clone()], &m).unwrap();
        let sa = sal_forward(&a, &m).unwrap();
        let sb = sal_forward(&b, &m).unwrap();
        for ix in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(s.probs[ix], sa.probs[ix].max(sb.probs[ix]));
        }
        assert!(sal_forward_heads(&[], &m).is_err());
    }

    #[test]
    fn loss_examples() {
        let w = 3.5;
        let scores = CandidateScoreMatrix {
            probs: array![[0.5]],
            mask: all_true(1),
        };
        let loss = sal_loss(&scores, &array![[true]], w).unwrap();
        assert!((loss - w * 2f64.ln()).abs() < 1e-12);

        let scores = CandidateScoreMatrix {
            probs: array![[0.5, 0.5], [0.0, 0.5]],
            mask: sal_mask(2, 2, (0, 2)).unwrap(),
        };
        let gold = Array2::from_elem((2, 2), false);
        assert!((sal_loss(&scores, &gold, 1.0).unwrap() - 2f64.ln()).abs() < 1e-12);

        let mut bad = gold.clone();
        bad[(1, 0)] = true;
        assert!(sal_loss(&scores, &bad, 1.0).is_err());
        assert!(sal_loss(&scores, &gold, 0.0).is_err());

        let eps = 1e-9;
        let perfect = CandidateScoreMatrix {
            probs: array![[1.0 - eps, eps], [0.0, eps]],
            mask: scores.mask.clone(),
        };
        let mut g = gold.clone();
        g[(0, 0)] = true;
        assert!(sal_loss(&perfect, &g, 2.0).unwrap() < 1e-8);
    }

    #[test]
    fn default_pos_weight_floors_at_one() {
        let mask = sal_mask(4, 4, (0, 4)).unwrap(); // 10 admissible
        let mut gold = Array2::from_elem((4, 4), false);
        assert_eq!(default_pos_weight(&mask, &gold), 1.0);
        gold[(0, 1)] = true;
        assert_eq!(default_pos_weight(&mask, &gold), 9.0);
        for ix in [(0, 0), (1, 1), (2, 2), (3, 3), (0, 2)] {
            gold[ix] = true;
        }
        assert_eq!(default_pos_weight(&mask, &gold), 1.0);
    }

    #[test]
    fn decode_examples() {
        let p = Passage::new("p", "aa bb cc", PassageSource::External);
        let offsets = vec![Some((0, 2)), Some((3, 5)), Some((6, 8))];
        let mut probs = Array2::zeros((3, 3));
        probs[(0, 1)] = 0.9;
        probs[(1, 1)] = 0.6;
        probs[(2, 2)] = 0.4;
        let scores = CandidateScoreMatrix {
            probs,
            mask: sal_mask(3, 3, (0, 3)).unwrap(),
        };
        let out = decode_sal_candidates(&scores, &offsets, &p, 0.5).unwrap();
        let got: Vec<_> = out.candidates.iter().map(|c| (c.span.text.as_str(), c.confidence)).collect();
        assert_eq!(got, vec![("aa bb", 0.9), ("bb", 0.6)]);
        assert!(decode_sal_candidates(&scores, &offsets, &p, 0.95).unwrap().candidates.is_empty());
        assert_eq!(decode_sal_candidates(&scores, &offsets, &p, 0.7).unwrap().candidates.len(), 1);
        assert!(decode_sal_candidates(&scores, &offsets, &p, 1.0).is_err());

        let with_special = vec![Some((0, 2)), None, Some((6, 8))];
        let out = decode_sal_candidates(&scores, &with_special, &p, 0.5).unwrap();
        assert_eq!(out.unmapped, 2);
        assert!(out.candidates.is_empty());
    }

    #[test]
    fn head_training_reduces_loss() {
        let hidden = array![[1.0, 0.0, 0.2], [0.0, 1.0, 0.1], [0.5, 0.5, 1.0], [0.1, 0.9, 0.3]];
        let mask = sal_mask(4, 3, (0, 4)).unwrap();
        let mut gold = Array2::from_elem((4, 4), false);
        gold[(0, 1)] = true;
        gold[(2, 3)] = true;
        let w = default_pos_weight(&mask, &gold);
        let mut head = SalHead::new(Array2::from_elem((3, 2), 0.1), Array2::from_elem((3, 2), -0.1)).unwrap();
        let first = head.train_step(&hidden, &mask, &gold, w, 0.5).unwrap();
        let mut last = first;
        for _ in 0..300 {
            last = head.train_step(&hidden, &mask, &gold, w, 0.5).unwrap();
        }
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    fn brute(proj: &SalProjections, i: usize, j: usize) -> f64 {
        let dot: f64 = (0..proj.d_k()).map(|c| proj.q[(i, c)] * proj.k[(j, c)]).sum();
        1.0 / (1.0 + (-dot / (proj.d_k() as f64).sqrt()).exp())
    }

    proptest! {
        #[test]
        fn forward_matches_brute_force(l in 1usize..6, d in 1usize..4, vals in proptest::collection::vec(-3.0f64..3.0, 64)) {
            let q = Array2::from_shape_fn((l, d), |(i, c)| vals[(i * d + c) % 64]);
            let k = Array2::from_shape_fn((l, d), |(i, c)| vals[(31 + i * d + c) % 64]);
            let proj = SalProjections::new(q, k).unwrap();
            let s = sal_forward(&proj, &all_true(l)).unwrap();
            for i in 0..l { for j in 0..l {
                prop_assert!((s.probs[(i, j)] - brute(&proj, i, j)).abs() < 1e-12);
                prop_assert!(s.probs[(i, j)] > 0.0 && s.probs[(i, j)] < 1.0);
            }}
        }

        #[test]
        fn decode_never_emits_masked(l in 1usize..6, max_len in 1usize..6, lo in 0usize..6, width in 0usize..6,
                                     probs in proptest::collection::vec(0.0f64..1.0, 36), t in 0.01f64..0.99, t2 in 0.0f64..0.5) {
            let lo = lo.min(l);
            let hi = (lo + width).min(l);
            let mask = sal_mask(l, max_len, (lo, hi)).unwrap();
            let probs = Array2::from_shape_fn((l, l), |(i, j)| probs[i * 6 + j]);
            let scores = CandidateScoreMatrix { probs, mask: mask.clone() };
            let text: String = (0..l).map(|_| "ab ").collect();
            let p = Passage::new("p", text.trim_end(), PassageSource::External);
            let offsets: Vec<_> = (0..l).map(|i| Some((3 * i, 3 * i + 2))).collect();
            let out = decode_sal_candidates(&scores, &offsets, &p, t).unwrap();
            for c in &out.candidates {
                let (i, j) = (c.span.char_start / 3, (c.span.char_end - 2) / 3);
                prop_assert!(mask[(i, j)]);
            }
            let t_hi = (t + t2).min(0.999);
            let fewer = decode_sal_candidates(&scores, &offsets, &p, t_hi).unwrap();
            prop_assert!(fewer.candidates.iter().all(|c| out.candidates.contains(c)));
        }
    }
}
