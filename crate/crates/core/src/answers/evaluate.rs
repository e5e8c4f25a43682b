use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::metrics::normalize_answer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Entity-level precision/recall/F1 over unique normalized candidates.
/// Two empty sets score 1 across the board.
pub fn evaluate_candidates<P: AsRef<str>, G: AsRef<str>>(predicted: &[P], gold: &[G]) -> Prf {
    let pred: HashSet<String> = predicted.iter().map(|s| normalize_answer(s.as_ref())).collect();
    let gold: HashSet<String> = gold.iter().map(|s| normalize_answer(s.as_ref())).collect();
    if pred.is_empty() && gold.is_empty() {
        return Prf { precision: 1.0, recall: 1.0, f1: 1.0 };
    }
    let hit = pred.intersection(&gold).count() as f64;
    let precision = if pred.is_empty() { 0.0 } else { hit / pred.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { hit / gold.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let same = evaluate_candidates(&["Denver Broncos", "Santa Clara"], &["Santa Clara", "Denver Broncos"]);
        assert_eq!(same, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });

        let half = evaluate_candidates(&["Denver"], &["Denver", "Broncos"]);
        assert_eq!((half.precision, half.recall), (1.0, 0.5));
        assert!((half.f1 - 2.0 / 3.0).abs() < 1e-12);

        let dedup = evaluate_candidates(&["Denver", "denver!"], &["Denver"]);
        assert_eq!(dedup, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });

        let none = evaluate_candidates(&["Carolina"], &["Denver"]);
        assert_eq!(none.f1, 0.0);
        let empty: [&str; 0] = [];
        assert_eq!(evaluate_candidates(&empty, &["Denver"]).f1, 0.0);
    }

    proptest! {
        #[test]
        fn swap_exchanges_p_and_r(a in proptest::collection::vec("[a-e]{1,3}", 0..6), b in proptest::collection::vec("[a-e]{1,3}", 0..6)) {
            let x = evaluate_candidates(&a, &b);
            let y = evaluate_candidates(&b, &a);
            prop_assert_eq!(x.precision, y.recall);
            prop_assert_eq!(x.recall, y.precision);
            prop_assert!((x.f1 - y.f1).abs() < 1e-12);
        }
    }
}
