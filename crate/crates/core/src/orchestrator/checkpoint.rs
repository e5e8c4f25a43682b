use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// F1 of one checkpoint on each validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub id: String,
    pub f1: BTreeMap<String, f64>,
}

impl CheckpointEval {
    pub fn mean_f1(&self) -> f64 {
        self.f1.values().sum::<f64>() / self.f1.len() as f64
    }
}

/// Checkpoint with the best unweighted mean F1 across validation sets.
/// `evals` is in training order; ties go to the earliest checkpoint.
pub fn select_checkpoint(evals: &[CheckpointEval]) -> Result<String> {
    let first = evals.first().ok_or(Error::Empty("no checkpoint evaluations"))?;
    let sets: BTreeSet<&String> = evals.iter().flat_map(|e| e.f1.keys()).collect();
    if sets.is_empty() {
        return Err(Error::Empty("no validation sets"));
    }
    for e in evals {
        let missing: Vec<&str> = sets.iter().filter(|s| !e.f1.contains_key(**s)).map(|s| s.as_str()).collect();
        if !missing.is_empty() {
            return Err(Error::NotFound(format!("checkpoint `{}` lacks evaluation on {}", e.id, missing.join(", "))));
        }
        if let Some((set, v)) = e.f1.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("checkpoint `{}` has non-finite F1 {v} on {set}", e.id)));
        }
    }
    let mut best = first;
    for e in &evals[1..] {
        if e.mean_f1() > best.mean_f1() {
            best = e;
        }
    }
    Ok(best.id.clone())
}
