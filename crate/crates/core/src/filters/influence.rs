//! Influence estimates for synthetic training examples.
//!
//! Score convention: positive means including the example is estimated to
//! increase validation loss (harmful), negative means it helps.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Partition, SyntheticExample};
use crate::error::{Error, Result};

/// Hessian-vector products supplied by a model backend.
pub trait HessianVectorProduct {
    fn hvp(&self, v: &[f64]) -> Result<Vec<f64>>;
}

/// Parameters of the stochastic inverse-HVP recursion
/// `h <- v + (1 - damping) h - H h / scale`, returning `h / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LissaParams {
    pub damping: f64,
    pub scale: f64,
    pub depth: usize,
}

impl Default for LissaParams {
    fn default() -> Self {
        LissaParams {
            damping: 0.01,
            scale: 25.0,
            depth: 1000,
        }
    }
}

pub enum HessianMode<'a> {
    /// Gradient dot product (the Hessian is taken as the identity).
    Identity,
    Lissa {
        hvp: &'a dyn HessianVectorProduct,
        params: LissaParams,
    },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn inverse_hvp_lissa(hvp: &dyn HessianVectorProduct, v: &[f64], params: LissaParams) -> Result<Vec<f64>> {
    if params.scale.is_nan() || params.scale <= 0.0 || !(0.0..1.0).contains(&params.damping) {
        return Err(Error::invalid("LiSSA needs scale > 0 and damping in [0, 1)"));
    }
    let mut h = v.to_vec();
    for _ in 0..params.depth {
        let hv = hvp.hvp(&h)?;
        if hv.len() != v.len() {
            return Err(Error::Shape(format!("HVP returned {} values for dimension {}", hv.len(), v.len())));
        }
        for ((hi, vi), hvi) in h.iter_mut().zip(v).zip(&hv) {
            *hi = vi + (1.0 - params.damping) * *hi - hvi / params.scale;
        }
    }
    Ok(h.into_iter().map(|x| x / params.scale).collect())
}

/// `-<train_grad, H⁻¹ mean(val_grads)>`.
pub fn influence_score(train_grad: &[f64], val_grads: &[Vec<f64>], mode: HessianMode<'_>) -> Result<f64> {
    if val_grads.is_empty() {
        return Err(Error::Empty("no validation gradients"));
    }
    let d = train_grad.len();
    if let Some(bad) = val_grads.iter().find(|g| g.len() != d) {
        return Err(Error::Shape(format!("train gradient has dimension {d}, validation gradient {}", bad.len())));
    }
    let mut mean = vec![0.0; d];
    for g in val_grads {
        for (m, x) in mean.iter_mut().zip(g) {
            *m += x;
        }
    }
    let n = val_grads.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let direction = match mode {
        HessianMode::Identity => mean,
        HessianMode::Lissa { hvp, params } => inverse_hvp_lissa(hvp, &mean, params)?,
    };
    Ok(-dot(train_grad, &direction))
}

/// Keeps examples with score `<= 0`. Every example needs a score.
pub fn filter_by_influence(examples: &[SyntheticExample], scores: &HashMap<String, f64>) -> Result<Partition> {
    let mut out = Partition::default();
    for ex in examples {
        let s = *scores
            .get(&ex.id)
            .ok_or_else(|| Error::NotFound(format!("influence score for example `{}`", ex.id)))?;
        if s <= 0.0 {
            out.kept.push(ex.clone());
        } else {
            out.dropped.push(ex.clone());
        }
    }
    Ok(out)
}
