//! Extractive-QA scoring (EM / token F1) and adversarial error rates.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::SquadFile;
use crate::error::{Error, Result};
use crate::eval_service::{AnnotationRecord, Validation};

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("static regex"))
}

// Python's str.split() also treats the ASCII file/group/record/unit
// separators as whitespace.
fn is_py_space(c: char) -> bool {
    c.is_whitespace() || ('\x1c'..='\x1f').contains(&c)
}

/// SQuAD answer normalization: lowercase, strip ASCII punctuation, drop the
/// articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = articles().replace_all(&no_punct, " ");
    no_articles
        .split(is_py_space)
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn tokens(text: &str) -> Vec<String> {
    normalize_answer(text).split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

/// True iff `pred` equals some gold after normalization.
pub fn exact_match<S: AsRef<str>>(pred: &str, golds: &[S]) -> bool {
    let p = normalize_answer(pred);
    golds.iter().any(|g| normalize_answer(g.as_ref()) == p)
}

fn f1_single(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in gold {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut same = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / pred.len() as f64;
    let recall = same as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Max over golds of bag-of-tokens F1 on normalized tokens.
pub fn token_f1<S: AsRef<str>>(pred: &str, golds: &[S]) -> f64 {
    let p = tokens(pred);
    golds
        .iter()
        .map(|g| f1_single(&p, &tokens(g.as_ref())))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub prediction: String,
    pub golds: Vec<String>,
}

/// Dataset-level scores, as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmF1 {
    pub em: f64,
    pub f1: f64,
}

pub fn dataset_em_f1(pairs: &[ScoredPrediction]) -> Result<EmF1> {
    if pairs.is_empty() {
        return Err(Error::Empty("no predictions to score"));
    }
    let mut em = 0.0;
    let mut f1 = 0.0;
    for p in pairs {
        if p.golds.is_empty() {
            return Err(Error::invalid("prediction has no gold answers"));
        }
        em += f64::from(u8::from(exact_match(&p.prediction, &p.golds)));
        f1 += token_f1(&p.prediction, &p.golds);
    }
    let n = pairs.len() as f64;
    Ok(EmF1 {
        em: 100.0 * em / n,
        f1: 100.0 * f1 / n,
    })
}

/// Mean and sample standard deviation across independent runs (seeds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: usize,
    pub em_mean: f64,
    pub em_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate_runs(runs: &[EmF1]) -> Result<RunSummary> {
    if runs.is_empty() {
        return Err(Error::Empty("no runs to aggregate"));
    }
    let (em_mean, em_std) = mean_std(runs.iter().map(|r| r.em));
    let (f1_mean, f1_std) = mean_std(runs.iter().map(|r| r.f1));
    Ok(RunSummary {
        runs: runs.len(),
        em_mean,
        em_std,
        f1_mean,
        f1_std,
    })
}

/// Scores a `question_id -> prediction` map against a SQuAD-style gold file.
/// Unanswered questions score zero, as in the official evaluator.
pub fn evaluate_squad(gold: &SquadFile, predictions: &HashMap<String, String>) -> Result<EmF1> {
    let mut pairs = Vec::new();
    for article in &gold.data {
        for para in &article.paragraphs {
            for qa in &para.qas {
                let golds: Vec<String> = qa.answers.iter().map(|a| a.text.clone()).collect();
                if golds.is_empty() {
                    continue;
                }
                let prediction = match predictions.get(&qa.id) {
                    Some(p) => p.clone(),
                    None => {
                        log::warn!("unanswered question {} will receive score 0", qa.id);
                        // Nothing normalizes to this, so it can never match.
                        "\u{0}__missing__".to_string()
                    }
                };
                pairs.push(ScoredPrediction { prediction, golds });
            }
        }
    }
    dataset_em_f1(&pairs)
}

/// How invalidated fooling attempts enter the vMER denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VmerMode {
    /// Invalid attempts are removed from numerator and denominator.
    #[default]
    Strict,
    /// Invalid attempts stay in the denominator only.
    Inclusive,
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    examples: usize,
    errors: usize,
}

fn tally<'a>(records: impl IntoIterator<Item = &'a AnnotationRecord>, mode: VmerMode) -> Result<Tally> {
    let mut t = Tally::default();
    for r in records {
        r.check()?;
        match r.validation {
            Validation::AutoValid => t.examples += 1,
            Validation::Valid => {
                t.examples += 1;
                t.errors += 1;
            }
            Validation::Invalid => {
                if mode == VmerMode::Inclusive {
                    t.examples += 1;
                }
            }
            Validation::Pending => {
                return Err(Error::State(format!(
                    "record {} has not been validated",
                    r.record_id
                )))
            }
        }
    }
    Ok(t)
}

/// Validated model error rate, as a percentage.
pub fn vmer<'a>(records: impl IntoIterator<Item = &'a AnnotationRecord>, mode: VmerMode) -> Result<f64> {
    let t = tally(records, mode)?;
    Ok(if t.examples == 0 {
        0.0
    } else {
        100.0 * t.errors as f64 / t.examples as f64
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorStats {
    pub annotator_id: String,
    pub n_examples: usize,
    pub n_validated_errors: usize,
}

impl AnnotatorStats {
    pub fn rate(&self) -> f64 {
        self.n_validated_errors as f64 / self.n_examples as f64
    }

    /// Per-annotator counts, sorted by annotator id. Annotators left with no
    /// validated examples are omitted.
    pub fn from_records<'a>(
        records: impl IntoIterator<Item = &'a AnnotationRecord>,
        mode: VmerMode,
    ) -> Result<Vec<AnnotatorStats>> {
        let mut by_annotator: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
        for r in records {
            by_annotator.entry(r.annotator_id.as_str()).or_default().push(r);
        }
        let mut out = Vec::new();
        for (id, recs) in by_annotator {
            let t = tally(recs, mode)?;
            if t.examples > 0 {
                out.push(AnnotatorStats {
                    annotator_id: id.to_string(),
                    n_examples: t.examples,
                    n_validated_errors: t.errors,
                });
            }
        }
        Ok(out)
    }
}

/// Macro-averaged vMER: unweighted mean of per-annotator error rates, as a
/// percentage.
pub fn mvmer(stats: &[AnnotatorStats]) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::Empty("no annotators"));
    }
    let mut sum = 0.0;
    for s in stats {
        if s.n_examples == 0 || s.n_validated_errors > s.n_examples {
            return Err(Error::invalid(format!(
                "annotator {} has inconsistent counts ({}/{})",
                s.annotator_id, s.n_validated_errors, s.n_examples
            )));
        }
        sum += s.rate();
    }
    Ok(100.0 * sum / stats.len() as f64)
}

/// vMER pooled over annotator stats (micro average).
pub fn pooled_vmer(stats: &[AnnotatorStats]) -> f64 {
    let examples: usize = stats.iter().map(|s| s.n_examples).sum();
    let errors: usize = stats.iter().map(|s| s.n_validated_errors).sum();
    if examples == 0 {
        0.0
    } else {
        100.0 * errors as f64 / examples as f64
    }
}
