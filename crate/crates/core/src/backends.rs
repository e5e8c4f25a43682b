//! Deterministic reference backends.
//!
//! These implement the model contracts with simple lexical heuristics so the
//! pipeline, CLI and evaluation service run end-to-end without neural
//! models. Outputs depend only on their inputs (and the seed, where one is
//! taken).

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::answers::sal::SalProjections;
use crate::answers::{Annotation, Encoding, LabelledSpan, LinguisticAnnotator, SpanDistributions, SpanPredictor, TokenEncoder, TokenTag};
use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::io::read_jsonl;
use crate::qgen::{parse_prompt, DecodeConfig, DecodeStrategy, Hypothesis, SequenceGenerator, BOS, EOS, SEP};
use crate::text::find_chars;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "in", "on", "at", "to", "for", "from", "by", "with", "as", "is",
    "was", "were", "are", "be", "been", "it", "its", "this", "that", "these", "those", "which", "who", "whom",
    "what", "when", "where", "why", "how", "did", "does", "do", "had", "has", "have", "not", "their", "his",
    "her", "they", "he", "she", "into", "than", "then", "after", "before", "during", "while", "also",
];

fn is_stopword(w: &str) -> bool {
    STOPWORDS.contains(&w.to_lowercase().as_str())
}

/// A token with char offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub start: usize,
    pub end: usize,
    pub text: &'a str,
}

/// Word and punctuation tokens of `text`, with char offsets.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\w+(?:['’\-]\w+)*|[^\w\s]").expect("valid token regex"));
    let mut out = Vec::new();
    let (mut byte, mut chars) = (0usize, 0usize);
    for m in re.find_iter(text) {
        chars += text[byte..m.start()].chars().count();
        let len = m.as_str().chars().count();
        out.push(Token {
            start: chars,
            end: chars + len,
            text: m.as_str(),
        });
        chars += len;
        byte = m.end();
    }
    out
}

fn is_word(t: &str) -> bool {
    t.chars().next().is_some_and(char::is_alphanumeric)
}

fn is_capitalized(t: &str) -> bool {
    t.chars().next().is_some_and(char::is_uppercase)
}

fn is_number(t: &str) -> bool {
    t.chars().next().is_some_and(|c| c.is_ascii_digit())
}

/// Salient tokens: numbers and capitalized words that are not stopwords.
fn salient(t: &str) -> bool {
    is_number(t) || (is_capitalized(t) && !is_stopword(t))
}

fn sentence_initial(tokens: &[Token<'_>], i: usize) -> bool {
    i == 0 || matches!(tokens[i - 1].text, "." | "!" | "?")
}

/// Rule-based POS tags, entities, noun chunks and clauses.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicAnnotator;

impl HeuristicAnnotator {
    fn pos(tokens: &[Token<'_>], i: usize) -> &'static str {
        let t = tokens[i].text;
        if !is_word(t) {
            "PUNCT"
        } else if is_number(t) {
            "NUM"
        } else if is_stopword(t) {
            "X"
        } else if is_capitalized(t) && !sentence_initial(tokens, i) {
            "PROPN"
        } else {
            let lower = t.to_lowercase();
            if ["ous", "ful", "ive", "able", "ible", "ical", "less", "ish"].iter().any(|s| lower.ends_with(s)) {
                "ADJ"
            } else if lower.ends_with("ed") || lower.ends_with("ing") {
                "VERB"
            } else {
                "NOUN"
            }
        }
    }
}

/// Maximal runs of indices satisfying `pred`, as `[first, last]` pairs.
fn runs(n: usize, pred: impl Fn(usize) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if pred(i) {
            let s = i;
            while i + 1 < n && pred(i + 1) {
                i += 1;
            }
            out.push((s, i));
        }
        i += 1;
    }
    out
}

impl LinguisticAnnotator for HeuristicAnnotator {
    fn annotate(&self, passage: &Passage) -> Result<Annotation> {
        let toks = tokenize(&passage.text);
        let tags: Vec<&str> = (0..toks.len()).map(|i| Self::pos(&toks, i)).collect();
        let span = |(a, b): (usize, usize), label: &str| LabelledSpan {
            start: toks[a].start,
            end: toks[b].end,
            label: label.to_string(),
        };
        let entities = runs(toks.len(), |i| tags[i] == "PROPN")
            .into_iter()
            .map(|r| span(r, "ENT"))
            .chain(runs(toks.len(), |i| tags[i] == "NUM").into_iter().map(|r| span(r, "CARDINAL")))
            .collect();
        let noun_chunks = runs(toks.len(), |i| matches!(tags[i], "ADJ" | "NOUN" | "PROPN" | "NUM"))
            .into_iter()
            .filter(|&(_, b)| matches!(tags[b], "NOUN" | "PROPN"))
            .map(|r| span(r, "NP"))
            .collect();
        let clauses = runs(toks.len(), |i| !matches!(toks[i].text, "," | ";" | "." | "!" | "?" | ":"))
            .into_iter()
            .filter(|(a, b)| b - a >= 2)
            .map(|r| span(r, "CLAUSE"))
            .collect();
        Ok(Annotation {
            tokens: toks
                .iter()
                .zip(&tags)
                .map(|(t, p)| TokenTag {
                    start: t.start,
                    end: t.end,
                    pos: p.to_string(),
                })
                .collect(),
            entities,
            noun_chunks,
            clauses,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub passage_id: String,
    #[serde(flatten)]
    pub annotation: Annotation,
}

/// Annotations precomputed by an external tagger, one JSONL record per
/// passage.
#[derive(Debug, Clone, Default)]
pub struct FileAnnotator {
    by_passage: HashMap<String, Annotation>,
}

impl FileAnnotator {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let records: Vec<AnnotationRecord> = read_jsonl(path)?;
        Ok(FileAnnotator {
            by_passage: records.into_iter().map(|r| (r.passage_id, r.annotation)).collect(),
        })
    }
}

impl LinguisticAnnotator for FileAnnotator {
    fn annotate(&self, passage: &Passage) -> Result<Annotation> {
        self.by_passage
            .get(&passage.id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("annotation for passage `{}`", passage.id)))
    }
}

/// SAL encoder over salient-token runs (numbers and capitalized
/// non-stopwords). Queries carry a run-start flag, keys a run-end flag, and
/// both carry the run index at a few rotation frequencies, so only cells
/// spanning exactly one run score above 0.5. Runs more than 15 apart may
/// alias, which the default answer length never reaches. Sentence-initial
/// runs start with a weaker flag and so score lower.
#[derive(Debug, Clone, Copy)]
pub struct FeatureEncoder {
    pub weight: f64,
}

impl Default for FeatureEncoder {
    fn default() -> Self {
        FeatureEncoder { weight: 3.0 }
    }
}

const RUN_FREQS: [f64; 3] = [2.0, 0.7, 0.25];
const RUN_BIAS: f64 = 3.5;

impl TokenEncoder for FeatureEncoder {
    fn encode(&self, passage: &Passage) -> Result<Encoding> {
        let toks = tokenize(&passage.text);
        let n = toks.len();
        let d = 2 + 2 * RUN_FREQS.len();
        let mut q = Array2::zeros((n, d));
        let mut k = Array2::zeros((n, d));
        let w = self.weight;
        for (r, &(a, b)) in runs(n, |i| salient(toks[i].text)).iter().enumerate() {
            q[(a, 0)] = w * if sentence_initial(&toks, a) { 0.8 } else { 1.0 };
            k[(b, 0)] = w;
            for i in a..=b {
                for (f, freq) in RUN_FREQS.iter().enumerate() {
                    let (sin, cos) = (freq * r as f64).sin_cos();
                    q[(i, 1 + 2 * f)] = w * cos;
                    q[(i, 2 + 2 * f)] = w * sin;
                    k[(i, 1 + 2 * f)] = w * cos;
                    k[(i, 2 + 2 * f)] = w * sin;
                }
            }
        }
        for i in 0..n {
            q[(i, d - 1)] = w;
            k[(i, d - 1)] = -RUN_BIAS * w;
        }
        Ok(Encoding {
            offsets: toks.iter().map(|t| Some((t.start, t.end))).collect(),
            passage_range: (0, n),
            heads: vec![SalProjections::new(q, k)?],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AnswerType {
    Number,
    Name,
    Any,
}

impl AnswerType {
    fn of(question: &str) -> Self {
        let q = question.to_lowercase();
        if ["how many", "how much", "when", "what year"].iter().any(|w| q.contains(w)) {
            AnswerType::Number
        } else if ["who", "where", "which"].iter().any(|w| q.split_whitespace().any(|t| t == *w)) {
            AnswerType::Name
        } else {
            AnswerType::Any
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Span predictor scoring salient tokens near question words. `member`
/// varies the proximity decay and a small positional bias so ensemble
/// members disagree on hard cases.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalSpanPredictor {
    pub member: usize,
}

impl LexicalSpanPredictor {
    pub fn ensemble(n: usize) -> Vec<LexicalSpanPredictor> {
        (0..n).map(|member| LexicalSpanPredictor { member }).collect()
    }
}

impl SpanPredictor for LexicalSpanPredictor {
    fn predict(&self, passage: &Passage, question: Option<&str>) -> Result<SpanDistributions> {
        let toks = tokenize(&passage.text);
        let n = toks.len();
        if n == 0 {
            return Err(Error::invalid(format!("passage `{}` has no tokens", passage.id)));
        }
        let qwords: HashSet<String> = question
            .map(|q| {
                tokenize(q)
                    .iter()
                    .filter(|t| is_word(t.text) && !is_stopword(t.text))
                    .map(|t| t.text.to_lowercase())
                    .collect()
            })
            .unwrap_or_default();
        let in_q: Vec<bool> = toks.iter().map(|t| qwords.contains(&t.text.to_lowercase())).collect();
        let anchors: Vec<usize> = (0..n).filter(|&i| in_q[i]).collect();
        let tau = 2.0 + (self.member % 3) as f64;
        let near: Vec<f64> = (0..n)
            .map(|i| {
                if in_q[i] {
                    return 0.0;
                }
                anchors
                    .iter()
                    .map(|&a| (-(a.abs_diff(i) as f64) / tau).exp())
                    .fold(0.0, f64::max)
            })
            .collect();
        let sal: Vec<bool> = toks.iter().zip(&in_q).map(|(t, &q)| salient(t.text) && !q).collect();
        let want = question.map_or(AnswerType::Any, AnswerType::of);
        let typed: Vec<f64> = toks
            .iter()
            .zip(&sal)
            .map(|(t, &s)| {
                let hit = s && match want {
                    AnswerType::Number => is_number(t.text),
                    AnswerType::Name => !is_number(t.text),
                    AnswerType::Any => false,
                };
                if hit { 2.0 } else { 0.0 }
            })
            .collect();
        let bias = |i: usize| if (i + self.member).is_multiple_of(4) { 0.4 } else { 0.0 };
        let start: Vec<f64> = (0..n)
            .map(|i| {
                let first = sal[i] && (i == 0 || !sal[i - 1]);
                3.0 * near[i] + 2.0 * f64::from(u8::from(sal[i])) + f64::from(u8::from(first)) + typed[i] + bias(i)
            })
            .collect();
        let end: Vec<f64> = (0..n)
            .map(|i| {
                let last = sal[i] && (i + 1 == n || !sal[i + 1]);
                3.0 * near[i] + 2.0 * f64::from(u8::from(sal[i])) + f64::from(u8::from(last)) + typed[i] + bias(i + 1)
            })
            .collect();
        Ok(SpanDistributions {
            offsets: toks.iter().map(|t| Some((t.start, t.end))).collect(),
            passage_range: (0, n),
            p_start: softmax(&start),
            p_end: softmax(&end),
        })
    }
}

/// Template-based question generator.
///
/// For a standard prompt it finds the sentence holding the answer and
/// rewrites it around a wh-word; templates are ranked by a fixed per-token
/// probability. For an end-to-end prompt (passage only) it emits
/// `answer <sep> question` with the first salient run as the answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateGenerator {
    pub seed: u64,
}

const TEMPLATE_PROBS: [f64; 6] = [0.9, 0.75, 0.6, 0.45, 0.3, 0.15];

fn wh_word(answer: &str) -> &'static str {
    if answer.chars().any(|c| c.is_ascii_digit()) {
        "How many"
    } else if answer.split_whitespace().all(is_capitalized) {
        "Who"
    } else {
        "What"
    }
}

fn sentence_around(passage: &str, answer: &str) -> Option<String> {
    let start = passage.find(answer)?;
    let s = passage[..start].rfind(['.', '!', '?']).map_or(0, |i| i + 1);
    let after = start + answer.len();
    let e = passage[after..].find(['.', '!', '?']).map_or(passage.len(), |i| after + i);
    Some(passage[s..e].trim().to_string())
}

fn templates(answer: &str, passage: &str) -> Vec<String> {
    let Some(sentence) = sentence_around(passage, answer) else {
        return vec![format!("What is {answer}?")];
    };
    let (before, after) = sentence.split_once(answer).unwrap_or((&sentence, ""));
    let mut before: Vec<&str> = before.split_whitespace().collect();
    if before.last().is_some_and(|w| w.eq_ignore_ascii_case("the")) {
        before.pop();
    }
    let rest: Vec<&str> = before.into_iter().chain(after.split_whitespace()).collect();
    let rest = rest.join(" ");
    let wh = wh_word(answer);
    let content: Vec<&str> = rest.split_whitespace().filter(|w| !is_stopword(w)).collect();
    let mut out = vec![
        format!("{wh} {rest}?"),
        format!("{wh} is mentioned in: {rest}?"),
        format!("According to the passage, {} {rest}?", wh.to_lowercase()),
        format!("{wh} {}?", content.iter().take(4).copied().collect::<Vec<_>>().join(" ")),
        format!("Which detail completes: {rest}?"),
        format!("{wh} is described here?"),
    ];
    out.retain(|q| q.trim_end_matches('?').split_whitespace().count() > 1 && !q.contains(" ?"));
    out.dedup();
    if out.is_empty() {
        out.push(format!("What is {answer}?"));
    }
    out
}

fn prompt_seed(seed: u64, prompt: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(prompt.as_bytes());
    let d = h.finalize();
    u64::from_be_bytes(d[..8].try_into().expect("8 bytes"))
}

fn hypothesis(text: String, p: f64) -> Hypothesis {
    let num_tokens = tokenize(&text).len().max(1);
    Hypothesis {
        log_prob: num_tokens as f64 * p.ln(),
        num_tokens,
        text,
    }
}

impl SequenceGenerator for TemplateGenerator {
    fn generate(&self, prompt: &str, config: &DecodeConfig) -> Result<Vec<Hypothesis>> {
        let cands: Vec<String> = match parse_prompt(prompt) {
            Some((answer, passage)) => templates(&answer, &passage),
            None => {
                let passage = prompt
                    .strip_prefix(&format!("{BOS} "))
                    .and_then(|p| p.strip_suffix(&format!(" {EOS}")))
                    .ok_or_else(|| Error::invalid("prompt is neither answer-conditioned nor end-to-end"))?;
                let toks = tokenize(passage);
                let spans = runs(toks.len(), |i| salient(toks[i].text) && !sentence_initial(&toks, i));
                spans
                    .iter()
                    .filter_map(|&(a, b)| {
                        let answer = crate::text::char_slice(passage, toks[a].start, toks[b].end)?;
                        find_chars(passage, answer)?;
                        let q = templates(answer, passage).into_iter().next()?;
                        Some(format!("{answer} {SEP} {q}"))
                    })
                    .collect()
            }
        };
        if cands.is_empty() {
            return Ok(Vec::new());
        }
        let scored: Vec<(String, f64)> = cands
            .into_iter()
            .zip(TEMPLATE_PROBS.iter().cycle())
            .enumerate()
            .map(|(k, (t, &p))| (t, if k >= TEMPLATE_PROBS.len() { p * 0.5 } else { p }))
            .collect();
        Ok(match config.strategy {
            DecodeStrategy::Beam => scored
                .into_iter()
                .take(config.beam_size)
                .map(|(t, p)| hypothesis(t, p))
                .collect(),
            DecodeStrategy::DiverseBeam => {
                let strength = config.beam_strength;
                scored
                    .into_iter()
                    .take(config.beam_size)
                    .enumerate()
                    .map(|(g, (t, p))| hypothesis(t, p * (1.0 - 0.1 * strength * g as f64).max(0.05)))
                    .collect()
            }
            DecodeStrategy::Nucleus => {
                let top_p = config.top_p;
                let total: f64 = scored.iter().map(|(_, p)| p).sum();
                let mut nucleus = Vec::new();
                let mut mass = 0.0;
                for (t, p) in &scored {
                    nucleus.push((t.clone(), *p));
                    mass += p / total;
                    if mass >= top_p {
                        break;
                    }
                }
                let mut rng = ChaCha8Rng::seed_from_u64(prompt_seed(config.seed, prompt));
                let z: f64 = nucleus.iter().map(|(_, p)| p).sum();
                (0..config.nbest)
                    .map(|_| {
                        let mut r = rng.random::<f64>() * z;
                        let mut pick = nucleus.len() - 1;
                        for (i, (_, p)) in nucleus.iter().enumerate() {
                            if r < *p {
                                pick = i;
                                break;
                            }
                            r -= p;
                        }
                        let (t, p) = &nucleus[pick];
                        hypothesis(t.clone(), *p)
                    })
                    .collect()
            }
        })
    }
}

/// Checkpoint produced by a [`crate::orchestrator::TrainerBackend`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub id: String,
    pub stage: usize,
}

/// Trainer that records the schedule and reports F1 scores derived from a
/// hash of checkpoint and dataset names.
#[derive(Debug, Clone, Default)]
pub struct StubTrainer {
    pub checkpoints_per_stage: usize,
}

impl crate::orchestrator::TrainerBackend for StubTrainer {
    fn train(&self, schedule: &crate::orchestrator::TrainingSchedule) -> Result<Vec<CheckpointRef>> {
        let per = self.checkpoints_per_stage.max(1);
        Ok((0..schedule.stages.len())
            .flat_map(|s| {
                (0..per).map(move |c| CheckpointRef {
                    id: format!("stage{s}-ckpt{c}"),
                    stage: s,
                })
            })
            .collect())
    }

    fn evaluate(&self, checkpoint: &CheckpointRef, dataset: &str) -> Result<f64> {
        let h = prompt_seed(checkpoint.stage as u64, &format!("{}\0{dataset}", checkpoint.id));
        Ok(40.0 + (h % 5000) as f64 / 100.0)
    }
}
