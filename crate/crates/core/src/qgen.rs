//! Question generation: prompt serialization, decoding configurations, the
//! generator backend contract, end-to-end answer+question parsing, and
//! answerability bookkeeping.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::answers::{AnswerSpan, SourceDataset};
use crate::corpus::{Passage, QaExample};
use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
/// Separator between answer and question in end-to-end generator output.
pub const SEP: &str = "<sep>";

pub const BEAM_SIZES: [usize; 4] = [1, 3, 5, 10];
pub const NBEST: [usize; 4] = [1, 3, 5, 10];
pub const BEAM_STRENGTHS: [f64; 6] = [0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
pub const TOP_PS: [f64; 3] = [0.1, 0.5, 0.75];
/// Beam width used for diverse beam search in the grid.
pub const DIVERSE_BEAM_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStrategy {
    Beam,
    DiverseBeam,
    Nucleus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: DecodeStrategy,
    pub beam_size: usize,
    pub nbest: usize,
    #[serde(default = "one")]
    pub beam_strength: f64,
    #[serde(default = "one")]
    pub top_p: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl Default for DecodeConfig {
    /// Beam search, width 5, one question per answer.
    fn default() -> Self {
        DecodeConfig::beam(5, 1)
    }
}

impl DecodeConfig {
    pub fn beam(beam_size: usize, nbest: usize) -> Self {
        DecodeConfig {
            strategy: DecodeStrategy::Beam,
            beam_size,
            nbest,
            beam_strength: 1.0,
            top_p: 1.0,
            seed: 0,
        }
    }

    pub fn diverse_beam(beam_strength: f64) -> Self {
        DecodeConfig {
            strategy: DecodeStrategy::DiverseBeam,
            beam_size: DIVERSE_BEAM_SIZE,
            nbest: 1,
            beam_strength,
            top_p: 1.0,
            seed: 0,
        }
    }

    pub fn nucleus(top_p: f64) -> Self {
        DecodeConfig {
            strategy: DecodeStrategy::Nucleus,
            beam_size: 1,
            nbest: 1,
            beam_strength: 1.0,
            top_p,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nbest == 0 || self.beam_size == 0 {
            return Err(Error::invalid("beam_size and nbest must be at least 1"));
        }
        match self.strategy {
            DecodeStrategy::Beam | DecodeStrategy::DiverseBeam if self.nbest > self.beam_size => Err(Error::invalid(
                format!("nbest {} exceeds beam_size {}", self.nbest, self.beam_size),
            )),
            DecodeStrategy::DiverseBeam if !(self.beam_strength > 0.0 && self.beam_strength <= 1.0) => {
                Err(Error::invalid(format!("beam_strength {} not in (0, 1]", self.beam_strength)))
            }
            DecodeStrategy::Nucleus if !(self.top_p > 0.0 && self.top_p <= 1.0) => {
                Err(Error::invalid(format!("top_p {} not in (0, 1]", self.top_p)))
            }
            _ => Ok(()),
        }
    }

    pub fn id(&self) -> String {
        match self.strategy {
            DecodeStrategy::Beam => format!("beam-b{}-n{}", self.beam_size, self.nbest),
            DecodeStrategy::DiverseBeam => format!("diverse-b{}-n{}-s{}", self.beam_size, self.nbest, self.beam_strength),
            DecodeStrategy::Nucleus => format!("nucleus-p{}-n{}-seed{}", self.top_p, self.nbest, self.seed),
        }
    }
}

/// The decoding sweep: beam sizes crossed with every admissible nbest
/// (nbest <= beam_size), diverse beam strengths, and nucleus top_p values.
pub fn build_decode_grid() -> Vec<DecodeConfig> {
    let mut grid = Vec::new();
    for &b in &BEAM_SIZES {
        for &n in NBEST.iter().filter(|&&n| n <= b) {
            grid.push(DecodeConfig::beam(b, n));
        }
    }
    grid.extend(BEAM_STRENGTHS.iter().map(|&s| DecodeConfig::diverse_beam(s)));
    grid.extend(TOP_PS.iter().map(|&p| DecodeConfig::nucleus(p)));
    grid
}

/// One decoded sequence from a generator backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    /// Total sequence log-probability.
    pub log_prob: f64,
    pub num_tokens: usize,
}

impl Hypothesis {
    /// `exp(mean token log-prob)`, in `(0, 1]`.
    pub fn score(&self) -> f64 {
        (self.log_prob / self.num_tokens as f64).exp()
    }
}

/// Sequence generator backend. Must be deterministic for beam strategies
/// (and for nucleus given the seed).
pub trait SequenceGenerator: Send + Sync {
    fn generate(&self, prompt: &str, config: &DecodeConfig) -> Result<Vec<Hypothesis>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub text: String,
    pub score: f64,
    pub config_id: String,
    pub prompt_answer: AnswerSpan,
}

/// `<s> answer </s> passage </s>`
pub fn serialize_prompt(answer: &AnswerSpan, passage: &Passage) -> Result<String> {
    if passage.text.is_empty() {
        return Err(Error::invalid(format!("passage `{}` is empty", passage.id)));
    }
    answer.validate(passage)?;
    Ok(format!("{BOS} {} {EOS} {} {EOS}", answer.text, passage.text))
}

/// Splits a serialized prompt back into `(answer, passage)`.
pub fn parse_prompt(prompt: &str) -> Option<(String, String)> {
    let body = prompt.strip_prefix(&format!("{BOS} "))?.strip_suffix(&format!(" {EOS}"))?;
    let (answer, passage) = body.split_once(&format!(" {EOS} "))?;
    Some((answer.to_string(), passage.to_string()))
}

/// Runs the generator and returns at most `nbest` distinct questions sorted
/// by descending score (ties by text).
pub fn generate(
    generator: &dyn SequenceGenerator,
    prompt_id: &str,
    prompt: &str,
    answer: &AnswerSpan,
    config: &DecodeConfig,
) -> Result<Vec<GeneratedQuestion>> {
    config.validate()?;
    let hyps = generator
        .generate(prompt, config)
        .map_err(|e| Error::backend(format!("generator on prompt `{prompt_id}`"), e))?;
    let mut best: HashMap<String, f64> = HashMap::new();
    for h in hyps {
        let text = h.text.trim();
        if text.is_empty() {
            continue;
        }
        if h.num_tokens == 0 || !h.log_prob.is_finite() || h.log_prob > 0.0 {
            return Err(Error::backend(
                format!("generator on prompt `{prompt_id}`"),
                format!("invalid hypothesis score {} over {} tokens", h.log_prob, h.num_tokens),
            ));
        }
        let s = h.score();
        best.entry(text.to_string())
            .and_modify(|v| *v = v.max(s))
            .or_insert(s);
    }
    let mut out: Vec<(String, f64)> = best.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out.truncate(config.nbest);
    let config_id = config.id();
    Ok(out
        .into_iter()
        .map(|(text, score)| GeneratedQuestion {
            text,
            score,
            config_id: config_id.clone(),
            prompt_answer: answer.clone(),
        })
        .collect())
}

/// Generated output JSONL record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub example_id: String,
    pub passage_id: String,
    pub answer: SpanRef,
    pub question: String,
    pub gen_score: f64,
    pub config_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRef {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl From<&AnswerSpan> for SpanRef {
    fn from(s: &AnswerSpan) -> Self {
        SpanRef {
            start: s.char_start,
            end: s.char_end,
            text: s.text.clone(),
        }
    }
}

/// Input for end-to-end generation: the passage alone.
pub fn serialize_end_to_end(passage: &Passage) -> String {
    format!("{BOS} {} {EOS}", passage.text)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EndToEndOutput {
    Usable { answer: AnswerSpan, question: String },
    Unusable { reason: String },
}

impl EndToEndOutput {
    fn unusable(reason: impl Into<String>) -> Self {
        EndToEndOutput::Unusable { reason: reason.into() }
    }

    pub fn is_usable(&self) -> bool {
        matches!(self, EndToEndOutput::Usable { .. })
    }
}

/// Parses `answer <sep> question`. The answer must occur verbatim in the
/// passage (first occurrence is used).
pub fn parse_end_to_end(output: &str, passage: &Passage) -> EndToEndOutput {
    let parts: Vec<&str> = output.split(SEP).collect();
    if parts.len() != 2 {
        return EndToEndOutput::unusable(format!("expected one separator, found {}", parts.len() - 1));
    }
    let answer = parts[0].trim();
    let question = parts[1].trim();
    if answer.is_empty() || question.is_empty() {
        return EndToEndOutput::unusable("empty answer or question");
    }
    match AnswerSpan::locate(passage, answer, SourceDataset::Synthetic) {
        Some(span) => EndToEndOutput::Usable {
            answer: span,
            question: question.to_string(),
        },
        None => EndToEndOutput::unusable("answer not found in passage"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerabilityLabel {
    Valid,
    TargetAnswerMismatch,
    Ungrammatical,
    Invalid,
}

impl AnswerabilityLabel {
    pub const ALL: [AnswerabilityLabel; 4] = [
        AnswerabilityLabel::Valid,
        AnswerabilityLabel::TargetAnswerMismatch,
        AnswerabilityLabel::Ungrammatical,
        AnswerabilityLabel::Invalid,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerabilityRecord {
    pub question_id: String,
    pub label: AnswerabilityLabel,
}

/// Percentage of records per label; every label is present in the output.
pub fn aggregate_answerability(records: &[AnswerabilityRecord]) -> Result<BTreeMap<AnswerabilityLabel, f64>> {
    if records.is_empty() {
        return Err(Error::Empty("no answerability records"));
    }
    let mut counts: BTreeMap<AnswerabilityLabel, usize> = AnswerabilityLabel::ALL.iter().map(|&l| (l, 0)).collect();
    for r in records {
        *counts.get_mut(&r.label).expect("all labels seeded") += 1;
    }
    let n = records.len() as f64;
    Ok(counts.into_iter().map(|(l, c)| (l, 100.0 * c as f64 / n)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorTrainingPair {
    pub source: String,
    pub target: String,
}

/// Generator fine-tuning data: a seeded subset of `squad_subset` SQuAD
/// examples drawn from passages that also appear in the adversarial
/// training data, followed by all adversarial examples. Examples whose
/// first answer does not align with the passage are skipped.
pub fn build_generator_training_set(
    passages: &[Passage],
    squad: &[QaExample],
    adversarial: &[QaExample],
    squad_subset: usize,
    seed: u64,
) -> Result<Vec<GeneratorTrainingPair>> {
    let by_id: HashMap<&str, &Passage> = passages.iter().map(|p| (p.id.as_str(), p)).collect();
    let adv_passages: HashSet<&str> = adversarial.iter().map(|e| e.passage_id.as_str()).collect();
    let mut pool: Vec<&QaExample> = squad
        .iter()
        .filter(|e| adv_passages.contains(e.passage_id.as_str()))
        .collect();
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pool.truncate(squad_subset);

    let mut out = Vec::new();
    for ex in pool.into_iter().chain(adversarial) {
        let passage = by_id
            .get(ex.passage_id.as_str())
            .ok_or_else(|| Error::UnknownPassage(ex.passage_id.clone()))?;
        let Some((start, text)) = ex.answers.first() else {
            continue;
        };
        let Ok(span) = AnswerSpan::with_text(passage, *start, text, SourceDataset::Squad) else {
            log::debug!("skipping misaligned example {}", ex.id);
            continue;
        };
        out.push(GeneratorTrainingPair {
            source: serialize_prompt(&span, passage)?,
            target: ex.question.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PassageSource;
    use proptest::prelude::*;

    struct Stub(Vec<Hypothesis>);

    impl SequenceGenerator for Stub {
        fn generate(&self, _: &str, _: &DecodeConfig) -> Result<Vec<Hypothesis>> {
            Ok(self.0.clone())
        }
    }

    fn hyp(text: &str, log_prob: f64) -> Hypothesis {
        Hypothesis {
            text: text.into(),
            log_prob,
            num_tokens: 2,
        }
    }

    fn passage() -> Passage {
        Passage::new("p", "The play starred Derek Jacobi in the title role.", PassageSource::SquadTrain)
    }

    #[test]
    fn prompt_template() {
        let p = passage();
        let a = AnswerSpan::locate(&p, "Derek Jacobi", SourceDataset::Squad).unwrap();
        let prompt = serialize_prompt(&a, &p).unwrap();
        assert_eq!(prompt, format!("<s> Derek Jacobi </s> {} </s>", p.text));
        assert_eq!(parse_prompt(&prompt), Some(("Derek Jacobi".into(), p.text.clone())));
        let empty = Passage::new("e", "", PassageSource::External);
        assert!(serialize_prompt(&a, &empty).is_err());
        let other = Passage::new("q", "Something else entirely here.", PassageSource::External);
        assert!(serialize_prompt(&a, &other).is_err());
    }

    #[test]
    fn generation_contract() {
        let p = passage();
        let a = AnswerSpan::locate(&p, "Derek Jacobi", SourceDataset::Squad).unwrap();
        let stub = Stub(vec![hyp("Who starred?", -1.0), hyp("Who starred?", -0.4), hyp("Who was cast?", -0.2), hyp("  ", -0.1)]);
        let out = generate(&stub, "x", "prompt", &a, &DecodeConfig::beam(5, 5)).unwrap();
        let texts: Vec<_> = out.iter().map(|q| q.text.as_str()).collect();
        assert_eq!(texts, ["Who was cast?", "Who starred?"]);
        assert!((out[1].score - (-0.2f64).exp()).abs() < 1e-12);
        assert_eq!(out[0].config_id, "beam-b5-n5");
        let one = generate(&stub, "x", "prompt", &a, &DecodeConfig::beam(5, 1)).unwrap();
        assert_eq!(one.len(), 1);
        let bad = Stub(vec![hyp("Q?", f64::NAN)]);
        assert!(generate(&bad, "x", "prompt", &a, &DecodeConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DecodeConfig::beam(3, 5).validate().is_err());
        assert!(DecodeConfig::nucleus(0.0).validate().is_err());
        assert!(DecodeConfig::nucleus(1.0).validate().is_ok());
        assert!(DecodeConfig::diverse_beam(1.2).validate().is_err());
        assert!(DecodeConfig::beam(0, 0).validate().is_err());
    }

    #[test]
    fn grid_contents() {
        let grid = build_decode_grid();
        assert!(grid.contains(&DecodeConfig::beam(5, 1)));
        assert!(grid.contains(&DecodeConfig::nucleus(0.75)));
        // Oracle: enumerate the declared sets under nbest <= beam_size.
        let mut beam_pairs = 0;
        for b in BEAM_SIZES {
            for n in NBEST {
                if n <= b {
                    beam_pairs += 1;
                }
            }
        }
        assert_eq!(beam_pairs, 10);
        assert_eq!(grid.len(), beam_pairs + BEAM_STRENGTHS.len() + TOP_PS.len());
        assert!(grid.iter().all(|c| c.validate().is_ok()));
        let ids: HashSet<_> = grid.iter().map(DecodeConfig::id).collect();
        assert_eq!(ids.len(), grid.len());
    }

    #[test]
    fn end_to_end_parsing() {
        let p = Passage::new("sb", "The Denver Broncos won Super Bowl 50.", PassageSource::SquadTrain);
        assert_eq!(serialize_end_to_end(&p), format!("<s> {} </s>", p.text));
        match parse_end_to_end("Denver Broncos <sep> Who won Super Bowl 50?", &p) {
            EndToEndOutput::Usable { answer, question } => {
                assert_eq!(answer.text, "Denver Broncos");
                assert_eq!(answer.char_start, 4);
                assert_eq!(question, "Who won Super Bowl 50?");
            }
            other => panic!("{other:?}"),
        }
        assert!(!parse_end_to_end("Denver Broncos Who won?", &p).is_usable());
        assert!(!parse_end_to_end("a <sep> b <sep> c", &p).is_usable());
        assert!(!parse_end_to_end("Carolina Panthers <sep> Who lost?", &p).is_usable());
    }

    fn recs(labels: &[(AnswerabilityLabel, usize)]) -> Vec<AnswerabilityRecord> {
        let mut out = Vec::new();
        for &(l, n) in labels {
            for _ in 0..n {
                out.push(AnswerabilityRecord {
                    question_id: format!("q{}", out.len()),
                    label: l,
                });
            }
        }
        out
    }

    #[test]
    fn answerability_examples() {
        use AnswerabilityLabel::*;
        let agg = aggregate_answerability(&recs(&[(Valid, 28), (TargetAnswerMismatch, 2)])).unwrap();
        assert_eq!(format!("{:.1}", agg[&Valid]), "93.3");
        assert_eq!(format!("{:.1}", agg[&TargetAnswerMismatch]), "6.7");
        assert_eq!(agg[&Ungrammatical], 0.0);
        assert_eq!(agg[&Invalid], 0.0);
        let all = aggregate_answerability(&recs(&[(Ungrammatical, 7)])).unwrap();
        assert_eq!(all[&Ungrammatical], 100.0);
        let each = aggregate_answerability(&recs(&[(Valid, 1), (TargetAnswerMismatch, 1), (Ungrammatical, 1), (Invalid, 1)])).unwrap();
        assert!(each.values().all(|&v| v == 25.0));
        assert!(aggregate_answerability(&[]).is_err());
    }

    #[test]
    fn generator_training_subset() {
        let p1 = Passage::new("p1", "Alpha beta gamma.", PassageSource::SquadTrain);
        let p2 = Passage::new("p2", "Delta epsilon zeta.", PassageSource::SquadTrain);
        let ex = |id: &str, pid: &str, start: usize, text: &str| QaExample {
            id: id.into(),
            passage_id: pid.into(),
            question: format!("{id}?"),
            answers: vec![(start, text.into())],
        };
        let squad = vec![ex("s1", "p1", 0, "Alpha"), ex("s2", "p1", 6, "beta"), ex("s3", "p2", 0, "Delta")];
        let adv = vec![ex("a1", "p1", 11, "gamma")];
        let out = build_generator_training_set(&[p1.clone(), p2], &squad, &adv, 1, 7).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[0].target == "s1?" || out[0].target == "s2?");
        assert_eq!(out[1].target, "a1?");
        assert_eq!(out[1].source, format!("<s> gamma </s> {} </s>", p1.text));
        let again = build_generator_training_set(&[p1.clone(), Passage::new("p2", "x", PassageSource::SquadTrain)], &squad, &adv, 1, 7).unwrap();
        assert_eq!(again, out);
    }

    proptest! {
        #[test]
        fn prompt_round_trip(prefix in "[a-zA-Z ]{0,10}", answer in "[a-zA-Z][a-zA-Z ]{0,8}[a-zA-Z]", suffix in "[a-zA-Z .]{0,10}") {
            let p = Passage::new("p", format!("{prefix}{answer}{suffix}"), PassageSource::External);
            let start = prefix.chars().count();
            let a = AnswerSpan::with_text(&p, start, &answer, SourceDataset::Squad).unwrap();
            let prompt = serialize_prompt(&a, &p).unwrap();
            prop_assert_eq!(parse_prompt(&prompt), Some((answer.clone(), p.text.clone())));
        }

        #[test]
        fn generate_bounded_and_unique(texts in proptest::collection::vec(("[ab]{1,3}", -5.0f64..0.0), 0..12), nbest in 1usize..6) {
            let p = passage();
            let a = AnswerSpan::locate(&p, "Derek Jacobi", SourceDataset::Squad).unwrap();
            let stub = Stub(texts.iter().map(|(t, lp)| hyp(t, *lp)).collect());
            let out = generate(&stub, "x", "prompt", &a, &DecodeConfig::beam(10, nbest)).unwrap();
            prop_assert!(out.len() <= nbest);
            let uniq: HashSet<_> = out.iter().map(|q| &q.text).collect();
            prop_assert_eq!(uniq.len(), out.len());
            prop_assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
        }

        #[test]
        fn answerability_permutation_invariant(labels in proptest::collection::vec(0usize..4, 1..30), seed in any::<u64>()) {
            let mut records: Vec<_> = labels.iter().enumerate().map(|(i, &l)| AnswerabilityRecord {
                question_id: format!("q{i}"), label: AnswerabilityLabel::ALL[l] }).collect();
            let before = aggregate_answerability(&records).unwrap();
            records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(aggregate_answerability(&records).unwrap(), before.clone());
            let sum: f64 = before.values().sum();
            prop_assert!((sum - 100.0).abs() < 1e-9);
        }
    }
}
