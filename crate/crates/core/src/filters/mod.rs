//! Filtering and relabelling of synthetic QA examples.

mod influence;
mod relabel;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::answers::{answer_question, AnswerSpan, SpanPredictor, DEFAULT_MAX_ANSWER_LEN};
use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::metrics::normalize_answer;

pub use influence::{
    filter_by_influence, influence_score, inverse_hvp_lissa, HessianMode, HessianVectorProduct, LissaParams,
};
pub use relabel::{apply_relabel, self_train_relabel, RelabelDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleState {
    Raw,
    Kept,
    Relabelled,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExample {
    pub id: String,
    pub passage_id: String,
    pub answer: AnswerSpan,
    pub question: String,
    pub answer_confidence: f64,
    pub gen_score: f64,
    pub state: ExampleState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<AnswerSpan>,
}

impl SyntheticExample {
    /// Checks the state / final-answer coupling.
    pub fn check(&self) -> Result<()> {
        let same = |a: &AnswerSpan| normalize_answer(&a.text) == normalize_answer(&self.answer.text);
        let ok = match (self.state, &self.final_answer) {
            (ExampleState::Raw, _) => true,
            (ExampleState::Discarded, fa) => fa.is_none(),
            (ExampleState::Kept, Some(_)) => true,
            (ExampleState::Relabelled, Some(fa)) => !same(fa),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::State(format!("example {} violates its {:?} invariant", self.id, self.state)))
        }
    }

    fn finalize(mut self, keep: bool) -> Self {
        if keep {
            self.state = ExampleState::Kept;
            self.final_answer = Some(self.answer.clone());
        } else {
            self.state = ExampleState::Discarded;
            self.final_answer = None;
        }
        self
    }
}

/// Kept / dropped split of a filter, preserving input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    pub kept: Vec<SyntheticExample>,
    pub dropped: Vec<SyntheticExample>,
}

fn check_thresh(thresh: f64) -> Result<()> {
    if (0.0..=1.0).contains(&thresh) {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold {thresh} not in [0, 1]")))
    }
}

fn partition_by(examples: &[SyntheticExample], keep: impl Fn(&SyntheticExample) -> bool) -> Partition {
    let (kept, dropped) = examples.iter().cloned().partition(|e| keep(e));
    Partition { kept, dropped }
}

pub fn filter_by_answer_confidence(examples: &[SyntheticExample], thresh: f64) -> Result<Partition> {
    check_thresh(thresh)?;
    Ok(partition_by(examples, |e| e.answer_confidence >= thresh))
}

pub fn filter_by_generator_confidence(examples: &[SyntheticExample], thresh: f64) -> Result<Partition> {
    check_thresh(thresh)?;
    Ok(partition_by(examples, |e| e.gen_score >= thresh))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberPrediction {
    pub text: String,
    pub confidence: f64,
}

/// Ensemble answers to one generated question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleVerdict {
    pub example_id: String,
    pub predictions: Vec<MemberPrediction>,
    /// Members whose normalized prediction equals the prompted answer.
    pub n_correct: usize,
    /// Diagnostics for members that failed; their prediction is empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

impl EnsembleVerdict {
    pub fn n_members(&self) -> usize {
        self.predictions.len()
    }
}

/// Asks every ensemble member the generated question and counts how many
/// recover the prompted answer. Member failures count as incorrect.
pub fn roundtrip_verdict(
    example: &SyntheticExample,
    passage: &Passage,
    ensemble: &[&dyn SpanPredictor],
    max_answer_len: usize,
) -> Result<EnsembleVerdict> {
    if ensemble.is_empty() {
        return Err(Error::Empty("roundtrip ensemble"));
    }
    let target = normalize_answer(&example.answer.text);
    let mut predictions = Vec::with_capacity(ensemble.len());
    let mut failures = Vec::new();
    let mut n_correct = 0;
    for (i, member) in ensemble.iter().enumerate() {
        let (text, confidence) = match answer_question(passage, *member, &example.question, max_answer_len) {
            Ok(Some((span, score))) => (span.text, score),
            Ok(None) => (String::new(), 0.0),
            Err(e) => {
                failures.push(format!("member {i}: {e}"));
                (String::new(), 0.0)
            }
        };
        if normalize_answer(&text) == target {
            n_correct += 1;
        }
        predictions.push(MemberPrediction { text, confidence });
    }
    Ok(EnsembleVerdict {
        example_id: example.id.clone(),
        predictions,
        n_correct,
        failures,
    })
}

/// Verdicts for many examples, computed in parallel; output order follows
/// input order.
pub fn roundtrip_verdicts(
    examples: &[SyntheticExample],
    passages: &HashMap<String, Passage>,
    ensemble: &[&dyn SpanPredictor],
) -> Result<Vec<EnsembleVerdict>> {
    examples
        .par_iter()
        .map(|ex| {
            let passage = passages
                .get(&ex.passage_id)
                .ok_or_else(|| Error::UnknownPassage(ex.passage_id.clone()))?;
            roundtrip_verdict(ex, passage, ensemble, DEFAULT_MAX_ANSWER_LEN)
        })
        .collect()
}

/// Ids of verdicts with at least `min_correct` correct members.
pub fn filter_roundtrip(verdicts: &[EnsembleVerdict], min_correct: usize) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for v in verdicts {
        if min_correct > v.n_members() {
            return Err(Error::invalid(format!(
                "min_correct {min_correct} exceeds ensemble size {} for {}",
                v.n_members(),
                v.example_id
            )));
        }
        if v.n_correct >= min_correct {
            out.push(v.example_id.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub answer_conf_thresh: f64,
    pub gen_conf_thresh: f64,
    pub roundtrip_min_correct: usize,
    pub selftrain_keep_at: usize,
    pub selftrain_relabel_at: usize,
    pub n_members: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            answer_conf_thresh: 0.5,
            gen_conf_thresh: 0.3,
            roundtrip_min_correct: 6,
            selftrain_keep_at: 5,
            selftrain_relabel_at: 2,
            n_members: 6,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        check_thresh(self.answer_conf_thresh)?;
        check_thresh(self.gen_conf_thresh)?;
        if self.selftrain_relabel_at > self.selftrain_keep_at || self.selftrain_keep_at > self.n_members {
            return Err(Error::invalid("need relabel_at <= keep_at <= n_members"));
        }
        if self.roundtrip_min_correct > self.n_members {
            return Err(Error::invalid("roundtrip_min_correct exceeds n_members"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMethod {
    None,
    AnswerConfidence,
    GeneratorConfidence,
    Influence,
    Roundtrip,
    SelfTraining,
    /// Answer-confidence threshold followed by self-training.
    #[default]
    Combined,
}

impl FilterMethod {
    pub fn needs_verdicts(self) -> bool {
        matches!(self, FilterMethod::Roundtrip | FilterMethod::SelfTraining | FilterMethod::Combined)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub name: String,
    pub input: usize,
    pub kept: usize,
    pub relabelled: usize,
    pub discarded: usize,
}

/// Config plus per-stage counts; enough to rerun a filter at a fixed
/// output size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterManifest {
    pub method: FilterMethod,
    pub config: FilterConfig,
    pub stages: Vec<StageCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Kept and relabelled examples, in input order, with `final_answer` set.
    pub examples: Vec<SyntheticExample>,
    pub discarded: Vec<SyntheticExample>,
    pub manifest: FilterManifest,
}

/// Inputs some filters need beyond the examples themselves.
#[derive(Default)]
pub struct FilterContext<'a> {
    pub passages: Option<&'a HashMap<String, Passage>>,
    pub verdicts: Option<&'a HashMap<String, EnsembleVerdict>>,
    pub influence: Option<&'a HashMap<String, f64>>,
}

fn stage_from(name: &str, input: usize, examples: &[SyntheticExample]) -> StageCounts {
    let mut c = StageCounts {
        name: name.to_string(),
        input,
        ..Default::default()
    };
    for e in examples {
        match e.state {
            ExampleState::Kept => c.kept += 1,
            ExampleState::Relabelled => c.relabelled += 1,
            _ => c.discarded += 1,
        }
    }
    c
}

fn threshold_stage(name: &str, p: Partition) -> (Vec<SyntheticExample>, StageCounts) {
    let input = p.kept.len() + p.dropped.len();
    let all: Vec<_> = p
        .kept
        .into_iter()
        .map(|e| e.finalize(true))
        .chain(p.dropped.into_iter().map(|e| e.finalize(false)))
        .collect();
    let counts = stage_from(name, input, &all);
    (all, counts)
}

fn self_training_stage(
    examples: Vec<SyntheticExample>,
    ctx: &FilterContext<'_>,
    config: &FilterConfig,
) -> Result<(Vec<SyntheticExample>, StageCounts)> {
    let verdicts = ctx.verdicts.ok_or(Error::Empty("self-training needs ensemble verdicts"))?;
    let passages = ctx.passages.ok_or(Error::Empty("self-training needs passages"))?;
    let input = examples.len();
    let out = examples
        .iter()
        .map(|ex| {
            let v = verdicts
                .get(&ex.id)
                .ok_or_else(|| Error::NotFound(format!("verdict for example `{}`", ex.id)))?;
            let passage = passages
                .get(&ex.passage_id)
                .ok_or_else(|| Error::UnknownPassage(ex.passage_id.clone()))?;
            let d = self_train_relabel(v, &ex.answer.text, config.selftrain_keep_at, config.selftrain_relabel_at)?;
            Ok(apply_relabel(ex, &d, passage))
        })
        .collect::<Result<Vec<_>>>()?;
    let counts = stage_from("self_training", input, &out);
    Ok((out, counts))
}

/// Runs `method` over `examples`.
pub fn run_filter(
    method: FilterMethod,
    examples: &[SyntheticExample],
    ctx: &FilterContext<'_>,
    config: &FilterConfig,
) -> Result<FilterOutcome> {
    config.validate()?;
    let mut stages = Vec::new();
    let mut resolved: Vec<SyntheticExample> = Vec::with_capacity(examples.len());
    match method {
        FilterMethod::None => {
            let (all, c) = threshold_stage("none", partition_by(examples, |_| true));
            resolved = all;
            stages.push(c);
        }
        FilterMethod::AnswerConfidence => {
            let (all, c) = threshold_stage(
                "answer_confidence",
                filter_by_answer_confidence(examples, config.answer_conf_thresh)?,
            );
            resolved = all;
            stages.push(c);
        }
        FilterMethod::GeneratorConfidence => {
            let (all, c) = threshold_stage(
                "generator_confidence",
                filter_by_generator_confidence(examples, config.gen_conf_thresh)?,
            );
            resolved = all;
            stages.push(c);
        }
        FilterMethod::Influence => {
            let scores = ctx.influence.ok_or(Error::Empty("influence filter needs scores"))?;
            let (all, c) = threshold_stage("influence", filter_by_influence(examples, scores)?);
            resolved = all;
            stages.push(c);
        }
        FilterMethod::Roundtrip => {
            let verdicts = ctx.verdicts.ok_or(Error::Empty("roundtrip filter needs verdicts"))?;
            let vs = examples
                .iter()
                .map(|e| {
                    verdicts
                        .get(&e.id)
                        .cloned()
                        .ok_or_else(|| Error::NotFound(format!("verdict for example `{}`", e.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let ids: std::collections::HashSet<String> =
                filter_roundtrip(&vs, config.roundtrip_min_correct)?.into_iter().collect();
            let (all, c) = threshold_stage("roundtrip", partition_by(examples, |e| ids.contains(&e.id)));
            resolved = all;
            stages.push(c);
        }
        FilterMethod::SelfTraining => {
            let (all, c) = self_training_stage(examples.to_vec(), ctx, config)?;
            resolved = all;
            stages.push(c);
        }
        FilterMethod::Combined => {
            let p = filter_by_answer_confidence(examples, config.answer_conf_thresh)?;
            let (dropped, c1) = threshold_stage("answer_confidence", Partition { kept: vec![], dropped: p.dropped });
            let c1 = StageCounts {
                input: examples.len(),
                kept: p.kept.len(),
                ..c1
            };
            stages.push(c1);
            let (relabelled, c2) = self_training_stage(p.kept, ctx, config)?;
            stages.push(c2);
            resolved.extend(relabelled);
            resolved.extend(dropped);
        }
    }
    // Restore input order.
    let order: HashMap<&str, usize> = examples.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
    resolved.sort_by_key(|e| order.get(e.id.as_str()).copied().unwrap_or(usize::MAX));
    let (kept, discarded): (Vec<_>, Vec<_>) =
        resolved.into_iter().partition(|e| e.state != ExampleState::Discarded);
    Ok(FilterOutcome {
        examples: kept,
        discarded,
        manifest: FilterManifest {
            method,
            config: config.clone(),
            stages,
        },
    })
}

/// Answer-confidence filter followed by self-training on the survivors.
pub fn combined_filter(
    examples: &[SyntheticExample],
    verdicts: &HashMap<String, EnsembleVerdict>,
    passages: &HashMap<String, Passage>,
    config: &FilterConfig,
) -> Result<FilterOutcome> {
    let ctx = FilterContext {
        passages: Some(passages),
        verdicts: Some(verdicts),
        influence: None,
    };
    run_filter(FilterMethod::Combined, examples, &ctx, config)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::answers::{SourceDataset, SpanDistributions};
    use crate::corpus::PassageSource;
    use proptest::prelude::*;

    pub(crate) const TEXT: &str = "The Denver Broncos beat the Carolina Panthers in Santa Clara.";

    pub(crate) fn passage() -> Passage {
        Passage::new("p", TEXT, PassageSource::SquadTrain)
    }

    pub(crate) fn example(id: &str, conf: f64, gen: f64) -> SyntheticExample {
        let p = passage();
        SyntheticExample {
            id: id.into(),
            passage_id: p.id.clone(),
            answer: AnswerSpan::locate(&p, "Denver Broncos", SourceDataset::Synthetic).unwrap(),
            question: "Who won?".into(),
            answer_confidence: conf,
            gen_score: gen,
            state: ExampleState::Raw,
            final_answer: None,
        }
    }

    /// Answers with a fixed substring of the passage.
    struct Echo(&'static str);

    impl SpanPredictor for Echo {
        fn predict(&self, passage: &Passage, _: Option<&str>) -> Result<SpanDistributions> {
            let span = AnswerSpan::locate(passage, self.0, SourceDataset::Synthetic).unwrap();
            Ok(SpanDistributions {
                offsets: vec![Some((span.char_start, span.char_end))],
                passage_range: (0, 1),
                p_start: vec![0.9],
                p_end: vec![0.9],
            })
        }
    }

    struct Failing;

    impl SpanPredictor for Failing {
        fn predict(&self, _: &Passage, _: Option<&str>) -> Result<SpanDistributions> {
            Err(Error::invalid("boom"))
        }
    }

    #[test]
    fn confidence_filters() {
        let exs = vec![example("a", 0.4, 0.1), example("b", 0.6, 0.3), example("c", 0.9, 0.2)];
        assert_eq!(filter_by_answer_confidence(&exs, 0.0).unwrap().kept.len(), 3);
        assert_eq!(filter_by_answer_confidence(&exs, 0.6).unwrap().kept.len(), 2);
        assert_eq!(filter_by_answer_confidence(&exs, 1.0).unwrap().kept.len(), 0);
        let g = filter_by_generator_confidence(&exs[..2], 0.3).unwrap();
        assert_eq!(g.kept.len(), 1);
        assert_eq!(g.kept[0].id, "b");
        assert_eq!(g.kept[0], exs[1]);
        assert!(filter_by_answer_confidence(&exs, 1.5).is_err());
    }

    #[test]
    fn roundtrip_counts_normalized_matches() {
        let p = passage();
        let mut ex = example("e", 1.0, 1.0);
        let a = Echo("Broncos");
        let b = Echo("Denver Broncos");
        let c = Echo("Broncos beat");
        let ensemble: Vec<&dyn SpanPredictor> = vec![&a, &b, &c];
        let v = roundtrip_verdict(&ex, &p, &ensemble, 30).unwrap();
        assert_eq!(v.n_correct, 1);
        assert_eq!(v.n_members(), 3);

        // Prompted answer "the Denver Broncos" normalizes to the same string.
        ex.answer = AnswerSpan::locate(&p, "The Denver Broncos", SourceDataset::Synthetic).unwrap();
        let all: Vec<&dyn SpanPredictor> = vec![&b, &b, &b];
        assert_eq!(roundtrip_verdict(&ex, &p, &all, 30).unwrap().n_correct, 3);
        let none: Vec<&dyn SpanPredictor> = vec![&a, &c];
        assert_eq!(roundtrip_verdict(&ex, &p, &none, 30).unwrap().n_correct, 0);

        let f = Failing;
        let mixed: Vec<&dyn SpanPredictor> = vec![&b, &f];
        let v = roundtrip_verdict(&ex, &p, &mixed, 30).unwrap();
        assert_eq!(v.n_correct, 1);
        assert_eq!(v.failures.len(), 1);
        assert!(roundtrip_verdict(&ex, &p, &[], 30).is_err());
    }

    fn verdict(id: &str, texts: &[&str], n_correct: usize) -> EnsembleVerdict {
        EnsembleVerdict {
            example_id: id.into(),
            predictions: texts
                .iter()
                .map(|t| MemberPrediction {
                    text: t.to_string(),
                    confidence: 0.5,
                })
                .collect(),
            n_correct,
            failures: vec![],
        }
    }

    #[test]
    fn roundtrip_filter_thresholds() {
        let vs = vec![verdict("a", &["x"; 6], 5), verdict("b", &["x"; 6], 6), verdict("c", &["x"; 6], 0)];
        assert_eq!(filter_roundtrip(&vs, 0).unwrap().len(), 3);
        assert_eq!(filter_roundtrip(&vs, 6).unwrap(), vec!["b".to_string()]);
        assert!(filter_roundtrip(&vs, 7).is_err());
    }

    #[test]
    fn combined_matches_sequential_oracle() {
        let p = passage();
        let passages = HashMap::from([(p.id.clone(), p.clone())]);
        let exs = vec![
            example("low", 0.4, 0.9),
            example("keep", 0.9, 0.9),
            example("relabel", 0.7, 0.9),
            example("discard", 0.5, 0.9),
            example("missing_span", 0.8, 0.9),
        ];
        let verdicts: HashMap<String, EnsembleVerdict> = [
            verdict("low", &["Denver Broncos"; 6], 6),
            verdict("keep", &["Denver Broncos"; 6], 6),
            verdict("relabel", &["Carolina Panthers", "Carolina Panthers", "Carolina Panthers", "Santa Clara", "x1", "x2"], 0),
            verdict("discard", &["a1", "b1", "c1", "d1", "e1", "f1"], 0),
            verdict("missing_span", &["Seattle", "Seattle", "Seattle", "Seattle", "Seattle", "Seattle"], 0),
        ]
        .into_iter()
        .map(|v| (v.example_id.clone(), v))
        .collect();
        let cfg = FilterConfig::default();
        let out = combined_filter(&exs, &verdicts, &passages, &cfg).unwrap();

        // Oracle: threshold first, then relabel each survivor.
        let survivors = filter_by_answer_confidence(&exs, 0.5).unwrap().kept;
        let expected: Vec<SyntheticExample> = survivors
            .iter()
            .map(|e| {
                let d = self_train_relabel(&verdicts[&e.id], &e.answer.text, 5, 2).unwrap();
                apply_relabel(e, &d, &p)
            })
            .filter(|e| e.state != ExampleState::Discarded)
            .collect();
        assert_eq!(out.examples, expected);
        let ids: Vec<_> = out.examples.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["keep", "relabel"]);
        assert_eq!(out.examples[1].state, ExampleState::Relabelled);
        assert_eq!(out.examples[1].final_answer.as_ref().unwrap().text, "Carolina Panthers");
        assert_eq!(out.manifest.stages[0].input, 5);
        assert_eq!(out.manifest.stages[0].kept, 4);
        assert_eq!(out.manifest.stages[1].input, 4);
        assert_eq!(
            (out.manifest.stages[1].kept, out.manifest.stages[1].relabelled, out.manifest.stages[1].discarded),
            (1, 1, 2)
        );

        let mut partial = verdicts.clone();
        partial.remove("keep");
        assert!(combined_filter(&exs, &partial, &passages, &cfg).is_err());
    }

    fn fuzz_examples(spec: &[(u8, u8, u8)]) -> (Vec<SyntheticExample>, HashMap<String, EnsembleVerdict>) {
        let names = ["Denver Broncos", "Carolina Panthers", "Santa Clara", "Broncos"];
        let mut exs = Vec::new();
        let mut vs = HashMap::new();
        for (i, &(c, g, pattern)) in spec.iter().enumerate() {
            let id = format!("e{i}");
            exs.push(example(&id, f64::from(c) / 10.0, f64::from(g) / 10.0));
            let texts: Vec<&str> = (0..6).map(|m| names[((pattern as usize) >> (m % 4)) % 4]).collect();
            let n_correct = texts.iter().filter(|t| normalize_answer(t) == "denver broncos").count();
            vs.insert(id.clone(), verdict(&id, &texts, n_correct));
        }
        (exs, vs)
    }

    proptest! {
        #[test]
        fn outputs_respect_invariants(spec in proptest::collection::vec((0u8..=10, 0u8..=10, any::<u8>()), 0..20)) {
            let (exs, vs) = fuzz_examples(&spec);
            let p = passage();
            let passages = HashMap::from([(p.id.clone(), p)]);
            let ctx = FilterContext { passages: Some(&passages), verdicts: Some(&vs), influence: None };
            for m in [FilterMethod::None, FilterMethod::AnswerConfidence, FilterMethod::GeneratorConfidence,
                      FilterMethod::Roundtrip, FilterMethod::SelfTraining, FilterMethod::Combined] {
                let out = run_filter(m, &exs, &ctx, &FilterConfig::default()).unwrap();
                prop_assert_eq!(out.examples.len() + out.discarded.len(), exs.len());
                for e in out.examples.iter().chain(&out.discarded) {
                    prop_assert!(e.check().is_ok());
                }
            }
        }

        #[test]
        fn thresholds_monotone(spec in proptest::collection::vec((0u8..=10, 0u8..=10, any::<u8>()), 0..20), t in 0u8..10) {
            let (exs, vs) = fuzz_examples(&spec);
            let lo = f64::from(t) / 10.0;
            let hi = f64::from(t + 1) / 10.0;
            prop_assert!(filter_by_answer_confidence(&exs, hi).unwrap().kept.len() <= filter_by_answer_confidence(&exs, lo).unwrap().kept.len());
            prop_assert!(filter_by_generator_confidence(&exs, hi).unwrap().kept.len() <= filter_by_generator_confidence(&exs, lo).unwrap().kept.len());
            let verdicts: Vec<_> = exs.iter().map(|e| vs[&e.id].clone()).collect();
            for k in 0..6 {
                let a = filter_roundtrip(&verdicts, k).unwrap();
                let b = filter_roundtrip(&verdicts, k + 1).unwrap();
                prop_assert!(b.iter().all(|id| a.contains(id)));
            }
        }
    }
}
