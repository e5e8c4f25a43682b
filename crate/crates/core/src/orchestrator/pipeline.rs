use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::answers::sal::DEFAULT_THRESHOLD;
use crate::answers::{
    select_linguistic_candidates, select_sal_candidates, select_span_extraction_candidates, AnswerCandidate,
    CandidateRecord, LinguisticAnnotator, LinguisticMode, SelectionMethod, SpanPredictor, TokenEncoder,
    DEFAULT_MAX_ANSWER_LEN,
};
use crate::backends::{FeatureEncoder, HeuristicAnnotator, LexicalSpanPredictor, TemplateGenerator};
use crate::corpus::{decontaminate, load_passages, Passage, PassageSource, DEFAULT_NGRAM};
use crate::error::{Error, Result};
use crate::filters::{
    roundtrip_verdicts, run_filter, EnsembleVerdict, ExampleState, FilterConfig, FilterContext, FilterMethod,
    SyntheticExample,
};
use crate::io::{read_json, write_json, write_jsonl};
use crate::qgen::{
    generate, parse_end_to_end, serialize_end_to_end, serialize_prompt, DecodeConfig, EndToEndOutput,
    GeneratedRecord, SequenceGenerator, SpanRef,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageInput {
    pub path: PathBuf,
    #[serde(default = "default_source")]
    pub source: PassageSource,
}

fn default_source() -> PassageSource {
    PassageSource::External
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecontaminationConfig {
    pub enabled: bool,
    pub n: usize,
    /// Evaluation corpora to check against.
    pub eval_corpora: Vec<PassageInput>,
}

impl Default for DecontaminationConfig {
    fn default() -> Self {
        DecontaminationConfig {
            enabled: true,
            n: DEFAULT_NGRAM,
            eval_corpora: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    /// Candidates per passage for span extraction and generative selection.
    pub k: usize,
    pub max_answer_len: usize,
    pub sal_threshold: f64,
    /// Candidates below this confidence are dropped.
    pub min_confidence: f64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            k: 5,
            max_answer_len: DEFAULT_MAX_ANSWER_LEN,
            sal_threshold: DEFAULT_THRESHOLD,
            min_confidence: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub passage_source: PassageInput,
    #[serde(default)]
    pub decontamination: DecontaminationConfig,
    #[serde(default = "default_method")]
    pub selection_method: SelectionMethod,
    #[serde(default)]
    pub selection: SelectionParams,
    #[serde(default)]
    pub decode_config: DecodeConfig,
    #[serde(default)]
    pub filter_method: FilterMethod,
    #[serde(default)]
    pub filter_config: FilterConfig,
    /// JSON object of example id to influence score, for the influence filter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub influence_scores: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_method() -> SelectionMethod {
    SelectionMethod::Sal
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        let mut paths = vec![&self.passage_source.path];
        paths.extend(self.decontamination.eval_corpora.iter().map(|c| &c.path));
        paths.extend(self.influence_scores.iter());
        for p in paths {
            if !p.exists() {
                return Err(Error::NotFound(format!("input {}", p.display())));
            }
        }
        if self.decontamination.n == 0 {
            return Err(Error::invalid("decontamination n must be at least 1"));
        }
        if self.selection.k == 0 || self.selection.max_answer_len == 0 {
            return Err(Error::invalid("selection k and max_answer_len must be positive"));
        }
        if !(0.0..=1.0).contains(&self.selection.min_confidence) {
            return Err(Error::invalid("selection min_confidence must lie in [0, 1]"));
        }
        self.decode_config.validate()?;
        self.filter_config.validate()
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Model backends used by the pipeline.
pub struct Backends {
    pub annotator: Box<dyn LinguisticAnnotator>,
    pub span_model: Box<dyn SpanPredictor>,
    pub encoder: Box<dyn TokenEncoder>,
    pub generator: Box<dyn SequenceGenerator>,
    pub ensemble: Vec<Box<dyn SpanPredictor>>,
}

impl Backends {
    /// The deterministic reference backends.
    pub fn reference(n_members: usize) -> Self {
        Backends {
            annotator: Box::new(HeuristicAnnotator),
            span_model: Box::new(LexicalSpanPredictor::default()),
            encoder: Box::new(FeatureEncoder::default()),
            generator: Box::new(TemplateGenerator::default()),
            ensemble: LexicalSpanPredictor::ensemble(n_members)
                .into_iter()
                .map(|m| Box::new(m) as Box<dyn SpanPredictor>)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub name: String,
    #[serde(rename = "in")]
    pub input: usize,
    pub out: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageCount>,
    pub started_at: String,
    pub finished_at: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One example of the final dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub passage_id: String,
    pub question: String,
    pub answer: SpanRef,
    pub state: ExampleState,
    pub answer_confidence: f64,
    pub gen_score: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub dataset_path: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

pub const STAGES: [&str; 4] = ["passage_selection", "answer_selection", "question_generation", "filtering"];

/// Wall-clock time, or `SOURCE_DATE_EPOCH` when set, as RFC 3339.
fn timestamp() -> String {
    let t = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

struct Run<'a> {
    config: &'a PipelineConfig,
    out: &'a Path,
    stages: Vec<StageCount>,
}

impl Run<'_> {
    fn stage<T>(&mut self, name: &str, input: usize, f: impl FnOnce(&Path) -> Result<(T, usize, usize)>) -> Result<T> {
        match f(self.out) {
            Ok((value, out, dropped)) => {
                log::info!("{name}: {input} in, {out} out, {dropped} dropped");
                self.stages.push(StageCount {
                    name: name.to_string(),
                    input,
                    out,
                    dropped,
                });
                Ok(value)
            }
            Err(e) => {
                self.stages.push(StageCount {
                    name: name.to_string(),
                    input,
                    out: 0,
                    dropped: 0,
                });
                Err(Error::StageFailed {
                    stage: name.to_string(),
                    message: e.to_string(),
                })
            }
        }
    }
}

/// Runs passage selection, answer selection, question generation and
/// filtering, writing every intermediate artifact plus `manifest.json` to
/// the output directory. On failure the manifest names the failed stage.
pub fn run_pipeline(config: &PipelineConfig, backends: &Backends) -> Result<PipelineOutput> {
    let started_at = timestamp();
    let out = config.output_dir.clone();
    fs::create_dir_all(&out)?;
    let manifest_path = out.join("manifest.json");
    let mut run = Run {
        config,
        out: &out,
        stages: Vec::new(),
    };
    let result = execute(&mut run, backends);
    let (status, failed_stage, error) = match &result {
        Ok(()) => (RunStatus::Ok, None, None),
        Err(Error::StageFailed { stage, message }) => (RunStatus::Failed, Some(stage.clone()), Some(message.clone())),
        Err(e) => (RunStatus::Failed, Some("setup".to_string()), Some(e.to_string())),
    };
    let manifest = Manifest {
        config_hash: config.hash(),
        seed: config.seed,
        stages: run.stages,
        started_at,
        finished_at: timestamp(),
        status,
        failed_stage,
        error,
    };
    write_json(&manifest_path, &manifest)?;
    result?;
    Ok(PipelineOutput {
        dataset_path: out.join("dataset.jsonl"),
        manifest_path,
        manifest,
    })
}

fn execute(run: &mut Run<'_>, backends: &Backends) -> Result<()> {
    let config = run.config;
    config.validate()?;
    let seed = config.seed;

    let source = load_passages(&config.passage_source.path, config.passage_source.source)?;
    let passages = run.stage(STAGES[0], source.len(), |dir| {
        let (kept, dropped, report) = if config.decontamination.enabled {
            let mut eval = Vec::new();
            for c in &config.decontamination.eval_corpora {
                eval.extend(load_passages(&c.path, c.source)?);
            }
            let d = decontaminate(&source, &eval, config.decontamination.n)?;
            (d.kept, d.dropped, Some(d.report))
        } else {
            (source.clone(), Vec::new(), None)
        };
        write_jsonl(dir.join("passages.jsonl"), &kept)?;
        write_jsonl(dir.join("passages_dropped.jsonl"), &dropped)?;
        if let Some(r) = report {
            write_json(dir.join("overlap_report.json"), &r)?;
        }
        let (k, d) = (kept.len(), dropped.len());
        Ok((kept, k, d))
    })?;

    let n_passages = passages.len();
    let candidates = run.stage(STAGES[1], n_passages, |dir| {
        let per_passage: Vec<(Vec<AnswerCandidate>, usize)> = passages
            .par_iter()
            .map(|p| select_candidates(p, config, backends))
            .collect::<Result<_>>()?;
        let records: Vec<CandidateRecord> = passages
            .iter()
            .zip(&per_passage)
            .map(|(p, (c, _))| CandidateRecord::new(&p.id, config.selection_method, c))
            .collect();
        write_jsonl(dir.join("candidates.jsonl"), &records)?;
        let dropped = per_passage.iter().map(|(_, d)| d).sum();
        let flat: Vec<(usize, usize, AnswerCandidate)> = per_passage
            .into_iter()
            .enumerate()
            .flat_map(|(pi, (cs, _))| cs.into_iter().enumerate().map(move |(ci, c)| (pi, ci, c)))
            .collect();
        let n = flat.len();
        Ok((flat, n, dropped))
    })?;

    let decode = config.decode_config.clone().with_seed(seed);
    let examples = run.stage(STAGES[2], candidates.len(), |dir| {
        let generated: Vec<Vec<SyntheticExample>> = candidates
            .par_iter()
            .map(|(pi, ci, cand)| {
                let passage = &passages[*pi];
                let prefix = format!("{}-a{ci:03}", passage.id);
                let prompt = serialize_prompt(&cand.span, passage)?;
                let qs = generate(backends.generator.as_ref(), &prefix, &prompt, &cand.span, &decode)?;
                Ok(qs
                    .into_iter()
                    .enumerate()
                    .map(|(qi, q)| SyntheticExample {
                        id: format!("{prefix}-q{qi:02}"),
                        passage_id: passage.id.clone(),
                        answer: cand.span.clone(),
                        question: q.text,
                        answer_confidence: cand.confidence,
                        gen_score: q.score,
                        state: ExampleState::Raw,
                        final_answer: None,
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        let dropped = generated.iter().filter(|g| g.is_empty()).count();
        let mut examples: Vec<SyntheticExample> = generated.into_iter().flatten().collect();
        examples.sort_by(|a, b| a.id.cmp(&b.id));
        let records: Vec<GeneratedRecord> = examples
            .iter()
            .map(|e| GeneratedRecord {
                example_id: e.id.clone(),
                passage_id: e.passage_id.clone(),
                answer: SpanRef::from(&e.answer),
                question: e.question.clone(),
                gen_score: e.gen_score,
                config_id: decode.id(),
            })
            .collect();
        write_jsonl(dir.join("generated.jsonl"), &records)?;
        let n = examples.len();
        Ok((examples, n, dropped))
    })?;

    run.stage(STAGES[3], examples.len(), |dir| {
        let by_id: HashMap<String, Passage> = passages.iter().map(|p| (p.id.clone(), p.clone())).collect();
        let verdicts: Option<HashMap<String, EnsembleVerdict>> = if config.filter_method.needs_verdicts() {
            if backends.ensemble.len() != config.filter_config.n_members {
                return Err(Error::invalid(format!(
                    "ensemble has {} members but the filter expects {}",
                    backends.ensemble.len(),
                    config.filter_config.n_members
                )));
            }
            let ensemble: Vec<&dyn SpanPredictor> = backends.ensemble.iter().map(|m| m.as_ref()).collect();
            let vs = roundtrip_verdicts(&examples, &by_id, &ensemble)?;
            write_jsonl(dir.join("verdicts.jsonl"), &vs)?;
            Some(vs.into_iter().map(|v| (v.example_id.clone(), v)).collect())
        } else {
            None
        };
        let influence: Option<HashMap<String, f64>> = config.influence_scores.as_ref().map(read_json).transpose()?;
        let ctx = FilterContext {
            passages: Some(&by_id),
            verdicts: verdicts.as_ref(),
            influence: influence.as_ref(),
        };
        let outcome = run_filter(config.filter_method, &examples, &ctx, &config.filter_config)?;
        let dataset: Vec<DatasetRecord> = outcome
            .examples
            .iter()
            .map(|e| DatasetRecord {
                id: e.id.clone(),
                passage_id: e.passage_id.clone(),
                question: e.question.clone(),
                answer: SpanRef::from(e.final_answer.as_ref().expect("kept examples carry a final answer")),
                state: e.state,
                answer_confidence: e.answer_confidence,
                gen_score: e.gen_score,
            })
            .collect();
        write_jsonl(dir.join("dataset.jsonl"), &dataset)?;
        write_jsonl(dir.join("discarded.jsonl"), &outcome.discarded)?;
        write_json(dir.join("filter_manifest.json"), &outcome.manifest)?;
        Ok(((), dataset.len(), outcome.discarded.len()))
    })
}

/// Candidates for one passage, plus how many fell below the confidence
/// floor.
fn select_candidates(
    passage: &Passage,
    config: &PipelineConfig,
    backends: &Backends,
) -> Result<(Vec<AnswerCandidate>, usize)> {
    let sel = &config.selection;
    let all = match config.selection_method {
        SelectionMethod::Sal => {
            select_sal_candidates(passage, backends.encoder.as_ref(), sel.max_answer_len, sel.sal_threshold)?.candidates
        }
        SelectionMethod::SpanExtraction => {
            select_span_extraction_candidates(passage, backends.span_model.as_ref(), sel.k, sel.max_answer_len)?
        }
        SelectionMethod::NounChunks => {
            select_linguistic_candidates(passage, backends.annotator.as_ref(), LinguisticMode::NounChunks)?
        }
        SelectionMethod::NamedEntities => {
            select_linguistic_candidates(passage, backends.annotator.as_ref(), LinguisticMode::NamedEntities)?
        }
        SelectionMethod::PosExtended => {
            select_linguistic_candidates(passage, backends.annotator.as_ref(), LinguisticMode::PosExtended)?
        }
        SelectionMethod::Generative => generative_candidates(passage, backends.generator.as_ref(), sel.k, config)?,
    };
    let before = all.len();
    let kept: Vec<AnswerCandidate> = all.into_iter().filter(|c| c.confidence >= sel.min_confidence).collect();
    let dropped = before - kept.len();
    Ok((kept, dropped))
}

/// Answers proposed by end-to-end generation, best score first.
fn generative_candidates(
    passage: &Passage,
    generator: &dyn SequenceGenerator,
    k: usize,
    config: &PipelineConfig,
) -> Result<Vec<AnswerCandidate>> {
    let prompt = serialize_end_to_end(passage);
    let decode = DecodeConfig {
        nbest: k.max(config.decode_config.nbest),
        beam_size: k.max(config.decode_config.beam_size),
        ..config.decode_config.clone().with_seed(config.seed)
    };
    let mut hyps = generator
        .generate(&prompt, &decode)
        .map_err(|e| Error::backend(format!("generator on passage `{}`", passage.id), e))?;
    hyps.sort_by(|a, b| b.score().total_cmp(&a.score()).then_with(|| a.text.cmp(&b.text)));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for h in hyps {
        if out.len() == k {
            break;
        }
        if let EndToEndOutput::Usable { answer, .. } = parse_end_to_end(&h.text, passage) {
            if seen.insert(answer.offsets()) {
                out.push(AnswerCandidate {
                    span: answer,
                    confidence: h.score(),
                    method: SelectionMethod::Generative,
                });
            }
        }
    }
    Ok(out)
}

/// Stage counts keyed by stage name.
pub fn stage_counts(manifest: &Manifest) -> BTreeMap<&str, &StageCount> {
    manifest.stages.iter().map(|s| (s.name.as_str(), s)).collect()
}
