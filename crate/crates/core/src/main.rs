use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use advgen::answers::{
    align_answer_sets, answers_by_passage, overlap_stats, select_linguistic_candidates, select_sal_candidates,
    select_span_extraction_candidates, AnswerCandidate, AnswerSource, AnswerSpan, CandidateRecord,
    LinguisticAnnotator, LinguisticMode, SelectionMethod, SourceDataset, SpanPredictor, DEFAULT_MAX_ANSWER_LEN,
};
use advgen::backends::{FeatureEncoder, FileAnnotator, HeuristicAnnotator, LexicalSpanPredictor, TemplateGenerator};
use advgen::corpus::{decontaminate, load_passages, load_squad, Passage, PassageSource, Split, SquadFile, DEFAULT_NGRAM};
use advgen::eval_service::{http, EvalService, PredictorModel, QaModel, ServiceConfig, SystemClock};
use advgen::filters::{
    roundtrip_verdicts, run_filter, EnsembleVerdict, ExampleState, FilterConfig, FilterContext, FilterMethod,
    SyntheticExample,
};
use advgen::io::{read_json, read_jsonl, write_json, write_jsonl};
use advgen::metrics::{evaluate_squad, mvmer, pooled_vmer, vmer, AnnotatorStats, VmerMode};
use advgen::orchestrator::{
    build_schedule, materialize_stage, run_pipeline, select_checkpoint, Backends, CheckpointEval, DatasetRef,
    PipelineConfig, ScheduleMode,
};
use advgen::qgen::{build_decode_grid, generate, serialize_prompt, DecodeConfig, DecodeStrategy, GeneratedRecord, SpanRef};
use advgen::eval_service::AnnotationRecord;

#[derive(Parser)]
#[command(name = "advgen", version, about = "Synthetic adversarial QA generation and evaluation")]
struct Cli {
    /// JSON config for the subcommand (pipeline, service, filter or decode config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for stochastic stages.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drop candidate passages sharing an n-gram with evaluation data.
    Decontaminate(DecontaminateArgs),
    /// Merge answer annotations from several SQuAD-format datasets.
    Align(AlignArgs),
    /// Select answer candidates for passages.
    SelectAnswers(SelectArgs),
    /// Generate questions for answer candidates.
    Generate(GenerateArgs),
    /// Filter or relabel generated examples.
    Filter(FilterArgs),
    /// Build a two-stage or mixed training schedule.
    BuildSchedule(ScheduleArgs),
    /// Pick the checkpoint with the best mean F1.
    SelectCheckpoint(CheckpointArgs),
    /// Score predictions or annotation logs.
    #[command(subcommand)]
    Evaluate(EvaluateCmd),
    /// Run the full generation pipeline from a config.
    Pipeline(PipelineArgs),
    /// Serve the adversarial human evaluation API.
    ServeEval(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    SquadTrain,
    External,
    EvalSet,
}

impl From<SourceArg> for PassageSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::SquadTrain => PassageSource::SquadTrain,
            SourceArg::External => PassageSource::External,
            SourceArg::EvalSet => PassageSource::EvalSet,
        }
    }
}

#[derive(Args)]
struct DecontaminateArgs {
    /// Candidate passages (JSONL or SQuAD JSON).
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, value_enum, default_value = "external")]
    source: SourceArg,
    /// Evaluation corpora (JSONL or SQuAD JSON); repeatable.
    #[arg(long = "eval", required = true)]
    eval: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NGRAM)]
    n: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AlignArgs {
    /// `DATASET:SPLIT=PATH`, e.g. `aqa_bert:train=train.json`; repeatable.
    /// Earlier datasets win on duplicate spans.
    #[arg(long = "dataset", required = true)]
    datasets: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    PosExtended,
    NounChunks,
    NamedEntities,
    SpanExtraction,
    Sal,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    passages: PathBuf,
    #[arg(long, value_enum, default_value = "sal")]
    method: MethodArg,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_ANSWER_LEN)]
    max_answer_len: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Precomputed annotations (JSONL) for the linguistic methods.
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Beam,
    DiverseBeam,
    Nucleus,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    passages: PathBuf,
    /// Candidate JSONL from `select-answers`.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, value_enum, default_value = "beam")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 5)]
    beam_size: usize,
    #[arg(long, default_value_t = 1)]
    nbest: usize,
    #[arg(long, default_value_t = 1.0)]
    beam_strength: f64,
    #[arg(long, default_value_t = 0.75)]
    top_p: f64,
    /// Run every configuration of the decoding sweep; writes one file per
    /// configuration into the parent directory of `--out`.
    #[arg(long)]
    grid: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    None,
    AnswerConfidence,
    GeneratorConfidence,
    Influence,
    Roundtrip,
    SelfTraining,
    Combined,
}

impl From<FilterArg> for FilterMethod {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::None => FilterMethod::None,
            FilterArg::AnswerConfidence => FilterMethod::AnswerConfidence,
            FilterArg::GeneratorConfidence => FilterMethod::GeneratorConfidence,
            FilterArg::Influence => FilterMethod::Influence,
            FilterArg::Roundtrip => FilterMethod::Roundtrip,
            FilterArg::SelfTraining => FilterMethod::SelfTraining,
            FilterArg::Combined => FilterMethod::Combined,
        }
    }
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    passages: PathBuf,
    /// Generated JSONL from `generate`.
    #[arg(long)]
    generated: PathBuf,
    /// Candidate JSONL supplying answer confidences (1.0 when absent).
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Precomputed ensemble verdicts; computed with the reference ensemble
    /// when absent.
    #[arg(long)]
    verdicts: Option<PathBuf>,
    /// JSON object of example id to influence score.
    #[arg(long)]
    influence: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "combined")]
    method: FilterArg,
    #[arg(long)]
    answer_conf_thresh: Option<f64>,
    #[arg(long)]
    gen_conf_thresh: Option<f64>,
    #[arg(long)]
    roundtrip_min_correct: Option<usize>,
    #[arg(long)]
    keep_at: Option<usize>,
    #[arg(long)]
    relabel_at: Option<usize>,
    #[arg(long)]
    n_members: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TwoStage,
    Mixed,
}

#[derive(Args)]
struct ScheduleArgs {
    /// `NAME=PATH` of the synthetic JSONL.
    #[arg(long)]
    synthetic: String,
    /// `NAME=PATH` of a human-written JSONL; repeatable.
    #[arg(long = "human", required = true)]
    human: Vec<String>,
    #[arg(long, value_enum, default_value = "two-stage")]
    mode: ModeArg,
    /// Opaque per-stage budget passed to the trainer, as JSON.
    #[arg(long, default_value = "null")]
    budget: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write each stage's examples, in order, to this directory.
    #[arg(long)]
    materialize: Option<PathBuf>,
}

#[derive(Args)]
struct CheckpointArgs {
    /// JSON array of `{id, f1: {dataset: score}}` in training order.
    #[arg(long)]
    evals: PathBuf,
}

#[derive(Subcommand)]
enum EvaluateCmd {
    /// EM/F1 of predictions against a SQuAD-format gold file.
    Squad {
        #[arg(long)]
        gold: PathBuf,
        /// JSON object of question id to predicted answer.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// vMER and mvMER from an annotation record log.
    Vmer {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value = "strict")]
        mode: VmerArg,
        /// Per-annotator CSV output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VmerArg {
    Strict,
    Inclusive,
}

#[derive(Args)]
struct PipelineArgs {
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides the config's passage file.
    #[arg(long)]
    passages: Option<PathBuf>,
    #[arg(long)]
    no_decontamination: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Passage pool (JSONL or SQuAD JSON).
    #[arg(long)]
    passages: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory for the event log; in-memory when absent.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

fn print_json<T: Serialize>(v: &T) -> anyhow::Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn split_kv(s: &str) -> anyhow::Result<(&str, &str)> {
    s.split_once('=').with_context(|| format!("expected NAME=PATH, got `{s}`"))
}

fn from_str_enum<T: serde::de::DeserializeOwned>(s: &str) -> anyhow::Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).with_context(|| format!("unknown value `{s}`"))
}

fn cmd_decontaminate(a: DecontaminateArgs) -> anyhow::Result<()> {
    let candidates = load_passages(&a.candidates, a.source.into())?;
    let mut eval = Vec::new();
    for p in &a.eval {
        eval.extend(load_passages(p, PassageSource::EvalSet)?);
    }
    let d = decontaminate(&candidates, &eval, a.n)?;
    std::fs::create_dir_all(&a.out_dir)?;
    write_jsonl(a.out_dir.join("kept.jsonl"), &d.kept)?;
    write_jsonl(a.out_dir.join("dropped.jsonl"), &d.dropped)?;
    write_json(a.out_dir.join("overlap_report.json"), &d.report)?;
    print_json(&d.report)
}

fn cmd_align(a: AlignArgs) -> anyhow::Result<()> {
    let mut passages: BTreeMap<String, Passage> = BTreeMap::new();
    let mut splits: HashMap<String, Split> = HashMap::new();
    let mut sources = Vec::new();
    for spec in &a.datasets {
        let (head, path) = split_kv(spec)?;
        let (name, split) = head.split_once(':').with_context(|| format!("expected DATASET:SPLIT=PATH, got `{spec}`"))?;
        let dataset: SourceDataset = from_str_enum(name)?;
        let split: Split = from_str_enum(split)?;
        let source = if dataset == SourceDataset::Squad { PassageSource::SquadTrain } else { PassageSource::External };
        let (ps, examples) = load_squad(path, source, split)?;
        for p in ps {
            if let Some(prev) = splits.insert(p.id.clone(), split) {
                if prev != split {
                    bail!("passage {} appears in both {prev:?} and {split:?}", p.id);
                }
            }
            passages.entry(p.id.clone()).or_insert(p);
        }
        sources.push(AnswerSource::new(dataset, answers_by_passage(&examples)));
    }
    let passages: Vec<Passage> = passages.into_values().collect();
    let aligned = align_answer_sets(&passages, &sources, &splits)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let mut stats = BTreeMap::new();
    for (split, sets) in &aligned {
        let name = serde_json::to_value(split)?.as_str().unwrap_or("none").to_string();
        let records: Vec<_> = sets.iter().map(|s| s.to_record(*split)).collect();
        write_jsonl(a.out_dir.join(format!("aligned_{name}.jsonl")), &records)?;
        stats.insert(name, overlap_stats(sets)?);
    }
    write_json(a.out_dir.join("overlap_stats.json"), &stats)?;
    print_json(&stats)
}

fn cmd_select(a: SelectArgs) -> anyhow::Result<()> {
    let passages = load_passages(&a.passages, PassageSource::External)?;
    let annotator: Box<dyn LinguisticAnnotator> = match &a.annotations {
        Some(p) => Box::new(FileAnnotator::load(p)?),
        None => Box::new(HeuristicAnnotator),
    };
    let mut records = Vec::with_capacity(passages.len());
    for p in &passages {
        let (method, cands): (SelectionMethod, Vec<AnswerCandidate>) = match a.method {
            MethodArg::Sal => (
                SelectionMethod::Sal,
                select_sal_candidates(p, &FeatureEncoder::default(), a.max_answer_len, a.threshold)?.candidates,
            ),
            MethodArg::SpanExtraction => (
                SelectionMethod::SpanExtraction,
                select_span_extraction_candidates(p, &LexicalSpanPredictor::default(), a.k, a.max_answer_len)?,
            ),
            MethodArg::NounChunks => (
                SelectionMethod::NounChunks,
                select_linguistic_candidates(p, annotator.as_ref(), LinguisticMode::NounChunks)?,
            ),
            MethodArg::NamedEntities => (
                SelectionMethod::NamedEntities,
                select_linguistic_candidates(p, annotator.as_ref(), LinguisticMode::NamedEntities)?,
            ),
            MethodArg::PosExtended => (
                SelectionMethod::PosExtended,
                select_linguistic_candidates(p, annotator.as_ref(), LinguisticMode::PosExtended)?,
            ),
        };
        records.push(CandidateRecord::new(&p.id, method, &cands));
    }
    let n = write_jsonl(&a.out, &records)?;
    eprintln!("wrote candidates for {n} passages to {}", a.out.display());
    Ok(())
}

fn by_id(passages: Vec<Passage>) -> HashMap<String, Passage> {
    passages.into_iter().map(|p| (p.id.clone(), p)).collect()
}

fn cmd_generate(a: GenerateArgs, config: Option<&Path>, seed: u64) -> anyhow::Result<()> {
    let passages = by_id(load_passages(&a.passages, PassageSource::External)?);
    let records: Vec<CandidateRecord> = read_jsonl(&a.candidates)?;
    let base = match config {
        Some(p) => read_json::<DecodeConfig>(p)?,
        None => DecodeConfig {
            strategy: match a.strategy {
                StrategyArg::Beam => DecodeStrategy::Beam,
                StrategyArg::DiverseBeam => DecodeStrategy::DiverseBeam,
                StrategyArg::Nucleus => DecodeStrategy::Nucleus,
            },
            beam_size: a.beam_size,
            nbest: a.nbest,
            beam_strength: a.beam_strength,
            top_p: a.top_p,
            seed,
        },
    };
    let configs = if a.grid {
        build_decode_grid().into_iter().map(|c| c.with_seed(seed)).collect()
    } else {
        vec![base]
    };
    let generator = TemplateGenerator::default();
    for cfg in &configs {
        let mut out = Vec::new();
        for rec in &records {
            let passage = passages
                .get(&rec.passage_id)
                .with_context(|| format!("unknown passage {}", rec.passage_id))?;
            for (ci, c) in rec.candidates.iter().enumerate() {
                let span = AnswerSpan::from_offsets(passage, c.start, c.end, SourceDataset::Synthetic)?;
                let prefix = format!("{}-a{ci:03}", passage.id);
                let prompt = serialize_prompt(&span, passage)?;
                for (qi, q) in generate(&generator, &prefix, &prompt, &span, cfg)?.into_iter().enumerate() {
                    out.push(GeneratedRecord {
                        example_id: format!("{prefix}-q{qi:02}"),
                        passage_id: passage.id.clone(),
                        answer: SpanRef::from(&span),
                        question: q.text,
                        gen_score: q.score,
                        config_id: q.config_id,
                    });
                }
            }
        }
        let path = if a.grid {
            a.out.parent().unwrap_or(Path::new(".")).join(format!("generated.{}.jsonl", cfg.id()))
        } else {
            a.out.clone()
        };
        let n = write_jsonl(&path, &out)?;
        eprintln!("{}: {n} questions -> {}", cfg.id(), path.display());
    }
    Ok(())
}

fn cmd_filter(a: FilterArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let passages = by_id(load_passages(&a.passages, PassageSource::External)?);
    let generated: Vec<GeneratedRecord> = read_jsonl(&a.generated)?;
    let mut conf: HashMap<(String, usize, usize), f64> = HashMap::new();
    if let Some(path) = &a.candidates {
        for rec in read_jsonl::<CandidateRecord>(path)? {
            for c in rec.candidates {
                conf.insert((rec.passage_id.clone(), c.start, c.end), c.confidence);
            }
        }
    }
    let mut examples = Vec::with_capacity(generated.len());
    for g in generated {
        let passage = passages
            .get(&g.passage_id)
            .with_context(|| format!("unknown passage {}", g.passage_id))?;
        let answer = AnswerSpan::from_offsets(passage, g.answer.start, g.answer.end, SourceDataset::Synthetic)?;
        examples.push(SyntheticExample {
            answer_confidence: conf.get(&(g.passage_id.clone(), g.answer.start, g.answer.end)).copied().unwrap_or(1.0),
            id: g.example_id,
            passage_id: g.passage_id,
            answer,
            question: g.question,
            gen_score: g.gen_score,
            state: ExampleState::Raw,
            final_answer: None,
        });
    }

    let mut fc = match config {
        Some(p) => read_json::<FilterConfig>(p)?,
        None => FilterConfig::default(),
    };
    if let Some(v) = a.answer_conf_thresh {
        fc.answer_conf_thresh = v;
    }
    if let Some(v) = a.gen_conf_thresh {
        fc.gen_conf_thresh = v;
    }
    if let Some(v) = a.roundtrip_min_correct {
        fc.roundtrip_min_correct = v;
    }
    if let Some(v) = a.keep_at {
        fc.selftrain_keep_at = v;
    }
    if let Some(v) = a.relabel_at {
        fc.selftrain_relabel_at = v;
    }
    if let Some(v) = a.n_members {
        fc.n_members = v;
    }
    let method = FilterMethod::from(a.method);
    std::fs::create_dir_all(&a.out_dir)?;

    let verdicts: Option<HashMap<String, EnsembleVerdict>> = if method.needs_verdicts() {
        let vs = match &a.verdicts {
            Some(p) => read_jsonl(p)?,
            None => {
                let members = LexicalSpanPredictor::ensemble(fc.n_members);
                let ensemble: Vec<&dyn SpanPredictor> = members.iter().map(|m| m as &dyn SpanPredictor).collect();
                let vs = roundtrip_verdicts(&examples, &passages, &ensemble)?;
                write_jsonl(a.out_dir.join("verdicts.jsonl"), &vs)?;
                vs
            }
        };
        Some(vs.into_iter().map(|v| (v.example_id.clone(), v)).collect())
    } else {
        None
    };
    let influence: Option<HashMap<String, f64>> = a.influence.as_ref().map(read_json).transpose()?;
    let ctx = FilterContext {
        passages: Some(&passages),
        verdicts: verdicts.as_ref(),
        influence: influence.as_ref(),
    };
    let outcome = run_filter(method, &examples, &ctx, &fc)?;
    write_jsonl(a.out_dir.join("dataset.jsonl"), &outcome.examples)?;
    write_jsonl(a.out_dir.join("discarded.jsonl"), &outcome.discarded)?;
    write_json(a.out_dir.join("filter_manifest.json"), &outcome.manifest)?;
    print_json(&outcome.manifest)
}

fn dataset_ref(s: &str) -> anyhow::Result<DatasetRef> {
    let (name, path) = split_kv(s)?;
    Ok(DatasetRef {
        name: name.to_string(),
        path: PathBuf::from(path),
    })
}

fn cmd_schedule(a: ScheduleArgs, seed: u64) -> anyhow::Result<()> {
    let synthetic = dataset_ref(&a.synthetic)?;
    let human = a.human.iter().map(|h| dataset_ref(h)).collect::<anyhow::Result<Vec<_>>>()?;
    let mode = match a.mode {
        ModeArg::TwoStage => ScheduleMode::TwoStage,
        ModeArg::Mixed => ScheduleMode::Mixed,
    };
    let budget: serde_json::Value = serde_json::from_str(&a.budget).context("--budget is not valid JSON")?;
    let schedule = build_schedule(&synthetic, &human, mode, seed, budget)?;
    write_json(&a.out, &schedule)?;
    if let Some(dir) = &a.materialize {
        std::fs::create_dir_all(dir)?;
        for (i, stage) in schedule.stages.iter().enumerate() {
            let path = dir.join(format!("stage{i}_{}.jsonl", stage.name));
            let n = materialize_stage(stage, &path)?;
            eprintln!("stage {i} ({}): {n} examples -> {}", stage.name, path.display());
        }
    }
    Ok(())
}

fn cmd_checkpoint(a: CheckpointArgs) -> anyhow::Result<()> {
    let evals: Vec<CheckpointEval> = read_json(&a.evals)?;
    let best = select_checkpoint(&evals)?;
    let means: BTreeMap<&str, f64> = evals.iter().map(|e| (e.id.as_str(), e.mean_f1())).collect();
    print_json(&serde_json::json!({ "selected": best, "mean_f1": means }))
}

#[derive(Serialize)]
struct VmerReport {
    mode: VmerMode,
    n_records: usize,
    n_annotators: usize,
    vmer: f64,
    pooled_vmer: f64,
    mvmer: Option<f64>,
}

fn cmd_evaluate(cmd: EvaluateCmd) -> anyhow::Result<()> {
    match cmd {
        EvaluateCmd::Squad { gold, predictions } => {
            let gold = SquadFile::load(&gold)?;
            let preds: HashMap<String, String> = read_json(&predictions)?;
            print_json(&evaluate_squad(&gold, &preds)?)
        }
        EvaluateCmd::Vmer { records, mode, csv } => {
            let mode = match mode {
                VmerArg::Strict => VmerMode::Strict,
                VmerArg::Inclusive => VmerMode::Inclusive,
            };
            let records: Vec<AnnotationRecord> = read_jsonl(&records)?;
            let stats = AnnotatorStats::from_records(&records, mode)?;
            if let Some(path) = csv {
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["annotator_id", "n_examples", "n_validated_errors", "vmer"])?;
                for s in &stats {
                    w.write_record([
                        s.annotator_id.clone(),
                        s.n_examples.to_string(),
                        s.n_validated_errors.to_string(),
                        format!("{:.4}", 100.0 * s.rate()),
                    ])?;
                }
                w.flush()?;
            }
            print_json(&VmerReport {
                mode,
                n_records: records.len(),
                n_annotators: stats.len(),
                vmer: vmer(&records, mode)?,
                pooled_vmer: pooled_vmer(&stats),
                mvmer: if stats.is_empty() { None } else { Some(mvmer(&stats)?) },
            })
        }
    }
}

fn cmd_pipeline(a: PipelineArgs, config: Option<&Path>, seed: Option<u64>) -> anyhow::Result<()> {
    let path = config.context("pipeline requires --config")?;
    let mut cfg = PipelineConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = a.output_dir {
        cfg.output_dir = d;
    }
    if let Some(p) = a.passages {
        cfg.passage_source.path = p;
    }
    if a.no_decontamination {
        cfg.decontamination.enabled = false;
    }
    let out = run_pipeline(&cfg, &Backends::reference(cfg.filter_config.n_members))?;
    print_json(&out.manifest)
}

fn cmd_serve(a: ServeArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg: ServiceConfig = match config {
        Some(p) => read_json(p)?,
        None => bail!("serve-eval requires --config with at least `arms`"),
    };
    let passages = load_passages(&a.passages, PassageSource::EvalSet)?;
    let models: HashMap<String, Arc<dyn QaModel>> = cfg
        .arms
        .iter()
        .enumerate()
        .map(|(i, arm)| {
            let m: Arc<dyn QaModel> = Arc::new(PredictorModel::new(LexicalSpanPredictor { member: i }));
            (arm.clone(), m)
        })
        .collect();
    let clock = Arc::new(SystemClock);
    let svc = match &a.data_dir {
        Some(dir) => EvalService::open(dir, cfg, models, passages, clock)?,
        None => EvalService::new(cfg, models, passages, clock)?,
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(http::serve(Arc::new(svc), a.addr))?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = cli.config.as_deref();
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Decontaminate(a) => cmd_decontaminate(a),
        Command::Align(a) => cmd_align(a),
        Command::SelectAnswers(a) => cmd_select(a),
        Command::Generate(a) => cmd_generate(a, config, seed),
        Command::Filter(a) => cmd_filter(a, config),
        Command::BuildSchedule(a) => cmd_schedule(a, seed),
        Command::SelectCheckpoint(a) => cmd_checkpoint(a),
        Command::Evaluate(c) => cmd_evaluate(c),
        Command::Pipeline(a) => cmd_pipeline(a, config, cli.seed),
        Command::ServeEval(a) => cmd_serve(a, config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
