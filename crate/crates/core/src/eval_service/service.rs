use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arm::{arm_token, assign_arm};
use super::event_log::{ArmRecords, AuditEntry, EventStore, FailureEntry, OnboardingEntry};
use super::record::{AnnotationRecord, Validation, Verdict};
use crate::answers::{answer_question, AnswerSpan, SourceDataset, SpanPredictor, DEFAULT_MAX_ANSWER_LEN};
use crate::corpus::{Passage, PassageSource};
use crate::error::{Error, Result};
use crate::metrics::{mvmer, token_f1, vmer, AnnotatorStats, VmerMode};
use crate::text::{char_len, find_chars};

pub trait Clock: Send + Sync {
    /// Seconds since an arbitrary fixed origin.
    fn now(&self) -> f64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
    }
}

/// Clock advanced by hand, for tests and replays.
#[derive(Default)]
pub struct ManualClock(Mutex<f64>);

impl ManualClock {
    pub fn new(start: f64) -> Self {
        ManualClock(Mutex::new(start))
    }

    pub fn advance(&self, seconds: f64) {
        *lock(&self.0) += seconds;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        *lock(&self.0)
    }
}

/// A model in the loop.
pub trait QaModel: Send + Sync {
    fn answer(&self, passage: &Passage, question: &str) -> Result<String>;
}

/// Adapts a span predictor; answers with the top-ranked span, or an empty
/// string when nothing is admissible.
pub struct PredictorModel<P> {
    pub predictor: P,
    pub max_answer_len: usize,
}

impl<P: SpanPredictor> PredictorModel<P> {
    pub fn new(predictor: P) -> Self {
        PredictorModel {
            predictor,
            max_answer_len: DEFAULT_MAX_ANSWER_LEN,
        }
    }
}

impl<P: SpanPredictor> QaModel for PredictorModel<P> {
    fn answer(&self, passage: &Passage, question: &str) -> Result<String> {
        Ok(answer_question(passage, &self.predictor, question, self.max_answer_len)?
            .map(|(span, _)| span.text)
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Model ids, in assignment order.
    pub arms: Vec<String>,
    pub fool_threshold: f64,
    pub session_target: usize,
    pub lifetime_cap: usize,
    pub model_timeout_ms: u64,
    /// Record-log appends between snapshots; 0 disables snapshots.
    pub snapshot_every: usize,
    /// Salt for the opaque arm tokens.
    pub token_salt: String,
    pub vmer_mode: VmerMode,
    /// Whether the validation queue shows validators the model's answer.
    pub show_model_answer_to_validators: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            arms: Vec::new(),
            fool_threshold: 0.4,
            session_target: 5,
            lifetime_cap: 50,
            model_timeout_ms: 10_000,
            snapshot_every: 100,
            token_salt: "advgen".into(),
            vmer_mode: VmerMode::Strict,
            show_model_answer_to_validators: true,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::Empty("arm list"));
        }
        if !(0.0..=1.0).contains(&self.fool_threshold) {
            return Err(Error::invalid("fool_threshold must lie in [0, 1]"));
        }
        if self.session_target == 0 || self.lifetime_cap == 0 {
            return Err(Error::invalid("session_target and lifetime_cap must be positive"));
        }
        let uniq: BTreeSet<_> = self.arms.iter().collect();
        if uniq.len() != self.arms.len() {
            return Err(Error::invalid("duplicate arm ids"));
        }
        Ok(())
    }
}

/// Scripted onboarding question with a known answer span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnboardingItem {
    pub passage: Passage,
    pub question: String,
    pub answer_start: usize,
    pub answer_end: usize,
}

impl OnboardingItem {
    pub fn new(passage: Passage, question: &str, answer: &str) -> Result<Self> {
        let start = find_chars(&passage.text, answer)
            .ok_or_else(|| Error::invalid(format!("onboarding answer {answer:?} not in passage")))?;
        Ok(OnboardingItem {
            answer_end: start + char_len(answer),
            answer_start: start,
            question: question.into(),
            passage,
        })
    }
}

pub fn default_onboarding() -> Vec<OnboardingItem> {
    let items = [
        (
            "onboarding-1",
            "Super Bowl 50 was an American football game. The Denver Broncos defeated the Carolina Panthers 24-10 to earn their third Super Bowl title.",
            "Which team lost the game?",
            "Carolina Panthers",
        ),
        (
            "onboarding-2",
            "The Amazon rainforest covers much of the Amazon basin of South America. This basin encompasses seven million square kilometres.",
            "How large is the basin, in square kilometres?",
            "seven million",
        ),
        (
            "onboarding-3",
            "Oxygen was discovered independently by Carl Wilhelm Scheele in Uppsala in 1773 and by Joseph Priestley in Wiltshire in 1774.",
            "Where did Priestley make his discovery?",
            "Wiltshire",
        ),
    ];
    items
        .into_iter()
        .map(|(id, text, q, a)| {
            OnboardingItem::new(Passage::new(id, text, PassageSource::External), q, a)
                .expect("built-in onboarding answers occur in their passages")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnboardingPrompt {
    pub passage_id: String,
    pub passage_text: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnboardingResult {
    pub passed: bool,
    pub n_correct: usize,
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorSession {
    pub session_id: String,
    pub annotator_id: String,
    /// Model id; kept server-side.
    pub arm: String,
    pub questions_in_session: usize,
    pub lifetime_questions: usize,
    pub onboarding_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageView {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// What an annotator sees when a session opens. Carries no model id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStart {
    pub session_id: String,
    pub arm_token: String,
    pub passage: PassageView,
    pub questions_in_session: usize,
    pub session_target: usize,
    pub lifetime_remaining: usize,
    pub onboarding_required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub record_id: String,
    pub model_answer: String,
    pub fooled: bool,
    pub questions_in_session: usize,
    pub lifetime_remaining: usize,
    pub session_complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmAggregate {
    pub n_annotators: usize,
    pub n_qas: usize,
    pub mean_elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub arm_token: String,
    pub annotators: Vec<AnnotatorStats>,
    pub aggregate: ArmAggregate,
    pub vmer: f64,
    /// Absent when no annotator has a validated example.
    pub mvmer: Option<f64>,
}

/// A fooling attempt awaiting a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationItem {
    pub record_id: String,
    pub passage_id: String,
    pub question: String,
    pub annotator_answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_answer: Option<String>,
}

struct SessionState {
    session: AnnotatorSession,
    passage: usize,
    served_at: f64,
}

#[derive(Default)]
struct AnnotatorState {
    lifetime: usize,
    sessions: u64,
    onboarded: bool,
}

struct Inner {
    sessions: HashMap<String, SessionState>,
    annotators: HashMap<String, AnnotatorState>,
    arms: BTreeMap<String, ArmRecords>,
    record_arm: HashMap<String, String>,
    failures: Vec<FailureEntry>,
    audit: Vec<AuditEntry>,
    store: Option<EventStore>,
}

pub struct EvalService {
    config: ServiceConfig,
    models: HashMap<String, Arc<dyn QaModel>>,
    tokens: HashMap<String, String>,
    passages: Vec<Passage>,
    onboarding: Vec<OnboardingItem>,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
    writers: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn query_with_timeout(model: Arc<dyn QaModel>, passage: Passage, question: String, timeout: Duration) -> Result<String> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(model.answer(&passage, &question));
    });
    match rx.recv_timeout(timeout) {
        Ok(r) => r,
        Err(RecvTimeoutError::Timeout) => Err(Error::backend("model", format!("no answer within {timeout:?}"))),
        Err(RecvTimeoutError::Disconnected) => Err(Error::backend("model", "model thread panicked")),
    }
}

impl EvalService {
    /// In-memory service.
    pub fn new(
        config: ServiceConfig,
        models: HashMap<String, Arc<dyn QaModel>>,
        passages: Vec<Passage>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        Self::build(config, models, passages, clock, None)
    }

    /// Service persisted under `dir`, recovering any existing log.
    pub fn open(
        dir: impl Into<PathBuf>,
        config: ServiceConfig,
        models: HashMap<String, Arc<dyn QaModel>>,
        passages: Vec<Passage>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        Self::build(config, models, passages, clock, Some(dir.into()))
    }

    fn build(
        config: ServiceConfig,
        models: HashMap<String, Arc<dyn QaModel>>,
        passages: Vec<Passage>,
        clock: Arc<dyn Clock>,
        dir: Option<PathBuf>,
    ) -> Result<Self> {
        config.validate()?;
        if passages.is_empty() {
            return Err(Error::Empty("passage pool"));
        }
        for arm in &config.arms {
            if !models.contains_key(arm) {
                return Err(Error::NotFound(format!("model for arm `{arm}`")));
            }
        }
        let tokens: HashMap<String, String> = config
            .arms
            .iter()
            .map(|a| (arm_token(a, &config.token_salt), a.clone()))
            .collect();
        if tokens.len() != config.arms.len() {
            return Err(Error::invalid("arm tokens collide; change token_salt"));
        }

        let mut inner = Inner {
            sessions: HashMap::new(),
            annotators: HashMap::new(),
            arms: config.arms.iter().map(|a| (a.clone(), ArmRecords::default())).collect(),
            record_arm: HashMap::new(),
            failures: Vec::new(),
            audit: Vec::new(),
            store: None,
        };
        if let Some(dir) = dir {
            let (store, rec) = EventStore::open(dir, &config.arms, config.snapshot_every)?;
            for (arm, records) in rec.arms {
                for r in records.records() {
                    inner.record_arm.insert(r.record_id.clone(), arm.clone());
                    inner.annotators.entry(r.annotator_id.clone()).or_default().lifetime += 1;
                }
                inner.arms.insert(arm, records);
            }
            for id in rec.onboarded {
                inner.annotators.entry(id).or_default().onboarded = true;
            }
            inner.failures = rec.failures;
            inner.audit = rec.audit;
            inner.store = Some(store);
        }

        Ok(EvalService {
            config,
            models,
            tokens,
            passages,
            onboarding: default_onboarding(),
            clock,
            inner: Mutex::new(inner),
            writers: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_onboarding(mut self, items: Vec<OnboardingItem>) -> Self {
        self.onboarding = items;
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn arm_for(&self, annotator_id: &str) -> Result<String> {
        Ok(assign_arm(annotator_id, &self.config.arms)?.to_string())
    }

    pub fn token_for(&self, arm: &str) -> String {
        arm_token(arm, &self.config.token_salt)
    }

    pub fn arm_for_token(&self, token: &str) -> Result<&str> {
        self.tokens
            .get(token)
            .map(String::as_str)
            .ok_or_else(|| Error::NotFound(format!("arm token `{token}`")))
    }

    fn writer(&self, annotator_id: &str) -> Arc<Mutex<()>> {
        lock(&self.writers).entry(annotator_id.to_string()).or_default().clone()
    }

    pub fn start_session(&self, annotator_id: &str) -> Result<SessionStart> {
        if annotator_id.trim().is_empty() {
            return Err(Error::invalid("annotator_id is empty"));
        }
        let arm = self.arm_for(annotator_id)?;
        let mut inner = lock(&self.inner);
        let st = inner.annotators.entry(annotator_id.to_string()).or_default();
        let n = st.sessions;
        st.sessions += 1;
        let (lifetime, onboarded) = (st.lifetime, st.onboarded);
        let session_id = format!("s{}", short_hash(&[annotator_id, &n.to_string(), "session"]));
        let pick = u64::from_str_radix(&short_hash(&[annotator_id, &n.to_string(), "passage"]), 16)
            .expect("hex digest");
        let passage = (pick % self.passages.len() as u64) as usize;
        let p = &self.passages[passage];
        let start = SessionStart {
            session_id: session_id.clone(),
            arm_token: self.token_for(&arm),
            passage: PassageView {
                id: p.id.clone(),
                title: p.title.clone(),
                text: p.text.clone(),
            },
            questions_in_session: 0,
            session_target: self.config.session_target,
            lifetime_remaining: self.config.lifetime_cap.saturating_sub(lifetime),
            onboarding_required: !onboarded,
        };
        inner.sessions.insert(
            session_id.clone(),
            SessionState {
                session: AnnotatorSession {
                    session_id,
                    annotator_id: annotator_id.to_string(),
                    arm,
                    questions_in_session: 0,
                    lifetime_questions: lifetime,
                    onboarding_passed: onboarded,
                },
                passage,
                served_at: self.clock.now(),
            },
        );
        Ok(start)
    }

    pub fn session(&self, session_id: &str) -> Result<AnnotatorSession> {
        lock(&self.inner)
            .sessions
            .get(session_id)
            .map(|s| s.session.clone())
            .ok_or_else(|| Error::NotFound(format!("session `{session_id}`")))
    }

    pub fn onboarding_script(&self) -> Vec<OnboardingPrompt> {
        self.onboarding
            .iter()
            .map(|i| OnboardingPrompt {
                passage_id: i.passage.id.clone(),
                passage_text: i.passage.text.clone(),
                question: i.question.clone(),
            })
            .collect()
    }

    /// Grades onboarding answers, given as `(start, end)` char offsets in
    /// script order. Passing requires every span to be exact.
    pub fn submit_onboarding(&self, session_id: &str, answers: &[(usize, usize)]) -> Result<OnboardingResult> {
        let annotator = self.session(session_id)?.annotator_id;
        let _w = self.writer(&annotator);
        let _guard = lock(&_w);
        if answers.len() != self.onboarding.len() {
            return Err(Error::invalid(format!(
                "expected {} onboarding answers, got {}",
                self.onboarding.len(),
                answers.len()
            )));
        }
        let n_correct = self
            .onboarding
            .iter()
            .zip(answers)
            .filter(|(item, &(s, e))| (item.answer_start, item.answer_end) == (s, e))
            .count();
        let passed = n_correct == self.onboarding.len();
        let mut inner = lock(&self.inner);
        if let Some(store) = inner.store.as_mut() {
            store.append_onboarding(&OnboardingEntry {
                annotator_id: annotator.clone(),
                passed,
                at: self.clock.now(),
            })?;
        }
        if passed {
            inner.annotators.entry(annotator.clone()).or_default().onboarded = true;
            for s in inner.sessions.values_mut() {
                if s.session.annotator_id == annotator {
                    s.session.onboarding_passed = true;
                }
            }
        }
        Ok(OnboardingResult {
            passed,
            n_correct,
            n_items: self.onboarding.len(),
        })
    }

    /// Queries the session's model with a question and the annotator's
    /// answer span, decides whether the model was fooled, and persists the
    /// record before returning.
    pub fn submit_question(
        &self,
        session_id: &str,
        question: &str,
        answer_start: usize,
        answer_end: usize,
    ) -> Result<SubmitOutcome> {
        let annotator = self.session(session_id)?.annotator_id;
        let w = self.writer(&annotator);
        let _guard = lock(&w);

        let (session, passage) = {
            let inner = lock(&self.inner);
            let st = inner
                .sessions
                .get(session_id)
                .ok_or_else(|| Error::NotFound(format!("session `{session_id}`")))?;
            let lifetime = inner.annotators.get(&annotator).map_or(0, |a| a.lifetime);
            let onboarded = inner.annotators.get(&annotator).is_some_and(|a| a.onboarded);
            if !onboarded {
                return Err(Error::Rejected("onboarding has not been passed".into()));
            }
            if lifetime >= self.config.lifetime_cap {
                return Err(Error::Rejected(format!(
                    "lifetime cap of {} questions reached",
                    self.config.lifetime_cap
                )));
            }
            if st.session.questions_in_session >= self.config.session_target {
                return Err(Error::Rejected(format!(
                    "session complete after {} questions; start a new session",
                    self.config.session_target
                )));
            }
            (st.session.clone(), self.passages[st.passage].clone())
        };
        if question.trim().is_empty() {
            return Err(Error::invalid("question is empty"));
        }
        let span = AnswerSpan::from_offsets(&passage, answer_start, answer_end, SourceDataset::Synthetic)?;

        let model = self.models[&session.arm].clone();
        let timeout = Duration::from_millis(self.config.model_timeout_ms);
        let model_answer = match query_with_timeout(model, passage.clone(), question.to_string(), timeout) {
            Ok(a) => a,
            Err(e) => {
                let entry = FailureEntry {
                    annotator_id: annotator.clone(),
                    arm: session.arm.clone(),
                    passage_id: passage.id.clone(),
                    question: question.to_string(),
                    reason: e.to_string(),
                    at: self.clock.now(),
                };
                let mut inner = lock(&self.inner);
                if let Some(store) = inner.store.as_mut() {
                    store.append_failure(&entry)?;
                }
                inner.failures.push(entry);
                return Err(e);
            }
        };

        let fooled = token_f1(&model_answer, &[span.text.as_str()]) < self.config.fool_threshold;
        let now = self.clock.now();
        let mut inner = lock(&self.inner);
        let served_at = inner.sessions[session_id].served_at;
        let lifetime = inner.annotators.get(&annotator).map_or(0, |a| a.lifetime);
        let record = AnnotationRecord {
            record_id: format!("r{}", short_hash(&[&annotator, &lifetime.to_string(), "record"])),
            annotator_id: annotator.clone(),
            arm: session.arm.clone(),
            passage_id: passage.id.clone(),
            question: question.to_string(),
            annotator_answer: span,
            model_answer: model_answer.clone(),
            fooled,
            validation: if fooled { Validation::Pending } else { Validation::AutoValid },
            elapsed_seconds: (now - served_at).max(0.0),
        };
        record.check()?;
        self.commit(&mut inner, record.clone(), None)?;

        inner.annotators.entry(annotator.clone()).or_default().lifetime += 1;
        let st = inner.sessions.get_mut(session_id).expect("session checked above");
        st.session.questions_in_session += 1;
        st.session.lifetime_questions = lifetime + 1;
        st.served_at = now;
        let questions_in_session = st.session.questions_in_session;
        Ok(SubmitOutcome {
            record_id: record.record_id,
            model_answer,
            fooled,
            questions_in_session,
            lifetime_remaining: self.config.lifetime_cap.saturating_sub(lifetime + 1),
            session_complete: questions_in_session >= self.config.session_target,
        })
    }

    /// Writes a record version to memory and the log; memory is rolled back
    /// if the write fails.
    fn commit(&self, inner: &mut Inner, record: AnnotationRecord, previous: Option<AnnotationRecord>) -> Result<()> {
        let arm = record.arm.clone();
        let records = inner
            .arms
            .get_mut(&arm)
            .ok_or_else(|| Error::NotFound(format!("arm `{arm}`")))?;
        records.upsert(record.clone());
        if let Some(store) = inner.store.as_mut() {
            if let Err(e) = store.append_record(&record, &inner.arms[&arm]) {
                let records = inner.arms.get_mut(&arm).expect("arm exists");
                match previous {
                    Some(p) => records.upsert(p),
                    None => *records = rebuild_without(records, &record.record_id),
                }
                return Err(e);
            }
        }
        inner.record_arm.insert(record.record_id.clone(), arm);
        Ok(())
    }

    /// Applies a validator's verdict to a pending fooling attempt.
    pub fn validate_record(&self, record_id: &str, verdict: Verdict, validator_id: &str) -> Result<AnnotationRecord> {
        if validator_id.trim().is_empty() {
            return Err(Error::invalid("validator_id is empty"));
        }
        let mut inner = lock(&self.inner);
        let arm = inner
            .record_arm
            .get(record_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("record `{record_id}`")))?;
        let old = inner.arms[&arm].get(record_id).expect("indexed record").clone();
        let mut updated = old.clone();
        updated.validation = old.validation.transition(verdict)?;
        updated.check()?;
        let entry = AuditEntry {
            record_id: record_id.to_string(),
            arm: arm.clone(),
            verdict,
            validator_id: validator_id.to_string(),
            previous: old.validation,
            at: self.clock.now(),
        };
        self.commit(&mut inner, updated.clone(), Some(old))?;
        if let Some(store) = inner.store.as_mut() {
            store.append_audit(&entry)?;
        }
        inner.audit.push(entry);
        Ok(updated)
    }

    pub fn validation_queue(&self) -> Vec<ValidationItem> {
        let inner = lock(&self.inner);
        inner
            .arms
            .values()
            .flat_map(|a| a.records())
            .filter(|r| r.validation == Validation::Pending)
            .map(|r| ValidationItem {
                record_id: r.record_id.clone(),
                passage_id: r.passage_id.clone(),
                question: r.question.clone(),
                annotator_answer: r.annotator_answer.text.clone(),
                model_answer: self.config.show_model_answer_to_validators.then(|| r.model_answer.clone()),
            })
            .collect()
    }

    /// Latest version of every record of `arm`, in submission order.
    pub fn records(&self, arm: &str) -> Result<Vec<AnnotationRecord>> {
        lock(&self.inner)
            .arms
            .get(arm)
            .map(|a| a.records().to_vec())
            .ok_or_else(|| Error::NotFound(format!("arm `{arm}`")))
    }

    pub fn failures(&self) -> Vec<FailureEntry> {
        lock(&self.inner).failures.clone()
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        lock(&self.inner).audit.clone()
    }

    /// Per-annotator counts and aggregates for one arm (a model id).
    pub fn export_stats(&self, arm: &str) -> Result<ArmStats> {
        let records = self.records(arm)?;
        if records.is_empty() {
            return Err(Error::Empty("arm has no records"));
        }
        let pending: Vec<&str> = records
            .iter()
            .filter(|r| r.validation == Validation::Pending)
            .map(|r| r.record_id.as_str())
            .collect();
        if !pending.is_empty() {
            return Err(Error::State(format!("unresolved records: {}", pending.join(", "))));
        }
        let mode = self.config.vmer_mode;
        let annotators = AnnotatorStats::from_records(&records, mode)?;
        let n_annotators = records.iter().map(|r| r.annotator_id.as_str()).collect::<BTreeSet<_>>().len();
        let mean_elapsed_seconds = records.iter().map(|r| r.elapsed_seconds).sum::<f64>() / records.len() as f64;
        Ok(ArmStats {
            arm_token: self.token_for(arm),
            aggregate: ArmAggregate {
                n_annotators,
                n_qas: records.len(),
                mean_elapsed_seconds,
            },
            vmer: vmer(&records, mode)?,
            mvmer: if annotators.is_empty() { None } else { Some(mvmer(&annotators)?) },
            annotators,
        })
    }
}

fn rebuild_without(records: &ArmRecords, record_id: &str) -> ArmRecords {
    let mut out = ArmRecords::default();
    for r in records.records().iter().filter(|r| r.record_id != record_id) {
        out.upsert(r.clone());
    }
    out
}
