//! C ABI over `advgen-core`.
//!
//! Every function returns an [`AdvgenStatus`]; results travel through out
//! pointers. On failure a message is kept per thread and can be read with
//! [`advgen_last_error`]. Strings returned through `char **` are owned by
//! the caller and released with [`advgen_string_free`]. Structured values
//! cross the boundary as JSON.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use advgen::answers::sal::{sal_forward, sal_mask, SalProjections};
use advgen::backends::LexicalSpanPredictor;
use advgen::corpus::{decontaminate, Passage};
use advgen::eval_service::{
    assign_arm_index, EvalService, PredictorModel, QaModel, ServiceConfig, SystemClock, Verdict,
};
use advgen::filters::{self_train_relabel, EnsembleVerdict};
use advgen::metrics::{exact_match, normalize_answer, token_f1};
use advgen::Error;
use ndarray::Array2;
use serde::Serialize;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvgenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Shape = 4,
    NotFound = 5,
    State = 6,
    Rejected = 7,
    Backend = 8,
    Io = 9,
    Json = 10,
    Panic = 11,
    Internal = 12,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AdvgenStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::Empty(_) | Error::SpanMismatch { .. } => AdvgenStatus::InvalidArgument,
            Error::Shape(_) => AdvgenStatus::Shape,
            Error::NotFound(_) | Error::UnknownPassage(_) => AdvgenStatus::NotFound,
            Error::State(_) => AdvgenStatus::State,
            Error::Rejected(_) => AdvgenStatus::Rejected,
            Error::Backend { .. } => AdvgenStatus::Backend,
            Error::Io(_) => AdvgenStatus::Io,
            Error::Json(_) | Error::Parse { .. } => AdvgenStatus::Json,
            _ => AdvgenStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(AdvgenStatus::Json, e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult) -> AdvgenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdvgenStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside advgen");
            AdvgenStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(AdvgenStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AdvgenStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(name))
}

fn to_c(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(AdvgenStatus::Internal, "string contains NUL".into()))
}

fn json_out<T: Serialize>(value: &T, out: &mut *mut c_char) -> FfiResult {
    *out = to_c(serde_json::to_string(value)?)?;
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn advgen_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn advgen_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// SQuAD answer normalization.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advgen_normalize_answer(text: *const c_char, out: *mut *mut c_char) -> AdvgenStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        *out_arg(out, "out")? = to_c(normalize_answer(text))?;
        Ok(())
    })
}

/// Exact match and token F1 of `prediction` against a single gold answer.
///
/// # Safety
/// String arguments must be NUL-terminated; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn advgen_em_f1(
    prediction: *const c_char,
    gold: *const c_char,
    out_em: *mut bool,
    out_f1: *mut f64,
) -> AdvgenStatus {
    guard(|| {
        let pred = str_arg(prediction, "prediction")?;
        let gold = [str_arg(gold, "gold")?];
        *out_arg(out_em, "out_em")? = exact_match(pred, &gold);
        *out_arg(out_f1, "out_f1")? = token_f1(pred, &gold);
        Ok(())
    })
}

/// Span-probability matrix of one labelling head.
///
/// `q` and `k` are row-major `len x d_k`; `out_probs` receives the row-major
/// `len x len` matrix, zero outside the admissible region
/// (`i <= j`, width at most `max_answer_len`, both ends in `[lo, hi)`).
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn advgen_sal_forward(
    q: *const f64,
    k: *const f64,
    len: usize,
    d_k: usize,
    max_answer_len: usize,
    lo: usize,
    hi: usize,
    out_probs: *mut f64,
) -> AdvgenStatus {
    guard(|| {
        if q.is_null() || k.is_null() || out_probs.is_null() {
            return Err(null("q, k or out_probs"));
        }
        let n = len.checked_mul(d_k).ok_or_else(|| Failure(AdvgenStatus::Shape, "size overflow".into()))?;
        let shape = |p: *const f64| {
            Array2::from_shape_vec((len, d_k), std::slice::from_raw_parts(p, n).to_vec())
                .map_err(|e| Failure(AdvgenStatus::Shape, e.to_string()))
        };
        let proj = SalProjections::new(shape(q)?, shape(k)?)?;
        let mask = sal_mask(len, max_answer_len, (lo, hi))?;
        let scores = sal_forward(&proj, &mask)?;
        let out = std::slice::from_raw_parts_mut(out_probs, len * len);
        for (dst, src) in out.iter_mut().zip(scores.probs.iter()) {
            *dst = *src;
        }
        Ok(())
    })
}

/// Self-training decision for one ensemble verdict.
///
/// `verdict_json` is `{"example_id", "predictions": [{"text", "confidence"}],
/// "n_correct"}`; the result is `{"state", "answer"}`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advgen_self_train_relabel(
    verdict_json: *const c_char,
    prompted_answer: *const c_char,
    keep_at: usize,
    relabel_at: usize,
    out_json: *mut *mut c_char,
) -> AdvgenStatus {
    guard(|| {
        let verdict: EnsembleVerdict = serde_json::from_str(str_arg(verdict_json, "verdict_json")?)?;
        let prompted = str_arg(prompted_answer, "prompted_answer")?;
        let decision = self_train_relabel(&verdict, prompted, keep_at, relabel_at)?;
        json_out(&decision, out_arg(out_json, "out_json")?)
    })
}

/// Deterministic arm index for an annotator id.
///
/// # Safety
/// `annotator_id` must be NUL-terminated; `out_index` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advgen_assign_arm(
    annotator_id: *const c_char,
    n_arms: usize,
    out_index: *mut usize,
) -> AdvgenStatus {
    guard(|| {
        let id = str_arg(annotator_id, "annotator_id")?;
        *out_arg(out_index, "out_index")? = assign_arm_index(id, n_arms)?;
        Ok(())
    })
}

/// n-gram decontamination of JSON passage arrays
/// (`[{"id", "text", "source"}]`). The result is
/// `{"kept", "dropped", "report"}`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advgen_decontaminate(
    candidates_json: *const c_char,
    eval_json: *const c_char,
    n: usize,
    out_json: *mut *mut c_char,
) -> AdvgenStatus {
    guard(|| {
        let candidates: Vec<Passage> = serde_json::from_str(str_arg(candidates_json, "candidates_json")?)?;
        let eval: Vec<Passage> = serde_json::from_str(str_arg(eval_json, "eval_json")?)?;
        let d = decontaminate(&candidates, &eval, n)?;
        json_out(&d, out_arg(out_json, "out_json")?)
    })
}

/// Model callback: write a NUL-terminated answer of at most `out_cap` bytes
/// into `out` and return 0, or return nonzero on failure. It may be called
/// from several threads at once.
pub type AdvgenAnswerFn = Option<
    unsafe extern "C" fn(
        ctx: *mut c_void,
        arm: *const c_char,
        passage: *const c_char,
        question: *const c_char,
        out: *mut c_char,
        out_cap: usize,
    ) -> i32,
>;

const ANSWER_CAP: usize = 4096;

struct CallbackModel {
    arm: CString,
    ctx: *mut c_void,
    f: unsafe extern "C" fn(*mut c_void, *const c_char, *const c_char, *const c_char, *mut c_char, usize) -> i32,
}

// The caller promises the callback and its context are thread-safe.
unsafe impl Send for CallbackModel {}
unsafe impl Sync for CallbackModel {}

impl QaModel for CallbackModel {
    fn answer(&self, passage: &Passage, question: &str) -> advgen::Result<String> {
        let text = CString::new(passage.text.as_str()).map_err(|e| Error::backend("model callback", e))?;
        let q = CString::new(question).map_err(|e| Error::backend("model callback", e))?;
        let mut buf = vec![0u8; ANSWER_CAP];
        let rc = unsafe { (self.f)(self.ctx, self.arm.as_ptr(), text.as_ptr(), q.as_ptr(), buf.as_mut_ptr().cast(), ANSWER_CAP) };
        if rc != 0 {
            return Err(Error::backend("model callback", format!("returned {rc}")));
        }
        let end = buf.iter().position(|&b| b == 0).unwrap_or(ANSWER_CAP);
        String::from_utf8(buf[..end].to_vec()).map_err(|e| Error::backend("model callback", e))
    }
}

/// Opaque handle to an evaluation service.
pub struct AdvgenEvalService {
    inner: EvalService,
}

/// Creates an evaluation service.
///
/// `config_json` is the service config (at least `{"arms": [...]}`),
/// `passages_json` a passage array. `data_dir` may be null for an
/// in-memory service. With a null `answer_fn` each arm uses the built-in
/// lexical reference model.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn advgen_eval_service_new(
    config_json: *const c_char,
    passages_json: *const c_char,
    data_dir: *const c_char,
    answer_fn: AdvgenAnswerFn,
    ctx: *mut c_void,
    out: *mut *mut AdvgenEvalService,
) -> AdvgenStatus {
    guard(|| {
        let config: ServiceConfig = serde_json::from_str(str_arg(config_json, "config_json")?)?;
        let passages: Vec<Passage> = serde_json::from_str(str_arg(passages_json, "passages_json")?)?;
        let out = out_arg(out, "out")?;
        let mut models: HashMap<String, Arc<dyn QaModel>> = HashMap::new();
        for (i, arm) in config.arms.iter().enumerate() {
            let model: Arc<dyn QaModel> = match answer_fn {
                Some(f) => Arc::new(CallbackModel {
                    arm: CString::new(arm.as_str()).map_err(|_| null("arm"))?,
                    ctx,
                    f,
                }),
                None => Arc::new(PredictorModel::new(LexicalSpanPredictor { member: i })),
            };
            models.insert(arm.clone(), model);
        }
        let clock = Arc::new(SystemClock);
        let inner = if data_dir.is_null() {
            EvalService::new(config, models, passages, clock)?
        } else {
            EvalService::open(Path::new(str_arg(data_dir, "data_dir")?), config, models, passages, clock)?
        };
        *out = Box::into_raw(Box::new(AdvgenEvalService { inner }));
        Ok(())
    })
}

/// Releases a service. Null is a no-op.
///
/// # Safety
/// `svc` must come from [`advgen_eval_service_new`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn advgen_eval_service_free(svc: *mut AdvgenEvalService) {
    if !svc.is_null() {
        drop(Box::from_raw(svc));
    }
}

unsafe fn handle<'a>(svc: *const AdvgenEvalService) -> FfiResult<&'a EvalService> {
    svc.as_ref().map(|s| &s.inner).ok_or_else(|| null("svc"))
}

/// Starts or resumes a session; writes the session JSON.
///
/// # Safety
/// Pointers must be valid; `svc` may be shared across threads.
#[no_mangle]
pub unsafe extern "C" fn advgen_eval_service_start_session(
    svc: *const AdvgenEvalService,
    annotator_id: *const c_char,
    out_json: *mut *mut c_char,
) -> AdvgenStatus {
    guard(|| {
        let start = handle(svc)?.start_session(str_arg(annotator_id, "annotator_id")?)?;
        json_out(&start, out_arg(out_json, "out_json")?)
    })
}

/// Submits onboarding answers as a JSON array of `[start, end]` pairs.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn advgen_eval_service_submit_onboarding(
    svc: *const AdvgenEvalService,
    session_id: *const c_char,
    answers_json: *const c_char,
    out_json: *mut *mut c_char,
) -> AdvgenStatus {
    guard(|| {
        let answers: Vec<(usize, usize)> = serde_json::from_str(str_arg(answers_json, "answers_json")?)?;
        let result = handle(svc)?.submit_onboarding(str_arg(session_id, "session_id")?, &answers)?;
        json_out(&result, out_arg(out_json, "out_json")?)
    })
}

/// Submits a question with its answer span (character offsets, end
/// exclusive).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn advgen_eval_service_submit_question(
    svc: *const AdvgenEvalService,
    session_id: *const c_char,
    question: *const c_char,
    answer_start: usize,
    answer_end: usize,
    out_json: *mut *mut c_char,
) -> AdvgenStatus {
    guard(|| {
        let outcome = handle(svc)?.submit_question(
            str_arg(session_id, "session_id")?,
            str_arg(question, "question")?,
            answer_start,
            answer_end,
        )?;
        json_out(&outcome, out_arg(out_json, "out_json")?)
    })
}

/// Records a validator verdict (`valid` is true or false) for a record.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn advgen_eval_service_validate(
    svc: *const AdvgenEvalService,
    record_id: *const c_char,
    valid: bool,
    validator_id: *const c_char,
) -> AdvgenStatus {
    guard(|| {
        let verdict = if valid { Verdict::Valid } else { Verdict::Invalid };
        handle(svc)?.validate_record(str_arg(record_id, "record_id")?, verdict, str_arg(validator_id, "validator_id")?)?;
        Ok(())
    })
}

/// Pending records as a JSON array.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn advgen_eval_service_validation_queue(
    svc: *const AdvgenEvalService,
    out_json: *mut *mut c_char,
) -> AdvgenStatus {
    guard(|| json_out(&handle(svc)?.validation_queue(), out_arg(out_json, "out_json")?))
}

/// Per-arm statistics for an opaque arm token.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn advgen_eval_service_export_stats(
    svc: *const AdvgenEvalService,
    arm_token: *const c_char,
    out_json: *mut *mut c_char,
) -> AdvgenStatus {
    guard(|| {
        let svc = handle(svc)?;
        let arm = svc.arm_for_token(str_arg(arm_token, "arm_token")?)?.to_string();
        json_out(&svc.export_stats(&arm)?, out_arg(out_json, "out_json")?)
    })
}
