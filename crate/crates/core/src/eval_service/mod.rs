//! Adversarial human evaluation: arm assignment, model-in-the-loop
//! sessions, validation, and export of per-arm statistics.

mod arm;
pub mod http;
mod event_log;
mod record;
mod service;

pub use arm::{arm_token, assign_arm, assign_arm_index};
pub use event_log::{ArmRecords, AuditEntry, FailureEntry, OnboardingEntry};
pub use record::{AnnotationRecord, Validation, Verdict};
pub use service::{
    default_onboarding, AnnotatorSession, ArmAggregate, ArmStats, Clock, EvalService, ManualClock, OnboardingItem,
    OnboardingPrompt, OnboardingResult, PassageView, PredictorModel, QaModel, ServiceConfig, SessionStart,
    SubmitOutcome, SystemClock, ValidationItem,
};
