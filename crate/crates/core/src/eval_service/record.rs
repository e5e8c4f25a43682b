use serde::{Deserialize, Serialize};

use crate::answers::AnswerSpan;
use crate::error::{Error, Result};

/// Validation status of a human-vs-model interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validation {
    /// The model answered correctly; its success stands in for validity.
    AutoValid,
    Pending,
    Valid,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid,
}

impl Validation {
    /// The only legal transitions are `pending -> valid` and `pending -> invalid`.
    pub fn transition(self, verdict: Verdict) -> Result<Validation> {
        match self {
            Validation::Pending => Ok(match verdict {
                Verdict::Valid => Validation::Valid,
                Verdict::Invalid => Validation::Invalid,
            }),
            other => Err(Error::State(format!(
                "cannot apply {verdict:?} to a record in state {other:?}"
            ))),
        }
    }
}

/// One question asked by a human against the model in the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub record_id: String,
    pub annotator_id: String,
    /// Model identifier. Never sent to annotators.
    pub arm: String,
    pub passage_id: String,
    pub question: String,
    pub annotator_answer: AnswerSpan,
    pub model_answer: String,
    pub fooled: bool,
    pub validation: Validation,
    pub elapsed_seconds: f64,
}

impl AnnotationRecord {
    /// Checks the fooled/validation coupling.
    pub fn check(&self) -> Result<()> {
        let ok = match self.validation {
            Validation::AutoValid => !self.fooled,
            _ => self.fooled,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::State(format!(
                "record {} has fooled={} with validation {:?}",
                self.record_id, self.fooled, self.validation
            )))
        }
    }
}
