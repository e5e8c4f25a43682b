//! SQuAD v1.1-style JSON ingestion.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Passage, PassageSource, Split};
use crate::error::Result;
use crate::io::read_json;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SquadFile {
    #[serde(default)]
    pub version: Option<String>,
    pub data: Vec<SquadArticle>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SquadArticle {
    #[serde(default)]
    pub title: String,
    pub paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SquadParagraph {
    pub context: String,
    #[serde(default)]
    pub qas: Vec<SquadQa>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SquadQa {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub answers: Vec<SquadAnswer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SquadAnswer {
    pub text: String,
    pub answer_start: usize,
}

/// A human-annotated question with its passage reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub passage_id: String,
    pub question: String,
    /// `(char_start, text)` pairs as annotated.
    pub answers: Vec<(usize, String)>,
}

/// Stable passage identifier derived from the context text, so that
/// datasets annotated over the same paragraphs align on it.
pub fn passage_id_for(context: &str) -> String {
    let digest = Sha256::digest(context.as_bytes());
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("p{hex}")
}

impl SquadFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }

    /// Flattens into deduplicated passages and QA examples.
    pub fn flatten(&self, source: PassageSource, split: Split) -> (Vec<Passage>, Vec<QaExample>) {
        let mut seen = HashSet::new();
        let mut passages = Vec::new();
        let mut examples = Vec::new();
        for article in &self.data {
            for para in &article.paragraphs {
                let id = passage_id_for(&para.context);
                if seen.insert(id.clone()) {
                    passages.push(Passage {
                        id: id.clone(),
                        title: article.title.clone(),
                        text: para.context.clone(),
                        source,
                        split,
                    });
                }
                for qa in &para.qas {
                    examples.push(QaExample {
                        id: qa.id.clone(),
                        passage_id: id.clone(),
                        question: qa.question.clone(),
                        answers: qa.answers.iter().map(|a| (a.answer_start, a.text.clone())).collect(),
                    });
                }
            }
        }
        (passages, examples)
    }
}

pub fn load_squad(
    path: impl AsRef<Path>,
    source: PassageSource,
    split: Split,
) -> Result<(Vec<Passage>, Vec<QaExample>)> {
    Ok(SquadFile::load(path)?.flatten(source, split))
}
