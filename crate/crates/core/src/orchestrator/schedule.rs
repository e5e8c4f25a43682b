use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::CheckpointRef;
use crate::error::{Error, Result};

use super::checkpoint::{select_checkpoint, CheckpointEval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Synthetic data first, then human-written data.
    TwoStage,
    /// One stage over the shuffled union.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    pub path: PathBuf,
}

/// Position of one example: `(dataset index within the stage, line index)`.
pub type ExampleRef = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStage {
    pub name: String,
    pub datasets: Vec<DatasetRef>,
    /// Epochs or other budget, passed through to the trainer untouched.
    #[serde(default)]
    pub budget: serde_json::Value,
    /// Example order for mixed stages; empty means dataset order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub order: Vec<ExampleRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub mode: ScheduleMode,
    pub seed: u64,
    pub stages: Vec<ScheduleStage>,
}

fn jsonl_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(|e| Error::NotFound(format!("dataset {}: {e}", path.display())))?;
    BufReader::new(f)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .collect::<std::io::Result<_>>()
        .map_err(Error::from)
}

pub fn build_schedule(
    synthetic: &DatasetRef,
    human: &[DatasetRef],
    mode: ScheduleMode,
    seed: u64,
    budget: serde_json::Value,
) -> Result<TrainingSchedule> {
    if human.is_empty() {
        return Err(Error::Empty("human dataset refs"));
    }
    let mut counts = Vec::with_capacity(human.len() + 1);
    for d in std::iter::once(synthetic).chain(human) {
        counts.push(jsonl_lines(&d.path)?.len());
    }
    let stages = match mode {
        ScheduleMode::TwoStage => vec![
            ScheduleStage {
                name: "synthetic".into(),
                datasets: vec![synthetic.clone()],
                budget: budget.clone(),
                order: Vec::new(),
            },
            ScheduleStage {
                name: "human".into(),
                datasets: human.to_vec(),
                budget,
                order: Vec::new(),
            },
        ],
        ScheduleMode::Mixed => {
            let mut order: Vec<ExampleRef> = counts
                .iter()
                .enumerate()
                .flat_map(|(d, &n)| (0..n).map(move |i| (d, i)))
                .collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            vec![ScheduleStage {
                name: "mixed".into(),
                datasets: std::iter::once(synthetic.clone()).chain(human.iter().cloned()).collect(),
                budget,
                order,
            }]
        }
    };
    Ok(TrainingSchedule { mode, seed, stages })
}

/// Writes a stage's examples, in schedule order, as one JSONL file.
pub fn materialize_stage(stage: &ScheduleStage, out: impl AsRef<Path>) -> Result<usize> {
    let lines: Vec<Vec<String>> = stage.datasets.iter().map(|d| jsonl_lines(&d.path)).collect::<Result<_>>()?;
    let mut w = BufWriter::new(File::create(out)?);
    let mut n = 0;
    let mut emit = |line: &str| -> Result<()> {
        writeln!(w, "{line}")?;
        n += 1;
        Ok(())
    };
    if stage.order.is_empty() {
        for line in lines.iter().flatten() {
            emit(line)?;
        }
    } else {
        for &(d, i) in &stage.order {
            let line = lines
                .get(d)
                .and_then(|ls| ls.get(i))
                .ok_or_else(|| Error::NotFound(format!("example ({d}, {i}) in stage `{}`", stage.name)))?;
            emit(line)?;
        }
    }
    w.flush()?;
    Ok(n)
}

/// Training and evaluation behind an opaque backend.
pub trait TrainerBackend {
    fn train(&self, schedule: &TrainingSchedule) -> Result<Vec<CheckpointRef>>;
    fn evaluate(&self, checkpoint: &CheckpointRef, dataset: &str) -> Result<f64>;
}

/// Trains on `schedule`, evaluates every checkpoint on every validation
/// set, and picks the best by mean F1.
pub fn train_and_select(
    trainer: &dyn TrainerBackend,
    schedule: &TrainingSchedule,
    validation_sets: &[String],
) -> Result<(String, Vec<CheckpointEval>)> {
    let ckpts = trainer.train(schedule)?;
    let evals = ckpts
        .iter()
        .map(|c| {
            Ok(CheckpointEval {
                id: c.id.clone(),
                f1: validation_sets
                    .iter()
                    .map(|s| Ok((s.clone(), trainer.evaluate(c, s)?)))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((select_checkpoint(&evals)?, evals))
}
