//! Append-only JSONL persistence with periodic snapshots.
//!
//! Layout under the root directory:
//! `arms/<model>/records.jsonl` holds one full record per line, with every
//! state change appended as a new version of the record;
//! `arms/<model>/snapshot.json` holds the folded records and the number of
//! log lines they cover; `audit.jsonl`, `failures.jsonl` and
//! `onboarding.jsonl` are plain append-only streams.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::{AnnotationRecord, Validation, Verdict};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub record_id: String,
    pub arm: String,
    pub verdict: Verdict,
    pub validator_id: String,
    pub previous: Validation,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub annotator_id: String,
    pub arm: String,
    pub passage_id: String,
    pub question: String,
    pub reason: String,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnboardingEntry {
    pub annotator_id: String,
    pub passed: bool,
    pub at: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Snapshot {
    lines: usize,
    records: Vec<AnnotationRecord>,
}

/// Records of one arm in first-seen order, latest version of each.
#[derive(Debug, Clone, Default)]
pub struct ArmRecords {
    records: Vec<AnnotationRecord>,
    index: HashMap<String, usize>,
}

impl ArmRecords {
    pub fn upsert(&mut self, record: AnnotationRecord) {
        match self.index.get(&record.record_id) {
            Some(&i) => self.records[i] = record,
            None => {
                self.index.insert(record.record_id.clone(), self.records.len());
                self.records.push(record);
            }
        }
    }

    pub fn get(&self, record_id: &str) -> Option<&AnnotationRecord> {
        self.index.get(record_id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// State rebuilt from disk.
#[derive(Debug, Default)]
pub struct Recovered {
    pub arms: BTreeMap<String, ArmRecords>,
    pub onboarded: HashSet<String>,
    pub failures: Vec<FailureEntry>,
    pub audit: Vec<AuditEntry>,
}

struct ArmLog {
    dir: PathBuf,
    file: File,
    lines: usize,
    since_snapshot: usize,
}

pub struct EventStore {
    snapshot_every: usize,
    arms: HashMap<String, ArmLog>,
    audit: File,
    failures: File,
    onboarding: File,
}

fn dir_name(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn append_file(path: &Path) -> Result<File> {
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

/// One `write_all` per line so a record is either fully present or absent
/// after a crash (a torn trailing line is dropped on replay).
fn append_line<T: Serialize>(file: &mut File, value: &T) -> Result<()> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.flush()?;
    Ok(())
}

/// Cuts a partially written final line so later appends start clean.
fn repair_tail(path: &Path) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let bytes = fs::read(path)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    log::warn!("{}: dropping torn final line", path.display());
    OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    repair_tail(path)?;
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|source| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(v);
    }
    Ok(out)
}

impl EventStore {
    /// Opens (creating if needed) a store for `arms` and replays it.
    pub fn open(root: impl Into<PathBuf>, arms: &[String], snapshot_every: usize) -> Result<(Self, Recovered)> {
        let root = root.into();
        fs::create_dir_all(root.join("arms"))?;
        let mut seen = HashSet::new();
        let mut logs = HashMap::new();
        let mut recovered = Recovered::default();
        for arm in arms {
            let name = dir_name(arm);
            if !seen.insert(name.clone()) {
                return Err(Error::invalid(format!("arm ids collide on disk as `{name}`")));
            }
            let dir = root.join("arms").join(&name);
            fs::create_dir_all(&dir)?;
            let (records, lines) = replay_arm(&dir)?;
            recovered.arms.insert(arm.clone(), records);
            logs.insert(
                arm.clone(),
                ArmLog {
                    file: append_file(&dir.join("records.jsonl"))?,
                    dir,
                    lines,
                    since_snapshot: 0,
                },
            );
        }
        recovered.audit = read_lines(&root.join("audit.jsonl"))?;
        recovered.failures = read_lines(&root.join("failures.jsonl"))?;
        for e in read_lines::<OnboardingEntry>(&root.join("onboarding.jsonl"))? {
            if e.passed {
                recovered.onboarded.insert(e.annotator_id);
            }
        }
        let store = EventStore {
            audit: append_file(&root.join("audit.jsonl"))?,
            failures: append_file(&root.join("failures.jsonl"))?,
            onboarding: append_file(&root.join("onboarding.jsonl"))?,
            snapshot_every,
            arms: logs,
        };
        Ok((store, recovered))
    }

    /// Appends a record version; snapshots the arm every `snapshot_every`
    /// appends using `current` as the folded state.
    pub fn append_record(&mut self, record: &AnnotationRecord, current: &ArmRecords) -> Result<()> {
        let log = self
            .arms
            .get_mut(&record.arm)
            .ok_or_else(|| Error::NotFound(format!("arm `{}`", record.arm)))?;
        append_line(&mut log.file, record)?;
        log.lines += 1;
        log.since_snapshot += 1;
        if self.snapshot_every > 0 && log.since_snapshot >= self.snapshot_every {
            write_snapshot(&log.dir, log.lines, current)?;
            log.since_snapshot = 0;
        }
        Ok(())
    }

    pub fn append_audit(&mut self, entry: &AuditEntry) -> Result<()> {
        append_line(&mut self.audit, entry)
    }

    pub fn append_failure(&mut self, entry: &FailureEntry) -> Result<()> {
        append_line(&mut self.failures, entry)
    }

    pub fn append_onboarding(&mut self, entry: &OnboardingEntry) -> Result<()> {
        append_line(&mut self.onboarding, entry)
    }
}

fn write_snapshot(dir: &Path, lines: usize, current: &ArmRecords) -> Result<()> {
    let snap = Snapshot {
        lines,
        records: current.records.clone(),
    };
    let tmp = dir.join("snapshot.json.tmp");
    fs::write(&tmp, serde_json::to_vec(&snap)?)?;
    fs::rename(tmp, dir.join("snapshot.json"))?;
    Ok(())
}

fn replay_arm(dir: &Path) -> Result<(ArmRecords, usize)> {
    let snap_path = dir.join("snapshot.json");
    let snap: Snapshot = if snap_path.exists() {
        serde_json::from_slice(&fs::read(&snap_path)?)?
    } else {
        Snapshot::default()
    };
    let mut records = ArmRecords::default();
    for r in snap.records {
        records.upsert(r);
    }
    let log: Vec<AnnotationRecord> = read_lines(&dir.join("records.jsonl"))?;
    if log.len() < snap.lines {
        return Err(Error::State(format!(
            "{}: snapshot covers {} lines but the log has {}",
            dir.display(),
            snap.lines,
            log.len()
        )));
    }
    let total = log.len();
    for r in log.into_iter().skip(snap.lines) {
        records.upsert(r);
    }
    Ok((records, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answers::{AnswerSpan, SourceDataset};

    pub(crate) fn record(id: &str, arm: &str, fooled: bool) -> AnnotationRecord {
        AnnotationRecord {
            record_id: id.into(),
            annotator_id: "ann".into(),
            arm: arm.into(),
            passage_id: "p".into(),
            question: "q?".into(),
            annotator_answer: AnswerSpan {
                passage_id: "p".into(),
                char_start: 0,
                char_end: 1,
                text: "x".into(),
                source_dataset: SourceDataset::Synthetic,
            },
            model_answer: "y".into(),
            fooled,
            validation: if fooled { Validation::Pending } else { Validation::AutoValid },
            elapsed_seconds: 1.0,
        }
    }

    fn append(store: &mut EventStore, state: &mut ArmRecords, r: AnnotationRecord) {
        state.upsert(r.clone());
        store.append_record(&r, state).unwrap();
    }

    #[test]
    fn replay_with_and_without_snapshots() {
        for every in [0, 1, 2, 3] {
            let dir = tempfile::tempdir().unwrap();
            let arms = vec!["m/1".to_string()];
            let (mut store, rec) = EventStore::open(dir.path(), &arms, every).unwrap();
            assert!(rec.arms["m/1"].is_empty());
            let mut state = ArmRecords::default();
            append(&mut store, &mut state, record("a", "m/1", true));
            append(&mut store, &mut state, record("b", "m/1", false));
            let mut a = record("a", "m/1", true);
            a.validation = Validation::Valid;
            append(&mut store, &mut state, a.clone());
            append(&mut store, &mut state, record("c", "m/1", true));
            drop(store);

            let (_, rec) = EventStore::open(dir.path(), &arms, every).unwrap();
            let got = &rec.arms["m/1"];
            assert_eq!(got.records(), state.records(), "snapshot_every={every}");
            assert_eq!(got.get("a").unwrap().validation, Validation::Valid);
        }
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let arms = vec!["m".to_string()];
        let (mut store, _) = EventStore::open(dir.path(), &arms, 0).unwrap();
        let mut state = ArmRecords::default();
        append(&mut store, &mut state, record("a", "m", false));
        drop(store);
        let path = dir.path().join("arms/m/records.jsonl");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"record_id\":\"b\",").unwrap();
        drop(f);
        let (mut store, rec) = EventStore::open(dir.path(), &arms, 0).unwrap();
        let mut state = rec.arms["m"].clone();
        assert_eq!(state.len(), 1);
        append(&mut store, &mut state, record("c", "m", false));
        drop(store);
        let (_, rec) = EventStore::open(dir.path(), &arms, 0).unwrap();
        assert_eq!(rec.arms["m"].records(), state.records());
    }

    #[test]
    fn colliding_arm_dirs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let arms = vec!["a/b".to_string(), "a_b".to_string()];
        assert!(EventStore::open(dir.path(), &arms, 0).is_err());
    }
}
