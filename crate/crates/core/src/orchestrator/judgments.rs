use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_FLUENCY: u8 = 1;
pub const MAX_FLUENCY: u8 = 5;

/// One grader's verdict on an original/debiased pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgmentRecord {
    pub pair_id: String,
    pub grader_id: String,
    /// Debiased text and image still make sense together.
    pub makes_sense_together: bool,
    pub bias_reduced: bool,
    pub same_meaning: bool,
    /// 1 (unreadable) to 5 (fully fluent).
    pub fluency: u8,
    #[serde(default = "Utc::now")]
    pub submitted_at: DateTime<Utc>,
}

impl JudgmentRecord {
    pub fn validate(&self) -> Result<()> {
        if self.pair_id.trim().is_empty() || self.grader_id.trim().is_empty() {
            return Err(Error::validation("pair_id and grader_id must be non-empty"));
        }
        if !(MIN_FLUENCY..=MAX_FLUENCY).contains(&self.fluency) {
            return Err(Error::validation(format!(
                "fluency {} outside [{MIN_FLUENCY}, {MAX_FLUENCY}]",
                self.fluency
            )));
        }
        Ok(())
    }

    fn key(&self) -> (String, String) {
        (self.pair_id.clone(), self.grader_id.clone())
    }
}

/// Append-only JSON-lines store. Each accepted record is flushed to disk
/// before `submit` returns; on load the last record per (pair, grader) wins.
#[derive(Debug)]
pub struct JudgmentStore {
    path: PathBuf,
    file: File,
    records: BTreeMap<(String, String), JudgmentRecord>,
}

impl JudgmentStore {
    /// Opens or creates the store at `path`. An unterminated malformed final
    /// line (an interrupted, never-acknowledged write) is cut off; any other
    /// malformed line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut records = BTreeMap::new();
        // Byte length of the valid prefix when the tail must be cut.
        let mut keep: Option<u64> = None;
        if path.exists() {
            let content = std::fs::read_to_string(&path)?;
            let lines: Vec<&str> = content.split_inclusive('\n').collect();
            let last = lines.iter().rposition(|l| !l.trim().is_empty());
            let mut offset = 0u64;
            for (i, line) in lines.iter().enumerate() {
                let start = offset;
                offset += line.len() as u64;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<JudgmentRecord>(line)
                    .map_err(|e| e.to_string())
                    .and_then(|r| r.validate().map(|_| r).map_err(|e| e.to_string()));
                match parsed {
                    Ok(r) => {
                        records.insert(r.key(), r);
                    }
                    Err(message) if Some(i) == last && !line.ends_with('\n') => {
                        log::warn!("{}: dropping truncated final record: {message}", path.display());
                        keep = Some(start);
                    }
                    Err(message) => {
                        return Err(Error::Parse {
                            path: path.clone(),
                            line: i + 1,
                            message,
                        })
                    }
                }
            }
            if keep.is_none() && !content.is_empty() && !content.ends_with('\n') {
                std::fs::OpenOptions::new().append(true).open(&path)?.write_all(b"\n")?;
            }
        }
        if let Some(len) = keep {
            let f = OpenOptions::new().write(true).open(&path)?;
            f.set_len(len)?;
            f.sync_data()?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file, records })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Validates, appends and syncs `record`, replacing any earlier record
    /// from the same grader for the same pair.
    pub fn submit(&mut self, record: JudgmentRecord) -> Result<()> {
        record.validate()?;
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.records.insert(record.key(), record);
        Ok(())
    }

    /// Number of distinct (pair, grader) keys.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, pair_id: &str, grader_id: &str) -> Option<&JudgmentRecord> {
        self.records.get(&(pair_id.to_string(), grader_id.to_string()))
    }

    pub fn records(&self) -> impl Iterator<Item = &JudgmentRecord> {
        self.records.values()
    }

    pub fn has_judged(&self, pair_id: &str, grader_id: &str) -> bool {
        self.get(pair_id, grader_id).is_some()
    }
}

/// Positive fractions per yes/no question and mean fluency. Means are
/// `None` when `n` is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentSummary {
    pub n: usize,
    pub makes_sense_together: Option<f64>,
    pub bias_reduced: Option<f64>,
    pub same_meaning: Option<f64>,
    pub mean_fluency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentReport {
    #[serde(flatten)]
    pub overall: JudgmentSummary,
    pub per_pair: BTreeMap<String, JudgmentSummary>,
}

fn summarize<'a>(records: impl IntoIterator<Item = &'a JudgmentRecord>) -> JudgmentSummary {
    let (mut n, mut sense, mut reduced, mut same, mut fluency) = (0usize, 0usize, 0usize, 0usize, 0u64);
    for r in records {
        n += 1;
        sense += usize::from(r.makes_sense_together);
        reduced += usize::from(r.bias_reduced);
        same += usize::from(r.same_meaning);
        fluency += u64::from(r.fluency);
    }
    let frac = |k: usize| (n > 0).then(|| k as f64 / n as f64);
    JudgmentSummary {
        n,
        makes_sense_together: frac(sense),
        bias_reduced: frac(reduced),
        same_meaning: frac(same),
        mean_fluency: (n > 0).then(|| fluency as f64 / n as f64),
    }
}

pub fn aggregate_judgments<'a>(records: impl IntoIterator<Item = &'a JudgmentRecord>) -> JudgmentReport {
    let mut by_pair: BTreeMap<String, Vec<&JudgmentRecord>> = BTreeMap::new();
    let all: Vec<&JudgmentRecord> = records.into_iter().collect();
    for r in &all {
        by_pair.entry(r.pair_id.clone()).or_default().push(r);
    }
    JudgmentReport {
        overall: summarize(all.iter().copied()),
        per_pair: by_pair
            .into_iter()
            .map(|(id, rs)| (id, summarize(rs)))
            .collect(),
    }
}
