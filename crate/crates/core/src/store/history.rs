use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExecutionRecord, StoreError};

/// Filter for [`super::Store::query_records`]; `None` fields match anything.
/// The time range applies to `started_at` and is inclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFilter {
    pub workflow_id: Option<String>,
    pub dataset_id: Option<String>,
    pub since_ms: Option<u64>,
    pub until_ms: Option<u64>,
}

impl RecordFilter {
    pub fn matches(&self, r: &ExecutionRecord) -> bool {
        self.workflow_id.as_ref().is_none_or(|w| &r.workflow_id == w)
            && self
                .dataset_id
                .as_ref()
                .is_none_or(|d| r.input_datasets.contains(d))
            && self.since_ms.is_none_or(|t| r.started_at >= t)
            && self.until_ms.is_none_or(|t| r.started_at <= t)
    }
}

/// Newline-delimited JSON log of execution records.
pub(crate) struct HistoryLog {
    path: PathBuf,
    file: File,
    records: Vec<ExecutionRecord>,
    run_ids: HashSet<String>,
}

impl HistoryLog {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let mut records = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ExecutionRecord = serde_json::from_str(&line).map_err(|e| {
                    StoreError::Parse(format!("{}:{}: {e}", path.display(), lineno + 1))
                })?;
                records.push(rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let run_ids = records.iter().map(|r| r.run_id.clone()).collect();
        Ok(HistoryLog {
            path: path.to_path_buf(),
            file,
            records,
            run_ids,
        })
    }

    pub fn append(&mut self, record: ExecutionRecord) -> Result<String, StoreError> {
        record.check().map_err(StoreError::InvalidRecord)?;
        if self.run_ids.contains(&record.run_id) {
            return Err(StoreError::DuplicateRun(record.run_id));
        }
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.file.sync_data()?;
        let id = record.run_id.clone();
        self.run_ids.insert(id.clone());
        self.records.push(record);
        Ok(id)
    }

    pub fn records(&self) -> &[ExecutionRecord] {
        &self.records
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Serializes a record exactly as it appears on one history line.
pub fn record_line(record: &ExecutionRecord) -> String {
    serde_json::to_string(record).expect("record serializes")
}

/// Parses a history file's contents.
pub fn parse_history(text: &str) -> Result<Vec<ExecutionRecord>, StoreError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Parse(format!("line {}: {e}", i + 1)))
        })
        .collect()
}
