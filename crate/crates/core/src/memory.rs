//! Experience pools: per-model and per-workflow outcome records.
//!
//! Backed by two line-delimited logs under `memory/` when a run directory is
//! given, one canonical JSON object per line. Each append is flushed and
//! synced before it returns. On load a truncated final line is dropped with a
//! warning (and cut from the file so later appends start on a clean line).

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::executor::ExecutionTrace;
use crate::genome::WorkflowGenome;

pub const LLM_LOG: &str = "llm_pool.log";
pub const WF_LOG: &str = "wf_pool.log";
pub const RECENT_COMMENTARIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Positive,
    Negative,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExperienceRecord {
    pub model_id: String,
    pub workflow_id: String,
    pub query_id: String,
    pub verdict: Verdict,
    pub commentary: String,
    pub domain: String,
    /// Generation number of the step that produced the record.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowExperienceRecord {
    pub workflow_id: String,
    pub query_id: String,
    pub verdict: Verdict,
    pub commentary: String,
    pub perf: f64,
    pub cost: f64,
    pub domain: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub positive: u64,
    pub negative: u64,
    pub none: u64,
    /// Up to the last ten commentaries, oldest first.
    pub recent: Vec<String>,
}

impl Summary {
    fn add(&mut self, verdict: Verdict, commentary: &str) {
        match verdict {
            Verdict::Positive => self.positive += 1,
            Verdict::Negative => self.negative += 1,
            Verdict::None => self.none += 1,
        }
        self.recent.push(commentary.to_string());
        if self.recent.len() > RECENT_COMMENTARIES {
            self.recent.remove(0);
        }
    }

    /// Laplace-smoothed share of Positive among judged records.
    pub fn positive_rate(&self) -> f64 {
        (self.positive as f64 + 1.0) / ((self.positive + self.negative) as f64 + 2.0)
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: corrupt record: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Byte lengths of the two logs; used to commit and roll back checkpoints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogLengths {
    pub llm: u64,
    pub wf: u64,
}

#[derive(Debug, Default)]
pub struct ExperienceStore {
    dir: Option<PathBuf>,
    llm: Vec<LlmExperienceRecord>,
    wf: Vec<WorkflowExperienceRecord>,
    lengths: LogLengths,
}

pub(crate) fn load<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, u64), StorageError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut records = Vec::new();
    let mut good_len = 0u64;
    let mut offset = 0usize;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let (line, complete) = match bytes[offset..].iter().position(|b| *b == b'\n') {
            Some(n) => (&bytes[offset..offset + n], true),
            None => (&bytes[offset..], false),
        };
        let parsed = std::str::from_utf8(line)
            .map_err(|e| e.to_string())
            .and_then(|s| serde_json::from_str::<T>(s).map_err(|e| e.to_string()));
        match (parsed, complete) {
            (Ok(r), true) => {
                records.push(r);
                offset += line.len() + 1;
                good_len = offset as u64;
            }
            (_, false) => {
                warn!(
                    "{}: skipping truncated final record on line {line_no}",
                    path.display()
                );
                let f = OpenOptions::new()
                    .write(true)
                    .open(path)
                    .map_err(io_err(path))?;
                f.set_len(good_len).map_err(io_err(path))?;
                break;
            }
            (Err(message), true) => {
                return Err(StorageError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    message,
                });
            }
        }
    }
    Ok((records, good_len))
}

pub(crate) fn append_line<T: Serialize>(path: &Path, record: &T) -> Result<u64, StorageError> {
    let mut line = canonical::to_canonical_string(record).map_err(|e| StorageError::Corrupt {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    f.write_all(line.as_bytes()).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))?;
    Ok(line.len() as u64)
}

impl ExperienceStore {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (creating) `run_dir/memory/` and load both logs.
    pub fn open(run_dir: &Path) -> Result<Self, StorageError> {
        let dir = run_dir.join("memory");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let (llm, llm_len) = load(&dir.join(LLM_LOG))?;
        let (wf, wf_len) = load(&dir.join(WF_LOG))?;
        Ok(Self {
            dir: Some(dir),
            llm,
            wf,
            lengths: LogLengths {
                llm: llm_len,
                wf: wf_len,
            },
        })
    }

    /// Cut both logs back to `lengths` (dropping uncommitted records), then open.
    pub fn open_at(run_dir: &Path, lengths: LogLengths) -> Result<Self, StorageError> {
        let dir = run_dir.join("memory");
        for (name, len) in [(LLM_LOG, lengths.llm), (WF_LOG, lengths.wf)] {
            let path = dir.join(name);
            match OpenOptions::new().write(true).open(&path) {
                Ok(f) => {
                    if f.metadata().map_err(io_err(&path))?.len() > len {
                        f.set_len(len).map_err(io_err(&path))?;
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::NotFound && len == 0 => {}
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
        Self::open(run_dir)
    }

    pub fn lengths(&self) -> LogLengths {
        self.lengths
    }

    pub fn append_llm(&mut self, record: LlmExperienceRecord) -> Result<(), StorageError> {
        if let Some(dir) = &self.dir {
            self.lengths.llm += append_line(&dir.join(LLM_LOG), &record)?;
        }
        self.llm.push(record);
        Ok(())
    }

    pub fn append_wf(&mut self, record: WorkflowExperienceRecord) -> Result<(), StorageError> {
        if let Some(dir) = &self.dir {
            self.lengths.wf += append_line(&dir.join(WF_LOG), &record)?;
        }
        self.wf.push(record);
        Ok(())
    }

    pub fn llm_records(&self) -> &[LlmExperienceRecord] {
        &self.llm
    }

    pub fn wf_records(&self) -> &[WorkflowExperienceRecord] {
        &self.wf
    }

    pub fn llm_summary(&self, model_id: &str, domain: Option<&str>) -> Summary {
        let mut s = Summary::default();
        for r in self
            .llm
            .iter()
            .filter(|r| r.model_id == model_id && domain.is_none_or(|d| r.domain == d))
        {
            s.add(r.verdict, &r.commentary);
        }
        s
    }

    pub fn wf_summary(&self, workflow_id: &str, domain: Option<&str>) -> Summary {
        let mut s = Summary::default();
        for r in self
            .wf
            .iter()
            .filter(|r| r.workflow_id == workflow_id && domain.is_none_or(|d| r.domain == d))
        {
            s.add(r.verdict, &r.commentary);
        }
        s
    }

    /// Record one execution: a workflow record plus one record per model
    /// the genome references. Models with no call in `trace` get `None`.
    #[allow(clippy::too_many_arguments)]
    pub fn record_execution(
        &mut self,
        genome: &WorkflowGenome,
        query_id: &str,
        domain: &str,
        trace: Option<&ExecutionTrace>,
        perf: f64,
        cost: f64,
        threshold: f64,
        timestamp: u64,
    ) -> Result<(), StorageError> {
        let verdict = if perf >= threshold {
            Verdict::Positive
        } else {
            Verdict::Negative
        };
        let outcome = if verdict == Verdict::Positive {
            "succeeded"
        } else {
            "failed"
        };
        let kinds: Vec<&str> = genome.operators.iter().map(|o| o.kind.name()).collect();
        let kinds = kinds.join(", ");
        self.append_wf(WorkflowExperienceRecord {
            workflow_id: genome.workflow_id.clone(),
            query_id: query_id.to_string(),
            verdict,
            commentary: format!(
                "workflow {} {outcome} on domain {domain} with operators [{kinds}], perf {}, cost {}",
                genome.workflow_id,
                canonical::format_real(perf),
                canonical::format_real(cost)
            ),
            perf,
            cost,
            domain: domain.to_string(),
            timestamp,
        })?;
        for model in genome.model_ids() {
            let called = trace.is_some_and(|t| {
                t.records
                    .iter()
                    .flat_map(|r| &r.calls)
                    .any(|c| c.model_id == model)
            });
            let (v, commentary) = if called {
                (
                    verdict,
                    format!(
                        "model {model} {outcome} on domain {domain} via operator kinds [{kinds}]"
                    ),
                )
            } else {
                (
                    Verdict::None,
                    format!("model {model} made no call on domain {domain}"),
                )
            };
            self.append_llm(LlmExperienceRecord {
                model_id: model,
                workflow_id: genome.workflow_id.clone(),
                query_id: query_id.to_string(),
                verdict: v,
                commentary,
                domain: domain.to_string(),
                timestamp,
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn llm(model: &str, verdict: Verdict, domain: &str) -> LlmExperienceRecord {
        LlmExperienceRecord {
            model_id: model.into(),
            workflow_id: "wf".into(),
            query_id: "q".into(),
            verdict,
            commentary: format!("{model} {verdict:?}"),
            domain: domain.into(),
            timestamp: 0,
        }
    }

    #[test]
    fn counts_verdicts() {
        let mut s = ExperienceStore::in_memory();
        for v in [
            Verdict::Positive,
            Verdict::Positive,
            Verdict::Negative,
            Verdict::Positive,
        ] {
            s.append_llm(llm("A", v, "d")).unwrap();
        }
        let sum = s.llm_summary("A", None);
        assert_eq!((sum.positive, sum.negative, sum.none), (3, 1, 0));
        assert_eq!(s.llm_summary("B", None), Summary::default());
    }

    #[test]
    fn keeps_last_ten_commentaries() {
        let mut s = ExperienceStore::in_memory();
        for i in 0..15 {
            let mut r = llm("A", Verdict::None, "d");
            r.commentary = i.to_string();
            s.append_llm(r).unwrap();
        }
        let recent = s.llm_summary("A", None).recent;
        assert_eq!(recent.len(), 10);
        assert_eq!(recent[0], "5");
    }

    #[test]
    fn reload_and_truncated_tail() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ExperienceStore::open(dir.path()).unwrap();
        s.append_llm(llm("A", Verdict::Positive, "d")).unwrap();
        s.append_llm(llm("A", Verdict::Negative, "e")).unwrap();
        let path = dir.path().join("memory").join(LLM_LOG);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"model_id\":\"A\",\"verd").unwrap();
        drop(f);

        let again = ExperienceStore::open(dir.path()).unwrap();
        assert_eq!(again.llm_records(), s.llm_records());
        assert_eq!(again.llm_summary("A", Some("e")).negative, 1);
        assert_eq!(fs::metadata(&path).unwrap().len(), s.lengths().llm);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("memory")).unwrap();
        fs::write(dir.path().join("memory").join(WF_LOG), "garbage\n{}\n").unwrap();
        assert!(matches!(
            ExperienceStore::open(dir.path()),
            Err(StorageError::Corrupt { line: 1, .. })
        ));
    }

    #[test]
    fn open_at_rolls_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ExperienceStore::open(dir.path()).unwrap();
        s.append_llm(llm("A", Verdict::Positive, "d")).unwrap();
        let mark = s.lengths();
        s.append_llm(llm("B", Verdict::Positive, "d")).unwrap();
        let back = ExperienceStore::open_at(dir.path(), mark).unwrap();
        assert_eq!(back.llm_records().len(), 1);
        assert_eq!(back.lengths(), mark);
    }
}
