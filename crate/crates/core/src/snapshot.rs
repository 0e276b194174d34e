//! On-disk run state: population snapshot, manifest, step log and lock.
//!
//! Layout under a run directory:
//! - `population/{workflow_id}.json`: one genome document per member
//! - `population/manifest.json`: generation, seed, config hash, member order
//!   and the committed byte lengths of every log
//! - `runs/{run_id}/steps`: one step report per line
//! - `memory/`, `traces/`: see [`crate::memory`] and [`crate::executor`]
//!
//! The manifest is replaced atomically and is the commit point of a
//! checkpoint. Logs may run ahead of it; resuming cuts them back.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_string;
use crate::evolution::{Population, StepReport};
use crate::genome::{self, SCHEMA_VERSION};
use crate::memory::{append_line, io_err, load, LogLengths, StorageError};

pub const POPULATION_DIR: &str = "population";
pub const MANIFEST: &str = "manifest.json";
pub const STEPS_FILE: &str = "steps";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub generation: u64,
    pub seed: u64,
    pub config_hash: String,
    /// Member ids in population order.
    pub members: Vec<String>,
    pub steps_len: u64,
    pub logs: LogLengths,
}

/// Paths of one run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLayout {
    pub root: PathBuf,
    pub run_id: String,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>, run_id: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            run_id: run_id.into(),
        }
    }

    pub fn population_dir(&self) -> PathBuf {
        self.root.join(POPULATION_DIR)
    }

    pub fn manifest(&self) -> PathBuf {
        self.population_dir().join(MANIFEST)
    }

    pub fn steps(&self) -> PathBuf {
        self.root.join("runs").join(&self.run_id).join(STEPS_FILE)
    }

    pub fn front_csv(&self) -> PathBuf {
        self.root.join("front.csv")
    }

    pub fn is_initialized(&self) -> bool {
        self.manifest().exists()
    }
}

fn write_atomic(path: &Path, text: &str) -> Result<(), StorageError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    File::open(&tmp)
        .and_then(|f| f.sync_all())
        .map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn corrupt(path: &Path, message: impl ToString) -> StorageError {
    StorageError::Corrupt {
        path: path.to_path_buf(),
        line: 0,
        message: message.to_string(),
    }
}

/// Write every member document, drop documents of departed members, then
/// commit the manifest.
pub fn save(
    layout: &RunLayout,
    pop: &Population,
    config_hash: &str,
    steps_len: u64,
    logs: LogLengths,
) -> Result<Manifest, StorageError> {
    let dir = layout.population_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut keep = BTreeSet::new();
    for g in &pop.members {
        let name = format!("{}.json", g.workflow_id);
        let text = genome::serialize(g).map_err(|e| corrupt(&dir.join(&name), e))?;
        write_atomic(&dir.join(&name), &text)?;
        keep.insert(name);
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        generation: pop.generation,
        seed: pop.seed,
        config_hash: config_hash.to_string(),
        members: pop.members.iter().map(|g| g.workflow_id.clone()).collect(),
        steps_len,
        logs,
    };
    let mut text = to_canonical_string(&manifest).map_err(|e| corrupt(&layout.manifest(), e))?;
    text.push('\n');
    write_atomic(&layout.manifest(), &text)?;
    for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
        let entry = entry.map_err(io_err(&dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".json") && name != MANIFEST && !keep.contains(&name) {
            fs::remove_file(entry.path()).map_err(io_err(&entry.path()))?;
        }
    }
    Ok(manifest)
}

/// Read the committed population and its manifest.
pub fn load_population(layout: &RunLayout) -> Result<(Population, Manifest), StorageError> {
    let path = layout.manifest();
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| corrupt(&path, e))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(corrupt(
            &path,
            format!("unsupported schema_version {}", manifest.schema_version),
        ));
    }
    let members = manifest
        .members
        .iter()
        .map(|id| {
            let p = layout.population_dir().join(format!("{id}.json"));
            let text = fs::read_to_string(&p).map_err(io_err(&p))?;
            let g = genome::deserialize(&text).map_err(|e| corrupt(&p, e))?;
            if &g.workflow_id != id {
                return Err(corrupt(
                    &p,
                    format!("document holds {} not {id}", g.workflow_id),
                ));
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>, StorageError>>()?;
    let pop = Population {
        members,
        generation: manifest.generation,
        seed: manifest.seed,
    };
    Ok((pop, manifest))
}

/// Append-only step report log.
#[derive(Debug)]
pub struct StepLog {
    path: PathBuf,
    len: u64,
    count: usize,
}

impl StepLog {
    /// Cut the log back to `len` bytes (dropping uncommitted reports) and open it.
    pub fn open_at(path: &Path, len: u64) -> Result<Self, StorageError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let f = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        if f.metadata().map_err(io_err(path))?.len() > len {
            f.set_len(len).map_err(io_err(path))?;
        }
        let (reports, len) = load::<StepReport>(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            len,
            count: reports.len(),
        })
    }

    pub fn append(&mut self, report: &StepReport) -> Result<(), StorageError> {
        self.len += append_line(&self.path, report)?;
        self.count += 1;
        Ok(())
    }

    pub fn len_bytes(&self) -> u64 {
        self.len
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn read(path: &Path) -> Result<Vec<StepReport>, StorageError> {
        Ok(load(path)?.0)
    }
}

/// Exclusive hold on a run directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    _file: File,
}

impl RunLock {
    pub fn acquire(root: &Path) -> Result<Self, StorageError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let path = root.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.try_lock().map_err(|e| StorageError::Io {
            path: path.clone(),
            source: io::Error::new(
                io::ErrorKind::WouldBlock,
                format!("run directory is in use: {e}"),
            ),
        })?;
        Ok(Self { _file: file })
    }
}
