//! On-disk layout for runs:
//! `{root}/{study_id}/{strategy}/run{idx}/informant{i}.jsonl` plus a
//! `manifest.json` sidecar and, once scored, `scored.jsonl`.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

use crate::parse::ScoredTrial;
use crate::runner::{informant_seed, InformantRecord, Manifest, RunRecord, TrialRecord, TrialSink};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCORED_FILE: &str = "scored.jsonl";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0} has no manifest.json")]
    MissingManifest(PathBuf),
    #[error("output directory {0} is locked by another process (remove {0}/.lock if stale)")]
    Locked(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn run_dir(root: &Path, study_id: &str, strategy_id: &str, run_index: u32) -> PathBuf {
    root.join(study_id).join(strategy_id).join(format!("run{run_index}"))
}

pub fn pilot_dir(root: &Path, study_id: &str, strategy_id: &str) -> PathBuf {
    root.join(study_id).join(strategy_id).join("pilot")
}

pub fn informant_file(dir: &Path, informant_index: u32) -> PathBuf {
    dir.join(format!("informant{informant_index}.jsonl"))
}

/// Appends each completed trial to its informant's JSONL file.
pub struct JsonlSink {
    dir: PathBuf,
    guard: Mutex<()>,
}

impl JsonlSink {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(JsonlSink {
            dir,
            guard: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl TrialSink for JsonlSink {
    fn record(&self, trial: &TrialRecord) -> io::Result<()> {
        let mut line = serde_json::to_string(trial).map_err(io::Error::other)?;
        line.push('\n');
        let _lock = self.guard.lock().unwrap_or_else(|p| p.into_inner());
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(informant_file(&self.dir, trial.informant_index))?;
        file.write_all(line.as_bytes())?;
        file.flush()
    }
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, StoreError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(StoreError::MissingManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}

/// Read one informant log. A torn final line (the process died mid-write)
/// is dropped and the file truncated back to its last complete record.
pub fn read_trials(path: &Path) -> Result<Vec<TrialRecord>, StoreError> {
    let raw = fs::read(path).map_err(io_err(path))?;
    let text = String::from_utf8_lossy(&raw);
    let lines: Vec<&str> = text.split_terminator('\n').collect();
    let mut trials = Vec::new();
    let mut good_len = 0usize;
    for (i, line) in lines.iter().enumerate() {
        if !line.trim().is_empty() {
            match serde_json::from_str::<TrialRecord>(line) {
                Ok(t) => trials.push(t),
                Err(_) if i + 1 == lines.len() => {
                    let file = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
                    file.set_len(good_len as u64).map_err(io_err(path))?;
                    return Ok(trials);
                }
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        good_len += line.len() + 1;
    }
    if !raw.is_empty() && raw.last() != Some(&b'\n') {
        let mut file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        file.write_all(b"\n").map_err(io_err(path))?;
    }
    Ok(trials)
}

/// Rebuild a run from its directory.
pub fn load_run(dir: &Path) -> Result<RunRecord, StoreError> {
    let manifest = read_manifest(dir)?;
    let mut informants = Vec::new();
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(index) = name
            .strip_prefix("informant")
            .and_then(|s| s.strip_suffix(".jsonl"))
            .and_then(|s| s.parse::<u32>().ok())
        else {
            continue;
        };
        let trials = read_trials(&entry.path())?;
        let total_duration: Duration = trials.iter().map(|t| t.latency).sum();
        informants.push(InformantRecord {
            informant_index: index,
            strategy_id: manifest.strategy_id.clone(),
            seed: informant_seed(manifest.master_seed, manifest.run_index, index),
            trials,
            total_duration,
        });
    }
    informants.sort_by_key(|r| r.informant_index);
    Ok(RunRecord { manifest, informants })
}

/// Write a whole run (manifest plus one JSONL file per informant),
/// replacing whatever the directory held.
pub fn save_run(dir: &Path, run: &RunRecord) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for informant in &run.informants {
        let mut buf = String::new();
        for t in &informant.trials {
            buf.push_str(&serde_json::to_string(t).expect("trial serializes"));
            buf.push('\n');
        }
        write_atomic(&informant_file(dir, informant.informant_index), buf.as_bytes())?;
    }
    write_manifest(dir, &run.manifest)
}

/// Scored trials in (informant, run, item) order, one JSON object per line.
pub fn write_scored(dir: &Path, scored: &[ScoredTrial]) -> Result<PathBuf, StoreError> {
    let mut sorted: Vec<&ScoredTrial> = scored.iter().collect();
    sorted.sort_by(|a, b| {
        (a.informant_index, a.run_index, &a.item_id).cmp(&(b.informant_index, b.run_index, &b.item_id))
    });
    let mut buf = String::new();
    for s in sorted {
        buf.push_str(&serde_json::to_string(s).expect("scored trial serializes"));
        buf.push('\n');
    }
    let path = dir.join(SCORED_FILE);
    write_atomic(&path, buf.as_bytes())?;
    Ok(path)
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(root: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Locked(root.to_path_buf())),
            Err(e) => Err(StoreError::Io { path, source: e }),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
