//! Evaluation cache, optionally backed by an append-only JSONL file.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Dataset, EvalStatus, EvaluationRequest, EvaluationResult};
use crate::genotype::GenotypeId;

/// One persisted line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: GenotypeId,
    pub genotype: String,
    pub dataset: Dataset,
    pub epochs: u32,
    pub accuracy: f64,
    pub epochs_run: u32,
    pub train_seconds: f64,
    pub status: EvalStatus,
}

type Key = (GenotypeId, Dataset, u32);

/// Results keyed by genotype id, dataset and epoch budget. A hit also
/// requires the stored canonical string to match the request's.
///
/// Only successful results are written to disk, so failures and timeouts
/// are retried after a restart.
#[derive(Debug)]
pub struct EvaluationCache {
    entries: HashMap<Key, (String, EvaluationResult)>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl EvaluationCache {
    pub fn in_memory() -> Self {
        Self {
            entries: HashMap::new(),
            file: None,
        }
    }

    /// Loads `path` if it exists and appends new results to it. Unparseable
    /// lines (such as a line cut short by a crash) are skipped with a warning.
    pub fn open(path: &Path) -> io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(e) if GenotypeId::of(&e.genotype) == e.id => {
                        let result = EvaluationResult {
                            id: e.id.clone(),
                            accuracy: e.accuracy,
                            epochs_run: e.epochs_run,
                            train_seconds: e.train_seconds,
                            status: e.status,
                        };
                        entries.insert((e.id, e.dataset, e.epochs), (e.genotype, result));
                    }
                    Ok(_) => log::warn!(
                        "{}:{}: id does not match genotype, skipped",
                        path.display(),
                        n + 1
                    ),
                    Err(err) => log::warn!(
                        "{}:{}: unreadable cache line skipped: {err}",
                        path.display(),
                        n + 1
                    ),
                }
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(path)?;
        // Make sure the next record starts on a fresh line.
        let len = file.metadata()?.len();
        if len > 0 {
            use std::io::{Read, Seek, SeekFrom};
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1))?;
            file.read_exact(&mut last)?;
            if last[0] != b'\n' {
                file.write_all(b"\n")?;
            }
        }
        Ok(Self {
            entries,
            file: Some((path.to_path_buf(), Mutex::new(file))),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn get(&self, req: &EvaluationRequest) -> Option<&EvaluationResult> {
        self.entries
            .get(&(req.id.clone(), req.dataset, req.epochs))
            .filter(|(genotype, _)| *genotype == req.genotype)
            .map(|(_, r)| r)
    }

    pub fn insert(&mut self, req: &EvaluationRequest, result: EvaluationResult) -> io::Result<()> {
        if result.status == EvalStatus::Ok {
            if let Some((_, file)) = &self.file {
                let entry = CacheEntry {
                    id: req.id.clone(),
                    genotype: req.genotype.clone(),
                    dataset: req.dataset,
                    epochs: req.epochs,
                    accuracy: result.accuracy,
                    epochs_run: result.epochs_run,
                    train_seconds: result.train_seconds,
                    status: result.status,
                };
                let mut line = serde_json::to_string(&entry).map_err(io::Error::from)?;
                line.push('\n');
                let mut f = file.lock().expect("cache file lock poisoned");
                f.write_all(line.as_bytes())?;
                f.flush()?;
            }
        }
        self.entries.insert(
            (req.id.clone(), req.dataset, req.epochs),
            (req.genotype.clone(), result),
        );
        Ok(())
    }
}
