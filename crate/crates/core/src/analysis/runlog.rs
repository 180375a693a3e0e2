use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nsga::RunRecord;

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{source_name}: log holds no complete records")]
    Empty { source_name: String },
    #[error("{source_name}:{line}: corrupt record: {message}")]
    Corrupt {
        source_name: String,
        line: usize,
        message: String,
    },
}

/// Parses run-log JSONL. A final line without a newline is treated as a
/// write in progress and ignored, so a log can be read while a search is
/// still appending to it.
pub fn parse_run_log(text: &str, source_name: &str) -> Result<Vec<RunRecord>, RunLogError> {
    let complete = match text.rfind('\n') {
        Some(end) => &text[..end],
        None => "",
    };
    let mut records = Vec::new();
    for (n, line) in complete.split('\n').enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| RunLogError::Corrupt {
            source_name: source_name.to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(RunLogError::Empty {
            source_name: source_name.to_string(),
        });
    }
    Ok(records)
}

pub fn read_run_log(path: &Path) -> Result<Vec<RunRecord>, RunLogError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunLogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_run_log(&text, &path.display().to_string())
}

/// A run log with the name it is reported under, usually its dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLog {
    pub label: String,
    pub records: Vec<RunRecord>,
}

impl LabeledLog {
    /// Reads `label=path`, or a bare path labelled by its file stem.
    pub fn read(arg: &str) -> Result<Self, RunLogError> {
        let (label, path) = match arg.split_once('=') {
            Some((l, p)) if !l.is_empty() => (l.to_string(), PathBuf::from(p)),
            _ => {
                let p = PathBuf::from(arg);
                let stem = p
                    .file_stem()
                    .map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
                (stem, p)
            }
        };
        Ok(Self {
            label,
            records: read_run_log(&path)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"aa","gen":1,"genotype":"g","accuracy":0.5,"energy_mj":1.0,"latency_ms":2.0,"memory_kib":3.0,"status":"ok"}"#;

    #[test]
    fn partial_trailing_line_is_ignored() {
        let text = format!("{LINE}\n{LINE}\n{{\"id\":\"b");
        assert_eq!(parse_run_log(&text, "x").unwrap().len(), 2);
    }

    #[test]
    fn corrupt_line_reports_its_number() {
        let text = format!("{LINE}\n\nnot json\n{LINE}\n");
        let err = parse_run_log(&text, "run.jsonl").unwrap_err();
        assert!(matches!(err, RunLogError::Corrupt { line: 3, .. }), "{err}");
        assert!(err.to_string().starts_with("run.jsonl:3:"));
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(matches!(
            parse_run_log("", "e"),
            Err(RunLogError::Empty { .. })
        ));
        assert!(matches!(
            parse_run_log(LINE, "e"),
            Err(RunLogError::Empty { .. })
        ));
    }

    #[test]
    fn label_defaults_to_file_stem() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mnist.jsonl");
        std::fs::write(&p, format!("{LINE}\n")).unwrap();
        assert_eq!(
            LabeledLog::read(p.to_str().unwrap()).unwrap().label,
            "mnist"
        );
        let named = LabeledLog::read(&format!("C10={}", p.display())).unwrap();
        assert_eq!(named.label, "C10");
    }
}
