//! In-process trainer stand-in speaking the bridge protocol. Used by the
//! `nascaps-loopback-trainer` binary to exercise the bridge without an ML
//! stack.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::time::Duration;

use serde_json::Value;

use super::{surrogate_accuracy, EvalStatus, EvaluationRequest, EvaluationResult};
use crate::genotype::{Genotype, GenotypeId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoopbackMode {
    Normal,
    /// Answer with a wrong id.
    Mismatch,
    /// Answer with a line that is not JSON.
    Garbage,
    /// Write to stderr and exit with status 3 on the first request.
    Exit,
    /// Sleep before answering.
    Sleep(Duration),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopbackOptions {
    pub mode: LoopbackMode,
    /// Answer this accuracy instead of the surrogate value.
    pub fixed_accuracy: Option<f64>,
    /// Append every received line here.
    pub record: Option<PathBuf>,
}

impl Default for LoopbackOptions {
    fn default() -> Self {
        Self {
            mode: LoopbackMode::Normal,
            fixed_accuracy: None,
            record: None,
        }
    }
}

impl LoopbackOptions {
    /// Reads `NASCAPS_LOOPBACK_MODE` (`mismatch`, `garbage`, `exit`,
    /// `sleep:<duration>`), `NASCAPS_LOOPBACK_ACCURACY` and
    /// `NASCAPS_LOOPBACK_RECORD`.
    pub fn from_env() -> Result<Self, String> {
        let mode = match std::env::var("NASCAPS_LOOPBACK_MODE").ok().as_deref() {
            None | Some("") | Some("normal") => LoopbackMode::Normal,
            Some("mismatch") => LoopbackMode::Mismatch,
            Some("garbage") => LoopbackMode::Garbage,
            Some("exit") => LoopbackMode::Exit,
            Some(other) => match other.strip_prefix("sleep:") {
                Some(d) => {
                    LoopbackMode::Sleep(humantime::parse_duration(d).map_err(|e| e.to_string())?)
                }
                None => return Err(format!("unknown NASCAPS_LOOPBACK_MODE {other:?}")),
            },
        };
        let fixed_accuracy = match std::env::var("NASCAPS_LOOPBACK_ACCURACY") {
            Ok(v) => Some(
                v.parse::<f64>()
                    .map_err(|e| format!("NASCAPS_LOOPBACK_ACCURACY: {e}"))?,
            ),
            Err(_) => None,
        };
        let record = std::env::var_os("NASCAPS_LOOPBACK_RECORD").map(PathBuf::from);
        Ok(Self {
            mode,
            fixed_accuracy,
            record,
        })
    }
}

/// Serves requests until shutdown or end of input. Returns the exit code the
/// process should use.
pub fn serve_loopback(
    input: impl BufRead,
    mut output: impl Write,
    opts: &LoopbackOptions,
) -> io::Result<i32> {
    let mut record = match &opts.record {
        Some(p) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)?,
        ),
        None => None,
    };
    for line in input.lines() {
        let line = line?;
        if let Some(f) = record.as_mut() {
            writeln!(f, "{line}")?;
        }
        let value: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("loopback: unreadable request: {e}");
                continue;
            }
        };
        if value.get("cmd").and_then(Value::as_str) == Some("shutdown") {
            return Ok(0);
        }
        let req: EvaluationRequest = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("loopback: bad request: {e}");
                continue;
            }
        };
        let response = match opts.mode {
            LoopbackMode::Exit => {
                eprintln!("loopback: exiting on request {}", req.id);
                return Ok(3);
            }
            LoopbackMode::Garbage => "this is not json".to_string(),
            mode => {
                if let LoopbackMode::Sleep(d) = mode {
                    std::thread::sleep(d);
                }
                let mut res = answer(&req, opts.fixed_accuracy);
                if mode == LoopbackMode::Mismatch {
                    res.id = GenotypeId::from(format!("{}x", req.id));
                }
                serde_json::to_string(&res).map_err(io::Error::from)?
            }
        };
        writeln!(output, "{response}")?;
        output.flush()?;
    }
    Ok(0)
}

fn answer(req: &EvaluationRequest, fixed: Option<f64>) -> EvaluationResult {
    let accuracy = match (fixed, Genotype::deserialize(&req.genotype)) {
        (Some(a), _) => a,
        (None, Ok(g)) => surrogate_accuracy(&g, req.dataset, req.seed),
        (None, Err(e)) => {
            eprintln!("loopback: cannot build {}: {e}", req.id);
            return EvaluationResult::unsuccessful(req.id.clone(), EvalStatus::Failed);
        }
    };
    EvaluationResult {
        id: req.id.clone(),
        accuracy,
        epochs_run: req.epochs,
        train_seconds: 0.0,
        status: EvalStatus::Ok,
    }
}
