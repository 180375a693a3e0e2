//! Post-hoc analytics over run logs and training traces.

mod pareto;
mod report;
mod runlog;

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genotype::GenotypeId;

pub use pareto::{
    archive_fronts, hypervolume, pareto_indices, pick_pareto, reference_point, ArchiveSnapshot,
};
pub use report::{
    format_accuracy, format_energy, format_latency, format_memory, report, transferability,
    OutputFormat, ParetoRow, ReportError, ReportFiles, TransferMatrix,
};
pub use runlog::{parse_run_log, read_run_log, LabeledLog, RunLogError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorrelationError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("at least 2 samples are needed, got {0}")]
    TooShort(usize),
    #[error("correlation is undefined: zero variance")]
    ZeroVariance,
    #[error("trace {id}: no accuracy recorded for epoch {epoch}")]
    MissingEpoch { id: GenotypeId, epoch: u32 },
    #[error(
        "trace {0}: epochs and accuracies differ in length or epochs are not strictly increasing"
    )]
    MalformedTrace(GenotypeId),
    #[error("no traces given")]
    NoTraces,
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    if x.len() != y.len() {
        return Err(CorrelationError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(CorrelationError::TooShort(n));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CorrelationError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Validation accuracy per epoch of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTrace {
    pub id: GenotypeId,
    pub epochs: Vec<u32>,
    pub accuracies: Vec<f64>,
    /// Cumulative training time at each recorded epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_seconds: Option<Vec<f64>>,
    /// Marks hand-designed reference networks among random samples.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reference: bool,
}

impl AccuracyTrace {
    fn check(&self) -> Result<(), CorrelationError> {
        let lengths_ok = self.epochs.len() == self.accuracies.len()
            && self
                .train_seconds
                .as_ref()
                .is_none_or(|t| t.len() == self.epochs.len());
        if !lengths_ok || self.epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CorrelationError::MalformedTrace(self.id.clone()));
        }
        Ok(())
    }

    fn position(&self, epoch: u32) -> Result<usize, CorrelationError> {
        self.epochs
            .binary_search(&epoch)
            .map_err(|_| CorrelationError::MissingEpoch {
                id: self.id.clone(),
                epoch,
            })
    }

    pub fn accuracy_at(&self, epoch: u32) -> Result<f64, CorrelationError> {
        Ok(self.accuracies[self.position(epoch)?])
    }

    pub fn final_epoch(&self) -> Option<u32> {
        self.epochs.last().copied()
    }
}

/// Reads one trace per line; blank lines are skipped.
pub fn read_traces(input: impl BufRead) -> Result<Vec<AccuracyTrace>, String> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", n + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", n + 1))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub epoch: u32,
    pub pcc: f64,
    /// Median cumulative training time at this epoch, when traces carry timing.
    pub median_cumulative_seconds: Option<f64>,
}

/// Correlation between the accuracy at each checkpoint epoch and the final
/// accuracy, across traces.
///
/// The final epoch is `final_epoch` when given, otherwise the last epoch of
/// the first trace; every trace must record it and every checkpoint.
pub fn epoch_correlation_table(
    traces: &[AccuracyTrace],
    checkpoints: &[u32],
    final_epoch: Option<u32>,
) -> Result<Vec<CorrelationRow>, CorrelationError> {
    let first = traces.first().ok_or(CorrelationError::NoTraces)?;
    for t in traces {
        t.check()?;
    }
    let last = match final_epoch.or_else(|| first.final_epoch()) {
        Some(e) => e,
        None => return Err(CorrelationError::MalformedTrace(first.id.clone())),
    };
    let finals = traces
        .iter()
        .map(|t| t.accuracy_at(last))
        .collect::<Result<Vec<_>, _>>()?;
    checkpoints
        .iter()
        .map(|&epoch| {
            let at = traces
                .iter()
                .map(|t| t.accuracy_at(epoch))
                .collect::<Result<Vec<_>, _>>()?;
            let times: Option<Vec<f64>> = traces
                .iter()
                .map(|t| {
                    let pos = t.position(epoch).ok()?;
                    t.train_seconds.as_ref().map(|s| s[pos])
                })
                .collect();
            Ok(CorrelationRow {
                epoch,
                pcc: pearson(&at, &finals)?,
                median_cumulative_seconds: times.map(median),
            })
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
