//! Table and plot-data emission for one or more run logs.

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use super::pareto::{archive_fronts, pick_pareto, ArchiveSnapshot};
use super::runlog::LabeledLog;
use crate::evaluation::EvalStatus;
use crate::genotype::GenotypeId;
use crate::nsga::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl OutputFormat {
    fn csv(self) -> bool {
        self != Self::Json
    }
    fn json(self) -> bool {
        self != Self::Csv
    }
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "both" => Ok(Self::Both),
            _ => Err(format!("unknown format {s:?}, expected csv, json or both")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no run logs given")]
    NoLogs,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {message}", path.display())]
    Encode { path: PathBuf, message: String },
}

pub fn format_accuracy(fraction: f64) -> String {
    format!("{:.2}%", fraction * 100.0)
}

pub fn format_energy(mj: f64) -> String {
    format!("{mj:.2} mJ")
}

pub fn format_latency(ms: f64) -> String {
    format!("{ms:.2} ms")
}

/// Whole kiB with thousands separators.
pub fn format_memory(kib: f64) -> String {
    let digits = format!("{:.0}", kib.abs());
    let mut grouped = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(c);
    }
    let sign = if kib < 0.0 && digits.chars().any(|c| c != '0') {
        "-"
    } else {
        ""
    };
    format!("{sign}{grouped} kiB")
}

/// One row of the Pareto table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoRow {
    pub log: String,
    pub architecture: String,
    pub id: GenotypeId,
    pub genotype: String,
    pub accuracy: f64,
    pub energy_mj: f64,
    pub latency_ms: f64,
    pub memory_kib: f64,
}

fn ok_records(log: &LabeledLog) -> Vec<RunRecord> {
    log.records
        .iter()
        .filter(|r| r.status == EvalStatus::Ok)
        .cloned()
        .collect()
}

/// Pareto-optimal successful evaluations of one log, most accurate first.
fn pareto_rows(log: &LabeledLog) -> Vec<ParetoRow> {
    let mut front = pick_pareto(&ok_records(log));
    front.sort_by(|a, b| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then_with(|| a.id.cmp(&b.id))
    });
    front
        .into_iter()
        .map(|r| ParetoRow {
            log: log.label.clone(),
            architecture: format!("NASCaps-{}-{}", log.label, r.id),
            id: r.id,
            genotype: r.genotype,
            accuracy: r.accuracy,
            energy_mj: r.energy_mj,
            latency_ms: r.latency_ms,
            memory_kib: r.memory_kib,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferRow {
    pub architecture: String,
    pub id: GenotypeId,
    /// Accuracy of this architecture in each column's log, when it was evaluated there.
    pub accuracies: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<TransferRow>,
}

/// Rows are the most accurate architecture of each log; columns are the
/// logs; a cell holds the accuracy recorded for that id in that log.
pub fn transferability(logs: &[LabeledLog]) -> TransferMatrix {
    let columns = logs.iter().map(|l| l.label.clone()).collect();
    let rows = logs
        .iter()
        .filter_map(|log| {
            let best = ok_records(log).into_iter().min_by(|a, b| {
                b.accuracy
                    .total_cmp(&a.accuracy)
                    .then_with(|| a.id.cmp(&b.id))
            })?;
            let accuracies = logs
                .iter()
                .map(|col| {
                    col.records
                        .iter()
                        .find(|r| r.id == best.id && r.status == EvalStatus::Ok)
                        .map(|r| r.accuracy)
                })
                .collect();
            Some(TransferRow {
                architecture: format!("NASCaps-{}-best", log.label),
                id: best.id,
                accuracies,
            })
        })
        .collect();
    TransferMatrix { columns, rows }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct LabeledSnapshot<'a> {
    log: &'a str,
    #[serde(flatten)]
    snapshot: &'a ArchiveSnapshot,
}

/// Paths written by [`report`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportFiles {
    pub paths: Vec<PathBuf>,
}

/// Writes into `out_dir`:
/// `pareto` (the Pareto table), `points` (every evaluation with the
/// generation it first appeared in, for scatter plots), `fronts` (archive
/// front and hypervolume per generation) and, for two or more logs,
/// `transferability`.
pub fn report(
    logs: &[LabeledLog],
    format: OutputFormat,
    out_dir: &Path,
) -> Result<ReportFiles, ReportError> {
    if logs.is_empty() {
        return Err(ReportError::NoLogs);
    }
    std::fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut files = ReportFiles::default();

    let pareto: Vec<ParetoRow> = logs.iter().flat_map(pareto_rows).collect();
    let points: Vec<PointRow> = logs.iter().flat_map(point_rows).collect();
    let snapshots: Vec<(String, ArchiveSnapshot)> = logs
        .iter()
        .flat_map(|l| {
            archive_fronts(&ok_records(l))
                .into_iter()
                .map(|s| (l.label.clone(), s))
        })
        .collect();
    let labeled: Vec<LabeledSnapshot> = snapshots
        .iter()
        .map(|(log, snapshot)| LabeledSnapshot { log, snapshot })
        .collect();
    let transfer = (logs.len() >= 2).then(|| transferability(logs));

    if format.csv() {
        files.paths.push(write_csv(out_dir, "pareto.csv", |w| {
            w.write_record([
                "Architecture",
                "Accuracy",
                "Energy",
                "Latency",
                "Memory",
                "id",
                "genotype",
            ])?;
            for r in &pareto {
                w.write_record([
                    r.architecture.clone(),
                    format_accuracy(r.accuracy),
                    format_energy(r.energy_mj),
                    format_latency(r.latency_ms),
                    format_memory(r.memory_kib),
                    r.id.to_string(),
                    r.genotype.clone(),
                ])?;
            }
            Ok(())
        })?);
        files.paths.push(write_csv(out_dir, "points.csv", |w| {
            for p in &points {
                w.serialize(p)?;
            }
            Ok(())
        })?);
        files.paths.push(write_csv(out_dir, "fronts.csv", |w| {
            w.write_record([
                "log",
                "gen",
                "archive_size",
                "front_size",
                "hypervolume",
                "front",
            ])?;
            for (log, s) in &snapshots {
                let ids: Vec<&str> = s.front.iter().map(GenotypeId::as_str).collect();
                w.write_record([
                    log.clone(),
                    s.gen.to_string(),
                    s.archive_size.to_string(),
                    s.front.len().to_string(),
                    format!("{:e}", s.hypervolume),
                    ids.join(";"),
                ])?;
            }
            Ok(())
        })?);
        if let Some(t) = &transfer {
            files
                .paths
                .push(write_csv(out_dir, "transferability.csv", |w| {
                    let mut header = vec!["Architecture".to_string()];
                    header.extend(t.columns.iter().cloned());
                    w.write_record(&header)?;
                    for row in &t.rows {
                        let mut rec = vec![row.architecture.clone()];
                        rec.extend(
                            row.accuracies
                                .iter()
                                .map(|a| a.map(format_accuracy).unwrap_or_default()),
                        );
                        w.write_record(&rec)?;
                    }
                    Ok(())
                })?);
        }
    }
    if format.json() {
        files
            .paths
            .push(write_json(out_dir, "pareto.json", &pareto)?);
        files
            .paths
            .push(write_json(out_dir, "points.json", &points)?);
        files
            .paths
            .push(write_json(out_dir, "fronts.json", &labeled)?);
        if let Some(t) = &transfer {
            files
                .paths
                .push(write_json(out_dir, "transferability.json", t)?);
        }
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct PointRow {
    log: String,
    id: GenotypeId,
    gen: u32,
    accuracy: f64,
    energy_mj: f64,
    latency_ms: f64,
    memory_kib: f64,
    status: EvalStatus,
    pareto: bool,
}

fn point_rows(log: &LabeledLog) -> Vec<PointRow> {
    let front: std::collections::HashSet<GenotypeId> = pick_pareto(&ok_records(log))
        .into_iter()
        .map(|r| r.id)
        .collect();
    log.records
        .iter()
        .map(|r| PointRow {
            log: log.label.clone(),
            id: r.id.clone(),
            gen: r.gen,
            accuracy: r.accuracy,
            energy_mj: r.energy_mj,
            latency_ms: r.latency_ms,
            memory_kib: r.memory_kib,
            status: r.status,
            pareto: r.status == EvalStatus::Ok && front.contains(&r.id),
        })
        .collect()
}

fn write_csv(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut csv::Writer<File>) -> csv::Result<()>,
) -> Result<PathBuf, ReportError> {
    let path = dir.join(name);
    let encode = |e: csv::Error| ReportError::Encode {
        path: path.clone(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&path).map_err(encode)?;
    body(&mut w).map_err(encode)?;
    w.flush().map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<PathBuf, ReportError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|e| ReportError::Encode {
        path: path.clone(),
        message: e.to_string(),
    })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, gen: u32, acc: f64, e: f64) -> RunRecord {
        RunRecord {
            id: GenotypeId::from(id.to_string()),
            gen,
            genotype: format!("g-{id}"),
            accuracy: acc,
            energy_mj: e,
            latency_ms: 1.0,
            memory_kib: 100.0,
            status: EvalStatus::Ok,
        }
    }

    fn log(label: &str, records: Vec<RunRecord>) -> LabeledLog {
        LabeledLog {
            label: label.into(),
            records,
        }
    }

    #[test]
    fn reference_formatting() {
        assert_eq!(format_accuracy(0.8599), "85.99%");
        assert_eq!(format_energy(17.38), "17.38 mJ");
        assert_eq!(format_latency(1.53), "1.53 ms");
        assert_eq!(format_memory(6319.0), "6,319 kiB");
        assert_eq!(format_memory(8573.4), "8,573 kiB");
        assert_eq!(format_memory(999.6), "1,000 kiB");
        assert_eq!(format_memory(12.0), "12 kiB");
        assert_eq!(format_memory(1234567.0), "1,234,567 kiB");
    }

    #[test]
    fn one_generation_gives_one_snapshot() {
        let l = log("mnist", vec![rec("a", 1, 0.9, 2.0), rec("b", 1, 0.8, 1.0)]);
        let dir = tempfile::tempdir().unwrap();
        report(&[l], OutputFormat::Json, dir.path()).unwrap();
        let fronts: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("fronts.json")).unwrap())
                .unwrap();
        assert_eq!(fronts.as_array().unwrap().len(), 1);
        assert_eq!(fronts[0]["front"].as_array().unwrap().len(), 2);
        assert!(!dir.path().join("transferability.json").exists());
    }

    #[test]
    fn shared_id_fills_the_transfer_cell() {
        let a = log(
            "mnist",
            vec![rec("shared", 1, 0.99, 1.0), rec("m", 1, 0.5, 1.0)],
        );
        let b = log(
            "cifar10",
            vec![rec("c", 1, 0.85, 1.0), rec("shared", 2, 0.7, 1.0)],
        );
        let t = transferability(&[a, b]);
        assert_eq!(t.columns, ["mnist", "cifar10"]);
        assert_eq!(t.rows[0].architecture, "NASCaps-mnist-best");
        assert_eq!(t.rows[0].accuracies, vec![Some(0.99), Some(0.7)]);
        assert_eq!(t.rows[1].accuracies, vec![None, Some(0.85)]);
    }

    #[test]
    fn csv_files_have_table_layout() {
        let a = log("mnist", vec![rec("a", 1, 0.8599, 17.38)]);
        let b = log("svhn", vec![rec("b", 1, 0.9, 3.0)]);
        let dir = tempfile::tempdir().unwrap();
        let files = report(&[a, b], OutputFormat::Csv, dir.path()).unwrap();
        assert_eq!(files.paths.len(), 4);
        let pareto = std::fs::read_to_string(dir.path().join("pareto.csv")).unwrap();
        let mut lines = pareto.lines();
        assert_eq!(
            lines.next().unwrap(),
            "Architecture,Accuracy,Energy,Latency,Memory,id,genotype"
        );
        assert_eq!(
            lines.next().unwrap(),
            "NASCaps-mnist-a,85.99%,17.38 mJ,1.00 ms,100 kiB,a,g-a"
        );
        let transfer = std::fs::read_to_string(dir.path().join("transferability.csv")).unwrap();
        assert!(transfer.starts_with("Architecture,mnist,svhn\nNASCaps-mnist-best,85.99%,\n"));
    }

    #[test]
    fn failed_evaluations_stay_off_the_front() {
        let mut bad = rec("bad", 1, 0.0, 0.01);
        bad.status = EvalStatus::Failed;
        let l = log("x", vec![rec("a", 1, 0.9, 2.0), bad]);
        let rows = pareto_rows(&l);
        assert_eq!(rows.len(), 1);
        assert!(point_rows(&l)
            .iter()
            .any(|p| p.id.as_str() == "bad" && !p.pareto));
    }
}
