//! Command-line front end. [`run`] parses arguments, dispatches and returns
//! the process exit code.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{self, LabeledLog, OutputFormat};
use crate::evaluation::{
    AccuracyBackend, BridgeBackend, Dataset, EvalStatus, EvaluationCache, Evaluator,
    SurrogateBackend, DEFAULT_REQUEST_TIMEOUT,
};
use crate::genotype::{preset, random_genotype, validate, Genotype, Preset};
use crate::hwmodel::{
    calibrate, calibrate_positive, estimate, reference_measurements, Calibration, CalibrationError,
    CostError, CostReport, HardwareConfig,
};
use crate::nsga::{run_search, RunRecord, SearchConfig, SearchError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

/// Environment variable naming a persistent evaluation cache file.
pub const CACHE_ENV: &str = "NASCAPS_CACHE";

#[derive(Debug, Parser)]
#[command(
    name = "nascaps",
    version,
    about = "Hardware-aware architecture search for capsule networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the evolutionary search and write the run log and final front.
    Search(SearchArgs),
    /// Print latency, energy and memory estimates for one genotype.
    Estimate(EstimateArgs),
    /// Print random valid genotypes, one per line.
    Rand(RandArgs),
    /// Correlate reduced-epoch accuracies with final accuracies.
    Correlate(CorrelateArgs),
    /// Write Pareto tables, front snapshots and transferability matrices.
    Report(ReportArgs),
    /// Fit the two energy constants against reference energies.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Surrogate,
    Bridge,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long, default_value = "mnist")]
    dataset: Dataset,
    #[arg(long, value_enum, default_value = "surrogate")]
    backend: BackendKind,
    /// Shell command starting a trainer; required with `--backend bridge`.
    #[arg(long)]
    trainer_cmd: Option<String>,
    /// Hardware config file.
    #[arg(long)]
    hw: Option<PathBuf>,
    /// Search config file; flags below override it.
    #[arg(long)]
    search: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    generations: Option<u32>,
    /// Wall-clock limit such as `12h`, or `none`.
    #[arg(long, value_parser = parse_limit)]
    time_limit: Option<Limit>,
    /// Training epochs per candidate; defaults to the dataset's reduced budget.
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
    /// Per-request timeout of the trainer bridge.
    #[arg(long, value_parser = humantime::parse_duration)]
    request_timeout: Option<Duration>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy)]
struct Limit(Option<Duration>);

fn parse_limit(s: &str) -> Result<Limit, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(Limit(None));
    }
    humantime::parse_duration(s)
        .map(|d| Limit(Some(d)))
        .map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CostFormat {
    Table,
    Json,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Canonical genotype string.
    #[arg(conflicts_with_all = ["preset", "file"])]
    genotype: Option<String>,
    #[arg(long, conflicts_with = "file")]
    preset: Option<Preset>,
    /// File holding a genotype string.
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long)]
    hw: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: CostFormat,
}

#[derive(Debug, Args)]
struct RandArgs {
    #[arg(short = 'n', long = "count", default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset whose input shape and class count bound the samples.
    #[arg(long, default_value = "mnist")]
    dataset: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableFormat {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    /// AccuracyTrace JSONL file.
    #[arg(long)]
    traces: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10,15,20")]
    epochs: Vec<u32>,
    /// Epoch whose accuracy counts as final; defaults to each trace's last.
    #[arg(long)]
    final_epoch: Option<u32>,
    /// Drop traces flagged as reference networks.
    #[arg(long)]
    exclude_references: bool,
    #[arg(long, value_enum, default_value = "table")]
    format: TableFormat,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run logs, as `path` or `label=path`; the label defaults to the file stem.
    #[arg(long, num_args = 1.., required = true)]
    logs: Vec<String>,
    #[arg(long, default_value = "both", value_parser = parse_output_format)]
    format: OutputFormat,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn parse_output_format(s: &str) -> Result<OutputFormat, String> {
    s.parse()
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Starting hardware config; its clock and array sizes are kept.
    #[arg(long)]
    hw: Option<PathBuf>,
    /// Reference as `PRESET=ENERGY_MJ`; repeat for more. Defaults to the
    /// CIFAR-10 CapsNet and DeepCaps measurements.
    #[arg(long = "reference", value_parser = parse_reference)]
    references: Vec<(Preset, f64)>,
    /// Fall back to the positive-constant fit when the exact fit is non-physical.
    #[arg(long)]
    positive: bool,
    /// Write the fitted hardware config here.
    #[arg(long)]
    write: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: CostFormat,
}

fn parse_reference(s: &str) -> Result<(Preset, f64), String> {
    let (name, energy) = s.split_once('=').ok_or("expected PRESET=ENERGY_MJ")?;
    let energy: f64 = energy
        .trim()
        .parse()
        .map_err(|e| format!("energy {energy:?}: {e}"))?;
    Ok((name.trim().parse()?, energy))
}

/// Runs the tool with `args` (program name first).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Search(a) => cmd_search(a, out),
        Command::Estimate(a) => cmd_estimate(a, out),
        Command::Rand(a) => cmd_rand(a, out),
        Command::Correlate(a) => cmd_correlate(a, out),
        Command::Report(a) => cmd_report(a, out),
        Command::Calibrate(a) => cmd_calibrate(a, out, err),
    };
    match result {
        Ok(code) => code,
        Err(Failure { code, message }) => {
            let _ = writeln!(err, "nascaps: {message}");
            code
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.to_string(),
    }
}

type CmdResult = Result<i32, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    usage(format!("{}: {e}", path.display()))
}

fn load_hw(path: Option<&Path>) -> Result<HardwareConfig, Failure> {
    let hw = match path {
        Some(p) => HardwareConfig::read(p).map_err(usage)?,
        None => HardwareConfig::default(),
    };
    hw.check()
        .map_err(|e| usage(format!("hardware config: {e}")))?;
    Ok(hw)
}

fn cmd_search(a: SearchArgs, out: &mut dyn Write) -> CmdResult {
    let hw = load_hw(a.hw.as_deref())?;
    let mut cfg = match &a.search {
        Some(p) => SearchConfig::read(p).map_err(usage)?,
        None => SearchConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(g) = a.generations {
        cfg.generations = g;
    }
    if let Some(Limit(l)) = a.time_limit {
        cfg.wall_clock_limit = l;
    }
    cfg.check()
        .map_err(|e| usage(format!("search config: {e}")))?;

    let surrogate = SurrogateBackend;
    let bridge;
    let backend: &dyn AccuracyBackend = match a.backend {
        BackendKind::Surrogate => &surrogate,
        BackendKind::Bridge => {
            let cmd = a
                .trainer_cmd
                .clone()
                .ok_or_else(|| usage("--backend bridge needs --trainer-cmd"))?;
            let workers = a.workers.unwrap_or(crate::evaluation::DEFAULT_WORKERS);
            bridge = BridgeBackend::new(
                cmd,
                workers,
                a.request_timeout.unwrap_or(DEFAULT_REQUEST_TIMEOUT),
            );
            &bridge
        }
    };
    let cache = match std::env::var_os(CACHE_ENV) {
        Some(p) if !p.is_empty() => {
            let p = PathBuf::from(p);
            EvaluationCache::open(&p).map_err(|e| io_failure(&p, e))?
        }
        _ => EvaluationCache::in_memory(),
    };
    let mut evaluator = Evaluator::new(hw, a.dataset, backend, cache);
    evaluator.seed = cfg.seed;
    if let Some(e) = a.epochs {
        if e == 0 {
            return Err(usage("--epochs must be positive"));
        }
        evaluator.epochs = e;
    }
    if let Some(w) = a.workers {
        evaluator.workers = w.max(1);
    }

    std::fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    let log_path = a.out.join("run.jsonl");
    let log_file = File::create(&log_path).map_err(|e| io_failure(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let outcome = run_search(&a.dataset.search_space(), &cfg, &mut evaluator, &mut log).map_err(
        |e| match e {
            SearchError::Evaluator(_) => Failure {
                code: EXIT_BACKEND,
                message: e.to_string(),
            },
            other => usage(other),
        },
    )?;
    drop(log);

    let front_path = a.out.join("front.jsonl");
    let by_id: std::collections::HashMap<_, &RunRecord> =
        outcome.records.iter().map(|r| (&r.id, r)).collect();
    let mut text = String::new();
    for ind in &outcome.front {
        if let Some(r) = by_id.get(&ind.id) {
            text.push_str(&serde_json::to_string(r).map_err(usage)?);
            text.push('\n');
        }
    }
    std::fs::write(&front_path, text).map_err(|e| io_failure(&front_path, e))?;

    let _ = writeln!(
        out,
        "generations: {}/{}\nunique evaluations: {}\nfront size: {}\nrun log: {}\nfront: {}",
        outcome.generations_completed,
        cfg.generations,
        outcome.unique_evaluations(),
        outcome.front.len(),
        log_path.display(),
        front_path.display()
    );
    if !outcome.records.is_empty() && outcome.records.iter().all(|r| r.status != EvalStatus::Ok) {
        return Err(Failure {
            code: EXIT_BACKEND,
            message: "every evaluation failed; check the trainer".into(),
        });
    }
    if outcome.timed_out {
        let _ = writeln!(out, "stopped at the wall-clock limit; results are partial");
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn cmd_estimate(a: EstimateArgs, out: &mut dyn Write) -> CmdResult {
    let hw = load_hw(a.hw.as_deref())?;
    let g = match (&a.genotype, a.preset, &a.file) {
        (Some(s), _, _) => Genotype::deserialize(s.trim()).map_err(usage)?,
        (_, Some(p), _) => preset(p),
        (_, _, Some(f)) => {
            let text = std::fs::read_to_string(f).map_err(|e| io_failure(f, e))?;
            Genotype::deserialize(text.trim()).map_err(usage)?
        }
        _ => return Err(usage("give a genotype string, --preset or --file")),
    };
    let report = match estimate(&g, &hw) {
        Ok(r) => r,
        Err(CostError::Invalid(violations)) => {
            let list: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
            return Err(usage(format!("invalid genotype:\n{}", list.join("\n"))));
        }
        Err(e) => return Err(usage(e)),
    };
    let notes: Vec<String> = validate(&g).iter().map(ToString::to_string).collect();
    match a.format {
        CostFormat::Json => {
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&report).map_err(usage)?
            );
        }
        CostFormat::Table => {
            let _ = write!(out, "{}", cost_table(&g, &report));
            for n in notes {
                let _ = writeln!(out, "note: outside the search space: {n}");
            }
        }
    }
    Ok(EXIT_OK)
}

fn cost_table(g: &Genotype, r: &CostReport) -> String {
    let mut s = format!("genotype {}\n", g.id());
    s.push_str(&format!(
        "{:>3} {:>4} {:<8} {:>10} {:>6} {:>4} {:>8} {:>10} {:>6} {:>6} {:>11} {:>11} {:>11}\n",
        "#",
        "src",
        "kind",
        "weights",
        "spo",
        "dpw",
        "w_loads",
        "cycles",
        "ma",
        "words",
        "latency_ms",
        "energy_mj",
        "memory_kib"
    ));
    for l in &r.layers {
        let kind = if l.routing {
            "routing".to_string()
        } else {
            l.kind.to_string()
        };
        s.push_str(&format!(
            "{:>3} {:>4} {:<8} {:>10} {:>6} {:>4} {:>8} {:>10} {:>6} {:>6} {:>11.6} {:>11.6} {:>11.3}\n",
            l.index,
            l.source,
            kind,
            l.weights,
            l.sums_per_out,
            l.data_per_weight,
            l.w_loads,
            l.cycles,
            l.memory_accesses,
            l.mem_words,
            l.latency_ms,
            l.energy_mj,
            l.memory_kib
        ));
    }
    s.push_str(&format!(
        "total: {} primitive layers, {} cycles, {} weights\nlatency {:.6} ms, energy {:.6} mJ, memory {:.3} kiB\n",
        r.layers.iter().filter(|l| !l.routing).count(),
        r.total_cycles(),
        r.total_weights(),
        r.latency_ms,
        r.energy_mj,
        r.memory_kib
    ));
    s
}

fn cmd_rand(a: RandArgs, out: &mut dyn Write) -> CmdResult {
    let space = a.dataset.search_space();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for _ in 0..a.count {
        let g = random_genotype(&space, &mut rng).map_err(usage)?;
        let _ = writeln!(out, "{}", g.serialize());
    }
    Ok(EXIT_OK)
}

fn cmd_correlate(a: CorrelateArgs, out: &mut dyn Write) -> CmdResult {
    let file = File::open(&a.traces).map_err(|e| io_failure(&a.traces, e))?;
    let mut traces = analysis::read_traces(BufReader::new(file))
        .map_err(|e| usage(format!("{}: {e}", a.traces.display())))?;
    if a.exclude_references {
        traces.retain(|t| !t.reference);
    }
    let rows =
        analysis::epoch_correlation_table(&traces, &a.epochs, a.final_epoch).map_err(usage)?;
    match a.format {
        TableFormat::Json => {
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&rows).map_err(usage)?
            );
        }
        TableFormat::Csv => {
            let _ = writeln!(out, "epoch,pcc,median_cumulative_seconds");
            for r in &rows {
                let t = r
                    .median_cumulative_seconds
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                let _ = writeln!(out, "{},{},{}", r.epoch, r.pcc, t);
            }
        }
        TableFormat::Table => {
            let mut epoch = format!("{:<10}", "epoch");
            let mut pcc = format!("{:<10}", "PCC");
            let mut mctt = format!("{:<10}", "MCTT [s]");
            for r in &rows {
                epoch.push_str(&format!(" {:>9}", r.epoch));
                pcc.push_str(&format!(" {:>9.4}", r.pcc));
                match r.median_cumulative_seconds {
                    Some(t) => mctt.push_str(&format!(" {t:>9.1}")),
                    None => mctt.push_str(&format!(" {:>9}", "-")),
                }
            }
            let _ = writeln!(out, "{} traces\n{epoch}\n{pcc}\n{mctt}", traces.len());
        }
    }
    Ok(EXIT_OK)
}

fn cmd_report(a: ReportArgs, out: &mut dyn Write) -> CmdResult {
    let logs = a
        .logs
        .iter()
        .map(|s| LabeledLog::read(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    let files = analysis::report(&logs, a.format, &a.out).map_err(usage)?;
    for p in files.paths {
        let _ = writeln!(out, "{}", p.display());
    }
    Ok(EXIT_OK)
}

fn cmd_calibrate(a: CalibrateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let hw = load_hw(a.hw.as_deref())?;
    let refs = if a.references.is_empty() {
        reference_measurements()
    } else {
        a.references
            .iter()
            .map(|&(p, energy_mj)| crate::hwmodel::CalibrationReference {
                name: p.name().to_string(),
                genotype: preset(p),
                latency_ms: None,
                energy_mj,
                memory_kib: None,
            })
            .collect()
    };
    let (cal, note) = match calibrate(&refs, &hw) {
        Ok(cal) => (cal, "exact least-squares fit"),
        Err(CalibrationError::NonPhysical(exact)) => {
            let _ = writeln!(
                err,
                "warning: the exact fit is non-physical (mem_access_energy_pj = {:.6}, pe_array_power_mw = {:.6})",
                exact.config.mem_access_energy_pj, exact.config.pe_array_power_mw
            );
            if !a.positive {
                let _ = write!(out, "{}", calibration_table(&exact, &a.format)?);
                return Err(usage("no physical fit reproduces the references; rerun with --positive to accept a fallback"));
            }
            let cal = calibrate_positive(&refs, &hw).map_err(usage)?;
            (cal, "positive-constant fallback fit")
        }
        Err(e) => return Err(usage(e)),
    };
    let _ = write!(out, "{}", calibration_table(&cal, &a.format)?);
    if let Some(p) = &a.write {
        std::fs::write(p, cal.config.to_kv(Some(note))).map_err(|e| io_failure(p, e))?;
    }
    Ok(EXIT_OK)
}

fn calibration_table(cal: &Calibration, format: &CostFormat) -> Result<String, Failure> {
    if *format == CostFormat::Json {
        return Ok(serde_json::to_string_pretty(cal).map_err(usage)? + "\n");
    }
    let mut s = format!(
        "mem_access_energy_pj = {}\npe_array_power_mw = {}\n",
        cal.config.mem_access_energy_pj, cal.config.pe_array_power_mw
    );
    s.push_str(&format!(
        "{:<16} {:>12} {:>12} {:>10} {:>10} {:>10} {:>11} {:>11}\n",
        "reference",
        "target_mJ",
        "fitted_mJ",
        "residual",
        "target_ms",
        "model_ms",
        "target_kiB",
        "model_kiB"
    ));
    let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
    for r in &cal.residuals {
        s.push_str(&format!(
            "{:<16} {:>12.4} {:>12.4} {:>9.3}% {:>10} {:>10.4} {:>11} {:>11.1}\n",
            r.name,
            r.target_energy_mj,
            r.fitted_energy_mj,
            r.relative_residual * 100.0,
            opt(r.target_latency_ms, 2),
            r.model_latency_ms,
            opt(r.target_memory_kib, 0),
            r.model_memory_kib
        ));
    }
    s.push_str(&format!(
        "max |relative residual| = {:.3}%\n",
        cal.max_relative_residual() * 100.0
    ));
    Ok(s)
}
