//! Fitting of the two unpublished energy constants against reference energies.
//!
//! Energy is linear in both constants:
//! `E = words * en_mem * 1e-9 + seconds * pwr`, so a relative-error weighted
//! least-squares fit reduces to a 2x2 normal system.

use serde::Serialize;
use thiserror::Error;

use super::{estimate, CostError, HardwareConfig};
use crate::genotype::{preset, Genotype, Preset};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReference {
    pub name: String,
    pub genotype: Genotype,
    /// Reported for comparison only; latency does not depend on the fitted constants.
    pub latency_ms: Option<f64>,
    pub energy_mj: f64,
    pub memory_kib: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub name: String,
    pub target_energy_mj: f64,
    pub fitted_energy_mj: f64,
    /// `(fitted - target) / target`.
    pub relative_residual: f64,
    pub target_latency_ms: Option<f64>,
    pub model_latency_ms: f64,
    pub target_memory_kib: Option<f64>,
    pub model_memory_kib: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub config: HardwareConfig,
    pub residuals: Vec<ResidualRow>,
}

impl Calibration {
    pub fn max_relative_residual(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.relative_residual.abs())
            .fold(0.0, f64::max)
    }

    /// Both fitted constants are positive.
    pub fn is_physical(&self) -> bool {
        self.config.mem_access_energy_pj > 0.0 && self.config.pe_array_power_mw > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("calibration needs at least 2 references, got {0}")]
    TooFewReferences(usize),
    #[error("reference {0}: energy must be positive")]
    BadTarget(String),
    #[error("reference {0}: {1}")]
    Cost(String, CostError),
    #[error("references do not separate memory energy from array power (rank-deficient system)")]
    RankDeficient,
    #[error(
        "best fit is non-physical: mem_access_energy_pj = {:.6}, pe_array_power_mw = {:.6} (max relative residual {:.3e})",
        .0.config.mem_access_energy_pj,
        .0.config.pe_array_power_mw,
        .0.max_relative_residual()
    )]
    NonPhysical(Box<Calibration>),
}

/// Measured CIFAR-10 CapsNet and DeepCaps figures the defaults are fitted to.
pub fn reference_measurements() -> Vec<CalibrationReference> {
    [
        (Preset::CapsNetCifar10, 1.82, 88.80, 8_573.0),
        (Preset::DeepCaps, 4.29, 36.30, 9_052.0),
    ]
    .into_iter()
    .map(|(p, latency, energy, memory)| CalibrationReference {
        name: p.name().to_string(),
        genotype: preset(p),
        latency_ms: Some(latency),
        energy_mj: energy,
        memory_kib: Some(memory),
    })
    .collect()
}

/// Per-reference energy coefficients: mJ per pJ of `en_mem`, and mJ per mW
/// of `pwr`.
struct Row {
    a: f64,
    b: f64,
    target: f64,
    latency_ms: f64,
    memory_kib: f64,
}

fn rows(
    references: &[CalibrationReference],
    hw: &HardwareConfig,
) -> Result<Vec<Row>, CalibrationError> {
    references
        .iter()
        .map(|r| {
            if !(r.energy_mj.is_finite() && r.energy_mj > 0.0) {
                return Err(CalibrationError::BadTarget(r.name.clone()));
            }
            let report =
                estimate(&r.genotype, hw).map_err(|e| CalibrationError::Cost(r.name.clone(), e))?;
            Ok(Row {
                a: report.total_mem_words() as f64 * 1e-9,
                b: report.total_cycles() as f64 * hw.clock_period_ns * 1e-9,
                target: r.energy_mj,
                latency_ms: report.latency_ms,
                memory_kib: report.memory_kib,
            })
        })
        .collect()
}

fn finish(
    references: &[CalibrationReference],
    rows: &[Row],
    hw: &HardwareConfig,
    en: f64,
    pwr: f64,
) -> Calibration {
    let residuals = references
        .iter()
        .zip(rows)
        .map(|(r, row)| {
            let fitted = row.a * en + row.b * pwr;
            ResidualRow {
                name: r.name.clone(),
                target_energy_mj: row.target,
                fitted_energy_mj: fitted,
                relative_residual: (fitted - row.target) / row.target,
                target_latency_ms: r.latency_ms,
                model_latency_ms: row.latency_ms,
                target_memory_kib: r.memory_kib,
                model_memory_kib: row.memory_kib,
            }
        })
        .collect();
    Calibration {
        config: HardwareConfig {
            mem_access_energy_pj: en,
            pe_array_power_mw: pwr,
            ..hw.clone()
        },
        residuals,
    }
}

/// Unconstrained fit. Relative residuals are minimised, so two references
/// are reproduced exactly. A fit with a non-positive constant is returned as
/// [`CalibrationError::NonPhysical`] carrying the full result.
pub fn calibrate(
    references: &[CalibrationReference],
    hw: &HardwareConfig,
) -> Result<Calibration, CalibrationError> {
    if references.len() < 2 {
        return Err(CalibrationError::TooFewReferences(references.len()));
    }
    let rows = rows(references, hw)?;
    let (en, pwr) = solve_unconstrained(&rows)?;
    let cal = finish(references, &rows, hw, en, pwr);
    if cal.is_physical() {
        Ok(cal)
    } else {
        Err(CalibrationError::NonPhysical(Box::new(cal)))
    }
}

/// Fit restricted to positive constants.
///
/// When the unconstrained optimum leaves the positive quadrant the references
/// do not identify how energy splits between memory and the PE array. The
/// fallback gives each term half of the pooled reference energy and fits only
/// the overall scale.
pub fn calibrate_positive(
    references: &[CalibrationReference],
    hw: &HardwareConfig,
) -> Result<Calibration, CalibrationError> {
    if references.len() < 2 {
        return Err(CalibrationError::TooFewReferences(references.len()));
    }
    let rows = rows(references, hw)?;
    let (en, pwr) = match solve_unconstrained(&rows) {
        Ok((en, pwr)) if en > 0.0 && pwr > 0.0 => (en, pwr),
        _ => {
            let sum_a: f64 = rows.iter().map(|r| r.a).sum();
            let sum_b: f64 = rows.iter().map(|r| r.b).sum();
            if sum_a <= 0.0 || sum_b <= 0.0 {
                return Err(CalibrationError::RankDeficient);
            }
            let (num, den) = rows.iter().fold((0.0, 0.0), |(n, d), r| {
                let w = (r.a / sum_a + r.b / sum_b) / 2.0 / r.target;
                (n + w, d + w * w)
            });
            let scale = num / den;
            (scale / (2.0 * sum_a), scale / (2.0 * sum_b))
        }
    };
    Ok(finish(references, &rows, hw, en, pwr))
}

fn solve_unconstrained(rows: &[Row]) -> Result<(f64, f64), CalibrationError> {
    // Scale each column to unit norm so the rank test is unit-free.
    let (mut saa, mut sab, mut sbb, mut sat, mut sbt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in rows {
        let (a, b) = (r.a / r.target, r.b / r.target);
        saa += a * a;
        sab += a * b;
        sbb += b * b;
        sat += a;
        sbt += b;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(CalibrationError::RankDeficient);
    }
    let (na, nb) = (saa.sqrt(), sbb.sqrt());
    let c = sab / (na * nb);
    let det = 1.0 - c * c;
    if det < 1e-12 {
        return Err(CalibrationError::RankDeficient);
    }
    let (ta, tb) = (sat / na, sbt / nb);
    let x = (ta - c * tb) / det;
    let y = (tb - c * ta) / det;
    Ok((x / na, y / nb))
}
