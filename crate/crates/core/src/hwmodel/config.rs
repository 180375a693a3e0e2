use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::kv::{KvError, KvFile};

/// Accelerator constants.
///
/// `mem_access_energy_pj` and `pe_array_power_mw` are not published figures;
/// the defaults are a fitted estimate (see `calibrate_positive`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareConfig {
    pub clock_period_ns: f64,
    pub pe_dim: u32,
    pub w_load_cycles: u32,
    /// Energy of one memory word transfer.
    pub mem_access_energy_pj: f64,
    /// Average PE-array power.
    pub pe_array_power_mw: f64,
    pub bytes_per_weight: u32,
    pub mem_word_bits: u32,
    pub value_bits: u32,
    /// Multiplier on the dynamic-routing pseudo-layer's cycles and accesses.
    pub routing_iterations: u32,
}

// Fitted against the CIFAR-10 CapsNet (88.80 mJ) and DeepCaps (36.30 mJ)
// reference energies with `calibrate_positive`.
const DEFAULT_MEM_ACCESS_ENERGY_PJ: f64 = 741_409.342_456_991_3;
const DEFAULT_PE_ARRAY_POWER_MW: f64 = 6_925.114_260_293_118;

impl Default for HardwareConfig {
    fn default() -> Self {
        Self {
            clock_period_ns: 3.0,
            pe_dim: 16,
            w_load_cycles: 16,
            mem_access_energy_pj: DEFAULT_MEM_ACCESS_ENERGY_PJ,
            pe_array_power_mw: DEFAULT_PE_ARRAY_POWER_MW,
            bytes_per_weight: 1,
            mem_word_bits: 128,
            value_bits: 8,
            routing_iterations: 1,
        }
    }
}

const KEYS: [&str; 9] = [
    "clock_period_ns",
    "pe_dim",
    "w_load_cycles",
    "mem_access_energy_pj",
    "pe_array_power_mw",
    "bytes_per_weight",
    "mem_word_bits",
    "value_bits",
    "routing_iterations",
];

impl HardwareConfig {
    /// Checks that every constant is positive and finite.
    pub fn check(&self) -> Result<(), String> {
        let reals = [
            ("clock_period_ns", self.clock_period_ns),
            ("mem_access_energy_pj", self.mem_access_energy_pj),
            ("pe_array_power_mw", self.pe_array_power_mw),
        ];
        for (key, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{key} must be a positive real, got {v}"));
            }
        }
        let ints = [
            ("pe_dim", self.pe_dim),
            ("w_load_cycles", self.w_load_cycles),
            ("bytes_per_weight", self.bytes_per_weight),
            ("mem_word_bits", self.mem_word_bits),
            ("value_bits", self.value_bits),
            ("routing_iterations", self.routing_iterations),
        ];
        for (key, v) in ints {
            if v == 0 {
                return Err(format!("{key} must be a positive integer"));
            }
        }
        Ok(())
    }

    /// Parses a `key = value` file. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let kv = KvFile::parse(text)?;
        kv.deny_unknown(&KEYS)?;
        let mut hw = Self::default();
        kv.apply("clock_period_ns", &mut hw.clock_period_ns)?;
        kv.apply("pe_dim", &mut hw.pe_dim)?;
        kv.apply("w_load_cycles", &mut hw.w_load_cycles)?;
        kv.apply("mem_access_energy_pj", &mut hw.mem_access_energy_pj)?;
        kv.apply("pe_array_power_mw", &mut hw.pe_array_power_mw)?;
        kv.apply("bytes_per_weight", &mut hw.bytes_per_weight)?;
        kv.apply("mem_word_bits", &mut hw.mem_word_bits)?;
        kv.apply("value_bits", &mut hw.value_bits)?;
        kv.apply("routing_iterations", &mut hw.routing_iterations)?;
        Ok(hw)
    }

    pub fn read(path: &Path) -> Result<Self, KvError> {
        let text = std::fs::read_to_string(path).map_err(|source| KvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Renders the config file. `note` is appended as a comment to the two
    /// energy constants, e.g. to mark them as fitted.
    pub fn to_kv(&self, note: Option<&str>) -> String {
        let suffix = note.map(|n| format!("  # {n}")).unwrap_or_default();
        let mut out = String::new();
        let _ = writeln!(out, "clock_period_ns = {}", self.clock_period_ns);
        let _ = writeln!(out, "pe_dim = {}", self.pe_dim);
        let _ = writeln!(out, "w_load_cycles = {}", self.w_load_cycles);
        let _ = writeln!(
            out,
            "mem_access_energy_pj = {}{suffix}",
            self.mem_access_energy_pj
        );
        let _ = writeln!(
            out,
            "pe_array_power_mw = {}{suffix}",
            self.pe_array_power_mw
        );
        let _ = writeln!(out, "bytes_per_weight = {}", self.bytes_per_weight);
        let _ = writeln!(out, "mem_word_bits = {}", self.mem_word_bits);
        let _ = writeln!(out, "value_bits = {}", self.value_bits);
        let _ = writeln!(out, "routing_iterations = {}", self.routing_iterations);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let hw = HardwareConfig {
            clock_period_ns: 2.5,
            mem_access_energy_pj: 123.25,
            routing_iterations: 3,
            ..HardwareConfig::default()
        };
        let text = hw.to_kv(Some("calibrated"));
        assert!(text.contains("mem_access_energy_pj = 123.25  # calibrated"));
        assert_eq!(HardwareConfig::parse(&text).unwrap(), hw);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let hw = HardwareConfig::parse("clock_period_ns = 5\n").unwrap();
        assert_eq!(hw.clock_period_ns, 5.0);
        assert_eq!(hw.pe_dim, 16);
        assert_eq!(hw.w_load_cycles, 16);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(HardwareConfig::parse("clock = 3\n").is_err());
        assert!(HardwareConfig::parse("pe_dim = -1\n").is_err());
        let hw = HardwareConfig::parse("pe_array_power_mw = -4\n").unwrap();
        assert!(hw.check().is_err());
    }

    #[test]
    fn defaults_are_positive() {
        HardwareConfig::default().check().unwrap();
    }
}
