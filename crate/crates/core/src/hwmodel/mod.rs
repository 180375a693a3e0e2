//! Analytical cost model of a capsule-network accelerator built around a
//! square PE array.
//!
//! Per-layer operation parameters (weights, terms per output, feature-map
//! values per weight) feed a weight-stationary timing model: weights are
//! loaded onto the array in groups, each group is reused for every value it
//! multiplies, and layers execute one after another. Everything up to the
//! cycle and access counts is integer arithmetic.

mod calibrate;
mod config;

use serde::Serialize;
use thiserror::Error;

use crate::genotype::{Genotype, LayerDescriptor, LayerKind, Violation};

pub use calibrate::{
    calibrate, calibrate_positive, reference_measurements, Calibration, CalibrationError,
    CalibrationReference, ResidualRow,
};
pub use config::HardwareConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("layer kind {0} must be expanded into primitive layers before costing")]
    NotPrimitive(LayerKind),
    #[error("layer kind {0} does not perform dynamic routing")]
    NotRouting(LayerKind),
    #[error("genotype cannot be costed: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerCostParams {
    pub weights: u64,
    pub sums_per_out: u64,
    pub data_per_weight: u64,
}

/// Operation parameters of one primitive layer.
///
/// Conv layers use the capsule-convolution row with unit capsules; a flat
/// reshape moves data once and holds no weights.
pub fn layer_cost_params(layer: &LayerDescriptor) -> Result<LayerCostParams, CostError> {
    let ch_in = u64::from(layer.ch_in);
    let caps_in = u64::from(layer.caps_in);
    let ch_out = u64::from(layer.ch_out);
    let caps_out = u64::from(layer.caps_out);
    let k = u64::from(layer.kernel_size);
    let n_in = u64::from(layer.n_in);
    let n_out = u64::from(layer.n_out);

    let conv_like = |window: u64, caps_in: u64, caps_out: u64| LayerCostParams {
        weights: (ch_in * window + 1) * ch_out * caps_out * caps_in,
        sums_per_out: (window + 1) * ch_in * caps_in,
        data_per_weight: n_out * n_out * ch_in * caps_in,
    };

    match layer.kind {
        LayerKind::Conv => Ok(conv_like(k * k, 1, 1)),
        LayerKind::ConvCaps => Ok(conv_like(k * k, caps_in, caps_out)),
        LayerKind::ConvCaps3D => Ok(conv_like(k * k * k, caps_in, caps_out)),
        LayerKind::ClassCaps => Ok(LayerCostParams {
            weights: (ch_in * n_in * n_in + 1) * ch_out * caps_out * caps_in,
            sums_per_out: (n_in * n_in + 1) * ch_in * caps_in,
            data_per_weight: 1,
        }),
        LayerKind::FlatCaps => Ok(LayerCostParams {
            weights: 0,
            sums_per_out: 1,
            data_per_weight: 1,
        }),
        LayerKind::CapsCell => Err(CostError::NotPrimitive(layer.kind)),
    }
}

/// Dynamic-routing pseudo-layer of a class capsule layer.
pub fn routing_cost_params(layer: &LayerDescriptor) -> Result<LayerCostParams, CostError> {
    if layer.kind != LayerKind::ClassCaps {
        return Err(CostError::NotRouting(layer.kind));
    }
    let k = u64::from(layer.kernel_size);
    Ok(LayerCostParams {
        weights: u64::from(layer.ch_in) * k * k * u64::from(layer.ch_out),
        sums_per_out: u64::from(layer.caps_in),
        data_per_weight: 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerCycles {
    pub w_loads: u64,
    pub cycles: u64,
}

/// Weight-group loads and execution cycles.
///
/// `w_loads = ceil(weights / (pe_dim * min(pe_dim, sums_per_out)))`,
/// `cycles = w_load_cycles * w_loads + data_per_weight`.
pub fn layer_cycles(p: &LayerCostParams, hw: &HardwareConfig) -> LayerCycles {
    let pe = u64::from(hw.pe_dim);
    let group = pe * pe.min(p.sums_per_out).max(1);
    let w_loads = p.weights.div_ceil(group);
    LayerCycles {
        w_loads,
        cycles: u64::from(hw.w_load_cycles) * w_loads + p.data_per_weight,
    }
}

/// Memory accesses: 256 for non-convolutional layers (`data_per_weight == 1`),
/// otherwise `16 * max(sums_per_out - 15, 1)`.
pub fn layer_memory_accesses(p: &LayerCostParams) -> u64 {
    if p.data_per_weight == 1 {
        256
    } else {
        16 * p.sums_per_out.saturating_sub(15).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCost {
    /// Position in the expanded primitive list.
    pub index: usize,
    /// Top-level descriptor this entry belongs to.
    pub source: usize,
    pub kind: LayerKind,
    /// Dynamic-routing pseudo-layer of the preceding class capsule layer.
    pub routing: bool,
    pub weights: u64,
    pub sums_per_out: u64,
    pub data_per_weight: u64,
    pub w_loads: u64,
    pub cycles: u64,
    pub memory_accesses: u64,
    /// Memory words transferred: `ceil(memory_accesses * value_bits / mem_word_bits)`.
    pub mem_words: u64,
    pub latency_ms: f64,
    pub energy_mj: f64,
    pub memory_kib: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub latency_ms: f64,
    pub energy_mj: f64,
    pub memory_kib: f64,
}

impl CostReport {
    pub fn total_cycles(&self) -> u64 {
        self.layers.iter().map(|l| l.cycles).sum()
    }

    pub fn total_mem_words(&self) -> u64 {
        self.layers.iter().map(|l| l.mem_words).sum()
    }

    pub fn total_weights(&self) -> u64 {
        self.layers.iter().map(|l| l.weights).sum()
    }
}

/// Latency, energy and memory footprint of a genotype.
///
/// Only shape and encoding violations prevent costing; the search-space
/// ordering rules do not.
pub fn estimate(g: &Genotype, hw: &HardwareConfig) -> Result<CostReport, CostError> {
    let blocking: Vec<Violation> = crate::genotype::validate(g)
        .into_iter()
        .filter(|v| !v.rule.is_structural())
        .collect();
    if !blocking.is_empty() {
        return Err(CostError::Invalid(blocking));
    }
    estimate_primitives(&g.primitives(), hw)
}

/// Costs an already expanded layer list of `(source index, layer)` pairs.
pub fn estimate_primitives(
    primitives: &[(usize, LayerDescriptor)],
    hw: &HardwareConfig,
) -> Result<CostReport, CostError> {
    let mut layers = Vec::with_capacity(primitives.len() + 1);
    for (index, (source, layer)) in primitives.iter().enumerate() {
        let params = layer_cost_params(layer)?;
        layers.push(layer_entry(
            index, *source, layer.kind, false, params, 1, hw,
        ));
        if layer.kind == LayerKind::ClassCaps {
            let routing = routing_cost_params(layer)?;
            layers.push(layer_entry(
                index,
                *source,
                layer.kind,
                true,
                routing,
                hw.routing_iterations,
                hw,
            ));
        }
    }
    Ok(CostReport {
        latency_ms: layers.iter().map(|l| l.latency_ms).sum(),
        energy_mj: layers.iter().map(|l| l.energy_mj).sum(),
        memory_kib: layers.iter().map(|l| l.memory_kib).sum(),
        layers,
    })
}

fn layer_entry(
    index: usize,
    source: usize,
    kind: LayerKind,
    routing: bool,
    params: LayerCostParams,
    repeats: u32,
    hw: &HardwareConfig,
) -> LayerCost {
    let repeats = u64::from(repeats);
    let LayerCycles { w_loads, cycles } = layer_cycles(&params, hw);
    let (w_loads, cycles) = (w_loads * repeats, cycles * repeats);
    let memory_accesses = layer_memory_accesses(&params) * repeats;
    let mem_words =
        (memory_accesses * u64::from(hw.value_bits)).div_ceil(u64::from(hw.mem_word_bits));
    let seconds = cycles as f64 * hw.clock_period_ns * 1e-9;
    LayerCost {
        index,
        source,
        kind,
        routing,
        weights: params.weights,
        sums_per_out: params.sums_per_out,
        data_per_weight: params.data_per_weight,
        w_loads,
        cycles,
        memory_accesses,
        mem_words,
        latency_ms: seconds * 1e3,
        // pJ -> mJ is 1e-9; mW * s = mJ.
        energy_mj: mem_words as f64 * hw.mem_access_energy_pj * 1e-9
            + seconds * hw.pe_array_power_mw,
        memory_kib: (params.weights * u64::from(hw.bytes_per_weight)) as f64 / 1024.0,
    }
}
