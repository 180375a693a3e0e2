use thiserror::Error;

use super::validate::{validate, Violation};
use super::{Genotype, LayerKind, SearchSpace, TensorShape, RESIZE_SIDE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rejected configuration: {reason}")]
pub struct RejectedConfiguration {
    pub reason: String,
    pub violations: Vec<Violation>,
}

impl RejectedConfiguration {
    pub fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
            violations: Vec::new(),
        }
    }
}

/// Forward shape propagation.
///
/// Rewrites every input field from the predecessor (or the dataset input),
/// clamps free parameters into the space, shrinks kernels that exceed the
/// incoming map, recomputes output sides, and drops a skip connection whose
/// layer no longer preserves shape. Layer kinds are never changed.
pub fn repair(g: &Genotype, space: &SearchSpace) -> Result<Genotype, RejectedConfiguration> {
    if g.layers.is_empty() {
        return Err(RejectedConfiguration::new("genotype has no layers"));
    }
    let side = if g.resize {
        RESIZE_SIDE
    } else {
        space.input.side
    };
    let mut current = TensorShape {
        side,
        channels: space.input.channels,
        caps: 1,
    };
    let last = g.layers.len() - 1;
    let mut layers = Vec::with_capacity(g.layers.len());

    for (i, src) in g.layers.iter().enumerate() {
        let mut l = *src;
        l.padding = l.kind.default_padding();
        l.n_in = current.side;
        l.ch_in = current.channels;
        l.caps_in = current.caps;

        match l.kind {
            LayerKind::Conv | LayerKind::ConvCaps | LayerKind::ConvCaps3D | LayerKind::CapsCell => {
                if l.kind == LayerKind::Conv {
                    if l.caps_in != 1 {
                        return Err(RejectedConfiguration::new(format!(
                            "layer {i}: conv layer follows a capsule layer"
                        )));
                    }
                    l.caps_out = 1;
                } else {
                    l.caps_out = space.clamp_caps_out(l.caps_out);
                }
                l.ch_out = space.clamp_ch_out(l.ch_out);
                l.stride_size = space.clamp_stride(l.stride_size);
                l.kernel_size = space.clamp_kernel(l.kernel_size);
                if l.kernel_size > l.n_in {
                    l.kernel_size = space.largest_kernel_at_most(l.n_in).ok_or_else(|| {
                        RejectedConfiguration::new(format!(
                            "layer {i}: {}x{} map is smaller than every kernel choice",
                            l.n_in, l.n_in
                        ))
                    })?;
                }
                l.n_out = l
                    .padding
                    .output_side(l.n_in, l.kernel_size, l.stride_size)
                    .ok_or_else(|| {
                        RejectedConfiguration::new(format!("layer {i}: feature map collapses"))
                    })?;
            }
            LayerKind::ClassCaps => {
                l.kernel_size = 1;
                l.stride_size = 1;
                l.n_out = 1;
                if i == last {
                    l.ch_out = space.num_classes;
                } else {
                    l.ch_out = space.clamp_ch_out(l.ch_out);
                }
                l.caps_out = space.clamp_caps_out(l.caps_out);
            }
            LayerKind::FlatCaps => {
                l.kernel_size = 1;
                l.stride_size = 1;
                l.n_out = 1;
                l.ch_out = l.n_in * l.n_in * l.ch_in;
                l.caps_out = l.caps_in;
            }
        }

        current = l.output_shape();
        layers.push(l);
    }

    let skip = g
        .skip
        .filter(|&idx| layers.get(idx).is_some_and(|l| l.preserves_shape()));
    let repaired = Genotype {
        layers,
        skip,
        resize: g.resize,
    };

    let violations = validate(&repaired);
    if violations.is_empty() {
        Ok(repaired)
    } else {
        Err(RejectedConfiguration {
            reason: violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
            violations,
        })
    }
}
