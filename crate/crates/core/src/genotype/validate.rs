use std::fmt;

use serde::Serialize;

use super::{Genotype, LayerDescriptor, LayerKind, TensorShape};

/// A broken invariant. Structural rules are search-space constraints on
/// layer ordering; the rest are shape and encoding rules that the cost model
/// also depends on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Rule {
    EmptyGenotype,
    MissingInitialConv,
    TooFewCapsuleLayers {
        found: usize,
    },
    ConvBetweenCapsules,
    FinalLayerNotClassCaps,
    ZeroField {
        field: &'static str,
    },
    ConvWithCapsules,
    OutputSide {
        expected: Option<u32>,
        found: u32,
    },
    InputMismatch {
        expected: TensorShape,
        found: TensorShape,
    },
    FlatCapsNotReshape,
    ClassCapsGeometry,
    SkipOutOfRange {
        len: usize,
    },
    SkipShapeMismatch,
}

impl Rule {
    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            Rule::EmptyGenotype
                | Rule::MissingInitialConv
                | Rule::TooFewCapsuleLayers { .. }
                | Rule::ConvBetweenCapsules
                | Rule::FinalLayerNotClassCaps
        )
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::EmptyGenotype => f.write_str("genotype has no layers"),
            Rule::MissingInitialConv => f.write_str("first layer must be an initial conv layer"),
            Rule::TooFewCapsuleLayers { found } => {
                write!(f, "minimum of 2 capsule layers (found {found})")
            }
            Rule::ConvBetweenCapsules => f.write_str("conv between capsule layers"),
            Rule::FinalLayerNotClassCaps => {
                f.write_str("final layer must be a class capsule layer")
            }
            Rule::ZeroField { field } => write!(f, "{field} must be positive"),
            Rule::ConvWithCapsules => f.write_str("conv layer must have caps_in = caps_out = 1"),
            Rule::OutputSide {
                expected: Some(e),
                found,
            } => {
                write!(
                    f,
                    "n_out {found} does not follow the shape rule (expected {e})"
                )
            }
            Rule::OutputSide {
                expected: None,
                found,
            } => {
                write!(
                    f,
                    "n_out {found} given but the feature map collapses below 1x1"
                )
            }
            Rule::InputMismatch { expected, found } => {
                write!(
                    f,
                    "input {found} does not match predecessor output {expected}"
                )
            }
            Rule::FlatCapsNotReshape => {
                f.write_str("flat layer must be a 1x1 reshape preserving the value count")
            }
            Rule::ClassCapsGeometry => {
                f.write_str("class capsule layer must have kernel = stride = n_out = 1")
            }
            Rule::SkipOutOfRange { len } => write!(f, "skip position outside 0..{len}"),
            Rule::SkipShapeMismatch => {
                f.write_str("skip connection requires identical input and output shapes")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Offending descriptor; `None` for genotype-wide rules.
    pub layer: Option<usize>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(i) => write!(f, "layer {i}: {}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

/// Checks every genotype and descriptor invariant. Empty iff valid.
pub fn validate(g: &Genotype) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |layer: Option<usize>, rule: Rule| out.push(Violation { layer, rule });

    if g.layers.is_empty() {
        push(None, Rule::EmptyGenotype);
        return out;
    }

    if g.layers[0].kind != LayerKind::Conv {
        push(Some(0), Rule::MissingInitialConv);
    }
    let capsule_layers = g
        .layers
        .iter()
        .filter(|l| l.kind.is_weighted_capsule())
        .count();
    if capsule_layers < 2 {
        push(
            None,
            Rule::TooFewCapsuleLayers {
                found: capsule_layers,
            },
        );
    }
    let first_capsule = g.layers.iter().position(|l| l.kind.is_capsule());
    if let Some(start) = first_capsule {
        for (i, layer) in g.layers.iter().enumerate().skip(start) {
            if layer.kind == LayerKind::Conv {
                push(Some(i), Rule::ConvBetweenCapsules);
            }
        }
    }
    let last = g.layers.len() - 1;
    if g.layers[last].kind != LayerKind::ClassCaps {
        push(Some(last), Rule::FinalLayerNotClassCaps);
    }

    for (i, layer) in g.layers.iter().enumerate() {
        check_layer(layer, |rule| push(Some(i), rule));
    }

    for (i, pair) in g.layers.windows(2).enumerate() {
        let expected = pair[0].output_shape();
        let found = pair[1].input_shape();
        if expected != found {
            push(Some(i + 1), Rule::InputMismatch { expected, found });
        }
    }

    if let Some(skip) = g.skip {
        match g.layers.get(skip) {
            None => push(
                None,
                Rule::SkipOutOfRange {
                    len: g.layers.len(),
                },
            ),
            Some(layer) if !layer.preserves_shape() => push(Some(skip), Rule::SkipShapeMismatch),
            Some(_) => {}
        }
    }

    out
}

/// Per-descriptor encoding and shape rules.
pub(crate) fn check_layer(layer: &LayerDescriptor, mut report: impl FnMut(Rule)) {
    let named = [
        ("n_in", layer.n_in),
        ("ch_in", layer.ch_in),
        ("caps_in", layer.caps_in),
        ("kernel_size", layer.kernel_size),
        ("stride_size", layer.stride_size),
        ("n_out", layer.n_out),
        ("ch_out", layer.ch_out),
        ("caps_out", layer.caps_out),
    ];
    let mut any_zero = false;
    for (field, value) in named {
        if value == 0 {
            report(Rule::ZeroField { field });
            any_zero = true;
        }
    }
    if any_zero {
        return;
    }

    match layer.kind {
        LayerKind::Conv if layer.caps_in != 1 || layer.caps_out != 1 => {
            report(Rule::ConvWithCapsules)
        }
        LayerKind::FlatCaps => {
            let reshape = layer.kernel_size == 1
                && layer.stride_size == 1
                && layer.n_out == 1
                && layer.caps_out == layer.caps_in
                && layer.output_volume() == layer.input_shape().volume();
            if !reshape {
                report(Rule::FlatCapsNotReshape);
            }
        }
        LayerKind::ClassCaps => {
            if layer.kernel_size != 1 || layer.stride_size != 1 || layer.n_out != 1 {
                report(Rule::ClassCapsGeometry);
            }
        }
        _ => {}
    }

    if layer.kind.is_spatial() {
        let expected = layer
            .padding
            .output_side(layer.n_in, layer.kernel_size, layer.stride_size);
        if expected != Some(layer.n_out) {
            report(Rule::OutputSide {
                expected,
                found: layer.n_out,
            });
        }
    }
}
