//! Architecture encoding.
//!
//! A candidate network is an ordered list of 9-field layer descriptors plus two
//! genotype-level terms: an optional skip-connection position and a flag that
//! requests input resizing. Composite descriptors (`CapsCell`) are expanded into
//! primitive layers before cost evaluation.

mod presets;
mod repair;
mod space;
mod text;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use presets::{preset, Preset};
pub use repair::{repair, RejectedConfiguration};
pub use space::{random_genotype, InputSpec, SearchSpace};
pub use text::ParseError;
pub use validate::{validate, Rule, Violation};

/// Side length that inputs are resized to when a genotype sets its resize flag.
pub const RESIZE_SIDE: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    ConvCaps,
    ConvCaps3D,
    ClassCaps,
    CapsCell,
    FlatCaps,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::Conv,
        LayerKind::ConvCaps,
        LayerKind::ConvCaps3D,
        LayerKind::ClassCaps,
        LayerKind::CapsCell,
        LayerKind::FlatCaps,
    ];

    /// Token used in the canonical genotype string.
    pub fn token(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::ConvCaps => "cconv",
            LayerKind::ConvCaps3D => "cconv3d",
            LayerKind::ClassCaps => "ccaps",
            LayerKind::CapsCell => "ccell",
            LayerKind::FlatCaps => "flat",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        LayerKind::ALL.into_iter().find(|k| k.token() == token)
    }

    pub fn is_capsule(self) -> bool {
        self != LayerKind::Conv
    }

    /// Capsule layers that carry weights. Only these count toward the
    /// two-capsule-layer minimum; `FlatCaps` is a reshape.
    pub fn is_weighted_capsule(self) -> bool {
        matches!(
            self,
            LayerKind::ConvCaps
                | LayerKind::ConvCaps3D
                | LayerKind::ClassCaps
                | LayerKind::CapsCell
        )
    }

    /// Layers whose output side follows the convolution shape rule.
    pub fn is_spatial(self) -> bool {
        matches!(
            self,
            LayerKind::Conv | LayerKind::ConvCaps | LayerKind::ConvCaps3D | LayerKind::CapsCell
        )
    }

    pub fn default_padding(self) -> Padding {
        match self {
            LayerKind::CapsCell => Padding::Same,
            _ => Padding::Valid,
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Padding {
    /// `n_out = floor((n_in - k) / s) + 1`
    Valid,
    /// `n_out = ceil(n_in / s)`
    Same,
}

impl Padding {
    /// Output side length, or `None` when the map collapses below 1x1.
    pub fn output_side(self, n_in: u32, kernel: u32, stride: u32) -> Option<u32> {
        if n_in == 0 || kernel == 0 || stride == 0 {
            return None;
        }
        match self {
            Padding::Valid => n_in.checked_sub(kernel).map(|d| d / stride + 1),
            Padding::Same => Some(n_in.div_ceil(stride)),
        }
    }
}

/// One layer's positional record.
///
/// `padding` is not one of the nine encoded fields; it is derived from the
/// kind when parsing and set to `Same` for layers produced by expanding a
/// `CapsCell`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub kind: LayerKind,
    pub n_in: u32,
    pub ch_in: u32,
    pub caps_in: u32,
    pub kernel_size: u32,
    pub stride_size: u32,
    pub n_out: u32,
    pub ch_out: u32,
    pub caps_out: u32,
    pub padding: Padding,
}

impl LayerDescriptor {
    /// Builds a descriptor from the kind and the eight numeric fields in
    /// canonical order: `n_in, ch_in, caps_in, kernel, stride, n_out, ch_out, caps_out`.
    pub fn new(kind: LayerKind, fields: [u32; 8]) -> Self {
        let [n_in, ch_in, caps_in, kernel_size, stride_size, n_out, ch_out, caps_out] = fields;
        Self {
            kind,
            n_in,
            ch_in,
            caps_in,
            kernel_size,
            stride_size,
            n_out,
            ch_out,
            caps_out,
            padding: kind.default_padding(),
        }
    }

    /// A descriptor with only the free parameters set; shape fields are
    /// filled in by [`repair`].
    pub fn free(
        kind: LayerKind,
        kernel_size: u32,
        stride_size: u32,
        ch_out: u32,
        caps_out: u32,
    ) -> Self {
        Self::new(
            kind,
            [0, 0, 0, kernel_size, stride_size, 0, ch_out, caps_out],
        )
    }

    pub fn fields(&self) -> [u32; 8] {
        [
            self.n_in,
            self.ch_in,
            self.caps_in,
            self.kernel_size,
            self.stride_size,
            self.n_out,
            self.ch_out,
            self.caps_out,
        ]
    }

    pub fn input_shape(&self) -> TensorShape {
        TensorShape {
            side: self.n_in,
            channels: self.ch_in,
            caps: self.caps_in,
        }
    }

    pub fn output_shape(&self) -> TensorShape {
        TensorShape {
            side: self.n_out,
            channels: self.ch_out,
            caps: self.caps_out,
        }
    }

    /// True when input and output tensors have identical shape, which is what
    /// an additive skip connection around this layer requires.
    pub fn preserves_shape(&self) -> bool {
        self.input_shape() == self.output_shape()
    }

    /// Total values in the output tensor.
    pub fn output_volume(&self) -> u64 {
        self.output_shape().volume()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub side: u32,
    pub channels: u32,
    pub caps: u32,
}

impl TensorShape {
    pub fn volume(&self) -> u64 {
        u64::from(self.side)
            * u64::from(self.side)
            * u64::from(self.channels)
            * u64::from(self.caps)
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.side, self.side, self.channels, self.caps
        )
    }
}

/// Ordered layer descriptors plus skip position and resize flag.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Genotype {
    pub layers: Vec<LayerDescriptor>,
    /// Index of the layer wrapped by an additive skip connection: the layer's
    /// input is added to its output.
    pub skip: Option<usize>,
    pub resize: bool,
}

impl Genotype {
    pub fn new(layers: Vec<LayerDescriptor>, skip: Option<usize>, resize: bool) -> Self {
        Self {
            layers,
            skip,
            resize,
        }
    }

    /// Canonical text form; see [`Genotype::from_str`](std::str::FromStr) for the inverse.
    pub fn serialize(&self) -> String {
        self.to_string()
    }

    pub fn deserialize(text: &str) -> Result<Self, ParseError> {
        text::parse(text)
    }

    pub fn id(&self) -> GenotypeId {
        GenotypeId::of(&self.serialize())
    }

    /// Primitive layers paired with the index of the descriptor they came from.
    pub fn primitives(&self) -> Vec<(usize, LayerDescriptor)> {
        let mut out = Vec::with_capacity(self.layers.len() + 2 * self.cell_count());
        for (idx, layer) in self.layers.iter().enumerate() {
            if layer.kind == LayerKind::CapsCell {
                out.extend(expand_cell(layer).into_iter().map(|l| (idx, l)));
            } else {
                out.push((idx, *layer));
            }
        }
        out
    }

    /// Replaces every `CapsCell` with its three constituent capsule convolutions.
    pub fn expand(&self) -> Vec<LayerDescriptor> {
        self.primitives().into_iter().map(|(_, l)| l).collect()
    }

    fn cell_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::CapsCell)
            .count()
    }

    pub fn input_shape(&self) -> Option<TensorShape> {
        self.layers.first().map(LayerDescriptor::input_shape)
    }

    pub fn output_shape(&self) -> Option<TensorShape> {
        self.layers.last().map(LayerDescriptor::output_shape)
    }
}

/// Cell layout, in execution order:
/// 1. strided capsule convolution on the cell input;
/// 2. stride-1 capsule convolution on the output of (1);
/// 3. stride-1 capsule convolution on the output of (1), parallel to (2).
///
/// Outputs of (2) and (3) are added, so all three share kernel, channels and
/// capsule dimension, and all use same padding.
fn expand_cell(cell: &LayerDescriptor) -> [LayerDescriptor; 3] {
    let strided = LayerDescriptor {
        kind: LayerKind::ConvCaps,
        padding: Padding::Same,
        ..*cell
    };
    let inner = LayerDescriptor {
        kind: LayerKind::ConvCaps,
        n_in: cell.n_out,
        ch_in: cell.ch_out,
        caps_in: cell.caps_out,
        kernel_size: cell.kernel_size,
        stride_size: 1,
        n_out: cell.n_out,
        ch_out: cell.ch_out,
        caps_out: cell.caps_out,
        padding: Padding::Same,
    };
    [strided, inner, inner]
}

/// Stable content hash of a canonical genotype string (first 64 bits of
/// SHA-256, lowercase hex).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenotypeId(String);

impl GenotypeId {
    pub fn of(canonical: &str) -> Self {
        let digest = Sha256::digest(canonical.as_bytes());
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        GenotypeId(hex)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for GenotypeId {
    fn from(s: String) -> Self {
        GenotypeId(s)
    }
}

impl fmt::Display for GenotypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rule_valid_and_same() {
        assert_eq!(Padding::Valid.output_side(28, 9, 1), Some(20));
        assert_eq!(Padding::Valid.output_side(20, 9, 2), Some(6));
        assert_eq!(Padding::Valid.output_side(2, 3, 1), None);
        assert_eq!(Padding::Valid.output_side(3, 3, 2), Some(1));
        assert_eq!(Padding::Same.output_side(31, 3, 2), Some(16));
        assert_eq!(Padding::Same.output_side(2, 9, 1), Some(2));
    }

    #[test]
    fn deepcaps_expands_to_fourteen_primitives() {
        let g = preset(Preset::DeepCaps);
        assert_eq!(g.layers.len(), 6);
        let prims = g.expand();
        assert_eq!(prims.len(), 1 + 3 * 4 + 1);
        assert!(prims.iter().all(|l| l.kind != LayerKind::CapsCell));
    }

    #[test]
    fn capsnet_expansion_is_identity() {
        let g = preset(Preset::CapsNet);
        assert_eq!(g.expand(), g.layers);
        assert_eq!(g.expand().len(), 3);
    }

    #[test]
    fn expansion_keeps_adjacent_shapes_consistent() {
        let g = preset(Preset::DeepCaps);
        let prims = g.expand();
        for pair in prims.windows(2) {
            assert_eq!(pair[0].output_shape(), pair[1].input_shape());
        }
        assert_eq!(
            prims.first().unwrap().input_shape(),
            g.input_shape().unwrap()
        );
        assert_eq!(
            prims.last().unwrap().output_shape(),
            g.output_shape().unwrap()
        );
    }

    #[test]
    fn id_is_stable_and_content_addressed() {
        let a = preset(Preset::CapsNet);
        let b = Genotype::deserialize(&a.serialize()).unwrap();
        assert_eq!(a.id(), b.id());
        assert_eq!(a.id().as_str().len(), 16);
        assert_ne!(a.id(), preset(Preset::DeepCaps).id());
    }
}
