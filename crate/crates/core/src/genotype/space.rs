use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::repair::{repair, RejectedConfiguration};
use super::{Genotype, LayerDescriptor, LayerKind};

/// Attempts made by [`random_genotype`] before giving up on a space.
const GENERATION_ATTEMPTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub side: u32,
    pub channels: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace {
    pub kernel_choices: Vec<u32>,
    pub stride_choices: Vec<u32>,
    pub ch_out_range: RangeInclusive<u32>,
    pub caps_out_range: RangeInclusive<u32>,
    /// Upper bound on top-level descriptors (a `CapsCell` counts once).
    pub max_layers: usize,
    pub input: InputSpec,
    pub num_classes: u32,
    /// Capsule dimension of the final class capsules.
    pub class_caps_dim: u32,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            kernel_choices: vec![3, 5, 9],
            stride_choices: vec![1, 2],
            ch_out_range: 1..=64,
            caps_out_range: 1..=64,
            max_layers: 8,
            input: InputSpec {
                side: 28,
                channels: 1,
            },
            num_classes: 10,
            class_caps_dim: 16,
        }
    }
}

impl SearchSpace {
    pub fn with_input(input: InputSpec) -> Self {
        Self {
            input,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), RejectedConfiguration> {
        let reject = |reason: &str| Err(RejectedConfiguration::new(reason));
        if self.max_layers < 3 {
            return reject("max_layers must be at least 3 (conv, capsule, class capsule)");
        }
        if self.kernel_choices.is_empty() || self.kernel_choices.contains(&0) {
            return reject("kernel choices must be non-empty and positive");
        }
        if self.stride_choices.is_empty() || self.stride_choices.contains(&0) {
            return reject("stride choices must be non-empty and positive");
        }
        if self.ch_out_range.is_empty() || *self.ch_out_range.start() == 0 {
            return reject("ch_out range must be non-empty and positive");
        }
        if self.caps_out_range.is_empty() || *self.caps_out_range.start() == 0 {
            return reject("caps_out range must be non-empty and positive");
        }
        if self.input.side == 0
            || self.input.channels == 0
            || self.num_classes == 0
            || self.class_caps_dim == 0
        {
            return reject("input spec, class count and class capsule dimension must be positive");
        }
        Ok(())
    }

    /// Largest kernel choice not above `limit`.
    pub(crate) fn largest_kernel_at_most(&self, limit: u32) -> Option<u32> {
        self.kernel_choices
            .iter()
            .copied()
            .filter(|&k| k <= limit)
            .max()
    }

    pub(crate) fn clamp_kernel(&self, k: u32) -> u32 {
        if self.kernel_choices.contains(&k) {
            return k;
        }
        self.largest_kernel_at_most(k).unwrap_or_else(|| {
            self.kernel_choices
                .iter()
                .copied()
                .min()
                .expect("checked non-empty")
        })
    }

    pub(crate) fn clamp_stride(&self, s: u32) -> u32 {
        if self.stride_choices.contains(&s) {
            return s;
        }
        self.stride_choices
            .iter()
            .copied()
            .filter(|&c| c <= s)
            .max()
            .unwrap_or_else(|| {
                self.stride_choices
                    .iter()
                    .copied()
                    .min()
                    .expect("checked non-empty")
            })
    }

    pub(crate) fn clamp_ch_out(&self, c: u32) -> u32 {
        c.clamp(*self.ch_out_range.start(), *self.ch_out_range.end())
    }

    pub(crate) fn clamp_caps_out(&self, c: u32) -> u32 {
        c.clamp(*self.caps_out_range.start(), *self.caps_out_range.end())
    }
}

/// Draws a random valid genotype.
///
/// Layout: one or two initial conv layers, a run of capsule layers
/// (optionally ending in a flat reshape), and a final class capsule layer.
/// Candidates whose feature maps collapse are redrawn.
pub fn random_genotype<R: Rng + ?Sized>(
    space: &SearchSpace,
    rng: &mut R,
) -> Result<Genotype, RejectedConfiguration> {
    space.check()?;
    let mut last_err = None;
    for _ in 0..GENERATION_ATTEMPTS {
        let draft = draft_genotype(space, rng);
        match repair(&draft, space) {
            Ok(mut g) => {
                let compatible: Vec<usize> = g
                    .layers
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| l.kind.is_weighted_capsule() && l.preserves_shape())
                    .map(|(i, _)| i)
                    .collect();
                if !compatible.is_empty() && rng.gen_bool(0.5) {
                    g.skip = compatible.choose(rng).copied();
                }
                return Ok(g);
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| RejectedConfiguration::new("no valid genotype found")))
}

fn draft_genotype<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Genotype {
    let len = rng.gen_range(3..=space.max_layers);
    let convs = rng.gen_range(1..=(len - 2).min(2));
    let middle = len - convs - 1;

    let mut layers = Vec::with_capacity(len);
    for _ in 0..convs {
        let mut l = random_free(LayerKind::Conv, space, rng);
        l.caps_out = 1;
        layers.push(l);
    }
    for i in 0..middle {
        let kind = if i + 1 == middle && middle >= 2 && rng.gen_bool(0.15) {
            LayerKind::FlatCaps
        } else {
            *[
                LayerKind::ConvCaps,
                LayerKind::ConvCaps,
                LayerKind::CapsCell,
                LayerKind::ConvCaps3D,
            ]
            .choose(rng)
            .expect("non-empty")
        };
        layers.push(random_free(kind, space, rng));
    }

    // Occasionally make one cell shape-preserving so a skip connection fits.
    if middle >= 2 && rng.gen_bool(0.3) {
        let idx = rng.gen_range(convs + 1..convs + middle);
        let prev = layers[idx - 1];
        if matches!(
            prev.kind,
            LayerKind::ConvCaps | LayerKind::ConvCaps3D | LayerKind::CapsCell
        ) {
            let s1 = space.stride_choices.contains(&1);
            if s1 {
                layers[idx] = LayerDescriptor::free(
                    LayerKind::CapsCell,
                    layers[idx].kernel_size,
                    1,
                    prev.ch_out,
                    prev.caps_out,
                );
            }
        }
    }

    layers.push(LayerDescriptor::free(
        LayerKind::ClassCaps,
        1,
        1,
        space.num_classes,
        space.class_caps_dim,
    ));

    Genotype {
        layers,
        skip: None,
        resize: rng.gen_bool(0.2),
    }
}

fn random_free<R: Rng + ?Sized>(
    kind: LayerKind,
    space: &SearchSpace,
    rng: &mut R,
) -> LayerDescriptor {
    let kernel = *space.kernel_choices.choose(rng).expect("checked non-empty");
    let stride = *space.stride_choices.choose(rng).expect("checked non-empty");
    let ch_out = rng.gen_range(space.ch_out_range.clone());
    let caps_out = if kind == LayerKind::Conv {
        1
    } else {
        rng.gen_range(space.caps_out_range.clone())
    };
    LayerDescriptor::free(kind, kernel, stride, ch_out, caps_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genotype::validate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minimum_space_forces_three_layer_form() {
        let space = SearchSpace {
            max_layers: 3,
            ..SearchSpace::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let g = random_genotype(&space, &mut rng).unwrap();
            let kinds: Vec<_> = g.layers.iter().map(|l| l.kind).collect();
            assert_eq!(kinds.len(), 3);
            assert_eq!(kinds[0], LayerKind::Conv);
            assert!(kinds[1].is_weighted_capsule() && kinds[1] != LayerKind::ClassCaps);
            assert_eq!(kinds[2], LayerKind::ClassCaps);
        }
    }

    #[test]
    fn same_seed_same_genotype() {
        let space = SearchSpace::default();
        let a = random_genotype(&space, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = random_genotype(&space, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_small_space_is_rejected() {
        let space = SearchSpace {
            max_layers: 2,
            ..SearchSpace::default()
        };
        assert!(random_genotype(&space, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn thousand_samples_all_validate() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut with_skip = 0;
        for _ in 0..1000 {
            let g = random_genotype(&space, &mut rng).unwrap();
            assert!(validate(&g).is_empty(), "{g}: {:?}", validate(&g));
            let out = g.layers.last().unwrap();
            assert_eq!(out.ch_out, space.num_classes);
            assert_eq!(out.caps_out, space.class_caps_dim);
            with_skip += usize::from(g.skip.is_some());
        }
        assert!(with_skip > 0, "skip connections should be reachable");
    }

    #[test]
    fn cifar_input_with_resize() {
        let space = SearchSpace::with_input(InputSpec {
            side: 32,
            channels: 3,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let g = random_genotype(&space, &mut rng).unwrap();
            let first = g.layers[0];
            assert_eq!(first.ch_in, 3);
            assert_eq!(
                first.n_in,
                if g.resize {
                    crate::genotype::RESIZE_SIDE
                } else {
                    32
                }
            );
        }
    }
}
