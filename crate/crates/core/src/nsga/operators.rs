use rand::seq::SliceRandom;
use rand::Rng;

use crate::genotype::{repair, Genotype, LayerKind, SearchSpace};

/// Cut-point attempts before crossover gives up.
pub const CROSSOVER_ATTEMPTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no valid cut points found in {CROSSOVER_ATTEMPTS} attempts")]
pub struct CrossoverFailure;

/// Tail-swap crossover with one cut point per parent.
///
/// Child one takes the head of `pa` and the tail of `pb`, child two the
/// reverse. Both children are repaired; a cut pair is retried when either
/// child is rejected or exceeds the layer budget.
pub fn crossover<R: Rng + ?Sized>(
    pa: &Genotype,
    pb: &Genotype,
    space: &SearchSpace,
    rng: &mut R,
) -> Result<(Genotype, Genotype), CrossoverFailure> {
    if pa.layers.len() < 2 || pb.layers.len() < 2 {
        return Err(CrossoverFailure);
    }
    for _ in 0..CROSSOVER_ATTEMPTS {
        let i = rng.gen_range(1..pa.layers.len());
        let j = rng.gen_range(1..pb.layers.len());
        if let Some(children) = crossover_at(pa, i, pb, j, space) {
            return Ok(children);
        }
    }
    Err(CrossoverFailure)
}

/// Crossover at fixed cut points: `pa` is cut before layer `i`, `pb`
/// before layer `j`.
pub fn crossover_at(
    pa: &Genotype,
    i: usize,
    pb: &Genotype,
    j: usize,
    space: &SearchSpace,
) -> Option<(Genotype, Genotype)> {
    let a = splice(pa, i, pb, j, space)?;
    let b = splice(pb, j, pa, i, space)?;
    Some((a, b))
}

fn splice(
    head: &Genotype,
    i: usize,
    tail: &Genotype,
    j: usize,
    space: &SearchSpace,
) -> Option<Genotype> {
    if i == 0 || i > head.layers.len() || j >= tail.layers.len() {
        return None;
    }
    let mut layers = head.layers[..i].to_vec();
    layers.extend_from_slice(&tail.layers[j..]);
    if layers.len() > space.max_layers {
        return None;
    }
    // A conv in the tail after capsules in the head cannot be repaired.
    let caps_in_head = layers[..i].iter().any(|l| l.kind.is_capsule());
    if caps_in_head && layers[i..].iter().any(|l| l.kind == LayerKind::Conv) {
        return None;
    }
    let skip = match (head.skip, tail.skip) {
        (Some(s), _) if s < i => Some(s),
        (_, Some(s)) if s >= j => Some(s - j + i),
        _ => None,
    };
    repair(&Genotype::new(layers, skip, head.resize), space).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MutationParam {
    Kernel,
    Stride,
    CapsOut,
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationOutcome {
    /// Not selected for mutation.
    Untouched,
    Mutated,
    /// Selected, but both attempts were rejected by repair.
    Rejected,
}

/// With probability `p_m`, resamples one parameter of one layer and repairs
/// the result. A rejected mutation is retried once; after that the input is
/// returned unchanged.
pub fn mutate<R: Rng + ?Sized>(
    g: &Genotype,
    p_m: f64,
    space: &SearchSpace,
    rng: &mut R,
) -> Genotype {
    mutate_with_outcome(g, p_m, space, rng).0
}

pub fn mutate_with_outcome<R: Rng + ?Sized>(
    g: &Genotype,
    p_m: f64,
    space: &SearchSpace,
    rng: &mut R,
) -> (Genotype, MutationOutcome) {
    if p_m <= 0.0 || !rng.gen_bool(p_m.min(1.0)) {
        return (g.clone(), MutationOutcome::Untouched);
    }
    for _ in 0..2 {
        if let Some(raw) = mutate_raw(g, space, rng) {
            if let Ok(fixed) = repair(&raw, space) {
                return (fixed, MutationOutcome::Mutated);
            }
        }
    }
    (g.clone(), MutationOutcome::Rejected)
}

/// One forced mutation before repair: exactly one of kernel, stride,
/// caps_out or skip differs from `g`. `None` when no layer has an
/// alternative value.
pub fn mutate_raw<R: Rng + ?Sized>(
    g: &Genotype,
    space: &SearchSpace,
    rng: &mut R,
) -> Option<Genotype> {
    let candidates: Vec<(usize, Vec<MutationParam>)> = (0..g.layers.len())
        .map(|i| (i, mutable_params(g, i, space)))
        .filter(|(_, p)| !p.is_empty())
        .collect();
    let (idx, params) = candidates.choose(rng)?;
    let param = *params.choose(rng)?;
    let mut out = g.clone();
    let layer = &mut out.layers[*idx];
    match param {
        MutationParam::Kernel => layer.kernel_size = *kernel_domain(g, *idx, space).choose(rng)?,
        MutationParam::Stride => layer.stride_size = *stride_domain(g, *idx, space).choose(rng)?,
        MutationParam::CapsOut => {
            let (lo, hi) = (*space.caps_out_range.start(), *space.caps_out_range.end());
            let cur = layer.caps_out;
            layer.caps_out = if !(lo..=hi).contains(&cur) {
                rng.gen_range(lo..=hi)
            } else {
                // Uniform over the range minus the current value.
                let draw = rng.gen_range(lo..hi);
                if draw >= cur {
                    draw + 1
                } else {
                    draw
                }
            };
        }
        MutationParam::Skip => out.skip = *skip_domain(g).choose(rng)?,
    }
    Some(out)
}

/// Parameters of layer `i` that have at least one alternative value.
pub fn mutable_params(g: &Genotype, i: usize, space: &SearchSpace) -> Vec<MutationParam> {
    let l = &g.layers[i];
    let mut out = Vec::new();
    if l.kind.is_spatial() {
        if !kernel_domain(g, i, space).is_empty() {
            out.push(MutationParam::Kernel);
        }
        if !stride_domain(g, i, space).is_empty() {
            out.push(MutationParam::Stride);
        }
    }
    if l.kind.is_weighted_capsule() && space.caps_out_range.clone().any(|c| c != l.caps_out) {
        out.push(MutationParam::CapsOut);
    }
    if !skip_domain(g).is_empty() {
        out.push(MutationParam::Skip);
    }
    out
}

fn kernel_domain(g: &Genotype, i: usize, space: &SearchSpace) -> Vec<u32> {
    let l = &g.layers[i];
    space
        .kernel_choices
        .iter()
        .copied()
        .filter(|&k| k != l.kernel_size && k <= l.n_in)
        .collect()
}

fn stride_domain(g: &Genotype, i: usize, space: &SearchSpace) -> Vec<u32> {
    let s = g.layers[i].stride_size;
    space
        .stride_choices
        .iter()
        .copied()
        .filter(|&c| c != s)
        .collect()
}

/// `None` plus every position whose layer can host a skip, minus the
/// current setting.
fn skip_domain(g: &Genotype) -> Vec<Option<usize>> {
    std::iter::once(None)
        .chain(
            g.layers
                .iter()
                .enumerate()
                .filter(|(_, l)| l.kind.is_weighted_capsule() && l.preserves_shape())
                .map(|(i, _)| Some(i)),
        )
        .filter(|s| *s != g.skip)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genotype::{preset, random_genotype, validate, Preset};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn parse(s: &str) -> Genotype {
        Genotype::deserialize(s).unwrap()
    }

    #[test]
    fn self_crossover_at_matching_cuts_reproduces_parent() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let g = random_genotype(&space, &mut rng).unwrap();
            for i in 1..g.layers.len() {
                if let Some((a, b)) = crossover_at(&g, i, &g, i, &space) {
                    assert_eq!(a, g);
                    assert_eq!(b, g);
                }
            }
        }
    }

    // Parents of lengths 4 and 6. Every accepted cut pair (i, j) yields
    // children of lengths i + (6 - j) and j + (4 - i), all valid.
    #[test]
    fn unequal_parents_enumerated() {
        let space = SearchSpace::default();
        let pa = parse("conv,28,1,1,5,1,24,16,1;cconv,24,16,1,5,2,10,8,4;cconv,10,8,4,3,1,8,8,4;ccaps,8,8,4,1,1,1,10,16;skip=none;resize=0");
        let pb = parse(concat!(
            "conv,28,1,1,3,1,26,16,1;conv,26,16,1,3,1,24,16,1;cconv,24,16,1,5,2,10,8,4;",
            "ccell,10,8,4,3,1,10,8,4;cconv,10,8,4,3,1,8,8,4;ccaps,8,8,4,1,1,1,10,16;skip=3;resize=0"
        ));
        assert!(validate(&pa).is_empty() && validate(&pb).is_empty());
        let mut accepted = 0;
        for i in 1..4 {
            for j in 1..6 {
                if let Some((a, b)) = crossover_at(&pa, i, &pb, j, &space) {
                    accepted += 1;
                    assert_eq!(a.layers.len(), i + 6 - j);
                    assert_eq!(b.layers.len(), j + 4 - i);
                    assert!(validate(&a).is_empty() && validate(&b).is_empty());
                }
            }
        }
        assert!(accepted > 0);
        // pa's head ends in a capsule layer and pb's tail opens with a conv.
        assert!(crossover_at(&pa, 2, &pb, 1, &space).is_none());
    }

    #[test]
    fn skip_follows_its_segment() {
        let space = SearchSpace::default();
        let pb = parse(concat!(
            "conv,28,1,1,3,1,26,16,1;conv,26,16,1,3,1,24,16,1;cconv,24,16,1,5,2,10,8,4;",
            "ccell,10,8,4,3,1,10,8,4;cconv,10,8,4,3,1,8,8,4;ccaps,8,8,4,1,1,1,10,16;skip=3;resize=0"
        ));
        let pa = parse("conv,28,1,1,3,1,26,16,1;cconv,26,16,1,5,2,11,8,4;ccaps,11,8,4,1,1,1,10,16;skip=none;resize=0");
        // pa head [conv] + pb tail from index 2: the cell moves from 3 to 2.
        let (child, _) = crossover_at(&pa, 1, &pb, 2, &space).unwrap();
        assert_eq!(child.skip, Some(2));
        assert_eq!(child.layers[2].kind, LayerKind::CapsCell);
    }

    #[test]
    fn random_crossover_children_validate() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ok = 0;
        for _ in 0..300 {
            let a = random_genotype(&space, &mut rng).unwrap();
            let b = random_genotype(&space, &mut rng).unwrap();
            if let Ok((x, y)) = crossover(&a, &b, &space, &mut rng) {
                ok += 1;
                assert!(validate(&x).is_empty() && validate(&y).is_empty());
                assert!(x.layers.len() <= space.max_layers && y.layers.len() <= space.max_layers);
            }
        }
        assert!(ok > 200, "only {ok} crossovers succeeded");
    }

    #[test]
    fn zero_probability_is_identity() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = preset(Preset::CapsNet);
        for _ in 0..100 {
            assert_eq!(mutate(&g, 0.0, &space, &mut rng), g);
        }
    }

    #[test]
    fn forced_mutation_changes_exactly_one_parameter() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let g = random_genotype(&space, &mut rng).unwrap();
            let m = mutate_raw(&g, &space, &mut rng).unwrap();
            let mut diffs = usize::from(m.skip != g.skip);
            for (x, y) in g.layers.iter().zip(&m.layers) {
                diffs += usize::from(x.kernel_size != y.kernel_size);
                diffs += usize::from(x.stride_size != y.stride_size);
                diffs += usize::from(x.caps_out != y.caps_out);
                assert_eq!((x.kind, x.ch_out), (y.kind, y.ch_out));
            }
            assert_eq!(diffs, 1, "{g} -> {m}");
        }
    }

    #[test]
    fn skip_can_be_removed() {
        let space = SearchSpace::default();
        let g = preset(Preset::DeepCaps);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut saw_none = false;
        for _ in 0..500 {
            let m = mutate_raw(&g, &space, &mut rng).unwrap();
            saw_none |= m.skip.is_none();
        }
        assert!(saw_none);
    }

    #[test]
    fn mutated_offspring_validate() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let g = random_genotype(&space, &mut rng).unwrap();
            let (m, outcome) = mutate_with_outcome(&g, 1.0, &space, &mut rng);
            assert_ne!(outcome, MutationOutcome::Untouched);
            assert!(validate(&m).is_empty());
        }
    }
}
