use serde::Serialize;

use crate::genotype::GenotypeId;
use crate::nsga::{dominates, Objectives, RunRecord};

/// Indices of the points no other point dominates, in input order.
pub fn pareto_indices(points: &[Objectives]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect()
}

/// Non-dominated records, ordered by id. Records repeating an id are kept
/// once.
pub fn pick_pareto(records: &[RunRecord]) -> Vec<RunRecord> {
    let points: Vec<Objectives> = records.iter().map(|r| r.fitness().objectives()).collect();
    let mut out: Vec<RunRecord> = pareto_indices(&points)
        .into_iter()
        .map(|i| records[i].clone())
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out.dedup_by(|a, b| a.id == b.id);
    out
}

/// Worst observed value per objective.
pub fn reference_point(points: &[Objectives]) -> Option<Objectives> {
    let first = *points.first()?;
    Some(
        points
            .iter()
            .fold(first, |acc, p| std::array::from_fn(|k| acc[k].max(p[k]))),
    )
}

/// Volume dominated by `points` and bounded by `reference` (minimization).
/// Points not strictly better than the reference in some objective add
/// nothing along it.
pub fn hypervolume(points: &[Objectives], reference: &Objectives) -> f64 {
    let pts: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(a, r)| a < r))
        .map(|p| p.to_vec())
        .collect();
    slice_volume(pts, reference)
}

fn slice_volume(mut pts: Vec<Vec<f64>>, reference: &[f64]) -> f64 {
    if pts.is_empty() {
        return 0.0;
    }
    if reference.len() == 1 {
        let best = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        return (reference[0] - best).max(0.0);
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut volume = 0.0;
    for i in 0..pts.len() {
        let upper = pts.get(i + 1).map_or(reference[0], |p| p[0]);
        let width = upper - pts[i][0];
        if width <= 0.0 {
            continue;
        }
        let projected: Vec<Vec<f64>> = pts[..=i].iter().map(|p| p[1..].to_vec()).collect();
        volume += width * slice_volume(projected, &reference[1..]);
    }
    volume
}

/// Archive state after one generation: every record evaluated so far, its
/// non-dominated subset, and the subset's hypervolume.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchiveSnapshot {
    pub gen: u32,
    pub archive_size: usize,
    pub front: Vec<GenotypeId>,
    pub hypervolume: f64,
}

/// One snapshot per generation present in the log. The hypervolume
/// reference point is the worst value per objective over the whole log, so
/// values are comparable across generations.
pub fn archive_fronts(records: &[RunRecord]) -> Vec<ArchiveSnapshot> {
    let all: Vec<Objectives> = records.iter().map(|r| r.fitness().objectives()).collect();
    let Some(reference) = reference_point(&all) else {
        return Vec::new();
    };
    let mut gens: Vec<u32> = records.iter().map(|r| r.gen).collect();
    gens.sort_unstable();
    gens.dedup();
    gens.into_iter()
        .map(|gen| {
            let archive: Vec<RunRecord> =
                records.iter().filter(|r| r.gen <= gen).cloned().collect();
            let front = pick_pareto(&archive);
            let pts: Vec<Objectives> = front.iter().map(|r| r.fitness().objectives()).collect();
            ArchiveSnapshot {
                gen,
                archive_size: archive.len(),
                hypervolume: hypervolume(&pts, &reference),
                front: front.into_iter().map(|r| r.id).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::EvalStatus;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Inclusion-exclusion over all subsets: the union of boxes [p, r] has
    /// volume sum over non-empty S of (-1)^(|S|+1) * vol(intersection).
    fn hv_inclusion_exclusion(points: &[Objectives], r: &Objectives) -> f64 {
        let n = points.len();
        let mut total = 0.0;
        for mask in 1u32..(1 << n) {
            let mut corner = [f64::NEG_INFINITY; 4];
            for (i, p) in points.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    for k in 0..4 {
                        corner[k] = corner[k].max(p[k]);
                    }
                }
            }
            let vol: f64 = (0..4).map(|k| (r[k] - corner[k]).max(0.0)).product();
            let sign = if mask.count_ones() % 2 == 1 {
                1.0
            } else {
                -1.0
            };
            total += sign * vol;
        }
        total
    }

    fn record(id: &str, gen: u32, acc: f64, e: f64, l: f64, m: f64) -> RunRecord {
        RunRecord {
            id: GenotypeId::from(id.to_string()),
            gen,
            genotype: String::new(),
            accuracy: acc,
            energy_mj: e,
            latency_ms: l,
            memory_kib: m,
            status: EvalStatus::Ok,
        }
    }

    #[test]
    fn hypervolume_matches_inclusion_exclusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let r = [1.0; 4];
        for _ in 0..200 {
            let n = rng.gen_range(1..=8);
            let pts: Vec<Objectives> = (0..n)
                .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0)))
                .collect();
            let a = hypervolume(&pts, &r);
            let b = hv_inclusion_exclusion(&pts, &r);
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn hypervolume_single_box_and_outside_points() {
        assert!((hypervolume(&[[0.0, 0.5, 0.5, 0.5]], &[1.0; 4]) - 0.125).abs() < 1e-15);
        assert_eq!(hypervolume(&[[1.0, 0.0, 0.0, 0.0]], &[1.0; 4]), 0.0);
        assert_eq!(hypervolume(&[], &[1.0; 4]), 0.0);
    }

    #[test]
    fn pick_pareto_cases() {
        let a = record("a", 1, 0.9, 1.0, 1.0, 1.0);
        assert_eq!(pick_pareto(std::slice::from_ref(&a)), vec![a.clone()]);
        let b = record("b", 1, 0.8, 2.0, 1.0, 1.0);
        let c = record("c", 1, 0.7, 3.0, 2.0, 1.0);
        assert_eq!(
            pick_pareto(&[c.clone(), b.clone(), a.clone()]),
            vec![a.clone()]
        );
        let d = record("0d", 1, 0.95, 5.0, 1.0, 1.0);
        let front = pick_pareto(&[a.clone(), b, c, d.clone()]);
        assert_eq!(front, vec![d, a]);
        let twice = pick_pareto(&front);
        assert_eq!(twice, front);
    }

    #[test]
    fn pick_pareto_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for round in 0..20 {
            let recs: Vec<RunRecord> = (0..200)
                .map(|i| {
                    let mut v = || f64::from(rng.gen_range(0..8u8));
                    record(&format!("{round}-{i:03}"), 1, v() / 8.0, v(), v(), v())
                })
                .collect();
            let mut brute: Vec<GenotypeId> = recs
                .iter()
                .filter(|r| !recs.iter().any(|o| o.fitness().dominates(&r.fitness())))
                .map(|r| r.id.clone())
                .collect();
            brute.sort();
            let got: Vec<GenotypeId> = pick_pareto(&recs).into_iter().map(|r| r.id).collect();
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn archive_hypervolume_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let recs: Vec<RunRecord> = (0..120)
            .map(|i| {
                record(
                    &format!("{i:03}"),
                    1 + i / 10,
                    rng.gen(),
                    rng.gen(),
                    rng.gen(),
                    rng.gen(),
                )
            })
            .collect();
        let snaps = archive_fronts(&recs);
        assert_eq!(snaps.len(), 12);
        assert!(snaps
            .windows(2)
            .all(|w| w[1].hypervolume >= w[0].hypervolume));
        assert_eq!(snaps.last().unwrap().archive_size, 120);
    }
}
