use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::{FitnessVector, Individual, NsgaError, Objectives};
use crate::genotype::GenotypeId;

/// `a` is no worse than `b` everywhere and strictly better somewhere
/// (all objectives minimized).
pub fn dominates(a: &Objectives, b: &Objectives) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        strictly |= x < y;
    }
    strictly
}

/// Fast non-dominated sort over objective vectors. Returns fronts of
/// indices, each front in ascending index order.
pub fn sort_objectives(points: &[Objectives]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&points[i], &points[j]) {
                dominates_list[i].push(j);
                dominated_by_count[j] += 1;
            } else if dominates(&points[j], &points[i]) {
                dominates_list[j].push(i);
                dominated_by_count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by_count[j] -= 1;
                if dominated_by_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

pub fn non_dominated_sort(pop: &[Individual]) -> Result<Vec<Vec<usize>>, NsgaError> {
    let points = objectives_of(pop)?;
    Ok(sort_objectives(&points))
}

fn objectives_of(pop: &[Individual]) -> Result<Vec<Objectives>, NsgaError> {
    pop.iter()
        .enumerate()
        .map(|(i, ind)| {
            ind.fitness
                .as_ref()
                .map(FitnessVector::objectives)
                .ok_or(NsgaError::Unevaluated(i))
        })
        .collect()
}

/// Crowding distance of each point within one front.
///
/// Boundary points of every objective are infinite; interior points sum
/// `(next - prev) / (max - min)`; objectives with zero range add nothing.
pub fn crowding_distances(front: &[Objectives]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = front[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    for obj in 0..m {
        order.sort_by(|&a, &b| front[a][obj].total_cmp(&front[b][obj]).then(a.cmp(&b)));
        let lo = front[order[0]][obj];
        let hi = front[order[n - 1]][obj];
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        for w in 1..n - 1 {
            let i = order[w];
            if dist[i].is_finite() {
                dist[i] += (front[order[w + 1]][obj] - front[order[w - 1]][obj]) / range;
            }
        }
    }
    dist
}

/// Crowding distance keyed by individual id. Individuals sharing an id share
/// a fitness, so either entry's value is representative.
pub fn crowding_distance(front: &[Individual]) -> Result<BTreeMap<GenotypeId, f64>, NsgaError> {
    let points = objectives_of(front)?;
    Ok(front
        .iter()
        .zip(crowding_distances(&points))
        .map(|(ind, d)| (ind.id.clone(), d))
        .collect())
}

/// Picks `k` indices from a front, largest crowding distance first, ties by
/// position.
pub(crate) fn truncate_by_crowding(front: &[usize], points: &[Objectives], k: usize) -> Vec<usize> {
    let sub: Vec<Objectives> = front.iter().map(|&i| points[i]).collect();
    let d = crowding_distances(&sub);
    let mut order: Vec<usize> = (0..front.len()).collect();
    order.sort_by(|&a, &b| match d[b].partial_cmp(&d[a]) {
        Some(Ordering::Equal) | None => a.cmp(&b),
        Some(o) => o,
    });
    order.into_iter().take(k).map(|i| front[i]).collect()
}

/// Environmental selection: whole fronts while they fit, then the most
/// spread-out members of the first front that overflows.
pub fn select(points: &[Objectives], k: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(k);
    for front in sort_objectives(points) {
        if chosen.len() == k {
            break;
        }
        if chosen.len() + front.len() <= k {
            chosen.extend(front);
        } else {
            let rest = k - chosen.len();
            chosen.extend(truncate_by_crowding(&front, points, rest));
        }
    }
    chosen
}
