use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::operators::{crossover, mutate};
use super::sort::{select, sort_objectives};
use super::{FitnessVector, Individual, Objectives, SearchConfig};
use crate::evaluation::{BatchEvaluator, EvalStatus, Evaluation, EvaluationError};
use crate::genotype::{random_genotype, Genotype, GenotypeId, RejectedConfiguration, SearchSpace};

/// Redraws allowed for an offspring whose genotype was already seen.
pub const DUPLICATE_RESAMPLES: usize = 8;

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: GenotypeId,
    pub gen: u32,
    pub genotype: String,
    pub accuracy: f64,
    pub energy_mj: f64,
    pub latency_ms: f64,
    pub memory_kib: f64,
    pub status: EvalStatus,
}

impl RunRecord {
    pub fn fitness(&self) -> FitnessVector {
        FitnessVector {
            accuracy: self.accuracy,
            energy_mj: self.energy_mj,
            latency_ms: self.latency_ms,
            memory_kib: self.memory_kib,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Non-dominated members of the last evaluated population.
    pub front: Vec<Individual>,
    /// Parents after the final selection step.
    pub population: Vec<Individual>,
    pub records: Vec<RunRecord>,
    pub generations_completed: u32,
    pub timed_out: bool,
}

impl SearchOutcome {
    pub fn unique_evaluations(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error(transparent)]
    Space(#[from] RejectedConfiguration),
    #[error("evaluator: {0}")]
    Evaluator(#[from] EvaluationError),
    #[error("evaluator returned {got} results for {expected} candidates")]
    ShortBatch { expected: usize, got: usize },
    #[error("run log: {0}")]
    Log(#[from] std::io::Error),
}

struct State<'a> {
    space: &'a SearchSpace,
    cfg: &'a SearchConfig,
    rng: ChaCha8Rng,
    cache: HashMap<GenotypeId, Evaluation>,
    records: Vec<RunRecord>,
}

/// Runs the generation loop.
///
/// Generation 1 draws `parent_size` random parents. Every generation then
/// breeds `offspring_size` children, evaluates parents plus children
/// (fitness is cached by id, so each genotype is evaluated once), and keeps
/// the best `parent_size` by front rank and crowding distance. The wall
/// clock is checked before each generation. Every first evaluation is
/// appended to `log` as one JSON line.
pub fn run_search(
    space: &SearchSpace,
    cfg: &SearchConfig,
    evaluator: &mut dyn BatchEvaluator,
    log: &mut dyn Write,
) -> Result<SearchOutcome, SearchError> {
    cfg.check().map_err(SearchError::Config)?;
    space.check()?;
    let start = Instant::now();
    let mut st = State {
        space,
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        cache: HashMap::new(),
        records: Vec::new(),
    };

    let mut parents = Vec::with_capacity(cfg.parent_size);
    let mut seen: HashSet<GenotypeId> = HashSet::new();
    for _ in 0..cfg.parent_size {
        let mut g = random_genotype(space, &mut st.rng)?;
        for _ in 0..DUPLICATE_RESAMPLES {
            if !seen.contains(&g.id()) {
                break;
            }
            g = random_genotype(space, &mut st.rng)?;
        }
        seen.insert(g.id());
        parents.push(Individual::new(g, 1));
    }

    let mut last_evaluated: Vec<Individual> = Vec::new();
    let mut completed = 0;
    let mut timed_out = false;
    for gen in 1..=cfg.generations {
        if cfg
            .wall_clock_limit
            .is_some_and(|limit| start.elapsed() >= limit)
        {
            timed_out = true;
            break;
        }
        let offspring = breed(&mut st, &parents, &mut seen, gen);
        let mut pool: Vec<Individual> = parents.into_iter().chain(offspring).collect();
        evaluate(&mut st, evaluator, &mut pool, gen, log)?;
        let points: Vec<Objectives> = pool.iter().map(|i| fitness_of(i).objectives()).collect();
        let keep = select(&points, cfg.parent_size);
        parents = keep.iter().map(|&i| pool[i].clone()).collect();
        last_evaluated = pool;
        completed = gen;
    }
    log.flush()?;

    let points: Vec<Objectives> = last_evaluated
        .iter()
        .map(|i| fitness_of(i).objectives())
        .collect();
    let mut front: Vec<Individual> = sort_objectives(&points)
        .first()
        .map(|f| f.iter().map(|&i| last_evaluated[i].clone()).collect())
        .unwrap_or_default();
    front.sort_by(|a, b| a.id.cmp(&b.id));
    front.dedup_by(|a, b| a.id == b.id);

    Ok(SearchOutcome {
        front,
        population: parents,
        records: st.records,
        generations_completed: completed,
        timed_out,
    })
}

fn fitness_of(ind: &Individual) -> FitnessVector {
    ind.fitness
        .expect("population is evaluated before selection")
}

fn breed(
    st: &mut State<'_>,
    parents: &[Individual],
    seen: &mut HashSet<GenotypeId>,
    gen: u32,
) -> Vec<Individual> {
    let mut out: Vec<Individual> = Vec::with_capacity(st.cfg.offspring_size);
    let mut pending: Vec<Genotype> = Vec::new();
    while out.len() < st.cfg.offspring_size {
        let mut child = next_child(st, parents, &mut pending);
        for _ in 0..DUPLICATE_RESAMPLES {
            if !seen.contains(&child.id()) {
                break;
            }
            child = next_child(st, parents, &mut pending);
        }
        seen.insert(child.id());
        out.push(Individual::new(child, gen));
    }
    out
}

/// Children come in pairs; the second of a pair is held back for the next
/// call.
fn next_child(st: &mut State<'_>, parents: &[Individual], pending: &mut Vec<Genotype>) -> Genotype {
    if let Some(g) = pending.pop() {
        return g;
    }
    // Two distinct parents, uniformly; a single parent pairs with itself.
    let n = parents.len();
    let i = st.rng.gen_range(0..n);
    let j = if n > 1 {
        let j = st.rng.gen_range(0..n - 1);
        if j >= i {
            j + 1
        } else {
            j
        }
    } else {
        i
    };
    finish_pair(st, &parents[i].genotype, &parents[j].genotype, pending)
}

fn finish_pair(
    st: &mut State<'_>,
    pa: &Genotype,
    pb: &Genotype,
    pending: &mut Vec<Genotype>,
) -> Genotype {
    let (c1, c2) =
        crossover(pa, pb, st.space, &mut st.rng).unwrap_or_else(|_| (pa.clone(), pb.clone()));
    let c1 = mutate(&c1, st.cfg.mutation_prob, st.space, &mut st.rng);
    let c2 = mutate(&c2, st.cfg.mutation_prob, st.space, &mut st.rng);
    pending.push(c2);
    c1
}

fn evaluate(
    st: &mut State<'_>,
    evaluator: &mut dyn BatchEvaluator,
    pool: &mut [Individual],
    gen: u32,
    log: &mut dyn Write,
) -> Result<(), SearchError> {
    let mut fresh: Vec<Genotype> = Vec::new();
    let mut fresh_ids: HashSet<GenotypeId> = HashSet::new();
    for ind in pool.iter() {
        if !st.cache.contains_key(&ind.id) && fresh_ids.insert(ind.id.clone()) {
            fresh.push(ind.genotype.clone());
        }
    }
    if !fresh.is_empty() {
        let results = evaluator.evaluate(&fresh)?;
        if results.len() != fresh.len() {
            return Err(SearchError::ShortBatch {
                expected: fresh.len(),
                got: results.len(),
            });
        }
        for (g, ev) in fresh.iter().zip(results) {
            let record = RunRecord {
                id: g.id(),
                gen,
                genotype: g.serialize(),
                accuracy: ev.fitness.accuracy,
                energy_mj: ev.fitness.energy_mj,
                latency_ms: ev.fitness.latency_ms,
                memory_kib: ev.fitness.memory_kib,
                status: ev.status,
            };
            serde_json::to_writer(&mut *log, &record).map_err(std::io::Error::from)?;
            log.write_all(b"\n")?;
            st.records.push(record);
            st.cache.insert(g.id(), ev);
        }
    }
    for ind in pool.iter_mut() {
        let ev = &st.cache[&ind.id];
        ind.fitness = Some(ev.fitness);
        ind.status = Some(ev.status);
    }
    Ok(())
}
