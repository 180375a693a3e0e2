//! Multi-objective evolutionary search: dominance sorting, crowding,
//! structure-aware crossover and mutation, and the generation loop.

mod operators;
mod search;
mod sort;

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::EvalStatus;
use crate::genotype::{Genotype, GenotypeId};
use crate::kv::{KvError, KvFile};

pub use operators::{
    crossover, crossover_at, mutable_params, mutate, mutate_raw, mutate_with_outcome,
    CrossoverFailure, MutationOutcome, MutationParam, CROSSOVER_ATTEMPTS,
};
pub use search::{run_search, RunRecord, SearchError, SearchOutcome, DUPLICATE_RESAMPLES};
pub use sort::{
    crowding_distance, crowding_distances, dominates, non_dominated_sort, select, sort_objectives,
};

/// Objective vector in minimization form: `[-accuracy, energy, latency, memory]`.
pub type Objectives = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessVector {
    pub accuracy: f64,
    pub energy_mj: f64,
    pub latency_ms: f64,
    pub memory_kib: f64,
}

impl FitnessVector {
    pub fn objectives(&self) -> Objectives {
        [
            -self.accuracy,
            self.energy_mj,
            self.latency_ms,
            self.memory_kib,
        ]
    }

    pub fn dominates(&self, other: &FitnessVector) -> bool {
        dominates(&self.objectives(), &other.objectives())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: GenotypeId,
    pub genotype: Genotype,
    pub fitness: Option<FitnessVector>,
    pub status: Option<EvalStatus>,
    pub generation_born: u32,
}

impl Individual {
    pub fn new(genotype: Genotype, generation_born: u32) -> Self {
        Self {
            id: genotype.id(),
            genotype,
            fitness: None,
            status: None,
            generation_born,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NsgaError {
    #[error("individual {0} has no fitness")]
    Unevaluated(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub parent_size: usize,
    pub offspring_size: usize,
    pub generations: u32,
    pub mutation_prob: f64,
    pub wall_clock_limit: Option<Duration>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            parent_size: 10,
            offspring_size: 10,
            generations: 20,
            mutation_prob: 0.10,
            wall_clock_limit: None,
            seed: 0,
        }
    }
}

const KEYS: [&str; 6] = [
    "parent_size",
    "offspring_size",
    "generations",
    "mutation_prob",
    "wall_clock_limit",
    "seed",
];

impl SearchConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.parent_size == 0 {
            return Err("parent_size must be a positive integer".into());
        }
        if self.offspring_size == 0 {
            return Err("offspring_size must be a positive integer".into());
        }
        if self.generations == 0 {
            return Err("generations must be a positive integer".into());
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(format!(
                "mutation_prob must lie in [0, 1], got {}",
                self.mutation_prob
            ));
        }
        Ok(())
    }

    /// Parses a `key = value` file; `wall_clock_limit` takes durations such
    /// as `12h` or `none`.
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let kv = KvFile::parse(text)?;
        kv.deny_unknown(&KEYS)?;
        let mut cfg = Self::default();
        kv.apply("parent_size", &mut cfg.parent_size)?;
        kv.apply("offspring_size", &mut cfg.offspring_size)?;
        kv.apply("generations", &mut cfg.generations)?;
        kv.apply("mutation_prob", &mut cfg.mutation_prob)?;
        kv.apply("seed", &mut cfg.seed)?;
        kv.apply_with("wall_clock_limit", &mut cfg.wall_clock_limit, |s| {
            if s.eq_ignore_ascii_case("none") {
                Ok(None)
            } else {
                humantime::parse_duration(s)
                    .map(Some)
                    .map_err(|e| e.to_string())
            }
        })?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, KvError> {
        let text = std::fs::read_to_string(path).map_err(|source| KvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}
