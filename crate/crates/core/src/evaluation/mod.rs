//! Fitness evaluation: hardware objectives from the cost model, accuracy
//! from a pluggable backend (deterministic surrogate or an external trainer
//! process), with a persistent per-genotype cache.

mod bridge;
mod cache;
mod loopback;
mod surrogate;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genotype::{Genotype, GenotypeId, InputSpec, SearchSpace};
use crate::hwmodel::{estimate, CostError, HardwareConfig};
use crate::nsga::FitnessVector;

pub use bridge::{
    BridgeBackend, BridgeError, TrainerProcess, DEFAULT_REQUEST_TIMEOUT, SHUTDOWN_LINE,
};
pub use cache::{CacheEntry, EvaluationCache};
pub use loopback::{serve_loopback, LoopbackMode, LoopbackOptions};
pub use surrogate::{surrogate_accuracy, SurrogateBackend};

/// Default number of concurrent backend requests.
pub const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Mnist,
    Fmnist,
    Svhn,
    Cifar10,
}

impl Dataset {
    pub const ALL: [Dataset; 4] = [
        Dataset::Mnist,
        Dataset::Fmnist,
        Dataset::Svhn,
        Dataset::Cifar10,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Mnist => "mnist",
            Dataset::Fmnist => "fmnist",
            Dataset::Svhn => "svhn",
            Dataset::Cifar10 => "cifar10",
        }
    }

    /// Reduced training budget used during search.
    pub fn default_epochs(self) -> u32 {
        match self {
            Dataset::Cifar10 => 10,
            _ => 5,
        }
    }

    pub fn input(self) -> InputSpec {
        match self {
            Dataset::Mnist | Dataset::Fmnist => InputSpec {
                side: 28,
                channels: 1,
            },
            Dataset::Svhn | Dataset::Cifar10 => InputSpec {
                side: 32,
                channels: 3,
            },
        }
    }

    pub fn num_classes(self) -> u32 {
        10
    }

    pub fn search_space(self) -> SearchSpace {
        SearchSpace {
            num_classes: self.num_classes(),
            ..SearchSpace::with_input(self.input())
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dataset::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| {
                format!("unknown dataset {s:?} (expected mnist, fmnist, svhn or cifar10)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalStatus {
    Ok,
    Failed,
    Timeout,
}

impl fmt::Display for EvalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalStatus::Ok => "ok",
            EvalStatus::Failed => "failed",
            EvalStatus::Timeout => "timeout",
        })
    }
}

/// One training request on the wire. Field order is the wire order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub id: GenotypeId,
    pub genotype: String,
    pub dataset: Dataset,
    pub epochs: u32,
    pub batch_size: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub id: GenotypeId,
    pub accuracy: f64,
    pub epochs_run: u32,
    pub train_seconds: f64,
    pub status: EvalStatus,
}

impl EvaluationResult {
    pub fn unsuccessful(id: GenotypeId, status: EvalStatus) -> Self {
        Self {
            id,
            accuracy: 0.0,
            epochs_run: 0,
            train_seconds: 0.0,
            status,
        }
    }

    /// Accuracy as seen by the search: zero unless the run succeeded.
    pub fn effective_accuracy(&self) -> f64 {
        if self.status == EvalStatus::Ok {
            self.accuracy
        } else {
            0.0
        }
    }
}

/// Fitness of one genotype together with how its accuracy was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub fitness: FitnessVector,
    pub status: EvalStatus,
}

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("cost model: {0}")]
    Cost(#[from] CostError),
    #[error("evaluation cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error("backend: {0}")]
    Backend(String),
}

/// Source of accuracy values. `slot` identifies the worker issuing the
/// request, in `0..max_concurrency()`.
pub trait AccuracyBackend: Send + Sync {
    /// Per-request failures come back as a result with a non-ok status; an
    /// `Err` aborts the whole batch.
    fn evaluate(
        &self,
        slot: usize,
        req: &EvaluationRequest,
    ) -> Result<EvaluationResult, EvaluationError>;

    fn max_concurrency(&self) -> usize {
        1
    }
}

/// Anything that can turn genotypes into fitness vectors, in order.
pub trait BatchEvaluator {
    fn evaluate(&mut self, batch: &[Genotype]) -> Result<Vec<Evaluation>, EvaluationError>;
}

/// Cost model plus accuracy backend plus cache.
pub struct Evaluator<'a> {
    pub hw: HardwareConfig,
    pub dataset: Dataset,
    pub epochs: u32,
    pub batch_size: u32,
    pub seed: u64,
    pub workers: usize,
    backend: &'a dyn AccuracyBackend,
    cache: EvaluationCache,
    backend_calls: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        hw: HardwareConfig,
        dataset: Dataset,
        backend: &'a dyn AccuracyBackend,
        cache: EvaluationCache,
    ) -> Self {
        Self {
            hw,
            dataset,
            epochs: dataset.default_epochs(),
            batch_size: 100,
            seed: 0,
            workers: DEFAULT_WORKERS,
            backend,
            cache,
            backend_calls: 0,
        }
    }

    /// Number of requests sent to the backend so far.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls
    }

    pub fn cache(&self) -> &EvaluationCache {
        &self.cache
    }

    fn request(&self, g: &Genotype) -> EvaluationRequest {
        let genotype = g.serialize();
        EvaluationRequest {
            id: GenotypeId::of(&genotype),
            genotype,
            dataset: self.dataset,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    /// Evaluates a batch. Hardware objectives always come from the cost
    /// model; accuracy comes from the cache when present, otherwise from the
    /// backend, with distinct uncached genotypes fanned out over up to
    /// `workers` concurrent requests. Output order follows input order.
    pub fn evaluate_batch(
        &mut self,
        batch: &[Genotype],
    ) -> Result<Vec<Evaluation>, EvaluationError> {
        let costs = batch
            .iter()
            .map(|g| estimate(g, &self.hw))
            .collect::<Result<Vec<_>, _>>()?;
        let requests: Vec<EvaluationRequest> = batch.iter().map(|g| self.request(g)).collect();

        let mut pending: Vec<&EvaluationRequest> = Vec::new();
        let mut queued: HashMap<&GenotypeId, ()> = HashMap::new();
        for req in &requests {
            if self.cache.get(req).is_none() && queued.insert(&req.id, ()).is_none() {
                pending.push(req);
            }
        }

        let results = self.dispatch(&pending)?;
        self.backend_calls += pending.len();
        for (req, res) in pending.iter().zip(results) {
            let res = if res.id == req.id {
                res
            } else {
                log::warn!("backend answered {} for request {}", res.id, req.id);
                EvaluationResult::unsuccessful(req.id.clone(), EvalStatus::Failed)
            };
            self.cache.insert(req, res)?;
        }

        Ok(requests
            .iter()
            .zip(costs)
            .map(|(req, cost)| {
                let res = self
                    .cache
                    .get(req)
                    .expect("every request was just resolved");
                Evaluation {
                    fitness: FitnessVector {
                        accuracy: res.effective_accuracy(),
                        energy_mj: cost.energy_mj,
                        latency_ms: cost.latency_ms,
                        memory_kib: cost.memory_kib,
                    },
                    status: res.status,
                }
            })
            .collect())
    }

    fn dispatch(
        &self,
        pending: &[&EvaluationRequest],
    ) -> Result<Vec<EvaluationResult>, EvaluationError> {
        let workers = self
            .workers
            .max(1)
            .min(self.backend.max_concurrency().max(1))
            .min(pending.len());
        if workers <= 1 {
            return pending
                .iter()
                .map(|r| self.backend.evaluate(0, r))
                .collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<EvaluationResult, EvaluationError>>>> =
            pending.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for slot in 0..workers {
                let (next, slots) = (&next, &slots);
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = pending.get(i) else { break };
                    let out = self.backend.evaluate(slot, req);
                    *slots[i].lock().expect("result slot poisoned") = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| {
                m.into_inner()
                    .expect("result slot poisoned")
                    .expect("every request dispatched")
            })
            .collect()
    }
}

impl BatchEvaluator for Evaluator<'_> {
    fn evaluate(&mut self, batch: &[Genotype]) -> Result<Vec<Evaluation>, EvaluationError> {
        self.evaluate_batch(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genotype::{preset, random_genotype, Preset};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::AtomicUsize;

    struct Counting {
        calls: AtomicUsize,
        inner: SurrogateBackend,
    }

    impl AccuracyBackend for Counting {
        fn evaluate(
            &self,
            slot: usize,
            req: &EvaluationRequest,
        ) -> Result<EvaluationResult, EvaluationError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.evaluate(slot, req)
        }

        fn max_concurrency(&self) -> usize {
            4
        }
    }

    fn counting() -> Counting {
        Counting {
            calls: AtomicUsize::new(0),
            inner: SurrogateBackend,
        }
    }

    fn batch(n: usize, seed: u64) -> Vec<Genotype> {
        let space = Dataset::Mnist.search_space();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| random_genotype(&space, &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn dataset_defaults() {
        assert_eq!(Dataset::Cifar10.default_epochs(), 10);
        assert_eq!(Dataset::Svhn.default_epochs(), 5);
        assert_eq!("fmnist".parse::<Dataset>().unwrap(), Dataset::Fmnist);
        assert!("imagenet".parse::<Dataset>().is_err());
        assert_eq!(
            serde_json::to_string(&Dataset::Cifar10).unwrap(),
            "\"cifar10\""
        );
    }

    #[test]
    fn duplicates_are_evaluated_once() {
        let backend = counting();
        let mut ev = Evaluator::new(
            HardwareConfig::default(),
            Dataset::Mnist,
            &backend,
            EvaluationCache::in_memory(),
        );
        let mut gs = batch(17, 1);
        gs.extend_from_slice(&gs.clone()[..3]);
        let out = ev.evaluate_batch(&gs).unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 17);
        assert_eq!(out[0], out[17]);
    }

    #[test]
    fn cached_batch_makes_no_calls_and_is_stable() {
        let backend = counting();
        let mut ev = Evaluator::new(
            HardwareConfig::default(),
            Dataset::Mnist,
            &backend,
            EvaluationCache::in_memory(),
        );
        let gs = batch(10, 2);
        let first = ev.evaluate_batch(&gs).unwrap();
        let calls = backend.calls.load(Ordering::SeqCst);
        let second = ev.evaluate_batch(&gs).unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), calls);
        assert_eq!(first, second);
    }

    #[test]
    fn hardware_objectives_come_from_cost_model() {
        let backend = SurrogateBackend;
        let mut ev = Evaluator::new(
            HardwareConfig::default(),
            Dataset::Mnist,
            &backend,
            EvaluationCache::in_memory(),
        );
        let g = preset(Preset::CapsNet);
        let e = ev.evaluate_batch(std::slice::from_ref(&g)).unwrap()[0];
        let cost = estimate(&g, &HardwareConfig::default()).unwrap();
        assert_eq!(
            (
                e.fitness.energy_mj,
                e.fitness.latency_ms,
                e.fitness.memory_kib
            ),
            (cost.energy_mj, cost.latency_ms, cost.memory_kib)
        );
    }

    #[test]
    fn failures_count_as_zero_accuracy() {
        struct Failing;
        impl AccuracyBackend for Failing {
            fn evaluate(
                &self,
                _: usize,
                req: &EvaluationRequest,
            ) -> Result<EvaluationResult, EvaluationError> {
                Ok(EvaluationResult {
                    accuracy: 0.7,
                    ..EvaluationResult::unsuccessful(req.id.clone(), EvalStatus::Timeout)
                })
            }
        }
        let mut ev = Evaluator::new(
            HardwareConfig::default(),
            Dataset::Mnist,
            &Failing,
            EvaluationCache::in_memory(),
        );
        let e = ev.evaluate_batch(&batch(1, 3)).unwrap()[0];
        assert_eq!(e.status, EvalStatus::Timeout);
        assert_eq!(e.fitness.accuracy, 0.0);
    }

    #[test]
    fn wire_request_field_order() {
        let req = EvaluationRequest {
            id: GenotypeId::from("00ff".to_string()),
            genotype: "g".into(),
            dataset: Dataset::Svhn,
            epochs: 5,
            batch_size: 64,
            seed: 7,
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"id":"00ff","genotype":"g","dataset":"svhn","epochs":5,"batch_size":64,"seed":7}"#
        );
    }
}
