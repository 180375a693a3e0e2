//! Deterministic stand-in for training.
//!
//! The value is a smooth function of a few architecture features plus
//! seeded noise. It lets the search run without a GPU and says nothing about
//! the accuracy a real network would reach.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    AccuracyBackend, Dataset, EvalStatus, EvaluationError, EvaluationRequest, EvaluationResult,
};
use crate::genotype::{Genotype, LayerKind};

/// Half-width of the uniform noise term.
pub const NOISE_AMPLITUDE: f64 = 0.01;

fn ceiling(dataset: Dataset) -> f64 {
    match dataset {
        Dataset::Mnist => 0.995,
        Dataset::Fmnist => 0.93,
        Dataset::Svhn => 0.96,
        Dataset::Cifar10 => 0.88,
    }
}

fn smooth_score(g: &Genotype) -> f64 {
    let prims = g.expand();
    let depth = prims.len() as f64;
    let weights: f64 = prims
        .iter()
        .filter_map(|l| crate::hwmodel::layer_cost_params(l).ok())
        .map(|p| p.weights as f64)
        .sum();
    let capsules: f64 = prims
        .iter()
        .filter(|l| l.kind.is_capsule() && l.kind != LayerKind::FlatCaps)
        .map(|l| f64::from(l.ch_out) * f64::from(l.n_out).powi(2))
        .sum();
    let skip = if g.skip.is_some() { 1.0 } else { 0.0 };

    0.30 + 0.35 * ((weights.max(1.0).log10() - 3.5) / 1.5).tanh().max(-1.0)
        + 0.15 * depth / (depth + 4.0)
        + 0.10 * ((capsules + 1.0).log10() / 3.0).tanh()
        + 0.04 * skip
}

/// Surrogate accuracy in `[0, 1]`.
pub fn surrogate_accuracy(g: &Genotype, dataset: Dataset, seed: u64) -> f64 {
    let canonical = g.serialize();
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    h.update(b"|");
    h.update(dataset.name().as_bytes());
    h.update(b"|");
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let noise = ChaCha8Rng::from_seed(key).gen_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
    (ceiling(dataset) * smooth_score(g).clamp(0.0, 1.0) + noise).clamp(0.0, 1.0)
}

/// Backend that answers every request with [`surrogate_accuracy`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SurrogateBackend;

impl AccuracyBackend for SurrogateBackend {
    fn evaluate(
        &self,
        _slot: usize,
        req: &EvaluationRequest,
    ) -> Result<EvaluationResult, EvaluationError> {
        let g = match Genotype::deserialize(&req.genotype) {
            Ok(g) => g,
            Err(e) => {
                log::warn!("surrogate cannot parse {}: {e}", req.id);
                return Ok(EvaluationResult::unsuccessful(
                    req.id.clone(),
                    EvalStatus::Failed,
                ));
            }
        };
        Ok(EvaluationResult {
            id: req.id.clone(),
            accuracy: surrogate_accuracy(&g, req.dataset, req.seed),
            epochs_run: req.epochs,
            train_seconds: 0.0,
            status: EvalStatus::Ok,
        })
    }

    fn max_concurrency(&self) -> usize {
        usize::MAX
    }
}
