//! Seeded fixtures shared by the benchmarks.

use refinery_core::engine::{evaluate_policy, FinetuneConfig};
use refinery_core::oracle::{rollout, LandscapeGenerator};
use refinery_core::{Domain, EvalDataset, InitState, RngStream, StageSpec};

pub fn stage(seed: u64, dim: usize) -> StageSpec {
    let dom = Domain::unit(dim).expect("unit box");
    let field = LandscapeGenerator::default()
        .generate(&dom, &RngStream::from_seed(seed))
        .expect("generator defaults are valid");
    StageSpec::with_default_noise(0, field).expect("default noise is valid")
}

/// One epoch's evaluation under the default probe budget.
pub fn epoch_dataset(seed: u64, dim: usize) -> EvalDataset {
    evaluate_policy(&stage(seed, dim), &FinetuneConfig::default(), &RngStream::new(seed, 1))
        .expect("default config is valid")
        .0
}

/// Successful initializations from `n` uniform single rollouts.
pub fn success_points(seed: u64, dim: usize, n: usize) -> Vec<InitState> {
    let s = stage(seed, dim);
    let pts = refinery_core::uniform_sample(s.domain(), n, &RngStream::new(seed, 2));
    pts.into_iter()
        .enumerate()
        .filter(|(i, p)| {
            rollout(&s, p, 1, &RngStream::new(seed, 3).child(*i as u64))
                .map(|r| r.successes == 1)
                .unwrap_or(false)
        })
        .map(|(_, p)| p)
        .collect()
}
