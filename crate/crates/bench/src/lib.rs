//! Shared fixtures for the oodkit benchmarks.

use oodkit::pipeline::{PipelineConfig, ScorerBuilder};
use oodkit::synth::{gen_classification_task, SyntheticTask, TaskSpec};
use oodkit::{Scorer, ScorerKind};

/// A default synthetic task: 5 classes in 16 dimensions, 2,000 test rows.
pub fn task(seed: u64) -> SyntheticTask {
    gen_classification_task(&TaskSpec {
        seed,
        ..TaskSpec::default()
    })
    .expect("default task spec is valid")
}

/// Builds the given scorers on the task's train and validation splits.
pub fn scorers(task: &SyntheticTask, kinds: &[ScorerKind]) -> Vec<Scorer> {
    ScorerBuilder::new(&task.train, &task.val, PipelineConfig::default())
        .build_all(kinds)
        .expect("scorers fit on the default task")
}

/// Deterministic pseudo-random scores without ties.
pub fn scores(n: usize, offset: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.618_033_988_7).fract() + offset).collect()
}
