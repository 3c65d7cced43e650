use oodkit::metrics::classification_error;
use oodkit::pipeline::{PipelineConfig, ScorerBuilder};
use oodkit::synth::{apply_shift, gen_classification_task, ShiftFamily, TaskSpec};

/// Seed-averaged head error per family rises with severity, up to one
/// adjacent inversion.
#[test]
fn error_grows_with_severity() {
    let seeds = 20;
    let spec = |seed| TaskSpec {
        spread: 3.0,
        test_per_class: 400,
        seed,
        ..TaskSpec::default()
    };
    let families = ShiftFamily::standard_set(3.0, spec(0).dim, 1).unwrap();
    let mut mean = vec![[0.0f64; 5]; families.len()];
    for seed in 0..seeds {
        let task = gen_classification_task(&spec(seed)).unwrap();
        assert_eq!(task.test.len(), 2000);
        let mut b = ScorerBuilder::new(
            &task.train,
            &task.val,
            PipelineConfig {
                seed,
                ..PipelineConfig::default()
            },
        );
        let head = b.linear_head().unwrap().clone();
        for (f, row) in families.iter().zip(&mut mean) {
            for (s, cell) in (1..=5u8).zip(row.iter_mut()) {
                let shifted = apply_shift(&task.test, f, s, seed).unwrap();
                *cell += classification_error(&head, &shifted).unwrap() / seeds as f64;
            }
        }
    }
    for (f, row) in families.iter().zip(&mean) {
        let inversions = row.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(inversions <= 1, "{}: {row:?}", f.name);
        assert!(row[4] > row[0], "{}: {row:?}", f.name);
    }
}
