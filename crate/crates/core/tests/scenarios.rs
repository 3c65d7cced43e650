use oodkit::metrics::auroc;
use oodkit::pipeline::{PipelineConfig, ScorerBuilder};
use oodkit::scorers::score_dataset;
use oodkit::synth::{gen_classification_task, gen_ood, OodKind, TaskSpec};
use oodkit::ScorerKind;

#[test]
fn mahalanobis_separates_irrelevant_inputs() {
    for seed in 0..3 {
        let task = gen_classification_task(&TaskSpec {
            seed,
            ..TaskSpec::default()
        })
        .unwrap();
        let ood = gen_ood(&task, OodKind::Irrelevant, 2000, seed + 10).unwrap();
        let s = ScorerBuilder::new(&task.train, &task.val, PipelineConfig::default())
            .build(ScorerKind::MahaSum)
            .unwrap();
        let id = score_dataset(&s, &task.test).unwrap();
        let out = score_dataset(&s, &ood.bundle).unwrap();
        let a = auroc(id.as_slice(), out.as_slice()).unwrap();
        assert!(a >= 0.99, "seed {seed}: {a}");
    }
}
