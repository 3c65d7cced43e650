use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oodkit::metrics::auroc;
use oodkit::pipeline::{PipelineConfig, ScorerBuilder};
use oodkit::scorers::{score_dataset, score_layers};
use oodkit::shift::{evaluate_shift_protocol, DatasetScorer, ProtocolConfig};
use oodkit::synth::{gen_classification_task, ShiftFamily, TaskSpec};
use oodkit::ScorerKind;
use oodkit_bench::{scorers, scores, task};

fn bench_auroc(c: &mut Criterion) {
    let mut g = c.benchmark_group("auroc");
    for n in [1_000, 10_000, 100_000] {
        let id = scores(n, 0.1);
        let ood = scores(n, 0.0);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| auroc(black_box(&id), black_box(&ood)).unwrap())
        });
    }
    g.finish();
}

fn bench_scorers(c: &mut Criterion) {
    let t = task(1);
    let mut g = c.benchmark_group("score_dataset");
    g.sample_size(20);
    for s in scorers(&t, &ScorerKind::ALL) {
        g.bench_function(s.kind().as_str(), |b| {
            b.iter(|| score_dataset(black_box(&s), &t.test).unwrap())
        });
    }
    g.finish();
}

fn bench_parallel(c: &mut Criterion) {
    let t = task(2);
    let s = scorers(&t, &[ScorerKind::McDropout]).remove(0);
    let mut g = c.benchmark_group("mc_dropout_rows");
    g.sample_size(20);
    for parallel in [false, true] {
        let name = if parallel { "parallel" } else { "sequential" };
        g.bench_function(name, |b| {
            b.iter(|| score_layers(&s, &[&t.test.features], parallel).unwrap())
        });
    }
    g.finish();
}

fn bench_shift_protocol(c: &mut Criterion) {
    let spec = TaskSpec {
        spread: 3.0,
        test_per_class: 600,
        seed: 1,
        ..TaskSpec::default()
    };
    let t = gen_classification_task(&spec).unwrap();
    let mut b = ScorerBuilder::new(&t.train, &t.val, PipelineConfig::default());
    let head = b.linear_head().unwrap().clone();
    let scorer = DatasetScorer::Mean(b.build(ScorerKind::Baseline).unwrap());
    let families = ShiftFamily::standard_set(spec.spread, spec.dim, 7).unwrap();
    let n = t.test.len();
    let part = |k: usize| t.test.select(&(k * n / 3..(k + 1) * n / 3).collect::<Vec<_>>());
    let (ds, d_o, d_t) = (part(0), part(1), part(2));
    let cfg = ProtocolConfig {
        repetitions: 1,
        ..ProtocolConfig::default()
    };
    let mut g = c.benchmark_group("shift_protocol");
    g.sample_size(10);
    g.bench_function("one_repetition", |bch| {
        bch.iter(|| evaluate_shift_protocol(&head, &scorer, &ds, &d_o, &d_t, &families, &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_auroc,
    bench_scorers,
    bench_parallel,
    bench_shift_protocol
);
criterion_main!(benches);
