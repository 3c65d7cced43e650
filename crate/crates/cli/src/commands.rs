use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use oodkit::data::{FeatureReader, ScoreSidecar};
use oodkit::head::{fit_temperature, read_checkpoint, train_head as fit_head, write_checkpoint};
use oodkit::math::derive_seed;
use oodkit::metrics::classification_error;
use oodkit::pipeline::{evaluate_detection, evaluate_detection_grid, IdTask, PipelineConfig, ScorerBuilder};
use oodkit::report::{detection_grid, detection_table, scatter_table, shift_table, Table};
use oodkit::scorers::score_dataset;
use oodkit::shift::{
    evaluate_shift_protocol, fit_error_predictor, DatasetScorer, Monitor, MonitorConfig, PadReference, ProtocolConfig,
    ProtocolResult,
};
use oodkit::synth::{ShiftFamily, TaskSpec};
use oodkit::{DatasetBundle, Head, HeadKind, Role, ScorerKind, TrainConfig};

use crate::config::{parse_split, CommonArgs, Resolved, RunConfig, DEFAULT_REPS};
use crate::experiment::{write_synthetic, Experiment};
use crate::{
    EvalOodArgs, EvalShiftArgs, ExportScatterArgs, MonitorArgs, ScoreArgs, SynthGenArgs, TrainHeadArgs, UsageError,
};

const ALL_SCORERS: &[&str] = &[
    "baseline",
    "calib",
    "mc-dropout",
    "cosine",
    "odin-star",
    "maha-sum",
    "maha-adv",
    "ensemble-conf",
    "ensemble-entropy",
];
const SHIFT_REPS: usize = 20;

fn single_flags(manifest: &Option<PathBuf>, seed: Option<u64>, out: &Option<PathBuf>) -> CommonArgs {
    CommonArgs {
        manifest: manifest.iter().cloned().collect(),
        scorers: None,
        seed,
        reps: None,
        out: out.clone(),
    }
}

fn report(table: &Table, dir: &Path, stem: &str) -> anyhow::Result<()> {
    let (csv, json) = table.write(dir, stem)?;
    log::info!("wrote {} and {}", csv.display(), json.display());
    print!("{}", table.to_csv()?);
    Ok(())
}

pub fn synth_gen(a: &SynthGenArgs, file: Option<&RunConfig>) -> anyhow::Result<()> {
    let r = Resolved::merge(
        "synth-gen",
        &single_flags(&None, a.seed, &a.out),
        file,
        &["baseline"],
        1,
    )?;
    let spec = TaskSpec {
        classes: a.classes,
        dim: a.dim,
        train_per_class: a.train_per_class,
        val_per_class: a.val_per_class,
        test_per_class: a.test_per_class,
        separation: a.separation,
        spread: a.spread,
        seed: r.seed,
        irrelevant_factor: a.irrelevant_factor,
        novel_factor: a.novel_factor,
    };
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    let (path, _) = write_synthetic(&spec, a.ood_n, &r.out)?;
    println!("{}", path.display());
    Ok(())
}

fn load_head(path: &Option<PathBuf>, exp: &Experiment) -> anyhow::Result<Option<Head>> {
    let Some(p) = path else { return Ok(None) };
    let head = read_checkpoint(p).with_context(|| format!("loading head {}", p.display()))?;
    if head.dim() != exp.train.dim() {
        bail!("head expects dimension {}, data has {}", head.dim(), exp.train.dim());
    }
    Ok(Some(head))
}

fn builder<'a>(exp: &'a Experiment, seed: u64, head: Option<Head>) -> ScorerBuilder<'a> {
    let cfg = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    let b = ScorerBuilder::new(&exp.train, &exp.val, cfg);
    match head {
        Some(h) => b.with_head(h),
        None => b,
    }
}

pub fn train_head(a: &TrainHeadArgs, file: Option<&RunConfig>) -> anyhow::Result<()> {
    let r = Resolved::merge(
        "train-head",
        &single_flags(&a.manifest, a.seed, &a.out),
        file,
        &["baseline"],
        1,
    )?;
    let kind: HeadKind = a.kind.parse().map_err(|e: oodkit::Error| UsageError(e.to_string()))?;
    let exp = Experiment::load(r.single_manifest()?)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        seed: r.seed,
        epochs: a.epochs.unwrap_or(defaults.epochs),
        learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
        dropout: a.dropout.unwrap_or(defaults.dropout),
        ..defaults
    };
    let trained = fit_head(&exp.train, &exp.val, kind, &cfg)?;
    let temperature = fit_temperature(&trained.head, &exp.val)?;
    std::fs::create_dir_all(&r.out)?;
    let ckpt = r.out.join("head.ckpt");
    write_checkpoint(&trained.head, &ckpt)?;
    let summary = serde_json::json!({
        "kind": a.kind,
        "classes": trained.head.classes(),
        "dim": trained.head.dim(),
        "val_accuracy": trained.val_accuracy,
        "test_error": classification_error(&trained.head, &exp.test)?,
        "temperature": temperature.value(),
        "train": cfg,
    });
    std::fs::write(r.out.join("head.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("{}", ckpt.display());
    Ok(())
}

pub fn score(a: &ScoreArgs, file: Option<&RunConfig>) -> anyhow::Result<()> {
    let r = Resolved::merge("score", &a.common, file, &["baseline"], 1)?;
    let kinds = r.scorer_kinds()?;
    let exp = Experiment::load(r.single_manifest()?)?;
    let head = load_head(&a.head, &exp)?;
    let mut b = builder(&exp, r.seed, head);
    let mut sets: Vec<(&str, &DatasetBundle)> = vec![("val", &exp.val), ("test", &exp.test)];
    sets.extend(exp.others.iter().map(|(n, b)| (n.as_str(), b)));
    for kind in kinds {
        let scorer = b.build(kind)?;
        let dir = r.out.join("scores").join(kind.as_str());
        std::fs::create_dir_all(&dir)?;
        for (name, bundle) in &sets {
            let scores = score_dataset(&scorer, bundle)?;
            let stem = sanitize(name);
            scores.write_csv(dir.join(format!("{stem}.csv")))?;
            ScoreSidecar {
                scorer: kind.to_string(),
                n: scores.len(),
                resources: scorer.describe(),
                seeds: scorer.seeds(),
            }
            .write(dir.join(format!("{stem}.json")))?;
        }
        println!("{}", dir.display());
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn eval_ood(a: &EvalOodArgs, file: Option<&RunConfig>) -> anyhow::Result<()> {
    let r = Resolved::merge("eval-ood", &a.common, file, ALL_SCORERS, DEFAULT_REPS)?;
    let kinds = r.scorer_kinds()?;
    if r.manifests.is_empty() {
        return Err(UsageError("--manifest is required".into()).into());
    }
    let exps = r
        .manifests
        .iter()
        .map(|m| Experiment::load(m))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cfg = PipelineConfig {
        seed: r.seed,
        ..PipelineConfig::default()
    };
    if let [exp] = exps.as_slice() {
        let oods: Vec<(&str, &DatasetBundle)> = exp.with_role(Role::Ood).map(|(n, b)| (n.as_str(), b)).collect();
        if oods.is_empty() {
            bail!("{} has no ood entries; pass several manifests for a grid", exp.name);
        }
        let task = IdTask {
            name: &exp.name,
            train: &exp.train,
            val: &exp.val,
            test: &exp.test,
        };
        let cells = evaluate_detection(task, &oods, &kinds, r.reps, &cfg)?;
        return report(&detection_table(&cells)?, &r.out, "detection");
    }
    let mut names: Vec<String> = exps.iter().map(|e| e.name.clone()).collect();
    for i in 0..names.len() {
        if names[..i].contains(&names[i]) {
            names[i] = format!("{}-{}", names[i], i + 1);
        }
    }
    let tasks: Vec<IdTask> = exps
        .iter()
        .zip(&names)
        .map(|(e, n)| IdTask {
            name: n,
            train: &e.train,
            val: &e.val,
            test: &e.test,
        })
        .collect();
    let cells = evaluate_detection_grid(&tasks, &kinds, r.reps, &cfg)?;
    detection_table(&cells)?.write(&r.out, "detection")?;
    let order: Vec<&str> = names.iter().map(String::as_str).collect();
    report(&detection_grid(&cells, &order)?, &r.out, "grid")
}

/// The three disjoint parts of the ID test set used by the shift protocol:
/// the source set, the base of the training shifts, and the base of the
/// held-out shifts.
fn test_thirds(test: &DatasetBundle) -> anyhow::Result<[DatasetBundle; 3]> {
    let n = test.len();
    if n < 3 {
        bail!("the shift protocol needs at least 3 ID test samples, found {n}");
    }
    let cut = |k: usize| k * n / 3;
    let part = |k: usize| {
        let idx: Vec<usize> = (cut(k)..cut(k + 1)).collect();
        test.select(&idx)
    };
    Ok([part(0), part(1), part(2)])
}

struct ShiftSetup {
    families: Vec<ShiftFamily>,
    parts: [DatasetBundle; 3],
}

fn shift_setup(exp: &Experiment, count: usize, seed: u64) -> anyhow::Result<ShiftSetup> {
    if !(7..=19).contains(&count) {
        return Err(UsageError(format!("--families must lie in 7..=19, got {count}")).into());
    }
    let spread = exp.feature_spread()?;
    let mut families = ShiftFamily::standard_set(spread, exp.train.dim(), derive_seed(seed, 0x66))?;
    families.truncate(count);
    Ok(ShiftSetup {
        families,
        parts: test_thirds(&exp.test)?,
    })
}

/// Resolves a scorer name to the network whose error is predicted and the
/// dataset-level score; `pad` uses the linear head and the source set.
fn dataset_scorer(
    b: &mut ScorerBuilder<'_>,
    name: &str,
    source: &DatasetBundle,
    seed: u64,
) -> anyhow::Result<(Head, DatasetScorer)> {
    if name == "pad" {
        let head = b.linear_head()?.clone();
        let reference = PadReference {
            source: source.features.clone(),
            split: 0.5,
            seed,
        };
        return Ok((head, DatasetScorer::Pad(reference)));
    }
    let kind: ScorerKind = name.parse().map_err(|e: oodkit::Error| UsageError(e.to_string()))?;
    Ok((b.classifier(kind)?, DatasetScorer::Mean(b.build(kind)?)))
}

fn run_protocol(
    exp: &Experiment,
    head: Option<Head>,
    setup: &ShiftSetup,
    scorers: &[String],
    cfg: &ProtocolConfig,
) -> anyhow::Result<Vec<ProtocolResult>> {
    let mut b = builder(exp, cfg.seed, head);
    let [d_s, d_o, d_t] = &setup.parts;
    scorers
        .iter()
        .map(|name| {
            let (head, scorer) = dataset_scorer(&mut b, name, d_s, cfg.seed)?;
            Ok(evaluate_shift_protocol(
                &head,
                &scorer,
                d_s,
                d_o,
                d_t,
                &setup.families,
                cfg,
            )?)
        })
        .collect()
}

pub fn eval_shift(a: &EvalShiftArgs, file: Option<&RunConfig>) -> anyhow::Result<()> {
    let r = Resolved::merge("eval-shift", &a.common, file, &["baseline"], SHIFT_REPS)?;
    let (train_families, test_families) = parse_split(&a.split)?;
    if train_families + test_families != a.families {
        return Err(UsageError(format!("split {} does not add up to {} families", a.split, a.families)).into());
    }
    let exp = Experiment::load(r.single_manifest()?)?;
    let head = load_head(&a.head, &exp)?;
    let setup = shift_setup(&exp, a.families, r.seed)?;
    let cfg = ProtocolConfig {
        train_families,
        repetitions: r.reps,
        seed: r.seed,
        same_families: a.same_families,
        ..ProtocolConfig::default()
    };
    let results = run_protocol(&exp, head.clone(), &setup, &r.scorers, &cfg)?;
    for res in &results {
        scatter_table(&res.scorer, &res.scatter)?.write(&r.out, &format!("scatter-{}", res.scorer))?;
    }
    let shifted: Vec<&(String, DatasetBundle)> = exp.with_role(Role::Shifted).collect();
    if !shifted.is_empty() {
        cross_domain(&exp, head, &setup, &r.scorers, &cfg, &shifted)?.write(&r.out, "cross-domain")?;
    }
    report(&shift_table(&results)?, &r.out, "shift")
}

/// Predicted vs true error for the manifest's own shifted datasets, with the
/// regressor trained on every synthetic family.
fn cross_domain(
    exp: &Experiment,
    head: Option<Head>,
    setup: &ShiftSetup,
    scorers: &[String],
    cfg: &ProtocolConfig,
    shifted: &[&(String, DatasetBundle)],
) -> anyhow::Result<Table> {
    let mut b = builder(exp, cfg.seed, head);
    let [d_s, d_o, _] = &setup.parts;
    let mut t = Table::new(&["scorer", "dataset", "s_bar", "predicted_error", "true_error"]);
    for name in scorers {
        let (head, scorer) = dataset_scorer(&mut b, name, d_s, cfg.seed)?;
        let f = fit_error_predictor(&head, &scorer, d_s, d_o, &setup.families, cfg)?;
        for (ds, bundle) in shifted {
            let s_bar = scorer.dataset_score(bundle)?;
            t.push(vec![
                name.as_str().into(),
                ds.as_str().into(),
                s_bar.into(),
                f.predict_error(s_bar)?.into(),
                classification_error(&head, bundle)?.into(),
            ])?;
        }
    }
    Ok(t)
}

pub fn export_scatter(a: &ExportScatterArgs, file: Option<&RunConfig>) -> anyhow::Result<()> {
    let r = Resolved::merge("export-scatter", &a.common, file, &["baseline"], 1)?;
    let exp = Experiment::load(r.single_manifest()?)?;
    let head = load_head(&a.head, &exp)?;
    let setup = shift_setup(&exp, a.families, r.seed)?;
    let cfg = ProtocolConfig {
        train_families: 6.min(a.families - 1),
        repetitions: 1,
        seed: r.seed,
        ..ProtocolConfig::default()
    };
    for res in run_protocol(&exp, head, &setup, &r.scorers, &cfg)? {
        let (csv, _) = scatter_table(&res.scorer, &res.scatter)?.write(&r.out, &format!("scatter-{}", res.scorer))?;
        println!("{}", csv.display());
    }
    Ok(())
}

pub fn monitor(a: &MonitorArgs, file: Option<&RunConfig>) -> anyhow::Result<()> {
    let r = Resolved::merge("monitor", &a.common, file, &["baseline"], 1)?;
    let [name] = r.scorers.as_slice() else {
        return Err(UsageError("monitor takes exactly one scorer".into()).into());
    };
    let mon_cfg = MonitorConfig {
        window: a.window,
        target: a.target,
    };
    mon_cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let exp = Experiment::load(r.single_manifest()?)?;
    let head = load_head(&a.head, &exp)?;
    let setup = shift_setup(&exp, 19, r.seed)?;
    let mut b = builder(&exp, r.seed, head);
    let [d_s, d_o, _] = &setup.parts;
    let (head, scorer) = dataset_scorer(&mut b, name, d_s, r.seed)?;
    let cfg = ProtocolConfig {
        seed: r.seed,
        ..ProtocolConfig::default()
    };
    let regressor = fit_error_predictor(&head, &scorer, d_s, d_o, &setup.families, &cfg)?;

    let input: Box<dyn Read> = match a.input.as_deref() {
        None => Box::new(io::stdin().lock()),
        Some(p) if p == Path::new("-") => Box::new(io::stdin().lock()),
        Some(p) => Box::new(File::open(p).with_context(|| format!("opening {}", p.display()))?),
    };
    let mut reader = FeatureReader::new(BufReader::new(input))?;
    if reader.d() != scorer.dim() {
        bail!(
            "stream dimension {} does not match the scorer's {}",
            reader.d(),
            scorer.dim()
        );
    }
    let explicit_out = a.common.out.clone().or_else(|| file.and_then(|f| f.out.clone()));
    let mut sink: Box<dyn Write> = match &explicit_out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Box::new(File::create(dir.join("monitor.ndjson"))?)
        }
        None => Box::new(io::stdout().lock()),
    };
    let mut sink = BufWriter::new(&mut sink);
    let mut mon = Monitor::new(&regressor, &scorer, mon_cfg)?;
    while let Some(row) = reader.next_row()? {
        if let Some(rec) = mon.push(&row)? {
            writeln!(sink, "{}", serde_json::to_string(&rec)?)?;
            sink.flush()?;
        }
    }
    if let Some(rec) = mon.finish()? {
        writeln!(sink, "{}", serde_json::to_string(&rec)?)?;
    }
    sink.flush()?;
    Ok(())
}
