use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn oodkit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodkit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = oodkit(args, cwd);
    assert!(
        out.status.success(),
        "oodkit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, name: &str, seed: u64, extra: &[&str]) -> PathBuf {
    let seed = seed.to_string();
    let mut args = vec!["synth-gen", "--seed", &seed, "--out", name, "--ood-n", "400"];
    args.extend([
        "--train-per-class",
        "60",
        "--val-per-class",
        "30",
        "--test-per-class",
        "90",
    ]);
    args.extend(extra);
    ok(&args, dir);
    dir.join(name).join("manifest.json")
}

#[test]
fn synth_gen_writes_a_loadable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "d", 1, &[]);
    let text = std::fs::read_to_string(&m).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let roles: Vec<&str> = v["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["role"].as_str().unwrap())
        .collect();
    assert_eq!(roles, ["id-train", "id-val", "id-test", "ood", "ood"]);
    for f in ["train.oodf", "train.oodl", "test.oodf", "ood-novel.oodf", "spec.json"] {
        assert!(dir.path().join("d").join(f).exists(), "{f}");
    }
}

#[test]
fn eval_ood_single_dataset_table() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", 2, &[]);
    let stdout = ok(
        &[
            "eval-ood",
            "--manifest",
            "d/manifest.json",
            "--scorers",
            "baseline,cosine",
            "--reps",
            "2",
            "--out",
            "r",
        ],
        dir.path(),
    );
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "scorer,id,ood,auroc_mean,auroc_std,reps");
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[1].starts_with("baseline,d,irrelevant,"));
    assert!(lines.iter().skip(1).all(|l| l.ends_with(",2")));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r/detection.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 4);
    let auroc = json[0]["auroc_mean"].as_f64().unwrap();
    assert!((0.5..=1.0).contains(&auroc));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a", 3, &[]);
    synth(dir.path(), "b", 4, &[]);
    let run = |out: &str| {
        ok(
            &[
                "eval-ood",
                "--manifest",
                "a/manifest.json,b/manifest.json",
                "--scorers",
                "calib,maha-sum",
                "--out",
                out,
            ],
            dir.path(),
        );
    };
    run("r1");
    run("r2");
    for f in ["grid.csv", "grid.json", "detection.csv", "detection.json"] {
        let a = std::fs::read(dir.path().join("r1").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("r2").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let grid = std::fs::read_to_string(dir.path().join("r1/grid.csv")).unwrap();
    assert_eq!(grid.lines().next().unwrap(), "method,ood,a,b");
    assert!(grid.lines().any(|l| l.starts_with("calib,a,-,")));
}

#[test]
fn eval_shift_and_scatter() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", 5, &["--spread", "3"]);
    let stdout = ok(
        &[
            "eval-shift",
            "--manifest",
            "d/manifest.json",
            "--scorers",
            "baseline,pad",
            "--reps",
            "2",
            "--out",
            "s",
        ],
        dir.path(),
    );
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "method,MAE,RMSE,mae_mean,mae_std,rmse_mean,rmse_std,reps");
    assert!(lines[1].starts_with("baseline,") && lines[2].starts_with("pad,"));
    let scatter = std::fs::read_to_string(dir.path().join("s/scatter-baseline.csv")).unwrap();
    // source + 2 repetitions × (30 D_o + 65 D_t)
    assert_eq!(scatter.lines().count(), 1 + 1 + 2 * 95);

    let out = oodkit(
        &["eval-shift", "--manifest", "d/manifest.json", "--split", "6:12"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));

    ok(
        &[
            "export-scatter",
            "--manifest",
            "d/manifest.json",
            "--scorers",
            "cosine",
            "--out",
            "x",
        ],
        dir.path(),
    );
    assert!(dir.path().join("x/scatter-cosine.json").exists());
}

#[test]
fn monitor_reads_stdin_and_writes_ndjson() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", 6, &["--spread", "3"]);
    let child = Command::new(env!("CARGO_BIN_EXE_oodkit"))
        .args([
            "monitor",
            "--manifest",
            "d/manifest.json",
            "--window",
            "100",
            "--target",
            "40",
        ])
        .current_dir(dir.path())
        .stdin(std::fs::File::open(dir.path().join("d/test.oodf")).unwrap())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let records: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // 450 test rows: four full windows and a partial one of 50.
    assert_eq!(records.len(), 5);
    for r in &records {
        let alert = r["predicted_error"].as_f64().unwrap() > 40.0;
        assert_eq!(r["alert"], alert, "{r}");
    }
    assert_eq!(records[4]["partial"], true);
    assert_eq!(records[4]["n"], 50);

    ok(
        &[
            "monitor",
            "--manifest",
            "d/manifest.json",
            "--input",
            "d/test.oodf",
            "--target",
            "40",
            "--out",
            "m",
        ],
        dir.path(),
    );
    let text = std::fs::read_to_string(dir.path().join("m/monitor.ndjson")).unwrap();
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn score_writes_vectors_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", 7, &[]);
    ok(
        &[
            "train-head",
            "--manifest",
            "d/manifest.json",
            "--kind",
            "cosine",
            "--out",
            "h",
        ],
        dir.path(),
    );
    ok(
        &[
            "score",
            "--manifest",
            "d/manifest.json",
            "--head",
            "h/head.ckpt",
            "--scorers",
            "cosine",
            "--out",
            "s",
        ],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("s/scores/cosine/novel.csv")).unwrap();
    assert_eq!(csv.lines().count(), 401);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s/scores/cosine/novel.json")).unwrap()).unwrap();
    assert_eq!(side["n"], 400);
}

#[test]
fn config_file_fills_in_unset_flags() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", 8, &[]);
    let cfg = r#"{"command": "eval-ood", "manifest": ["d/manifest.json"], "scorers": ["baseline"], "reps": 1, "out": "from-config"}"#;
    std::fs::write(dir.path().join("run.json"), cfg).unwrap();
    ok(&["--config", "run.json", "eval-ood"], dir.path());
    assert!(dir.path().join("from-config/detection.csv").exists());
    let stdout = ok(
        &[
            "--config",
            "run.json",
            "eval-ood",
            "--scorers",
            "cosine",
            "--out",
            "flags",
        ],
        dir.path(),
    );
    assert!(stdout
        .lines()
        .skip(1)
        .all(|l| l.starts_with("cosine,") && l.ends_with(",1")));
    assert!(dir.path().join("flags/detection.csv").exists());

    let out = oodkit(&["--config", "run.json", "eval-shift"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let usage = [
        vec!["no-such-command"],
        vec!["eval-ood"],
        vec!["eval-ood", "--manifest", "m.json", "--reps", "0"],
        vec!["eval-ood", "--manifest", "m.json", "--scorers", "nonsense"],
        vec!["monitor", "--manifest", "m.json"],
    ];
    for args in &usage {
        assert_eq!(oodkit(args, dir.path()).status.code(), Some(2), "{args:?}");
    }
    let out = oodkit(&["eval-ood", "--manifest", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    std::fs::write(dir.path().join("bad.oodf"), b"not a feature file").unwrap();
    synth(dir.path(), "d", 9, &[]);
    let out = oodkit(
        &[
            "monitor",
            "--manifest",
            "d/manifest.json",
            "--input",
            "bad.oodf",
            "--target",
            "30",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}
