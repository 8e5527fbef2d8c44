use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cogcn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogcn"))
        .args(args)
        .current_dir(cwd)
        .env_remove("COGCN_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth_small(cwd: &Path, dir: &str, seed: &str) {
    ok(&cogcn(
        &[
            "synth",
            "--speakers",
            "3",
            "--utts",
            "4",
            "--d",
            "5",
            "--frames-lo",
            "4",
            "--frames-hi",
            "7",
            "--seed",
            seed,
            "-o",
            dir,
        ],
        cwd,
    ));
}

/// Every file under `dir` except the run manifest, with contents.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_manifest.json" {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_requested_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&cogcn(
        &[
            "synth",
            "--classes",
            "4",
            "--speakers",
            "8",
            "--utts",
            "20",
            "--noise",
            "0.3",
            "--d",
            "4",
            "--seed",
            "7",
            "-o",
            "data",
        ],
        tmp.path(),
    ));
    let manifest = fs::read_to_string(tmp.path().join("data/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 160);
    assert_eq!(fs::read_dir(tmp.path().join("data/features")).unwrap().count(), 160);
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("data/run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(run["command"], "synth");
    assert_eq!(run["seed"], 7);
    assert_eq!(run["config"]["n_speakers"], 8);
    assert!(run["duration_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "a", "3");
    synth_small(tmp.path(), "b", "3");
    assert_eq!(snapshot(&tmp.path().join("a")), snapshot(&tmp.path().join("b")));
}

#[test]
fn synth_refuses_non_empty_dir_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "a", "1");
    let out = cogcn(&["synth", "--speakers", "3", "-o", "a"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--force"));
    ok(&cogcn(&["synth", "--speakers", "3", "--utts", "4", "--d", "5", "--force", "-o", "a"], tmp.path()));
}

#[test]
fn single_speaker_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cogcn(&["synth", "--speakers", "1", "-o", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("leave-one-speaker-out"));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "flag", "9");
    let out = Command::new(env!("CARGO_BIN_EXE_cogcn"))
        .args([
            "synth",
            "--speakers",
            "3",
            "--utts",
            "4",
            "--d",
            "5",
            "--frames-lo",
            "4",
            "--frames-hi",
            "7",
            "-o",
            "env",
        ])
        .current_dir(tmp.path())
        .env("COGCN_SEED", "9")
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(snapshot(&tmp.path().join("flag")), snapshot(&tmp.path().join("env")));
}

#[test]
fn bad_flags_exit_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cogcn(&["train", "--nope"], tmp.path()).status.code(), Some(1));
    assert_eq!(cogcn(&["diag", "params", "--k", "x"], tmp.path()).status.code(), Some(1));
    assert_eq!(cogcn(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    synth_small(cwd, "data", "2");
    let before = snapshot(&cwd.join("data"));
    let stdout = ok(&cogcn(
        &[
            "train", "data", "--z", "6", "--epochs", "3", "--k", "2", "--gamma", "0.5", "--seed", "1",
            "--json", "-o", "run",
        ],
        cwd,
    ));
    let metrics: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(metrics["folds"].as_array().unwrap().len(), 3);
    assert_eq!(metrics["folds"][0]["selected_K"], 2);
    assert_eq!(snapshot(&cwd.join("data")), before, "training must not touch the dataset");

    let on_disk: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cwd.join("run/metrics.json")).unwrap()).unwrap();
    assert_eq!(on_disk, metrics);
    for spk in ["spk0", "spk1", "spk2"] {
        let fold = cwd.join(format!("run/fold_{spk}"));
        assert!(fold.join("checkpoint.json").exists());
        let history = fs::read_to_string(fold.join("history.csv")).unwrap();
        assert_eq!(history.lines().next(), Some("epoch,train_loss,val_wa,val_ua"));
        assert_eq!(history.lines().count(), 4);
    }
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cwd.join("run/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["model"]["z"], 6);

    // eval on the test speaker reproduces the fold metrics
    let stdout = ok(&cogcn(
        &[
            "eval",
            "--checkpoint",
            "run/fold_spk1/checkpoint.json",
            "data",
            "--speaker",
            "spk1",
            "--json",
            "-o",
            "eval.json",
        ],
        cwd,
    ));
    let eval: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(eval["ua"], metrics["folds"][1]["ua"]);
    assert_eq!(eval["confusion"], metrics["folds"][1]["confusion"]);
    assert!(cwd.join("eval.json").exists());
}

#[test]
fn training_is_reproducible_across_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    synth_small(cwd, "data", "4");
    let args = |jobs: &'static str, out: &'static str| {
        vec![
            "train",
            "data",
            "--z",
            "5",
            "--epochs",
            "2",
            "--k-grid",
            "1,2",
            "--gamma-grid",
            "0.4,0.6",
            "--jobs",
            jobs,
            "-o",
            out,
        ]
    };
    ok(&cogcn(&args("1", "a"), cwd));
    ok(&cogcn(&args("2", "b"), cwd));
    assert_eq!(snapshot(&cwd.join("a")), snapshot(&cwd.join("b")));
}

#[test]
fn holdout_runs_one_fold_and_rejects_unknown_speaker() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    synth_small(cwd, "data", "5");
    let stdout = ok(&cogcn(
        &[
            "train",
            "data",
            "--graph",
            "temporal",
            "--no-skip",
            "--no-pre",
            "--z",
            "4",
            "--epochs",
            "2",
            "--k",
            "1",
            "--holdout",
            "spk2",
            "--json",
            "-o",
            "run",
        ],
        cwd,
    ));
    let metrics: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(metrics["folds"].as_array().unwrap().len(), 1);
    assert_eq!(metrics["folds"][0]["speaker"], "spk2");

    let out = cogcn(&["train", "data", "--holdout", "ghost", "-o", "r2"], cwd);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("spk0, spk1, spk2"));
}

#[test]
fn eval_rejects_class_mismatch_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    synth_small(cwd, "data", "6");
    ok(&cogcn(
        &[
            "train",
            "data",
            "--z",
            "4",
            "--epochs",
            "1",
            "--k",
            "1",
            "--gamma",
            "0.5",
            "--holdout",
            "spk0",
            "-o",
            "run",
        ],
        cwd,
    ));
    ok(&cogcn(
        &[
            "synth",
            "--classes",
            "3",
            "--speakers",
            "3",
            "--utts",
            "3",
            "--d",
            "5",
            "--frames-lo",
            "4",
            "--frames-hi",
            "7",
            "-o",
            "other",
        ],
        cwd,
    ));
    let out = cogcn(
        &["eval", "--checkpoint", "run/fold_spk0/checkpoint.json", "other", "--json", "-o", "e.json"],
        cwd,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("class_names mismatch"));
    assert!(out.stdout.is_empty());
    assert!(!cwd.join("e.json").exists());
}

#[test]
fn corrupt_feature_file_is_a_data_error_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    synth_small(cwd, "data", "8");
    fs::write(cwd.join("data/features/spk1_u002.csv"), "frame_index,f0,f1,f2,f3,f4\n0,1,2,3\n").unwrap();
    let out = cogcn(&["train", "data", "-o", "run"], cwd);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("spk1_u002.csv:2") && err.contains("ragged"), "{err}");
}

fn edge_set(json: &str) -> BTreeSet<(u64, u64)> {
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    v["edges"].as_array().unwrap().iter().map(|e| (e[0].as_u64().unwrap(), e[1].as_u64().unwrap())).collect()
}

#[test]
fn graph_export_surfaces_threshold_and_chain_laws() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    synth_small(cwd, "data", "3");
    let tight =
        edge_set(&ok(&cogcn(&["graph", "data", "--utt", "spk0_u003", "--gamma", "0.6", "--json"], cwd)));
    let loose =
        edge_set(&ok(&cogcn(&["graph", "data", "--utt", "spk0_u003", "--gamma", "0.5", "--json"], cwd)));
    assert!(tight.is_subset(&loose));

    ok(&cogcn(&["graph", "data", "--utt", "spk0_u003", "--temporal", "-o", "g"], cwd));
    let nodes = fs::read_to_string(cwd.join("g/nodes.csv")).unwrap();
    let n = nodes.lines().count() - 1;
    let chain = edge_set(&fs::read_to_string(cwd.join("g/graph.json")).unwrap());
    assert_eq!(chain.len(), n - 1);
    let dot = fs::read_to_string(cwd.join("g/graph.dot")).unwrap();
    assert!(dot.starts_with("graph G {") && dot.contains("0 -- 1;"));

    let out = cogcn(&["graph", "data", "--utt", "nope"], cwd);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("spk2_u003"));
}

#[test]
fn diag_params_prints_exact_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| ok(&cogcn(args, tmp.path())).trim().to_string();
    assert_eq!(run(&["diag", "params", "--d", "88", "--z", "128", "--k", "2", "--c", "4"]), "44676");
    assert_eq!(run(&["diag", "params", "--d", "88", "--z", "128", "--k", "3", "--c", "4"]), "61060");
    assert_eq!(
        run(&["diag", "params", "--d", "88", "--z", "128", "--k", "3", "--c", "4", "--no-pre", "--no-skip"]),
        "44548"
    );
    let json: serde_json::Value = serde_json::from_str(&run(&["diag", "params", "--json"])).unwrap();
    assert_eq!(json["param_count"], 44676);
}

#[test]
fn diag_gradcheck_passes_and_json_is_clean() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cogcn(&["diag", "gradcheck", "--seed", "1"], tmp.path());
    let text = ok(&out);
    assert!(text.starts_with("max relative error"));
    let out = cogcn(&["diag", "gradcheck", "--seed", "2", "--json"], tmp.path());
    let v: serde_json::Value = serde_json::from_str(&ok(&out)).unwrap();
    assert_eq!(v["cases"].as_array().unwrap().len(), 20);
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-4);
}
