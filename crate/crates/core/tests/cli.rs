use std::path::Path;
use std::process::{Command, Output};

use persona_vq::reward::Model;

const SMALL_WORLD: &[&str] = &[
    "--world.train-users",
    "12",
    "--world.validation-users",
    "3",
    "--world.test-users",
    "6",
    "--world.history-min",
    "3",
    "--world.history-max",
    "12",
    "--world.current-per-user",
    "5",
    "--world.episode-dim",
    "16",
];

const SMALL_TRAIN: &[&str] = &[
    "--train.codebook-size",
    "6",
    "--train.hidden-dim",
    "6",
    "--train.epochs",
    "2",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_persona-vq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL_WORLD);
    args.extend_from_slice(extra);
    run(&args)
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--paths.data-dir",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL_TRAIN);
    args.extend_from_slice(extra);
    run(&args)
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn help_lists_every_config_key() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for key in persona_vq::config::RunConfig::keys() {
        let flag = format!("--{}", persona_vq::config::flag_for_key(&key));
        assert!(text.contains(&flag), "{flag} missing from --help");
    }
    for flag in ["--config", "--seed", "--out", "--threads", "--overwrite"] {
        assert!(text.contains(flag));
    }
}

#[test]
fn simulate_writes_all_files_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&simulate(&a, &["--seed", "3"])), 0);
    assert_eq!(code(&simulate(&b, &["--seed", "3"])), 0);
    for f in [
        "train.jsonl",
        "validation.jsonl",
        "test.jsonl",
        "episodes.epem",
        "responses.epem",
        "truth.epgt",
        "config.json",
    ] {
        assert!(a.join(f).is_file(), "{f}");
    }
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));

    let o = simulate(&a, &["--seed", "3"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let o = simulate(&a, &["--seed", "3", "--overwrite"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));

    let o = run(&["check", "--paths.data-dir", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let o = simulate(&tmp.path().join("x"), &["--world.response-dim", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("response_dim"), "{}", stderr(&o));

    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"learning_rat": 0.1}}"#).unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("y").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));

    let o = run(&["simulate", "--no-such-flag"]);
    assert_eq!(code(&o), 2);
    let o = run(&["train", "--out", tmp.path().join("z").to_str().unwrap()]);
    assert_eq!(code(&o), 2, "missing data dir is a config error");
}

#[test]
fn config_file_and_flags_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"world": {"train_users": 5, "seed": 9}}"#).unwrap();
    let out = tmp.path().join("w");
    let mut args = vec!["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL_WORLD);
    args.extend_from_slice(&["--world.train-users", "4"]);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let echo: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["world"]["train_users"], 4);
    assert_eq!(echo["world"]["seed"], 9);
    let train = std::fs::read_to_string(out.join("train.jsonl")).unwrap();
    let users: std::collections::BTreeSet<String> = train
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["user_id"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(users.len(), 4);
}

#[test]
fn train_eval_inspect_round() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&simulate(&data, &[])), 0);

    // Zero epochs: the checkpoint is the initialization.
    let init_dir = tmp.path().join("init");
    let o = train(&data, &init_dir, &["--train.epochs", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let init = Model::load(&init_dir.join("checkpoint.epck")).unwrap();
    let splits = persona_vq::cli::load_splits(&data).unwrap();
    let mut cfg = persona_vq::reward::TrainConfig::default();
    cfg.codebook_size = 6;
    cfg.hidden_dim = 6;
    cfg.epochs = 0;
    assert_eq!(init, Model::init(&splits[0], &cfg).unwrap());

    // Inspect the fresh codebook on the training split: every code that
    // k-means placed on data is used.
    let o = run(&[
        "inspect",
        "--paths.checkpoint",
        init_dir.join("checkpoint.epck").to_str().unwrap(),
        "--paths.data-dir",
        data.to_str().unwrap(),
        "--eval.split",
        "train",
        "--out",
        tmp.path().join("inspect").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("inspect/inspect.json")).unwrap()).unwrap();
    let usage = report["usage"].as_array().unwrap();
    assert_eq!(usage.len(), 6);
    assert!(usage.iter().all(|u| u.as_u64().unwrap() > 0), "{usage:?}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("user codes"));

    // Two epochs, then one more by resuming.
    let two = tmp.path().join("two");
    assert_eq!(code(&train(&data, &two, &[])), 0);
    let three = tmp.path().join("three");
    let o = train(
        &data,
        &three,
        &["--train.epochs", "1", "--paths.resume", two.join("checkpoint.epck").to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let resumed = Model::load(&three.join("checkpoint.epck")).unwrap();
    let epochs: Vec<usize> = resumed.metadata.history.iter().map(|m| m.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3]);
    let log = std::fs::read_to_string(three.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().next().unwrap().contains("\"val_acc\""));

    // Eval twice: identical reports.
    let ck = two.join("checkpoint.epck");
    let eval = |out: &Path| {
        run(&[
            "eval",
            "--paths.checkpoint",
            ck.to_str().unwrap(),
            "--paths.data-dir",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
    };
    let e1 = tmp.path().join("e1");
    let e2 = tmp.path().join("e2");
    assert_eq!(code(&eval(&e1)), 0);
    assert_eq!(code(&eval(&e2)), 0);
    assert_eq!(read_dir_bytes(&e1), read_dir_bytes(&e2));
    assert_eq!(code(&eval(&e1)), 4);

    // A checkpoint trained on other dimensions is a data error.
    let other = tmp.path().join("other");
    assert_eq!(code(&simulate(&other, &["--world.response-dim", "5"])), 0);
    let o = run(&[
        "eval",
        "--paths.checkpoint",
        ck.to_str().unwrap(),
        "--paths.data-dir",
        other.to_str().unwrap(),
        "--out",
        tmp.path().join("e3").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    // A corrupted checkpoint is a data error too.
    let broken = tmp.path().join("broken.epck");
    let mut bytes = std::fs::read(&ck).unwrap();
    bytes[0] = b'X';
    std::fs::write(&broken, bytes).unwrap();
    let o = run(&[
        "eval",
        "--paths.checkpoint",
        broken.to_str().unwrap(),
        "--paths.data-dir",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("e4").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn ablate_and_sweep_emit_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&simulate(&data, &[])), 0);
    let out = tmp.path().join("ablate");
    let mut args = vec![
        "ablate",
        "--paths.data-dir",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--eval.seeds",
        "1,2",
        "--threads",
        "2",
    ];
    args.extend_from_slice(SMALL_TRAIN);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(out.join("ablation.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let labels: Vec<&str> = lines.iter().map(|l| l["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["full", "no_vq", "no_abduction", "persona_free"]);
    for l in &lines {
        let seeds: Vec<u64> = l["seeds"].as_array().unwrap().iter().map(|s| s["seed"].as_u64().unwrap()).collect();
        assert_eq!(seeds, [1, 2]);
    }

    let out = tmp.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--paths.data-dir",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--eval.sweep-sizes",
        "2,4",
    ];
    args.extend_from_slice(SMALL_TRAIN);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = std::fs::read_to_string(out.join("sweep.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 2);
}
