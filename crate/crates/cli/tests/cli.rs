use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
vocab_min_count = 1

[model]
embed_dim = 6
lstm_hidden = 4
max_len = 32
epochs = 1
head_epochs = 3

[split]
n_repeats = 3
per_class_test = 1

[synth]
n_stories = 120
n_tweets = 80
n_subjects = 3
"#;

fn affectlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affectlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(affectlab(&["train"]).status.code(), Some(2));
    assert_eq!(affectlab(&["synth", "--out", "x", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        affectlab(&["synth", "--out", "x", "--jobs", "0"]).status.code(),
        Some(2)
    );
    assert_eq!(affectlab(&["pipeline", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn version_lists_file_formats() {
    let o = affectlab(&["--version"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for tag in ["affectlab-ckpt-v1", "rdm v1", "features v1"] {
        assert!(text.contains(tag), "{text}");
    }
}

#[test]
fn missing_feature_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = affectlab(&["classify", "--features", p(&missing)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(p(&missing)), "{}", stderr(&o));
}

#[test]
fn malformed_config_is_a_data_error_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[model]\nembed = 3\n").unwrap();
    let o = affectlab(&["synth", "--config", p(&cfg), "--out", p(&dir.path().join("w"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run.toml"), "{}", stderr(&o));
}

#[test]
fn rsa_on_a_noiseless_world_gives_perfect_tau() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!("{SMALL}appraisal_noise_sd = 0.0\nneural_noise_sd = 0.0\n"),
    )
    .unwrap();
    let world = dir.path().join("world");
    assert!(affectlab(&["synth", "--config", p(&cfg), "--out", p(&world)])
        .status
        .success());
    let o = affectlab(&[
        "rsa",
        "--config",
        p(&cfg),
        "--neural",
        p(&world.join("neural")),
        "--stories",
        p(&world.join("stories.jsonl")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 4, "{text}");
    for row in rows {
        let tau: f64 = row.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert_eq!(tau, 1.0, "{row}");
    }
}

#[test]
fn subcommands_chain_from_synth_to_rsa() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let c = p(&cfg);
    let world = d.join("world");
    let stories = world.join("stories.jsonl");
    let tweets = world.join("tweets.jsonl");
    let ok = |args: &[&str]| {
        let o = affectlab(args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };

    ok(&["synth", "--config", c, "--out", p(&world)]);
    let pre = d.join("pre.json");
    let o = ok(&[
        "pretrain",
        "--config",
        c,
        "--tweets",
        p(&tweets),
        "--stories",
        p(&stories),
        "--out",
        p(&pre),
    ]);
    assert!(stdout(&o).contains("emoji cross-entropy"));
    let full = d.join("full.json");
    ok(&[
        "multitask",
        "--config",
        c,
        "--checkpoint",
        p(&pre),
        "--stories",
        p(&stories),
        "--tweets",
        p(&tweets),
        "--out",
        p(&full),
    ]);

    let feats = d.join("appraisal.csv");
    ok(&[
        "extract",
        "--config",
        c,
        "--checkpoint",
        p(&full),
        "--stories",
        p(&stories),
        "--mode",
        "appraisal_layer",
        "--out",
        p(&feats),
    ]);
    let needs_heads = affectlab(&[
        "extract",
        "--config",
        c,
        "--checkpoint",
        p(&pre),
        "--stories",
        p(&stories),
        "--mode",
        "appraisal_layer",
        "--out",
        p(&d.join("x.csv")),
    ]);
    assert_eq!(needs_heads.status.code(), Some(1));

    let table = d.join("table1.txt");
    let o = ok(&[
        "classify",
        "--config",
        c,
        "--features",
        p(&feats),
        "--condition",
        "with-appraisals",
        "--stories",
        p(&stories),
        "--out",
        p(&table),
    ]);
    assert!(stdout(&o).contains("appraisal_layer"));
    let written = std::fs::read_to_string(&table).unwrap();
    assert!(written.starts_with("# affectlab table1"));
    assert!(written.contains("# seed = 3"));
    assert!(d.join("table1.json").is_file());
    let without_ratings = affectlab(&[
        "classify",
        "--config",
        c,
        "--features",
        p(&feats),
        "--condition",
        "with-appraisals",
    ]);
    assert_eq!(without_ratings.status.code(), Some(1));

    let o = ok(&[
        "rsa",
        "--config",
        c,
        "--neural",
        p(&world.join("neural")),
        "--features",
        p(&feats),
    ]);
    assert!(stdout(&o).contains("ToM"));
}

#[test]
fn pipeline_on_a_data_directory_writes_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let world = d.join("world");
    assert!(affectlab(&["synth", "--config", p(&cfg), "--out", p(&world)])
        .status
        .success());
    let out = d.join("reports");
    let o = affectlab(&["pipeline", "--config", p(&cfg), "--data", p(&world), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "table1.txt",
        "table1.json",
        "table2.txt",
        "table2.json",
        "model.json",
        "training.json",
        "rdm/appraisals.txt",
        "rdm/appraisals.ppm",
        "rdm/concat_plus_appraisal.ppm",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let table2 = std::fs::read_to_string(out.join("table2.txt")).unwrap();
    assert!(table2.contains("# seed = 3"));
    for region in ["DMPFC", "MMPFC", "RTPJ", "ToM", "truth"] {
        assert!(table2.lines().any(|l| l.starts_with(region)), "{region}: {table2}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("table1.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 3);
    assert_eq!(json["config"]["model"]["embed_dim"], 6);
}
