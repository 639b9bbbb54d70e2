use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn longner(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_longner"));
    cmd.args(args).env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"
[encoder]
d = 16
heads = 2
layers = 1
window = 4
max_len = 64
lora_rank = 2

[span]
band_halfwidth = 4
channels = 4

[bispa]
blocks = 1

[train]
epochs = 1
batch_size = 2
lr = 0.001

[data]
segment_len = 32
stride = 16
"#;

const SHORT_SPEC: &str = r#"
filler_vocab = 20

[[types]]
name = "short"
min_len = 1
max_len = 3
density = 0.2
"#;

const GOLD: &str = r#"{"id":"d","tokens":["a","b","c","d","e","f"],"entities":[{"start":0,"end":2,"type":"A"}]}
"#;

/// Writes a tiny config, a synthetic train/dev corpus and returns the dir.
fn workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.toml"), TINY).unwrap();
    fs::write(dir.path().join("spec.toml"), SHORT_SPEC).unwrap();
    let spec = dir.path().join("spec.toml");
    for (name, seed, n) in [("train.jsonl", "1", "6"), ("dev.jsonl", "2", "2")] {
        let out = dir.path().join(name);
        ok(&longner(
            &[
                "gen-synth",
                "--spec",
                p(&spec),
                "--out",
                p(&out),
                "--seed",
                seed,
                "--n-docs",
                n,
                "--doc-len",
                "40",
            ],
            &[],
        ));
    }
    dir
}

#[test]
fn help_documents_every_flag() {
    let cases: [(&str, &[&str]); 5] = [
        ("train", &["--config", "--train", "--dev", "--out", "--seed"]),
        ("predict", &["--config", "--checkpoint", "--input", "--out"]),
        ("eval", &["--pred", "--gold"]),
        ("gen-synth", &["--spec", "--out", "--seed", "--n-docs", "--doc-len"]),
        ("bench", &["--config", "--lengths", "--repeats", "--dense-cap", "--seed"]),
    ];
    for (cmd, flags) in cases {
        let help = ok(&longner(&[cmd, "--help"], &[]));
        for f in flags {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn gen_synth_is_byte_identical_per_seed() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&longner(
            &["gen-synth", "--out", p(&out), "--seed", seed, "--n-docs", "3", "--doc-len", "200"],
            &[],
        ));
        fs::read(out).unwrap()
    };
    assert_eq!(run("a.jsonl", "7"), run("b.jsonl", "7"));
    assert_ne!(run("a.jsonl", "7"), run("c.jsonl", "8"));
}

#[test]
fn eval_reports_micro_scores() {
    let dir = TempDir::new().unwrap();
    let gold = dir.path().join("gold.jsonl");
    fs::write(&gold, GOLD).unwrap();
    let micro = |pred: &str| {
        let path = dir.path().join("pred.jsonl");
        fs::write(&path, pred).unwrap();
        let table = ok(&longner(&["eval", "--pred", p(&path), "--gold", p(&gold)], &[]));
        let line = table.lines().find(|l| l.starts_with("micro")).unwrap().to_string();
        line.split_whitespace()
            .skip(1)
            .take(3)
            .map(|v| v.parse::<f64>().unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(micro(GOLD), vec![1.0, 1.0, 1.0]);
    assert_eq!(micro(""), vec![0.0, 0.0, 0.0]);
    let toy = concat!(
        r#"{"doc_id":"d","start":0,"end":2,"type":"A","score":0.9}"#,
        "\n",
        r#"{"doc_id":"d","start":4,"end":5,"type":"A","score":0.8}"#,
        "\n"
    );
    assert_eq!(micro(toy), vec![0.5, 1.0, 0.6667]);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = workspace();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[span]\nband_width = 3\n").unwrap();
    let train = dir.path().join("train.jsonl");
    let out = longner(
        &[
            "train",
            "--config",
            p(&bad),
            "--train",
            p(&train),
            "--out",
            p(&dir.path().join("m")),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml:2"));
    let cfg = dir.path().join("run.toml");
    let out = longner(
        &[
            "train",
            "--config",
            p(&cfg),
            "--train",
            p(&train),
            "--out",
            p(&dir.path().join("m")),
        ],
        &[("LONGNER_SPAN_CHANNELS", "3")],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3() {
    let dir = workspace();
    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, "{\"id\": \"x\", \"tokens\": [\"a\"]}\n{not json\n").unwrap();
    let cfg = dir.path().join("run.toml");
    let out = longner(
        &[
            "train",
            "--config",
            p(&cfg),
            "--train",
            p(&broken),
            "--out",
            p(&dir.path().join("m")),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.jsonl:2"));
    let gold = dir.path().join("gold.jsonl");
    fs::write(&gold, GOLD).unwrap();
    let out = longner(&["eval", "--pred", p(&broken), "--gold", p(&gold)], &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_predict_eval_round_trip_is_deterministic() {
    let dir = workspace();
    let (cfg, train, dev) = (
        dir.path().join("run.toml"),
        dir.path().join("train.jsonl"),
        dir.path().join("dev.jsonl"),
    );
    let run = |tag: &str, seed: &str| {
        let model = dir.path().join(format!("model-{tag}"));
        ok(&longner(
            &[
                "train",
                "--config",
                p(&cfg),
                "--train",
                p(&train),
                "--dev",
                p(&dev),
                "--out",
                p(&model),
                "--seed",
                seed,
            ],
            &[],
        ));
        for f in ["model.json", "vocab.json", "metrics.jsonl"] {
            assert!(model.join(f).exists(), "{f}");
        }
        let pred = dir.path().join(format!("pred-{tag}.jsonl"));
        ok(&longner(
            &[
                "predict",
                "--config",
                p(&cfg),
                "--checkpoint",
                p(&model),
                "--input",
                p(&dev),
                "--out",
                p(&pred),
            ],
            &[],
        ));
        let table = ok(&longner(&["eval", "--pred", p(&pred), "--gold", p(&dev)], &[]));
        assert!(table.contains("short") && table.contains("micro"));
        (fs::read(&pred).unwrap(), fs::read(model.join("metrics.jsonl")).unwrap())
    };
    let a = run("a", "5");
    assert_eq!(a, run("b", "5"));
    let c = run("c", "6");
    assert_ne!(a.1, c.1);
}

#[test]
fn seed_flag_overrides_config_and_environment() {
    let dir = workspace();
    let (cfg, train) = (dir.path().join("run.toml"), dir.path().join("train.jsonl"));
    let metrics = |tag: &str, flag: Option<&str>, env: &[(&str, &str)]| {
        let model = dir.path().join(format!("m-{tag}"));
        let mut args = vec!["train", "--config", p(&cfg), "--train", p(&train), "--out", p(&model)];
        if let Some(s) = flag {
            args.extend(["--seed", s]);
        }
        ok(&longner(&args, env));
        fs::read(model.join("metrics.jsonl")).unwrap()
    };
    let env_seed = metrics("env", None, &[("LONGNER_TRAIN_SEED", "9")]);
    assert_eq!(env_seed, metrics("flag", Some("9"), &[("LONGNER_TRAIN_SEED", "3")]));
    assert_eq!(metrics("default", None, &[]), metrics("explicit", Some("42"), &[]));
}

#[test]
fn bench_prints_the_table() {
    let dir = workspace();
    let cfg = dir.path().join("run.toml");
    let table = ok(&longner(
        &["bench", "--config", p(&cfg), "--lengths", "8,16", "--dense-cap", "8"],
        &[],
    ));
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0]
        .split_whitespace()
        .eq(["L", "w", "m", "variant", "peak_bytes", "wall_seconds", "flop_count"]));
    assert_eq!(lines.len(), 1 + 6 + 3);
    let banded_peak: u64 = lines[1].split_whitespace().nth(4).unwrap().parse().unwrap();
    assert!(banded_peak > 0, "allocation counting is active in the binary");
    let out = longner(&["bench", "--config", p(&cfg), "--lengths", "100"], &[]);
    assert_eq!(out.status.code(), Some(2));
}
