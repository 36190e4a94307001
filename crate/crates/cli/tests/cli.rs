use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn avgout(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avgout"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\nstderr:\n{}",
        o.status.code(),
        stderr(&o)
    );
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = "embedding_dim = 8
encoder_hidden = 8
decoder_hidden = 16
attention_dim = 8
batch_size = 16
epochs = 1
learning_rate = 0.01
max_target_len = 8
sample_max_len = 8
";

/// Synthesizes a corpus, builds its vocabulary and trains `objective`.
fn trained(dir: &Path, objective: &str, extra: &str) -> std::path::PathBuf {
    let corpus = dir.join("corpus.tsv");
    let vocab = dir.join("vocab.txt");
    ok(avgout(&[
        "synth",
        "--out",
        p(&corpus),
        "--num-examples",
        "64",
        "--seed",
        "3",
    ]));
    ok(avgout(&[
        "build-vocab",
        "--corpus",
        p(&corpus),
        "--out",
        p(&vocab),
    ]));
    let cfg = dir.join(format!("{objective}.cfg"));
    fs::write(&cfg, format!("{TINY}{extra}")).unwrap();
    let out = dir.join(objective);
    ok(avgout(&[
        "train",
        "--corpus",
        p(&corpus),
        "--vocab",
        p(&vocab),
        "--objective",
        objective,
        "--config",
        p(&cfg),
        "--out",
        p(&out),
    ]));
    out
}

#[test]
fn synth_and_build_vocab_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    let vocab = dir.path().join("v.txt");
    ok(avgout(&[
        "synth",
        "--out",
        p(&corpus),
        "--num-examples",
        "30",
        "--dull-fraction",
        "1",
    ]));
    let text = fs::read_to_string(&corpus).unwrap();
    assert_eq!(text.lines().count(), 30);
    assert!(text
        .lines()
        .all(|l| l.split('\t').nth(1) == Some("i do not know")));
    let o = ok(avgout(&[
        "build-vocab",
        "--corpus",
        p(&corpus),
        "--out",
        p(&vocab),
    ]));
    assert!(stdout(&o).contains("hash"));
    let tokens = fs::read_to_string(&vocab).unwrap();
    assert!(tokens
        .lines()
        .take(5)
        .eq(["<pad>", "<unk>", "<bos>", "<eos>", "<div>"]));
    assert!(tokens.lines().any(|t| t == "know"));
}

#[test]
fn train_generate_evaluate_score() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), "minavgout", "alpha = 100\n");
    for f in [
        "params.bin",
        "optimizer.bin",
        "manifest.json",
        "vocab.txt",
        "avgout.json",
        "train_log.csv",
    ] {
        assert!(ckpt.join(f).is_file(), "missing {f}");
    }

    let source = dir.path().join("src.txt");
    fs::write(&source, "how was your day\nwhat do you like\n\n").unwrap();
    let gen = |out: &Path| {
        ok(avgout(&[
            "generate",
            "--checkpoint",
            p(&ckpt),
            "--source",
            p(&source),
            "--out",
            p(out),
        ]));
        fs::read_to_string(out).unwrap()
    };
    let a = gen(&dir.path().join("a.txt"));
    let b = gen(&dir.path().join("b.txt"));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 3);
    assert_eq!(a.lines().nth(2), Some(""));

    let report = dir.path().join("report.json");
    let curves = dir.path().join("curves");
    let o = ok(avgout(&[
        "evaluate",
        "--responses",
        p(&dir.path().join("a.txt")),
        "--report",
        p(&report),
        "--out",
        p(&curves),
    ]));
    assert!(stdout(&o).contains("iAUC-avg"));
    assert!(report.is_file());
    for g in ["sentence", "unigram", "bigram", "trigram"] {
        let csv = fs::read_to_string(curves.join(format!("diversity32_{g}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("rank,frequency"));
        assert_eq!(lines.count(), 32, "{g}");
    }

    let o = ok(avgout(&[
        "score",
        "--avgout",
        p(&ckpt.join("avgout.json")),
        "--tokens",
        "i do not know",
    ]));
    let out = stdout(&o);
    let bd: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("B_d = "))
        .expect("B_d line")
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&bd));
    assert!(out.contains("N_G = 4"));
}

#[test]
fn empty_source_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), "ml", "");
    let source = dir.path().join("empty.txt");
    fs::write(&source, "").unwrap();
    let o = ok(avgout(&[
        "generate",
        "--checkpoint",
        p(&ckpt),
        "--source",
        p(&source),
    ]));
    assert_eq!(stdout(&o), "");
}

#[test]
fn lft_score_requires_lft_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), "ml", "");
    let source = dir.path().join("s.txt");
    fs::write(&source, "hello there\n").unwrap();
    let o = avgout(&[
        "generate",
        "--checkpoint",
        p(&ckpt),
        "--source",
        p(&source),
        "--lft-score",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lft"));

    let lft = trained(dir.path(), "lft", "");
    let o = ok(avgout(&[
        "generate",
        "--checkpoint",
        p(&lft),
        "--source",
        p(&source),
        "--lft-score",
        "0.5",
    ]));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn missing_objective_weight_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "epochs = 1\n").unwrap();
    let o = avgout(&[
        "train",
        "--corpus",
        "unused.tsv",
        "--vocab",
        "unused.txt",
        "--objective",
        "hybrid",
        "--config",
        p(&cfg),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hybrid_shared"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(
        avgout(&["generate", "--no-such-flag"]).status.code(),
        Some(1)
    );
    assert_eq!(avgout(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        avgout(&["train", "--corpus", "x", "--objective", "nope"])
            .status
            .code(),
        Some(1)
    );
    assert!(avgout(&["--help"]).status.success());
}

#[test]
fn missing_input_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = avgout(&[
        "build-vocab",
        "--corpus",
        p(&dir.path().join("absent.tsv")),
        "--out",
        p(&dir.path().join("v")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.tsv"));
}

#[test]
fn resolved_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    let o = ok(avgout(&[
        "synth",
        "--out",
        p(&corpus),
        "--num-examples",
        "5",
        "--seed",
        "42",
    ]));
    let err = stderr(&o);
    assert!(err.contains("num_examples = 5"));
    assert!(err.contains("seed = 42"));
    assert!(err.contains("dull_fraction = 0.8"));
}
