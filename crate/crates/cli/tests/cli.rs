use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn textvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textvae"))
        .args(args)
        .env_remove("TEXTVAE_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
model.variant = "hybrid_lstm"
model.channels = [4, 8]
model.latent_dim = 4
model.embed_dim = 4
model.lstm_hidden = 8
corpus.window = 16
corpus.synth_length = 2000
train.batch_size = 4
train.max_steps = 20
train.eval_interval = 10
train.eval_batches = 1
train.checkpoint_interval = 10
train.samples = 3
"#;

fn train_tiny(dir: &Path) -> PathBuf {
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.join("runs");
    let o = textvae(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("run ")).unwrap().to_string();
    PathBuf::from(line.trim_start_matches("run "))
}

#[test]
fn gradcheck_ops_prints_table() {
    let o = textvae(&["gradcheck", "--scope", "ops", "--instances", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("case"));
    assert!(out.contains("softmax_cross_entropy"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn usage_errors_exit_one_on_a_single_line() {
    for args in [&["frobnicate"][..], &["sample"][..], &["gradcheck", "--scope", "everything"][..]] {
        let o = textvae(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err = stderr(&o);
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("error: kind=usage msg="), "{err}");
    }
}

#[test]
fn bad_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "train.alpah = 0.3\n").unwrap();
    let o = textvae(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kind=config"));
    assert!(stderr(&o).contains("train.alpah"));
}

#[test]
fn missing_checkpoint_is_a_file_error() {
    let o = textvae(&["sample", "--ckpt", "/definitely/not/here.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: kind=io"), "{}", stderr(&o));
}

#[test]
fn train_sample_interpolate_curves() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path());
    for f in ["config.toml", "metrics.csv", "samples.txt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let ckpt = run.join("checkpoints").join("step-00000020.ckpt");
    let ck = ckpt.to_str().unwrap();

    let a = textvae(&["sample", "--ckpt", ck, "--n", "5", "--seed", "7"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a).lines().count(), 5);
    let b = textvae(&["sample", "--ckpt", ck, "--n", "5", "--seed", "7"]);
    assert_eq!(a.stdout, b.stdout);

    let i = textvae(&["interpolate", "--ckpt", ck, "--steps", "4", "--pairs", "2", "--seed", "1"]);
    assert!(i.status.success(), "{}", stderr(&i));
    let text = stdout(&i);
    // two blocks of four lines, separated by one blank line
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[4], "");

    let c = textvae(&["curves", "--run", run.to_str().unwrap()]);
    assert!(c.status.success(), "{}", stderr(&c));
    let curves = stdout(&c);
    assert!(curves.starts_with("step,bpc,bpc_monotone"));
    assert_eq!(curves.lines().count(), 3);
}

#[test]
fn training_is_reproducible_and_resumable() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (r1, r2) = (train_tiny(d1.path()), train_tiny(d2.path()));
    assert_eq!(r1.file_name(), r2.file_name());
    let strip = |p: &Path| {
        let text = std::fs::read_to_string(p.join("metrics.csv")).unwrap();
        textvae::train::metrics::strip_wallclock(&text).unwrap()
    };
    assert_eq!(strip(&r1), strip(&r2));
    assert_eq!(std::fs::read(r1.join("samples.txt")).unwrap(), std::fs::read(r2.join("samples.txt")).unwrap());

    // resume the second run from its midpoint and compare
    std::fs::remove_file(r2.join("checkpoints").join("step-00000020.ckpt")).unwrap();
    let mid = r2.join("checkpoints").join("step-00000010.ckpt");
    let o = textvae(&["train", "--resume", mid.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(strip(&r1), strip(&r2));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("runs");
    let o = textvae(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "train.max_steps=10",
        "--set",
        "train.alpha=0.7",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = stdout(&o).lines().find(|l| l.starts_with("run ")).unwrap().trim_start_matches("run ").to_string();
    let snap = std::fs::read_to_string(Path::new(&run).join("config.toml")).unwrap();
    assert!(snap.contains("max_steps = 10"));
    assert!(snap.contains("alpha = 0.7"));
}
