use std::io::Write;
use std::path::Path;

use textvae::generate::{greedy_decode, interpolate, sample_prior};
use textvae::gradsuite::{self, Scope};
use textvae::train::experiments::{grid, run_grid, Experiment, RunSummary};
use textvae::train::metrics::{curves_csv, read_metrics};
use textvae::train::{data_dir_from_env, Checkpoint, ModelBundle, RunDir, TrainConfig, Trainer};
use textvae::{Error, Result};

use crate::Command;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, seed, out, overrides, resume } => {
            train(config.as_deref(), seed, &out, &overrides, resume.as_deref())
        }
        Command::Experiment { name, out, steps, seeds } => {
            let exp: Experiment = name.parse()?;
            let out = out.unwrap_or_else(|| Path::new("runs").join(&name));
            experiment(exp, &out, steps, &seeds)
        }
        Command::Sample { ckpt, n, seed, max_len } => sample(&ckpt, n, seed, max_len),
        Command::Interpolate { ckpt, steps, seed, pairs, max_len } => interpolate_cmd(&ckpt, steps, seed, pairs, max_len),
        Command::Gradcheck { scope, instances, seed } => gradcheck(scope.parse()?, instances, seed),
        Command::Curves { run } => {
            let rows = read_metrics(&RunDir::open(&run).metrics())?;
            print!("{}", curves_csv(&rows)?);
            Ok(())
        }
    }
}

fn train(config: Option<&Path>, seed: Option<u64>, out: &Path, overrides: &[String], resume: Option<&Path>) -> Result<()> {
    let data_dir = data_dir_from_env();
    let mut trainer = match resume {
        Some(path) => {
            if config.is_some() || !overrides.is_empty() || seed.is_some() {
                return Err(Error::Config("--resume takes its configuration from the checkpoint".into()));
            }
            Trainer::from_checkpoint(&Checkpoint::load(path)?, data_dir.as_deref())?
        }
        None => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            for o in overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
                cfg.set(k.trim(), v.trim())?;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            Trainer::new(cfg, data_dir.as_deref())?
        }
    };
    let dir = match resume {
        Some(path) => RunDir::open(
            path.parent()
                .and_then(Path::parent)
                .ok_or_else(|| Error::Checkpoint("checkpoint is not inside a run directory".into()))?,
        ),
        None => RunDir::create(out, &trainer.config.model.variant.to_string(), &trainer.config)?,
    };
    trainer.run(Some(&dir))?;
    println!("run {}", dir.path.display());
    if let Some(r) = trainer.rows().last() {
        println!(
            "step {} bpc {:.4} kl_bpc {:.4} bound_bpc {:.4}",
            r.step, r.bpc, r.kl_bpc, r.bound_bpc
        );
    }
    Ok(())
}

fn experiment(exp: Experiment, out: &Path, steps: Option<u64>, seeds: &[u64]) -> Result<()> {
    println!(
        "note: desk-scale run on synthetic corpora with reduced model sizes; \
         absolute numbers from full-scale training are out of scope"
    );
    let summaries = run_grid(exp, grid(exp, steps, seeds), out, data_dir_from_env().as_deref())?;
    for s in &summaries {
        println!("{}", summary_line(s));
    }
    if exp == Experiment::Historyless {
        print_historyless_comparison(&summaries);
    }
    println!("summary {}", out.join("summary.csv").display());
    Ok(())
}

fn summary_line(s: &RunSummary) -> String {
    let probe = s.probe_accuracy.map_or_else(String::new, |p| format!(" probe {p:.3}"));
    format!(
        "{:<32} bpc {:.4} kl/char {:.5} bound_bpc {:.4}{probe}",
        s.label, s.last.bpc, s.last.kl_per_char, s.last.bound_bpc
    )
}

fn print_historyless_comparison(summaries: &[RunSummary]) {
    use textvae::model::Variant;

    let mut lens: Vec<usize> = summaries.iter().map(|s| s.config.corpus.window).collect();
    lens.sort_unstable();
    lens.dedup();
    for len in lens {
        let mean = |v: Variant| {
            let xs: Vec<f64> = summaries
                .iter()
                .filter(|s| s.config.corpus.window == len && s.config.model.variant == v)
                .map(|s| s.last.bpc)
                .collect();
            xs.iter().sum::<f64>() / xs.len().max(1) as f64
        };
        let (conv, lstm) = (mean(Variant::ConvDeconv), mean(Variant::LstmVae));
        println!("L={len}: conv_deconv bpc {conv:.4}, lstm_vae bpc {lstm:.4}");
    }
}

fn load(ckpt: &Path) -> Result<ModelBundle> {
    if !ckpt.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no checkpoint at {}", ckpt.display()),
        )));
    }
    ModelBundle::load(ckpt)
}

fn sample(ckpt: &Path, n: usize, seed: u64, max_len: Option<usize>) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let b = load(ckpt)?;
    let z = sample_prior::<f64>(n, b.config.model.latent_dim, seed);
    let max_len = max_len.unwrap_or(b.config.model.seq_len);
    let mut out = std::io::stdout().lock();
    for line in greedy_decode(&b.model, &b.store, &b.vocab, &z, max_len)? {
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn interpolate_cmd(ckpt: &Path, steps: usize, seed: u64, pairs: usize, max_len: Option<usize>) -> Result<()> {
    let b = load(ckpt)?;
    let d = b.config.model.latent_dim;
    let max_len = max_len.unwrap_or(b.config.model.seq_len);
    let z = sample_prior::<f64>(2 * pairs, d, seed);
    let mut out = std::io::stdout().lock();
    for p in 0..pairs {
        if p > 0 {
            writeln!(out)?;
        }
        let (za, zb) = (&z.data()[2 * p * d..(2 * p + 1) * d], &z.data()[(2 * p + 1) * d..(2 * p + 2) * d]);
        for line in interpolate(&b.model, &b.store, &b.vocab, za, zb, steps, max_len)? {
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

fn gradcheck(scope: Scope, instances: usize, seed: u64) -> Result<()> {
    let entries = gradsuite::run(scope, instances, seed)?;
    print!("{}", gradsuite::format_table(&entries));
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Contract(format!("gradient check failed for {}", failed.join(", "))))
    }
}
