//! Canned experiment grids at desk scale: synthetic corpora and reduced
//! channel counts, so the runs fit on a laptop CPU.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::config::TrainConfig;
use super::metrics::MetricRow;
use super::probe::topic_probe;
use super::trainer::{RunDir, Trainer};
use crate::error::{Error, Result};
use crate::generate::{interpolate, sample_prior};
use crate::model::Variant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    /// Feed-forward vs. LSTM decoders without history across sample lengths.
    Historyless,
    /// KL component as a function of the auxiliary weight.
    KlTradeoff,
    /// KL component against masked-decoder depth and auxiliary weight.
    ReceptiveField,
    /// Hybrid model on a line corpus with samples and interpolations.
    TweetsDemo,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [Self::Historyless, Self::KlTradeoff, Self::ReceptiveField, Self::TweetsDemo];
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Historyless => "historyless",
            Self::KlTradeoff => "kl_tradeoff",
            Self::ReceptiveField => "receptive_field",
            Self::TweetsDemo => "tweets_demo",
        })
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

pub const HISTORYLESS_LENGTHS: [usize; 4] = [10, 20, 30, 50];
pub const HISTORYLESS_STEPS: u64 = 3000;
pub const KL_TRADEOFF_ALPHAS: [f64; 4] = [0.0, 0.1, 0.2, 0.5];
pub const RECEPTIVE_FIELD_LAYERS: [usize; 4] = [1, 2, 3, 5];
pub const RECEPTIVE_FIELD_ALPHAS: [f64; 2] = [0.0, 0.2];
pub const TOPIC_STEPS: u64 = 1500;
pub const TWO_TOPIC_WINDOW: usize = 32;

/// Model and optimizer sizes shared by all desk-scale runs.
pub fn desk_config(variant: Variant) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.model.variant = variant;
    c.model.channels = vec![16, 32, 64];
    c.model.latent_dim = 16;
    c.model.embed_dim = 8;
    c.model.lstm_hidden = 64;
    c.model.bytenet_channels = 32;
    c.train.batch_size = 16;
    c.train.eval_interval = 100;
    c.train.checkpoint_interval = 0;
    c
}

/// Reconstruction-only training without decoder history on the periodic
/// corpus: KL weight pinned to zero and input dropout 1 for the LSTM.
pub fn historyless_config(variant: Variant, len: usize, steps: u64, seed: u64) -> TrainConfig {
    let mut c = desk_config(variant);
    c.model.input_dropout = if variant == Variant::ConvDeconv { 0.0 } else { 1.0 };
    c.corpus.source = "synth:repeat_pattern".into();
    c.corpus.window = len;
    c.train.kl_weight = Some(0.0);
    c.train.alpha = 0.0;
    c.train.max_steps = steps;
    c.train.seed = seed;
    c
}

/// Masked-convolution hybrid on the two-topic corpus.
pub fn topic_config(layers: usize, alpha: f64, steps: u64, seed: u64) -> TrainConfig {
    let mut c = desk_config(Variant::HybridBytenet);
    c.model.bytenet_layers = layers;
    c.corpus.source = "synth:two_topic".into();
    c.corpus.window = TWO_TOPIC_WINDOW;
    c.train.alpha = alpha;
    c.train.anneal_steps = steps / 3;
    c.train.max_steps = steps;
    c.train.seed = seed;
    c
}

#[derive(Clone, Debug)]
pub struct GridPoint {
    pub label: String,
    pub config: TrainConfig,
}

/// Runs of an experiment. `steps` overrides the default budget and `seeds`
/// replicates every point.
pub fn grid(exp: Experiment, steps: Option<u64>, seeds: &[u64]) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &seed in seeds {
        match exp {
            Experiment::Historyless => {
                for len in HISTORYLESS_LENGTHS {
                    for v in [Variant::ConvDeconv, Variant::LstmVae] {
                        out.push(GridPoint {
                            label: format!("{v}-L{len}-s{seed}"),
                            config: historyless_config(v, len, steps.unwrap_or(HISTORYLESS_STEPS), seed),
                        });
                    }
                }
            }
            Experiment::KlTradeoff => {
                for alpha in KL_TRADEOFF_ALPHAS {
                    out.push(GridPoint {
                        label: format!("alpha{alpha}-s{seed}"),
                        config: topic_config(5, alpha, steps.unwrap_or(TOPIC_STEPS), seed),
                    });
                }
            }
            Experiment::ReceptiveField => {
                for n in RECEPTIVE_FIELD_LAYERS {
                    for alpha in RECEPTIVE_FIELD_ALPHAS {
                        out.push(GridPoint {
                            label: format!("N{n}-alpha{alpha}-s{seed}"),
                            config: topic_config(n, alpha, steps.unwrap_or(TOPIC_STEPS), seed),
                        });
                    }
                }
            }
            Experiment::TweetsDemo => {
                let mut c = topic_config(5, 0.2, steps.unwrap_or(TOPIC_STEPS), seed);
                c.model.variant = Variant::HybridLstm;
                c.train.samples = 10;
                out.push(GridPoint { label: format!("demo-s{seed}"), config: c });
            }
        }
    }
    out
}

/// Uses `tweets.txt` from the data directory when present.
fn demo_corpus(point: &mut GridPoint, data_dir: Option<&Path>) -> bool {
    let Some(dir) = data_dir else { return false };
    if !dir.join("tweets.txt").is_file() {
        return false;
    }
    let c = &mut point.config;
    c.corpus.source = "tweets.txt".into();
    c.corpus.lines = true;
    c.corpus.clean_tweets = true;
    c.corpus.window = 63;
    true
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub label: String,
    pub dir: PathBuf,
    pub config: TrainConfig,
    pub last: MetricRow,
    /// Topic probe accuracy on sampled latents (two-topic runs).
    pub probe_accuracy: Option<f64>,
}

pub const PROBE_LINES: usize = 1000;
const PROBE_SEED: u64 = 0x7091c;

/// Trains every grid point into its own run directory under `out` and
/// writes `summary.csv` next to them.
pub fn run_grid(exp: Experiment, points: Vec<GridPoint>, out: &Path, data_dir: Option<&Path>) -> Result<Vec<RunSummary>> {
    std::fs::create_dir_all(out)?;
    let mut summaries = Vec::new();
    for mut point in points {
        let real_tweets = exp == Experiment::TweetsDemo && demo_corpus(&mut point, data_dir);
        let mut trainer = Trainer::new(point.config.clone(), data_dir)?;
        let dir = RunDir::create(out, &point.label, &trainer.config)?;
        trainer.run(Some(&dir))?;
        let probe_accuracy = if trainer.config.corpus.source == "synth:two_topic" {
            Some(topic_probe(&trainer, PROBE_LINES, PROBE_SEED)?.test_accuracy)
        } else {
            None
        };
        if exp == Experiment::TweetsDemo {
            write_interpolations(&trainer, &dir, real_tweets)?;
        }
        let last = trainer
            .rows()
            .last()
            .cloned()
            .ok_or_else(|| Error::Config("run produced no metric rows (max_steps is 0)".into()))?;
        summaries.push(RunSummary { label: point.label, dir: dir.path, config: trainer.config, last, probe_accuracy });
    }
    write_summary(&out.join("summary.csv"), &summaries)?;
    Ok(summaries)
}

fn write_interpolations(trainer: &Trainer, dir: &RunDir, real_tweets: bool) -> Result<()> {
    use std::fmt::Write;

    let z_dim = trainer.config.model.latent_dim;
    let len = trainer.config.model.seq_len;
    let mut text = String::new();
    if !real_tweets {
        text.push_str("# synthetic two-topic corpus (no tweets.txt in the data directory)\n");
    }
    for pair in 0..3u64 {
        let z = sample_prior::<f64>(2, z_dim, trainer.config.train.seed.wrapping_add(100 + pair));
        let lines = interpolate(
            &trainer.model,
            &trainer.store,
            &trainer.data.vocab,
            &z.data()[..z_dim],
            &z.data()[z_dim..],
            5,
            len,
        )?;
        for l in lines {
            writeln!(text, "{l}").expect("string write");
        }
        text.push('\n');
    }
    std::fs::write(dir.path.join("interpolations.txt"), text)?;
    Ok(())
}

pub fn write_summary(path: &Path, rows: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "label",
        "variant",
        "window",
        "layers",
        "alpha",
        "seed",
        "steps",
        "bpc",
        "kl_per_char",
        "kl_bpc",
        "bound_bpc",
        "probe_accuracy",
        "run_dir",
    ])?;
    for r in rows {
        let c = &r.config;
        w.write_record([
            r.label.clone(),
            c.model.variant.to_string(),
            c.corpus.window.to_string(),
            c.model.bytenet_layers.to_string(),
            c.train.alpha.to_string(),
            c.train.seed.to_string(),
            r.last.step.to_string(),
            r.last.bpc.to_string(),
            r.last.kl_per_char.to_string(),
            r.last.kl_bpc.to_string(),
            r.last.bound_bpc.to_string(),
            r.probe_accuracy.map_or_else(String::new, |p| p.to_string()),
            r.dir.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
