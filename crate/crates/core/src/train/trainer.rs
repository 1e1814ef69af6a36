//! The training loop, evaluation and checkpoint restore.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::{f64_from_hex, f64_to_hex, Checkpoint};
use super::config::TrainConfig;
use super::metrics::{write_metrics, MetricRow};
use crate::data::vocab::DROP;
use crate::data::{Batch, Dataset, Split, Vocab};
use crate::error::{Error, Result};
use crate::generate::{greedy_decode, sample_prior};
use crate::model::{LossBreakdown, ModelSpec, TextVae};
use crate::nn::{Mode, ParamStore, Session};
use crate::optim::{clip_global_norm, kl_weight_at, lr_at, Adam};
use crate::tensor::Tensor;

/// Environment variable naming the base directory for relative corpus paths.
pub const DATA_DIR_ENV: &str = "TEXTVAE_DATA_DIR";

const EVAL_SALT: u64 = 0x0e7a_15a1_7000_0001;
const SAMPLE_SALT: u64 = 0x5a3b_1e00_0000_0002;

pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

/// RNG for training step `step`; a resumed run reproduces it from the step
/// number alone.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_add(1));
    rng
}

fn normal_noise(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(&[rows, cols], |_| StandardNormal.sample(rng))
}

/// Replaces each history token with DROP with probability `p`.
pub fn apply_input_dropout<R: Rng + ?Sized>(history: &mut [usize], p: f64, rng: &mut R) {
    if p <= 0.0 {
        return;
    }
    for h in history.iter_mut() {
        if p >= 1.0 || rng.random_bool(p) {
            *h = DROP;
        }
    }
}

/// Averages of the loss terms over evaluation batches.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalStats {
    pub rec_nll: f64,
    pub kl: f64,
    pub aux_nll: f64,
    pub tokens_per_seq: f64,
}

impl EvalStats {
    pub fn bpc(&self) -> f64 {
        self.rec_nll / (self.tokens_per_seq * std::f64::consts::LN_2)
    }

    pub fn kl_bpc(&self) -> f64 {
        self.kl / (self.tokens_per_seq * std::f64::consts::LN_2)
    }

    pub fn kl_per_char(&self) -> f64 {
        self.kl / self.tokens_per_seq
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Accumulator {
    rec: f64,
    kl: f64,
    aux: f64,
    loss: f64,
    count: u64,
}

impl Accumulator {
    fn add(&mut self, b: &LossBreakdown) {
        self.rec += b.rec_nll;
        self.kl += b.kl;
        self.aux += b.aux_nll;
        self.loss += b.j_hybrid;
        self.count += 1;
    }

    fn mean(&self, x: f64) -> f64 {
        x / self.count.max(1) as f64
    }
}

/// Files of one training run.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// `base/<label>-<config hash>`, created with a config snapshot.
    pub fn create(base: &Path, label: &str, config: &TrainConfig) -> Result<Self> {
        let path = base.join(format!("{label}-{:016x}", config.hash()));
        std::fs::create_dir_all(path.join("checkpoints"))?;
        std::fs::write(path.join("config.toml"), config.to_toml())?;
        Ok(Self { path })
    }

    pub fn open(path: &Path) -> Self {
        Self { path: path.to_path_buf() }
    }

    pub fn metrics(&self) -> PathBuf {
        self.path.join("metrics.csv")
    }

    pub fn samples(&self) -> PathBuf {
        self.path.join("samples.txt")
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.path.join("checkpoints").join(format!("step-{step:08}.ckpt"))
    }

    /// Checkpoint with the highest step number.
    pub fn latest_checkpoint(&self) -> Option<PathBuf> {
        let mut found: Vec<PathBuf> = std::fs::read_dir(self.path.join("checkpoints"))
            .ok()?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
            .collect();
        found.sort();
        found.pop()
    }
}

/// A model restored for inference.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub model: TextVae,
    pub store: ParamStore<f64>,
}

impl ModelBundle {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::from_toml(ckpt.meta("config")?)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let vocab = Vocab::from_chars(ckpt.meta("vocab")?.chars().collect());
        if vocab.len() != config.model.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                config.model.vocab_size
            )));
        }
        let (model, mut store) = TextVae::build(config.model.clone(), config.train.seed)?;
        load_params(&mut store, ckpt, "param/")?;
        Ok(Self { config, vocab, model, store })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Copies `prefix + name` tensors into `store`, failing without changes if
/// any tensor is missing, unexpected or misshapen.
fn load_params(store: &mut ParamStore<f64>, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
    let mut problems = Vec::new();
    for e in store.entries() {
        match ckpt.tensor(&format!("{prefix}{}", e.name)) {
            None => problems.push(format!("{} missing", e.name)),
            Some(t) if t.shape() != e.value.shape() => {
                problems.push(format!("{} has shape {:?}, expected {:?}", e.name, t.shape(), e.value.shape()))
            }
            Some(_) => {}
        }
    }
    for (name, _) in &ckpt.tensors {
        if let Some(n) = name.strip_prefix(prefix) {
            if store.find(n).is_none() {
                problems.push(format!("{n} unexpected"));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Checkpoint(format!("tensor mismatch: {}", problems.join("; "))));
    }
    for e in store.entries_mut() {
        e.value = ckpt.tensor(&format!("{prefix}{}", e.name)).expect("checked").clone();
    }
    Ok(())
}

pub struct Trainer {
    /// Resolved configuration (vocabulary size and length filled in).
    pub config: TrainConfig,
    pub data: Dataset,
    pub model: TextVae,
    pub store: ParamStore<f64>,
    pub adam: Adam<f64>,
    /// Optimizer steps taken.
    pub step: u64,
    rows: Vec<MetricRow>,
    acc: Accumulator,
    elapsed_before: f64,
    started: Instant,
}

impl Trainer {
    /// Loads the corpus and initializes the model; relative corpus paths
    /// resolve against `data_dir`.
    pub fn new(config: TrainConfig, data_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let mut config = config;
        let data = Dataset::load(&config.corpus, config.model.length_multiple(), data_dir)?;
        resolve_model(&mut config.model, &data)?;
        let (model, store) = TextVae::build(config.model.clone(), config.train.seed)?;
        let adam = Adam::new(&store);
        Ok(Self {
            config,
            data,
            model,
            store,
            adam,
            step: 0,
            rows: Vec::new(),
            acc: Accumulator::default(),
            elapsed_before: 0.0,
            started: Instant::now(),
        })
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn kl_weight(&self, step: u64) -> f64 {
        self.config
            .train
            .kl_weight
            .unwrap_or_else(|| kl_weight_at(step, self.config.train.anneal_steps))
    }

    pub fn lr(&self, step: u64) -> f64 {
        let t = &self.config.train;
        lr_at(step, t.lr, t.lr_decay, t.lr_decay_every)
    }

    /// One optimizer step. A non-finite loss or gradient leaves the
    /// parameters untouched and returns [`Error::NonFinite`].
    pub fn train_step(&mut self) -> Result<LossBreakdown> {
        let step = self.step;
        let t = &self.config.train;
        let mut rng = step_rng(t.seed, step);
        let batch = self.data.sample_batch(Split::Train, t.batch_size, &mut rng)?;
        let mut history = batch.history();
        if self.config.model.input_dropout < 1.0 {
            apply_input_dropout(&mut history, self.config.model.input_dropout, &mut rng);
        }
        let noise = normal_noise(t.batch_size, self.config.model.latent_dim, &mut rng);
        let kl_weight = self.kl_weight(step);

        let mut s = Session::new(&self.store, Mode::Train);
        let out = self.model.forward(&mut s, &batch, &history, noise, kl_weight, t.alpha)?;
        if !out.breakdown.j_hybrid.is_finite() {
            return Err(Error::NonFinite(format!("loss is {} at step {}", out.breakdown.j_hybrid, step + 1)));
        }
        s.tape.backward(out.loss)?;
        let mut grads = s.param_grads();
        let stats = s.into_stat_updates();

        if let Some(c) = self.config.clip_norm() {
            clip_global_norm(&mut grads, c);
        }
        let lr = self.lr(step);
        self.adam.step(&mut self.store, &grads, lr)?;
        self.store.apply_stat_updates(stats);
        self.step += 1;
        self.acc.add(&out.breakdown);
        Ok(out.breakdown)
    }

    /// Fixed evaluation batches from `split`, identical at every call.
    pub fn eval_batches(&self, split: Split) -> Result<Vec<(Batch, Tensor<f64>)>> {
        let t = &self.config.train;
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed ^ EVAL_SALT);
        (0..t.eval_batches)
            .map(|_| {
                let b = self.data.sample_batch(split, t.batch_size, &mut rng)?;
                let noise = normal_noise(t.batch_size, self.config.model.latent_dim, &mut rng);
                Ok((b, noise))
            })
            .collect()
    }

    /// Loss terms in eval mode on the fixed validation batches.
    pub fn evaluate(&self) -> Result<EvalStats> {
        let batches = self.eval_batches(Split::Valid)?;
        let mut sum = EvalStats::default();
        let kl_weight = self.kl_weight(self.step);
        for (b, noise) in &batches {
            let mut s = Session::new(&self.store, Mode::Eval);
            let out = self
                .model
                .forward(&mut s, b, &b.history(), noise.clone(), kl_weight, self.config.train.alpha)?;
            sum.rec_nll += out.breakdown.rec_nll;
            sum.kl += out.breakdown.kl;
            sum.aux_nll += out.breakdown.aux_nll;
            sum.tokens_per_seq += out.breakdown.tokens_per_seq;
        }
        let n = batches.len() as f64;
        Ok(EvalStats {
            rec_nll: sum.rec_nll / n,
            kl: sum.kl / n,
            aux_nll: sum.aux_nll / n,
            tokens_per_seq: sum.tokens_per_seq / n,
        })
    }

    fn wallclock(&self) -> f64 {
        self.elapsed_before + self.started.elapsed().as_secs_f64()
    }

    fn metric_row(&mut self) -> Result<MetricRow> {
        let ev = self.evaluate()?;
        let a = self.acc;
        let row = MetricRow {
            step: self.step,
            kl_weight: self.kl_weight(self.step.saturating_sub(1)),
            lr: self.lr(self.step.saturating_sub(1)),
            train_rec_nll: a.mean(a.rec),
            train_kl: a.mean(a.kl),
            train_aux: a.mean(a.aux),
            train_loss: a.mean(a.loss),
            valid_rec_nll: ev.rec_nll,
            valid_kl: ev.kl,
            valid_aux: ev.aux_nll,
            bpc: ev.bpc(),
            kl_bpc: ev.kl_bpc(),
            kl_per_char: ev.kl_per_char(),
            bound_bpc: ev.bpc() + ev.kl_bpc(),
            wallclock: self.wallclock(),
        };
        self.acc = Accumulator::default();
        Ok(row)
    }

    /// Trains until `until` steps (capped at `max_steps`), emitting a metric
    /// row every eval interval and, with a run directory, keeping
    /// `metrics.csv` and checkpoints current. On a non-finite loss the last
    /// written checkpoint stays as it was.
    pub fn run_until(&mut self, until: u64, out: Option<&RunDir>) -> Result<()> {
        let until = until.min(self.config.train.max_steps);
        let interval = self.config.train.eval_interval;
        let ckpt_every = self.config.train.checkpoint_interval;
        if let Some(dir) = out {
            if dir.latest_checkpoint().is_none() {
                self.checkpoint().save(&dir.checkpoint(self.step))?;
            }
        }
        while self.step < until {
            self.train_step()?;
            let at_end = self.step == self.config.train.max_steps;
            if self.step.is_multiple_of(interval) || at_end {
                let row = self.metric_row()?;
                self.rows.push(row);
                if let Some(dir) = out {
                    write_metrics(&dir.metrics(), &self.rows)?;
                }
            }
            if let Some(dir) = out {
                if (ckpt_every > 0 && self.step.is_multiple_of(ckpt_every)) || at_end {
                    self.checkpoint().save(&dir.checkpoint(self.step))?;
                }
            }
        }
        Ok(())
    }

    /// Runs to `max_steps` and writes prior samples.
    pub fn run(&mut self, out: Option<&RunDir>) -> Result<()> {
        self.run_until(self.config.train.max_steps, out)?;
        if let Some(dir) = out {
            let samples = self.prior_samples(self.config.train.samples)?;
            std::fs::write(dir.samples(), samples.join("\n") + "\n")?;
        }
        Ok(())
    }

    pub fn prior_samples(&self, count: usize) -> Result<Vec<String>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let z = sample_prior(count, self.config.model.latent_dim, self.config.train.seed ^ SAMPLE_SALT);
        greedy_decode(&self.model, &self.store, &self.data.vocab, &z, self.config.model.seq_len)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.set_meta("config", self.config.to_toml());
        c.set_meta("vocab", self.data.vocab.to_string_repr());
        c.set_meta("step", self.step.to_string());
        c.set_meta("adam_t", self.adam.t.to_string());
        for (k, v) in [
            ("acc_rec", self.acc.rec),
            ("acc_kl", self.acc.kl),
            ("acc_aux", self.acc.aux),
            ("acc_loss", self.acc.loss),
            ("wallclock", self.wallclock()),
        ] {
            c.set_meta(k, f64_to_hex(v));
        }
        c.set_meta("acc_count", self.acc.count.to_string());
        c.set_meta("metrics", rows_to_csv(&self.rows));
        for (e, mom) in self.store.entries().iter().zip(&self.adam.moments) {
            c.tensors.push((format!("param/{}", e.name), e.value.clone()));
            if let Some((m, v)) = mom {
                c.tensors.push((format!("adam_m/{}", e.name), m.clone()));
                c.tensors.push((format!("adam_v/{}", e.name), v.clone()));
            }
        }
        c
    }

    /// Rebuilds a trainer from a checkpoint, reloading the corpus.
    pub fn from_checkpoint(ckpt: &Checkpoint, data_dir: Option<&Path>) -> Result<Self> {
        let config = TrainConfig::from_toml(ckpt.meta("config")?)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let mut t = Self::new(config, data_dir)?;
        t.restore(ckpt)?;
        Ok(t)
    }

    /// Replaces the training state with the checkpoint's. The checkpoint must
    /// come from the same model configuration; nothing changes on error.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let theirs = TrainConfig::from_toml(ckpt.meta("config")?)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        if theirs.model != self.config.model {
            return Err(Error::Checkpoint(format!(
                "model configuration differs: checkpoint has {}, expected {}",
                spec_summary(&theirs.model),
                spec_summary(&self.config.model)
            )));
        }
        if ckpt.meta("vocab")? != self.data.vocab.to_string_repr() {
            return Err(Error::Checkpoint("vocabulary differs from the corpus".into()));
        }
        let step: u64 = ckpt.meta_parse("step")?;
        let adam_t: u64 = ckpt.meta_parse("adam_t")?;
        let acc = Accumulator {
            rec: f64_from_hex(ckpt.meta("acc_rec")?)?,
            kl: f64_from_hex(ckpt.meta("acc_kl")?)?,
            aux: f64_from_hex(ckpt.meta("acc_aux")?)?,
            loss: f64_from_hex(ckpt.meta("acc_loss")?)?,
            count: ckpt.meta_parse("acc_count")?,
        };
        let elapsed = f64_from_hex(ckpt.meta("wallclock")?)?;
        let rows = rows_from_csv(ckpt.meta("metrics")?)?;

        let mut store = self.store.clone();
        load_params(&mut store, ckpt, "param/")?;
        let mut adam = Adam::new(&store);
        let mut problems = Vec::new();
        for (e, mom) in store.entries().iter().zip(adam.moments.iter_mut()) {
            if let Some((m, v)) = mom {
                match (ckpt.tensor(&format!("adam_m/{}", e.name)), ckpt.tensor(&format!("adam_v/{}", e.name))) {
                    (Some(cm), Some(cv)) if cm.shape() == m.shape() && cv.shape() == v.shape() => {
                        *m = cm.clone();
                        *v = cv.clone();
                    }
                    _ => problems.push(e.name.clone()),
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(format!("optimizer state missing or misshapen for {}", problems.join(", "))));
        }
        adam.t = adam_t;

        self.store = store;
        self.adam = adam;
        self.step = step;
        self.acc = acc;
        self.rows = rows;
        self.elapsed_before = elapsed;
        self.started = Instant::now();
        Ok(())
    }
}

fn spec_summary(m: &ModelSpec) -> String {
    format!(
        "{} V={} L={} Z={} channels={:?}",
        m.variant, m.vocab_size, m.seq_len, m.latent_dim, m.channels
    )
}

fn resolve_model(model: &mut ModelSpec, data: &Dataset) -> Result<()> {
    for (name, field, actual) in [
        ("model.vocab_size", &mut model.vocab_size, data.vocab.len()),
        ("model.seq_len", &mut model.seq_len, data.seq_len),
    ] {
        if *field == 0 {
            *field = actual;
        } else if *field != actual {
            return Err(Error::Config(format!("{name} is {} but the corpus needs {actual}", *field)));
        }
    }
    model.validate()
}

fn rows_to_csv(rows: &[MetricRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is UTF-8")
}

fn rows_from_csv(text: &str) -> Result<Vec<MetricRow>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Checkpoint(format!("metric history: {e}"))))
        .collect()
}
