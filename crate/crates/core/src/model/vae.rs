//! The four text VAE architectures behind one type.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{kl_divergence, reconstruction_nll, reparameterize, total_loss, LossBreakdown, Posterior, LOGVAR_MAX, LOGVAR_MIN};
use super::spec::{ModelSpec, Variant};
use crate::autodiff::Var;
use crate::data::vocab::{BOS, DROP};
use crate::data::Batch;
use crate::error::{shape_err, Error, Result};
use crate::nn::{BatchNorm1d, Conv1d, Deconv1d, Embedding, Linear, LstmCell, MaskedConvStack, Mode, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Encoder {
    Conv { embed: Embedding, layers: Vec<(Conv1d, BatchNorm1d)> },
    Lstm { embed: Embedding, cell: LstmCell },
}

/// `z -> [B, C_top, L / 2^k] -> deconvolutions -> [B, C_1, L]`, plus its own
/// projection to vocabulary logits.
#[derive(Clone, Debug)]
struct DeconvDecoder {
    proj: Linear,
    layers: Vec<(Deconv1d, BatchNorm1d)>,
    head: Conv1d,
}

#[derive(Clone, Debug)]
enum LanguageModel {
    None,
    Lstm { embed: Embedding, cell: LstmCell, out: Linear },
    Bytenet { embed: Embedding, stack: MaskedConvStack, out: Conv1d },
    /// Decoder of the LSTM baseline: `z` sets the initial state and is
    /// appended to every input.
    LstmBaseline { embed: Embedding, init: Linear, cell: LstmCell, out: Linear },
}

/// Layer structure of a text VAE. Parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct TextVae {
    pub spec: ModelSpec,
    encoder: Encoder,
    mu_head: Linear,
    logvar_head: Linear,
    deconv: Option<DeconvDecoder>,
    lm: LanguageModel,
}

/// Decoder outputs, logits shaped `[B, L, V]`.
#[derive(Clone, Copy, Debug)]
pub struct Decoded {
    pub lm_logits: Var,
    /// Historyless logits from the deconvolutional pathway (hybrids only).
    pub aux_logits: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// `J_hybrid` on the tape.
    pub loss: Var,
    pub rec: Var,
    pub kl: Var,
    pub aux: Option<Var>,
    pub posterior: Posterior,
    pub z: Var,
    pub decoded: Decoded,
    pub breakdown: LossBreakdown,
}

impl TextVae {
    /// Builds the layers and registers freshly initialized parameters.
    pub fn new<T: Scalar>(spec: ModelSpec, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        spec.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let (v, e, z) = (spec.vocab_size, spec.embed_dim, spec.latent_dim);

        let encoder = if spec.variant.has_conv_encoder() {
            let embed = Embedding::new(store, "enc.embed", v, e, rng);
            let mut layers = Vec::new();
            let mut cin = e;
            for (i, &c) in spec.channels.iter().enumerate() {
                let conv = Conv1d::new(store, &format!("enc.conv{i}"), cin, c, spec.kernel_size, spec.stride, rng);
                let bn = BatchNorm1d::new(store, &format!("enc.bn{i}"), c);
                layers.push((conv, bn));
                cin = c;
            }
            Encoder::Conv { embed, layers }
        } else {
            let embed = Embedding::new(store, "enc.embed", v, e, rng);
            let cell = LstmCell::new(store, "enc.lstm", e, spec.lstm_hidden, rng);
            Encoder::Lstm { embed, cell }
        };
        let enc_out = match &encoder {
            Encoder::Conv { .. } => spec.channels[spec.channels.len() - 1] * spec.top_len(),
            Encoder::Lstm { .. } => spec.lstm_hidden,
        };
        let mu_head = Linear::new(store, "enc.mu", enc_out, z, rng);
        let logvar_head = Linear::new(store, "enc.logvar", enc_out, z, rng);

        let deconv = if spec.variant.has_conv_encoder() {
            let k = spec.channels.len();
            let rev: Vec<usize> = spec.channels.iter().rev().copied().collect();
            let proj = Linear::new(store, "dec.proj", z, rev[0] * spec.top_len(), rng);
            let mut layers = Vec::new();
            let mut cin = rev[0];
            for i in 0..k {
                let cout = rev[(i + 1).min(k - 1)];
                let d = Deconv1d::new(store, &format!("dec.deconv{i}"), cin, cout, spec.kernel_size, spec.stride, rng);
                let bn = BatchNorm1d::new(store, &format!("dec.bn{i}"), cout);
                layers.push((d, bn));
                cin = cout;
            }
            let head = Conv1d::new(store, "dec.aux_head", cin, v, 1, 1, rng);
            Some(DeconvDecoder { proj, layers, head })
        } else {
            None
        };
        let feat = spec.channels[0];

        let lm = match spec.variant {
            Variant::ConvDeconv => LanguageModel::None,
            Variant::HybridLstm => LanguageModel::Lstm {
                embed: Embedding::new(store, "lm.embed", v, e, rng),
                cell: LstmCell::new(store, "lm.lstm", feat + e, spec.lstm_hidden, rng),
                out: Linear::new(store, "lm.out", spec.lstm_hidden, v, rng),
            },
            Variant::HybridBytenet => LanguageModel::Bytenet {
                embed: Embedding::new(store, "lm.embed", v, e, rng),
                stack: MaskedConvStack::new(store, "lm.masked", spec.bytenet_layers, feat + e, spec.bytenet_channels, rng)?,
                out: Conv1d::new(store, "lm.out", spec.bytenet_channels, v, 1, 1, rng),
            },
            Variant::LstmVae => LanguageModel::LstmBaseline {
                embed: Embedding::new(store, "lm.embed", v, e, rng),
                init: Linear::new(store, "lm.init", z, spec.lstm_hidden, rng),
                cell: LstmCell::new(store, "lm.lstm", e + z, spec.lstm_hidden, rng),
                out: Linear::new(store, "lm.out", spec.lstm_hidden, v, rng),
            },
        };

        Ok(Self { spec, encoder, mu_head, logvar_head, deconv, lm })
    }

    /// Layers plus a freshly initialized store.
    pub fn build<T: Scalar>(spec: ModelSpec, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let model = Self::new(spec, &mut store, seed)?;
        Ok((model, store))
    }

    fn check_ids(&self, ids: &[usize], batch: usize) -> Result<()> {
        let l = self.spec.seq_len;
        if batch == 0 || ids.len() != batch * l {
            return Err(Error::Contract(format!(
                "expected {batch} x {l} token ids, got {}",
                ids.len()
            )));
        }
        Ok(())
    }

    /// Posterior parameters for the target sequences `x: [B * L]`.
    pub fn encode<T: Scalar>(&self, s: &mut Session<T>, x: &[usize], batch: usize) -> Result<Posterior> {
        self.check_ids(x, batch)?;
        let l = self.spec.seq_len;
        let top = match &self.encoder {
            Encoder::Conv { embed, layers } => {
                let emb = embed.forward(s, x)?;
                let emb = s.tape.reshape(emb, &[batch, l, self.spec.embed_dim])?;
                let mut h = s.tape.permute(emb, &[0, 2, 1])?;
                for (conv, bn) in layers {
                    h = conv.forward(s, h)?;
                    h = bn.forward(s, h)?;
                    h = s.tape.relu(h);
                }
                let n = s.tape.value(h).numel() / batch;
                s.tape.reshape(h, &[batch, n])?
            }
            Encoder::Lstm { embed, cell } => {
                let steps = time_major_inputs(s, embed, x, batch, l)?;
                let (h0, c0) = zero_state(s, batch, cell.hidden_size);
                let hs = cell.unroll(s, &steps, h0, c0)?;
                *hs.last().expect("seq_len > 0")
            }
        };
        let mu = self.mu_head.forward(s, top)?;
        let raw = self.logvar_head.forward(s, top)?;
        let logvar = s.tape.clamp(raw, T::lit(LOGVAR_MIN), T::lit(LOGVAR_MAX));
        Ok(Posterior { mu, logvar })
    }

    /// Deconvolutional features `[B, C_1, L]` and their logits `[B, L, V]`.
    /// Every output position is a function of `z` alone.
    pub fn decode_feedforward<T: Scalar>(&self, s: &mut Session<T>, z: Var) -> Result<(Var, Var)> {
        let dec = self
            .deconv
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{} has no deconvolutional decoder", self.spec.variant)))?;
        let batch = s.tape.shape(z)[0];
        let top = self.spec.channels[self.spec.channels.len() - 1];
        let h = dec.proj.forward(s, z)?;
        let h = s.tape.reshape(h, &[batch, top, self.spec.top_len()])?;
        let mut h = s.tape.relu(h);
        for (d, bn) in &dec.layers {
            h = d.forward(s, h)?;
            h = bn.forward(s, h)?;
            h = s.tape.relu(h);
        }
        let logits = dec.head.forward(s, h)?;
        let logits = s.tape.permute(logits, &[0, 2, 1])?;
        Ok((h, logits))
    }

    /// History tokens the decoder actually sees. With `input_dropout >= 1`
    /// every token is DROP, in training and at inference alike.
    pub fn effective_history(&self, history: &[usize]) -> Vec<usize> {
        if self.spec.input_dropout >= 1.0 {
            vec![DROP; history.len()]
        } else {
            history.to_vec()
        }
    }

    /// Runs the decoder. `history: [B * L]` is the target shifted right with
    /// BOS in front (input dropout, if any, already applied).
    pub fn decode<T: Scalar>(&self, s: &mut Session<T>, z: Var, history: &[usize]) -> Result<Decoded> {
        let batch = s.tape.shape(z)[0];
        if s.tape.shape(z) != [batch, self.spec.latent_dim] {
            return shape_err("decode", s.tape.shape(z), &[batch, self.spec.latent_dim]);
        }
        self.check_ids(history, batch).map_err(|_| {
            Error::Contract(format!(
                "history has {} tokens, decoder produces {batch} x {}",
                history.len(),
                self.spec.seq_len
            ))
        })?;
        let history = self.effective_history(history);
        let l = self.spec.seq_len;
        let v = self.spec.vocab_size;
        match &self.lm {
            LanguageModel::None => {
                let (_, logits) = self.decode_feedforward(s, z)?;
                Ok(Decoded { lm_logits: logits, aux_logits: None })
            }
            LanguageModel::Lstm { embed, cell, out } => {
                let (feat, aux) = self.decode_feedforward(s, z)?;
                let feat_tm = features_time_major(s, feat)?;
                let emb = embed.forward(s, &time_major(&history, batch, l))?;
                let inputs = s.tape.concat(&[feat_tm, emb], 1)?;
                let steps = split_steps(s, inputs, batch, l)?;
                let (h0, c0) = zero_state(s, batch, cell.hidden_size);
                let hs = cell.unroll(s, &steps, h0, c0)?;
                let logits = project_steps(s, out, &hs, batch, l, v)?;
                Ok(Decoded { lm_logits: logits, aux_logits: Some(aux) })
            }
            LanguageModel::Bytenet { embed, stack, out } => {
                let (feat, aux) = self.decode_feedforward(s, z)?;
                let logits = self.bytenet_logits(s, embed, stack, out, feat, &history)?;
                Ok(Decoded { lm_logits: logits, aux_logits: Some(aux) })
            }
            LanguageModel::LstmBaseline { embed, init, cell, out } => {
                let emb = embed.forward(s, &time_major(&history, batch, l))?;
                let steps = split_steps(s, emb, batch, l)?;
                let (h0, c0) = self.baseline_state(s, init, cell, z)?;
                let steps = steps
                    .into_iter()
                    .map(|x| s.tape.concat(&[x, z], 1))
                    .collect::<Result<Vec<_>>>()?;
                let hs = cell.unroll(s, &steps, h0, c0)?;
                let logits = project_steps(s, out, &hs, batch, l, v)?;
                Ok(Decoded { lm_logits: logits, aux_logits: None })
            }
        }
    }

    fn baseline_state<T: Scalar>(&self, s: &mut Session<T>, init: &Linear, cell: &LstmCell, z: Var) -> Result<(Var, Var)> {
        let batch = s.tape.shape(z)[0];
        let h = init.forward(s, z)?;
        let h0 = s.tape.tanh(h);
        let c0 = s.tape.constant(Tensor::zeros(&[batch, cell.hidden_size]));
        Ok((h0, c0))
    }

    fn bytenet_logits<T: Scalar>(
        &self,
        s: &mut Session<T>,
        embed: &Embedding,
        stack: &MaskedConvStack,
        out: &Conv1d,
        feat: Var,
        history: &[usize],
    ) -> Result<Var> {
        let batch = s.tape.shape(feat)[0];
        let l = self.spec.seq_len;
        let emb = embed.forward(s, history)?;
        let emb = s.tape.reshape(emb, &[batch, l, self.spec.embed_dim])?;
        let emb = s.tape.permute(emb, &[0, 2, 1])?;
        let x = s.tape.concat(&[feat, emb], 1)?;
        let h = stack.forward(s, x)?;
        let logits = out.forward(s, h)?;
        s.tape.permute(logits, &[0, 2, 1])
    }

    /// Full training objective on one batch. `noise: [B, Z]` is the
    /// reparameterization noise, `history` the decoder input after dropout and
    /// `alpha` the weight of the auxiliary term (ignored without one).
    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<T>,
        batch: &Batch,
        history: &[usize],
        noise: Tensor<T>,
        kl_weight: f64,
        alpha: f64,
    ) -> Result<StepOutput> {
        let b = batch.batch_size;
        if batch.seq_len != self.spec.seq_len {
            return Err(Error::Contract(format!(
                "batch length {} does not match model length {}",
                batch.seq_len, self.spec.seq_len
            )));
        }
        let posterior = self.encode(s, &batch.ids, b)?;
        let z = reparameterize(&mut s.tape, posterior, noise)?;
        let decoded = self.decode(s, z, history)?;
        let rec = reconstruction_nll(&mut s.tape, decoded.lm_logits, &batch.ids, &batch.mask)?;
        let kl = kl_divergence(&mut s.tape, posterior)?;
        let aux = match decoded.aux_logits {
            Some(a) => Some(reconstruction_nll(&mut s.tape, a, &batch.ids, &batch.mask)?),
            None => None,
        };
        let alpha = if aux.is_some() { alpha } else { 0.0 };
        let weighted_kl = s.tape.scale(kl, T::lit(kl_weight));
        let mut loss = s.tape.add(rec, weighted_kl)?;
        if let Some(a) = aux {
            let wa = s.tape.scale(a, T::lit(alpha));
            loss = s.tape.add(loss, wa)?;
        }
        let val = |s: &Session<T>, v: Var| s.tape.value(v).data()[0].as_f64();
        let breakdown = total_loss(
            val(s, rec),
            val(s, kl),
            aux.map_or(0.0, |a| val(s, a)),
            kl_weight,
            alpha,
            batch.tokens_per_seq(),
        );
        Ok(StepOutput { loss, rec, kl, aux, posterior, z, decoded, breakdown })
    }

    /// Greedy decoding of latent codes `z: [B, Z]` in eval mode. The
    /// feed-forward pathway runs once; the language model consumes its own
    /// argmax outputs starting from BOS. Returns `B` rows of `seq_len` ids.
    pub fn greedy_decode<T: Scalar>(&self, store: &ParamStore<T>, z: &Tensor<T>) -> Result<Vec<Vec<usize>>> {
        let batch = z.shape().first().copied().unwrap_or(0);
        if z.shape() != [batch, self.spec.latent_dim] || batch == 0 {
            return shape_err("greedy_decode", z.shape(), &[batch, self.spec.latent_dim]);
        }
        let l = self.spec.seq_len;
        let v = self.spec.vocab_size;
        let mut s = Session::new(store, Mode::Eval);
        let zv = s.tape.constant(z.clone());
        let mut rows = vec![vec![0usize; l]; batch];
        let drop_all = self.spec.input_dropout >= 1.0;
        let feed = |tok: usize| if drop_all { DROP } else { tok };

        match &self.lm {
            LanguageModel::None => {
                let (_, logits) = self.decode_feedforward(&mut s, zv)?;
                let data = s.tape.value(logits).data();
                for (b, row) in rows.iter_mut().enumerate() {
                    for (t, slot) in row.iter_mut().enumerate() {
                        *slot = argmax(&data[(b * l + t) * v..][..v]);
                    }
                }
            }
            LanguageModel::Lstm { embed, cell, out } => {
                let (feat, _) = self.decode_feedforward(&mut s, zv)?;
                let feat_tm = features_time_major(&mut s, feat)?;
                let (mut h, mut c) = zero_state(&mut s, batch, cell.hidden_size);
                let mut prev = vec![feed(BOS); batch];
                for t in 0..l {
                    let e = embed.forward(&mut s, &prev)?;
                    let f = s.tape.slice(feat_tm, 0, t * batch, batch)?;
                    let x = s.tape.concat(&[f, e], 1)?;
                    (h, c) = cell.step(&mut s, x, h, c)?;
                    let logits = out.forward(&mut s, h)?;
                    take_argmax(&s, logits, v, t, &mut rows, &mut prev, feed);
                }
            }
            LanguageModel::LstmBaseline { embed, init, cell, out } => {
                let (mut h, mut c) = self.baseline_state(&mut s, init, cell, zv)?;
                let mut prev = vec![feed(BOS); batch];
                for t in 0..l {
                    let e = embed.forward(&mut s, &prev)?;
                    let x = s.tape.concat(&[e, zv], 1)?;
                    (h, c) = cell.step(&mut s, x, h, c)?;
                    let logits = out.forward(&mut s, h)?;
                    take_argmax(&s, logits, v, t, &mut rows, &mut prev, feed);
                }
            }
            LanguageModel::Bytenet { embed, stack, out } => {
                let (feat, _) = self.decode_feedforward(&mut s, zv)?;
                let mut history = vec![feed(crate::data::vocab::PAD); batch * l];
                for b in 0..batch {
                    history[b * l] = feed(BOS);
                }
                for t in 0..l {
                    // causal: positions after t do not influence logits at t
                    let logits = self.bytenet_logits(&mut s, embed, stack, out, feat, &history)?;
                    let data = s.tape.value(logits).data();
                    for (b, row) in rows.iter_mut().enumerate() {
                        row[t] = argmax(&data[(b * l + t) * v..][..v]);
                        if t + 1 < l {
                            history[b * l + t + 1] = feed(row[t]);
                        }
                    }
                }
            }
        }
        Ok(rows)
    }
}

fn take_argmax<T: Scalar>(
    s: &Session<T>,
    logits: Var,
    v: usize,
    t: usize,
    rows: &mut [Vec<usize>],
    prev: &mut [usize],
    feed: impl Fn(usize) -> usize,
) {
    let data = s.tape.value(logits).data();
    for (b, row) in rows.iter_mut().enumerate() {
        let tok = argmax(&data[b * v..(b + 1) * v]);
        row[t] = tok;
        prev[b] = feed(tok);
    }
}

/// Index of the first maximum.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Reorders batch-major ids `[B * L]` to time-major `[L * B]`.
fn time_major(ids: &[usize], batch: usize, len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(ids.len());
    for t in 0..len {
        for b in 0..batch {
            out.push(ids[b * len + t]);
        }
    }
    out
}

fn time_major_inputs<T: Scalar>(s: &mut Session<T>, embed: &Embedding, ids: &[usize], batch: usize, len: usize) -> Result<Vec<Var>> {
    let emb = embed.forward(s, &time_major(ids, batch, len))?;
    split_steps(s, emb, batch, len)
}

/// `[L * B, D]` -> `L` tensors of `[B, D]`.
fn split_steps<T: Scalar>(s: &mut Session<T>, x: Var, batch: usize, len: usize) -> Result<Vec<Var>> {
    (0..len).map(|t| s.tape.slice(x, 0, t * batch, batch)).collect()
}

/// `[B, C, L]` -> `[L * B, C]`.
fn features_time_major<T: Scalar>(s: &mut Session<T>, feat: Var) -> Result<Var> {
    let shape = s.tape.shape(feat).to_vec();
    let p = s.tape.permute(feat, &[2, 0, 1])?;
    s.tape.reshape(p, &[shape[2] * shape[0], shape[1]])
}

/// Projects per-step hidden states to logits `[B, L, V]`.
fn project_steps<T: Scalar>(s: &mut Session<T>, out: &Linear, hs: &[Var], batch: usize, len: usize, v: usize) -> Result<Var> {
    let h = s.tape.concat(hs, 0)?;
    let logits = out.forward(s, h)?;
    let logits = s.tape.reshape(logits, &[len, batch, v])?;
    s.tape.permute(logits, &[1, 0, 2])
}

fn zero_state<T: Scalar>(s: &mut Session<T>, batch: usize, hidden: usize) -> (Var, Var) {
    let h = s.tape.constant(Tensor::zeros(&[batch, hidden]));
    let c = s.tape.constant(Tensor::zeros(&[batch, hidden]));
    (h, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check_store;
    use rand::Rng;

    pub(crate) fn tiny(variant: Variant) -> ModelSpec {
        ModelSpec {
            variant,
            vocab_size: 7,
            seq_len: 8,
            latent_dim: 3,
            embed_dim: 3,
            channels: vec![3, 4],
            kernel_size: 3,
            stride: 2,
            lstm_hidden: 4,
            bytenet_layers: 2,
            bytenet_channels: 3,
            input_dropout: 0.0,
        }
    }

    fn batch(rng: &mut ChaCha8Rng, b: usize, l: usize) -> Batch {
        let seqs: Vec<Vec<usize>> = (0..b).map(|_| (0..l - 2).map(|_| rng.random_range(5..7)).collect()).collect();
        Batch::from_sequences(&seqs, l, true).unwrap()
    }

    fn noise(rng: &mut ChaCha8Rng, b: usize, z: usize) -> Tensor<f64> {
        Tensor::from_fn(&[b, z], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for v in Variant::ALL {
            let (m, store) = TextVae::build::<f64>(tiny(v), 1).unwrap();
            let bt = batch(&mut rng, 3, 8);
            let mut s = Session::new(&store, Mode::Train);
            let out = m.forward(&mut s, &bt, &bt.history(), noise(&mut rng, 3, 3), 0.5, 0.3).unwrap();
            assert_eq!(s.tape.shape(out.decoded.lm_logits), [3, 8, 7], "{v}");
            assert_eq!(out.decoded.aux_logits.is_some(), v.has_aux_pathway());
            assert_eq!(s.tape.shape(out.posterior.mu), [3, 3]);
            assert!(out.breakdown.j_hybrid.is_finite());
            let loss = s.tape.value(out.loss).data()[0];
            assert!((loss - out.breakdown.j_hybrid).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for v in Variant::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let (m, mut store) = TextVae::build::<f64>(tiny(v), 3).unwrap();
            // zero biases put ReLU inputs exactly on the kink where a layer's input is all zeros
            for e in store.entries_mut() {
                if e.name.ends_with(".bias") {
                    e.value.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.3..0.3));
                }
            }
            let bt = batch(&mut rng, 2, 8);
            let eps = noise(&mut rng, 2, 3);
            let hist = bt.history();
            let report = grad_check_store(
                &store,
                |s| Ok(m.forward(s, &bt, &hist, eps.clone(), 0.7, 0.3)?.loss),
                1e-6,
                1e-4,
            )
            .unwrap();
            let names: Vec<_> = store.entries().iter().filter(|e| e.trainable).map(|e| e.name.clone()).collect();
            assert!(report.passed, "{v}: {:?}", names.iter().zip(&report.max_rel_err).collect::<Vec<_>>());
        }
    }

    #[test]
    fn wrong_history_length_is_rejected() {
        let (m, store) = TextVae::build::<f64>(tiny(Variant::HybridLstm), 1).unwrap();
        let mut s = Session::new(&store, Mode::Eval);
        let z = s.tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(m.decode(&mut s, z, &[BOS; 15]), Err(Error::Contract(_))));
    }

    #[test]
    fn non_divisible_length_is_rejected() {
        let spec = ModelSpec { seq_len: 10, ..tiny(Variant::ConvDeconv) };
        assert!(TextVae::build::<f64>(spec, 0).is_err());
    }

    #[test]
    fn greedy_matches_teacher_forced_argmax() {
        // feeding the greedy output back as history must reproduce it
        for v in [Variant::HybridLstm, Variant::HybridBytenet, Variant::LstmVae, Variant::ConvDeconv] {
            let (m, store) = TextVae::build::<f64>(tiny(v), 5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let z = noise(&mut rng, 2, 3);
            let rows = m.greedy_decode(&store, &z).unwrap();
            let bt = Batch::from_sequences(&rows, 8, false).unwrap();
            let mut s = Session::new(&store, Mode::Eval);
            let zv = s.tape.constant(z.clone());
            let d = m.decode(&mut s, zv, &bt.history()).unwrap();
            let data = s.tape.value(d.lm_logits).data();
            for b in 0..2 {
                for t in 0..8 {
                    assert_eq!(argmax(&data[(b * 8 + t) * 7..][..7]), rows[b][t], "{v}");
                }
            }
        }
    }

    #[test]
    fn greedy_rows_are_independent_of_batch() {
        let (m, store) = TextVae::build::<f64>(tiny(Variant::HybridBytenet), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = noise(&mut rng, 3, 3);
        let all = m.greedy_decode(&store, &z).unwrap();
        for b in 0..3 {
            let one = Tensor::new(vec![1, 3], z.data()[b * 3..(b + 1) * 3].to_vec()).unwrap();
            assert_eq!(m.greedy_decode(&store, &one).unwrap()[0], all[b]);
        }
    }

    #[test]
    fn full_input_dropout_ignores_history() {
        let spec = ModelSpec { input_dropout: 1.0, ..tiny(Variant::HybridLstm) };
        let (m, store) = TextVae::build::<f64>(spec, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = noise(&mut rng, 2, 3);
        let logits = |hist: &[usize]| {
            let mut s = Session::new(&store, Mode::Eval);
            let zv = s.tape.constant(z.clone());
            let d = m.decode(&mut s, zv, hist).unwrap();
            s.tape.value(d.lm_logits).clone()
        };
        let a: Vec<usize> = (0..16).map(|i| 5 + i % 2).collect();
        let b: Vec<usize> = (0..16).map(|i| 6 - i % 2).collect();
        assert_eq!(logits(&a), logits(&b));
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f32]), 0);
    }
}
