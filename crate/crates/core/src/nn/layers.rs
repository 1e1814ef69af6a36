//! Parameterized building blocks. Every layer registers its tensors in a
//! [`ParamStore`] at construction and reads them through a [`Session`].

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::params::{ParamId, ParamStore, Session};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

fn init_weight<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    Tensor::uniform(shape, (1.0 / fan_in as f64).sqrt(), rng)
}

/// Affine map `x W + b` over the last axis of a `[N, in]` input.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init_weight(&[in_dim, out_dim], in_dim, rng), true);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]), true);
        Self { in_dim, out_dim, weight, bias }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let (w, b) = (s.var(self.weight), s.var(self.bias));
        let y = s.tape.matmul(x, w)?;
        s.tape.add(y, b)
    }
}

/// Token embedding table `[V, E]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub vocab: usize,
    pub dim: usize,
    pub table: ParamId,
}

impl Embedding {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let table = store.add(format!("{name}.table"), init_weight(&[vocab, dim], 1, rng), true);
        Self { vocab, dim, table }
    }

    /// `[ids.len(), E]`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, ids: &[usize]) -> Result<Var> {
        let t = s.var(self.table);
        s.tape.gather_rows(t, ids)
    }
}

/// Strided 1-D convolution with "same"-style zero padding: output length is
/// `ceil(L / stride)` and `(kernel - 1) / 2` zeros are prepended.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    /// `[out_channels, in_channels, kernel_size]`
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let w = init_weight(&[out_channels, in_channels, kernel_size], in_channels * kernel_size, rng);
        let weight = store.add(format!("{name}.weight"), w, true);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]), true);
        Self { in_channels, out_channels, kernel_size, stride, weight, bias }
    }

    pub fn pad_left(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    pub fn output_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.in_channels || shape[2] == 0 {
            return shape_err("conv1d", &shape, &[self.in_channels]);
        }
        let (w, b) = (s.var(self.weight), s.var(self.bias));
        let out = self.output_len(shape[2]);
        s.tape.conv1d(x, w, Some(b), self.stride, self.pad_left(), out)
    }
}

/// Transposed convolution: the adjoint of [`Conv1d`] with the same kernel,
/// stride and padding, so lengths grow by exactly `stride`.
#[derive(Clone, Debug)]
pub struct Deconv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    /// `[in_channels, out_channels, kernel_size]`: the weight of the conv this
    /// layer is the adjoint of.
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Deconv1d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let w = init_weight(&[in_channels, out_channels, kernel_size], in_channels * kernel_size, rng);
        let weight = store.add(format!("{name}.weight"), w, true);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]), true);
        Self { in_channels, out_channels, kernel_size, stride, weight, bias }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.in_channels {
            return shape_err("deconv1d", &shape, &[self.in_channels]);
        }
        let (w, b) = (s.var(self.weight), s.var(self.bias));
        let pad_left = (self.kernel_size - 1) / 2;
        s.tape.conv_transpose1d(x, w, Some(b), self.stride, pad_left, shape[2] * self.stride)
    }
}

/// Per-channel batch normalization for `[B, C, L]` activations.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub channels: usize,
    pub gain: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            channels,
            gain: store.add(format!("{name}.gain"), Tensor::full(&[channels], T::one()), true),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[channels]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::full(&[channels], T::one()), false),
            momentum: BATCH_NORM_MOMENTUM,
            eps: BATCH_NORM_EPS,
        }
    }

    /// Train mode normalizes with batch statistics (batch size must be at
    /// least 2) and queues a running-statistics update; eval mode uses the
    /// running statistics only.
    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let (g, b) = (s.var(self.gain), s.var(self.bias));
        let eps = T::lit(self.eps);
        if s.is_train() {
            let batch = s.tape.shape(x).first().copied().unwrap_or(0);
            if batch < 2 {
                return Err(Error::Contract(format!(
                    "batch norm in train mode needs batch size >= 2, got {batch}"
                )));
            }
            let (y, mean, var) = s.tape.batch_norm_train(x, g, b, eps)?;
            let m = T::lit(self.momentum);
            let blend = |old: &Tensor<T>, new: &[T]| {
                Tensor::from_fn(old.shape(), |i| m * new[i] + (T::one() - m) * old.data()[i])
            };
            let rm = blend(s.buffer(self.running_mean), &mean);
            let rv = blend(s.buffer(self.running_var), &var);
            s.record_stat(self.running_mean, rm);
            s.record_stat(self.running_var, rv);
            Ok(y)
        } else {
            let mean = s.buffer(self.running_mean).data().to_vec();
            let var = s.buffer(self.running_var).data().to_vec();
            s.tape.batch_norm_fixed(x, g, b, &mean, &var, eps)
        }
    }
}

/// LSTM cell with layer normalization on each gate's pre-activation.
/// Gate blocks in the fused `[in + hidden, 4 * hidden]` weight are ordered
/// input, forget, output, candidate.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    pub weight: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

impl LstmCell {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = input_size + hidden_size;
        let w = init_weight(&[fan_in, 4 * hidden_size], fan_in, rng);
        let weight = store.add(format!("{name}.weight"), w, true);
        let ln_gain = store.add(format!("{name}.ln_gain"), Tensor::full(&[4 * hidden_size], T::one()), true);
        let h = hidden_size;
        let ln_bias = Tensor::from_fn(&[4 * h], |i| if (h..2 * h).contains(&i) { T::one() } else { T::zero() });
        let ln_bias = store.add(format!("{name}.ln_bias"), ln_bias, true);
        Self { input_size, hidden_size, weight, ln_gain, ln_bias }
    }

    /// One step: `x: [B, D]`, `h, c: [B, H]` -> `(h', c')`.
    pub fn step<T: Scalar>(&self, s: &mut Session<T>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hs = self.hidden_size;
        let (sx, sh) = (s.tape.shape(x).to_vec(), s.tape.shape(h).to_vec());
        if sx.len() != 2 || sx[1] != self.input_size || sh != [sx[0], hs] || s.tape.shape(c) != sh.as_slice() {
            return shape_err("lstm_step", &sx, &sh);
        }
        let w = s.var(self.weight);
        let (g, b) = (s.var(self.ln_gain), s.var(self.ln_bias));
        let t = &mut s.tape;
        let xh = t.concat(&[x, h], 1)?;
        let pre = t.matmul(xh, w)?;
        let pre = t.layer_norm(pre, g, b, hs, T::lit(LAYER_NORM_EPS))?;
        let i = t.slice(pre, 1, 0, hs)?;
        let f = t.slice(pre, 1, hs, hs)?;
        let o = t.slice(pre, 1, 2 * hs, hs)?;
        let cand = t.slice(pre, 1, 3 * hs, hs)?;
        let i = t.sigmoid(i);
        let f = t.sigmoid(f);
        let o = t.sigmoid(o);
        let cand = t.tanh(cand);
        let keep = t.mul(f, c)?;
        let write = t.mul(i, cand)?;
        let c_next = t.add(keep, write)?;
        let tc = t.tanh(c_next);
        let h_next = t.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Runs the cell over `xs` (one `[B, D]` input per time step).
    pub fn unroll<T: Scalar>(&self, s: &mut Session<T>, xs: &[Var], h0: Var, c0: Var) -> Result<Vec<Var>> {
        let (mut h, mut c) = (h0, c0);
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            (h, c) = self.step(s, x, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Stack of causal kernel-2 convolutions, each followed by ReLU. Output at
/// position `t` depends on inputs `t - N ..= t` only.
#[derive(Clone, Debug)]
pub struct MaskedConvStack {
    pub layers: Vec<(ParamId, ParamId)>,
    pub in_channels: usize,
    pub channels: usize,
}

impl MaskedConvStack {
    pub const KERNEL: usize = 2;

    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        num_layers: usize,
        in_channels: usize,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::Contract("masked conv stack needs at least one layer".into()));
        }
        let k = Self::KERNEL;
        let layers = (0..num_layers)
            .map(|i| {
                let cin = if i == 0 { in_channels } else { channels };
                let w = store.add(format!("{name}.{i}.weight"), init_weight(&[channels, cin, k], cin * k, rng), true);
                let b = store.add(format!("{name}.{i}.bias"), Tensor::zeros(&[channels]), true);
                (w, b)
            })
            .collect();
        Ok(Self { layers, in_channels, channels })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn receptive_field(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.in_channels {
            return shape_err("masked_conv", &shape, &[self.in_channels]);
        }
        let len = shape[2];
        let mut h = x;
        for &(w, b) in &self.layers {
            let (w, b) = (s.var(w), s.var(b));
            // left padding of kernel-1 makes the convolution causal
            h = s.tape.conv1d(h, w, Some(b), 1, Self::KERNEL - 1, len)?;
            h = s.tape.relu(h);
        }
        Ok(h)
    }
}
