//! Forward definitions of every differentiable operation.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

use super::kernels::{self, ConvGeom};
use super::tape::{Bcast, BinKind, Op, Tape, UnaryKind, Var};

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Flat index into an operand of shape `src` for every element of `out`.
fn broadcast_index(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let pad = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..rank).rev() {
        if i >= pad {
            let d = src[i - pad];
            strides[i] = if d == 1 { 0 } else { s };
            s *= d;
        }
    }
    let total = numel(out);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    let mut map = Vec::with_capacity(total);
    for _ in 0..total {
        map.push(flat);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            flat += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            flat -= strides[ax] * out[ax];
            idx[ax] = 0;
        }
    }
    map
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, kind: BinKind, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let f = |x: T, y: T| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let (shape, data, bcast) = if sa == sb {
            let d = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
            (sa, d, Bcast::Same)
        } else if sb.is_empty() || (numel(&sb) == 1 && sb.len() <= sa.len()) {
            let y = bv[0];
            (sa, av.iter().map(|&x| f(x, y)).collect(), Bcast::ScalarB)
        } else if sa.is_empty() || (numel(&sa) == 1 && sa.len() <= sb.len()) {
            let x = av[0];
            (sb, bv.iter().map(|&y| f(x, y)).collect(), Bcast::ScalarA)
        } else {
            let Some(out) = broadcast_shape(&sa, &sb) else {
                return shape_err(name, &sa, &sb);
            };
            let ai = broadcast_index(&sa, &out);
            let bi = broadcast_index(&sb, &out);
            let d = ai.iter().zip(&bi).map(|(&i, &j)| f(av[i], bv[j])).collect();
            (out, d, Bcast::General(ai, bi))
        };
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Binary { kind, a, b, bcast }, &[a, b]))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b, "sub")
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b, "mul")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale { a, c }, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar { a }, &[a])
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", sa, sb);
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n, false, false);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return shape_err("concat", &first, &[axis]);
        }
        let mut axis_lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return shape_err("concat", &first, s);
            }
            axis_lens.push(s[axis]);
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let total: usize = axis_lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&axis_lens) {
                data.extend_from_slice(&self.value(p).data()[o * len * inner..][..len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        let op = Op::Concat { parts: parts.to_vec(), axis_lens, outer, inner };
        Ok(self.push(value, op, parts))
    }

    /// Elements `start..start+len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return shape_err("slice", &shape, &[axis, start, len]);
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let axis_len = shape[axis];
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * axis_len + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Slice { a, start, len, axis_len, outer, inner }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { a }, &[a]))
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return shape_err("permute", &shape, perm);
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let mut out = vec![T::zero(); numel(&shape)];
        kernels::permute(self.value(a).data(), &shape, perm, &mut out);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Permute { a, perm: perm.to_vec() }, &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return shape_err("transpose", self.shape(a), &[]);
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let value = self.value(a).map(|x| match kind {
            UnaryKind::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
        });
        self.push(value, Op::Unary { kind, a }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a)
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| !(x > T::zero())) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(UnaryKind::Log, a))
    }

    /// Clamps into `[lo, hi]`; gradient is zero where clamping was active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let value = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(value, Op::Clamp { a, lo, hi }, &[a])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let Some(&cols) = shape.last() else {
            return shape_err("softmax", &shape, &[]);
        };
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_row(row);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Softmax { a, cols }, &[a]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::lit(self.value(a).numel() as f64);
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// Fused softmax cross-entropy over rows of `logits` (`[..., V]`):
    /// `sum_r weights[r] * -log softmax(logits[r])[targets[r]]`, a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let Some(&cols) = shape.last() else {
            return shape_err("softmax_cross_entropy", &shape, &[]);
        };
        let rows = numel(&shape) / cols.max(1);
        if targets.len() != rows || weights.len() != rows {
            return shape_err("softmax_cross_entropy", &shape, &[targets.len(), weights.len()]);
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::Index(format!("target {t} out of range for {cols} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        for (r, row) in probs.chunks_mut(cols).enumerate() {
            let lse = log_sum_exp(row);
            let nll = lse - row[targets[r]];
            if weights[r] != T::zero() {
                total += weights[r] * nll;
            }
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let op = Op::SoftmaxXent {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            probs,
            cols,
        };
        Ok(self.push(Tensor::scalar(total), op, &[logits]))
    }

    /// 1-D cross-correlation of `x: [B, C_in, L]` with `w: [C_out, C_in, K]`.
    /// Output position `o` reads inputs `o*stride + k - pad_left`; the output
    /// has `len_out` positions and anything outside the input reads as zero.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad_left: usize,
        len_out: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || stride == 0 {
            return shape_err("conv1d", &sx, &sw);
        }
        self.check_bias(bias, sw[0], "conv1d")?;
        let geom = ConvGeom {
            batch: sx[0],
            c_in: sx[1],
            c_out: sw[0],
            kernel: sw[2],
            stride,
            pad_left,
            len_in: sx[2],
            len_out,
        };
        let mut y = vec![T::zero(); geom.output_len()];
        kernels::conv_forward(&geom, self.value(x).data(), self.value(w).data(), &mut y);
        if let Some(b) = bias {
            add_channel_bias(&mut y, self.value(b).data(), geom.batch, geom.c_out, geom.len_out);
        }
        let value = Tensor::new(vec![geom.batch, geom.c_out, len_out], y)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv { x, w, bias, geom, transposed: false }, &inputs))
    }

    /// Transposed convolution: the exact adjoint of [`Tape::conv1d`] with the
    /// same weights. `x: [B, C_in, L_in]`, `w: [C_in, C_out, K]`, result
    /// `[B, C_out, len_out]` where the matching forward conv maps
    /// `len_out -> L_in` with `stride` and `pad_left`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad_left: usize,
        len_out: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[0] || stride == 0 {
            return shape_err("conv_transpose1d", &sx, &sw);
        }
        self.check_bias(bias, sw[1], "conv_transpose1d")?;
        let geom = ConvGeom {
            batch: sx[0],
            c_in: sw[1],
            c_out: sw[0],
            kernel: sw[2],
            stride,
            pad_left,
            len_in: len_out,
            len_out: sx[2],
        };
        let mut y = vec![T::zero(); geom.input_len()];
        kernels::conv_adjoint_input(&geom, self.value(x).data(), self.value(w).data(), &mut y);
        if let Some(b) = bias {
            add_channel_bias(&mut y, self.value(b).data(), geom.batch, geom.c_in, len_out);
        }
        let value = Tensor::new(vec![geom.batch, geom.c_in, len_out], y)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv { x, w, bias, geom, transposed: true }, &inputs))
    }

    fn check_bias(&self, bias: Option<Var>, channels: usize, op: &'static str) -> Result<()> {
        match bias {
            Some(b) if self.shape(b) != [channels] => shape_err(op, self.shape(b), &[channels]),
            _ => Ok(()),
        }
    }

    /// Normalizes each contiguous group of `group` elements along the last
    /// axis to zero mean / unit variance, then applies `gain`, `bias` (both
    /// shaped like the last axis). A constant group normalizes to exactly 0.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, group: usize, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if d == 0 || group == 0 || !d.is_multiple_of(group) || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return shape_err("layer_norm", &shape, self.shape(gain));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let hn = T::lit(group as f64);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(xv.len() / group);
        for (gi, (src, dst)) in xv.chunks(group).zip(xhat.chunks_mut(group)).enumerate() {
            let mean = src.iter().copied().sum::<T>() / hn;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hn;
            let s = T::one() / (var + eps).sqrt();
            inv_std.push(s);
            let _ = gi;
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = (v - mean) * s;
            }
        }
        let out: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(j, &h)| h * gv[j % d] + bv[j % d])
            .collect();
        let value = Tensor::new(shape, out)?;
        let op = Op::LayerNorm { x, gain, bias, group, xhat, inv_std };
        Ok(self.push(value, op, &[x, gain, bias]))
    }

    /// Batch normalization of `x: [B, C, L]` with statistics over `B x L`.
    /// Returns the output and the per-channel batch mean and (biased) variance.
    pub fn batch_norm_train(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<(Var, Vec<T>, Vec<T>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || self.shape(gain) != [shape[1]] || self.shape(bias) != [shape[1]] {
            return shape_err("batch_norm", &shape, self.shape(gain));
        }
        let [nb, nc, nl] = [shape[0], shape[1], shape[2]];
        let xv = self.value(x).data();
        let count = T::lit((nb * nl) as f64);
        let mut mean = vec![T::zero(); nc];
        let mut var = vec![T::zero(); nc];
        for b in 0..nb {
            for c in 0..nc {
                mean[c] += xv[(b * nc + c) * nl..][..nl].iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for b in 0..nb {
            for c in 0..nc {
                var[c] += xv[(b * nc + c) * nl..][..nl]
                    .iter()
                    .map(|&v| (v - mean[c]) * (v - mean[c]))
                    .sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..nb {
            for c in 0..nc {
                let off = (b * nc + c) * nl;
                for j in off..off + nl {
                    xhat[j] = (xv[j] - mean[c]) * inv_std[c];
                    out[j] = xhat[j] * gv[c] + bv[c];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let op = Op::BatchNorm { x, gain, bias, dims: [nb, nc, nl], xhat, inv_std };
        Ok((self.push(value, op, &[x, gain, bias]), mean, var))
    }

    /// Per-channel affine map with fixed statistics:
    /// `(x - mean[c]) / sqrt(var[c] + eps) * gain[c] + bias[c]` for `x: [B, C, L]`.
    pub fn batch_norm_fixed(&mut self, x: Var, gain: Var, bias: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || self.shape(gain) != [shape[1]] || mean.len() != shape[1] || var.len() != shape[1] {
            return shape_err("batch_norm_fixed", &shape, self.shape(gain));
        }
        let [nb, nc, nl] = [shape[0], shape[1], shape[2]];
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..nb {
            for c in 0..nc {
                let off = (b * nc + c) * nl;
                for j in off..off + nl {
                    out[j] = (xv[j] - mean[c]) * inv_std[c] * gv[c] + bv[c];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let op = Op::ChannelAffine { x, gain, bias, dims: [nb, nc, nl], mean: mean.to_vec(), inv_std };
        Ok(self.push(value, op, &[x, gain, bias]))
    }

    /// Row lookup: `table: [V, E]`, result `[ids.len(), E]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return shape_err("gather_rows", &shape, &[]);
        }
        let (v, cols) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index(format!("id {bad} out of range for table of {v} rows")));
        }
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            data.extend_from_slice(&tv[id * cols..(id + 1) * cols]);
        }
        let value = Tensor::new(vec![ids.len(), cols], data)?;
        Ok(self.push(value, Op::Gather { table, ids: ids.to_vec(), cols }, &[table]))
    }
}

fn add_channel_bias<T: Scalar>(y: &mut [T], bias: &[T], nb: usize, nc: usize, nl: usize) {
    for b in 0..nb {
        for c in 0..nc {
            y[(b * nc + c) * nl..][..nl].iter_mut().for_each(|v| *v += bias[c]);
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn matmul_by_hand() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.constant(t(&[2, 1], &[1., 1.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &t(&[2, 1], &[3., 7.]));
    }

    #[test]
    fn matmul_inner_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn add_zero_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[1.5, -2., 7.]));
        let z = tape.constant(Tensor::scalar(0.0));
        let y = tape.add(x, z).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn broadcast_trailing_and_inner_axes() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[0., 1., 2., 3., 4., 5.]));
        let row = tape.constant(t(&[3], &[10., 20., 30.]));
        let col = tape.constant(t(&[2, 1], &[100., 200.]));
        let a = tape.add(x, row).unwrap();
        assert_eq!(tape.value(a).data(), &[10., 21., 32., 13., 24., 35.]);
        let b = tape.mul(x, col).unwrap();
        assert_eq!(tape.value(b).data(), &[0., 100., 200., 600., 800., 1000.]);
        let bad = tape.constant(t(&[2], &[1., 2.]));
        assert!(tape.add(x, bad).is_err());
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[3.]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[1., -4., 9.]));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1., 1., 1.]);
    }

    #[test]
    fn two_paths_sum() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        let a = tape.scale(x, 3.0);
        let b = tape.exp(x);
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s);
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        assert!((g[0] - (3.0 + 1f64.exp())).abs() < 1e-12);
        assert!((g[1] - (3.0 + 2f64.exp())).abs() < 1e-12);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2., 2.]);
        tape.zero_grad();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1., 1.]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
        let mut empty = Tape::<f64>::new();
        let _ = &mut empty;
    }

    #[test]
    fn activations_by_hand() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1., 0., 2.]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0., 0., 2.]);
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item().unwrap(), 0.5);
        let zz = tape.constant(t(&[2], &[0., 0.]));
        let sm = tape.softmax(zz).unwrap();
        assert_eq!(tape.value(sm).data(), &[0.5, 0.5]);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[-1., 0., 2.]));
        let r = tape.relu(x);
        let loss = tape.sum(r);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0., 0., 1.]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[1., 0.]));
        assert!(matches!(tape.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 4], &[0.3, -8., 12., 1., 700., 699., -5., 0.]));
        let y = tape.softmax(x).unwrap();
        for row in tape.value(y).data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_log_round_trip() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4], &[1e-3, 0.5, 3.0, 40.0]));
        let l = tape.log(x).unwrap();
        let e = tape.exp(l);
        for (a, b) in tape.value(e).data().iter().zip(tape.value(x).data()) {
            assert!(((a - b) / b).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_slice_inverse() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::from_fn(&[2, 2, 3], |i| i as f64));
        let b = tape.constant(Tensor::<f64>::from_fn(&[2, 1, 3], |i| 100.0 + i as f64));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 3, 3]);
        let a2 = tape.slice(c, 1, 0, 2).unwrap();
        let b2 = tape.slice(c, 1, 2, 1).unwrap();
        assert_eq!(tape.value(a2), tape.value(a));
        assert_eq!(tape.value(b2), tape.value(b));
    }

    #[test]
    fn gather_out_of_range() {
        let mut tape = Tape::new();
        let table = tape.param(Tensor::<f64>::zeros(&[3, 2]));
        assert!(matches!(tape.gather_rows(table, &[0, 3]), Err(Error::Index(_))));
    }

    #[test]
    fn xent_uniform_logits() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::<f64>::zeros(&[1, 256]));
        let l = tape.softmax_cross_entropy(logits, &[17], &[1.0]).unwrap();
        assert!((tape.value(l).item().unwrap() - 256f64.ln()).abs() < 1e-12);
    }
}
