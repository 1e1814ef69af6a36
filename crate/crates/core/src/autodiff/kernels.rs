//! Slice-level numeric kernels shared by forward and backward passes.

use crate::scalar::Scalar;

/// `out[m,n] (+)= op(a)[m,k] * op(b)[k,n]` where `op` optionally transposes.
/// `a` is stored `[m,k]` (or `[k,m]` when `ta`), `b` is `[k,n]` (or `[n,k]` when `tb`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == T::zero() {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        (true, false) => {
            // a is [k,m]
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = a[p * m + i];
                    if av == T::zero() {
                        continue;
                    }
                    let row = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        (false, true) => {
            // b is [n,k]
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut acc = T::zero();
                    for (&x, &y) in arow.iter().zip(brow) {
                        acc += x * y;
                    }
                    out[i * n + j] += acc;
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = T::zero();
                    for p in 0..k {
                        acc += a[p * m + i] * b[j * k + p];
                    }
                    out[i * n + j] += acc;
                }
            }
        }
    }
}

/// Geometry of a 1-D cross-correlation `[B, C_in, L_in] -> [B, C_out, L_out]`
/// with weights `[C_out, C_in, K]`. Input position read by output `o`, tap `k`
/// is `o * stride + k - pad_left`; positions outside `[0, L_in)` are zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub len_in: usize,
    pub len_out: usize,
}

impl ConvGeom {
    /// Range of output positions `o` for which tap `k` lands inside the input,
    /// returned as `(first_o, end_o)`.
    #[inline]
    fn valid_outputs(&self, k: usize) -> (usize, usize) {
        // need 0 <= o*s + k - pl < len_in
        let first = if k >= self.pad_left {
            0
        } else {
            (self.pad_left - k).div_ceil(self.stride)
        };
        let end = if self.len_in + self.pad_left > k {
            ((self.len_in + self.pad_left - k - 1) / self.stride + 1).min(self.len_out)
        } else {
            0
        };
        (first, end.max(first))
    }

    pub fn input_len(&self) -> usize {
        self.batch * self.c_in * self.len_in
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.c_out * self.len_out
    }
}

/// `y[b,co,o] += sum_{ci,k} w[co,ci,k] * x[b,ci,o*s+k-pl]`
pub fn conv_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], y: &mut [T]) {
    let ConvGeom { batch, c_in, c_out, kernel, stride, pad_left, len_in, len_out } = *g;
    for b in 0..batch {
        for co in 0..c_out {
            let yrow = &mut y[(b * c_out + co) * len_out..][..len_out];
            for ci in 0..c_in {
                let xrow = &x[(b * c_in + ci) * len_in..][..len_in];
                for k in 0..kernel {
                    let wv = w[(co * c_in + ci) * kernel + k];
                    let (o0, o1) = g.valid_outputs(k);
                    if stride == 1 {
                        let xs = &xrow[o0 + k - pad_left..o1 + k - pad_left];
                        for (yv, &xv) in yrow[o0..o1].iter_mut().zip(xs) {
                            *yv += wv * xv;
                        }
                        continue;
                    }
                    for o in o0..o1 {
                        yrow[o] += wv * xrow[o * stride + k - pad_left];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv_forward`] with respect to `x`:
/// `x_grad[b,ci,o*s+k-pl] += sum_{co} w[co,ci,k] * y_grad[b,co,o]`.
/// This is also the forward pass of a transposed convolution.
pub fn conv_adjoint_input<T: Scalar>(g: &ConvGeom, y_grad: &[T], w: &[T], x_grad: &mut [T]) {
    let ConvGeom { batch, c_in, c_out, kernel, stride, pad_left, len_in, len_out } = *g;
    for b in 0..batch {
        for co in 0..c_out {
            let grow = &y_grad[(b * c_out + co) * len_out..][..len_out];
            for ci in 0..c_in {
                let xrow = &mut x_grad[(b * c_in + ci) * len_in..][..len_in];
                for k in 0..kernel {
                    let wv = w[(co * c_in + ci) * kernel + k];
                    let (o0, o1) = g.valid_outputs(k);
                    if stride == 1 {
                        let xs = &mut xrow[o0 + k - pad_left..o1 + k - pad_left];
                        for (xv, &gv) in xs.iter_mut().zip(&grow[o0..o1]) {
                            *xv += wv * gv;
                        }
                        continue;
                    }
                    for o in o0..o1 {
                        xrow[o * stride + k - pad_left] += wv * grow[o];
                    }
                }
            }
        }
    }
}

/// `w_grad[co,ci,k] += sum_{b,o} x[b,ci,o*s+k-pl] * y_grad[b,co,o]`
pub fn conv_adjoint_weight<T: Scalar>(g: &ConvGeom, x: &[T], y_grad: &[T], w_grad: &mut [T]) {
    let ConvGeom { batch, c_in, c_out, kernel, stride, pad_left, len_in, len_out } = *g;
    for b in 0..batch {
        for co in 0..c_out {
            let grow = &y_grad[(b * c_out + co) * len_out..][..len_out];
            for ci in 0..c_in {
                let xrow = &x[(b * c_in + ci) * len_in..][..len_in];
                for k in 0..kernel {
                    let (o0, o1) = g.valid_outputs(k);
                    let mut acc = T::zero();
                    if stride == 1 {
                        let xs = &xrow[o0 + k - pad_left..o1 + k - pad_left];
                        for (&xv, &gv) in xs.iter().zip(&grow[o0..o1]) {
                            acc += xv * gv;
                        }
                    } else {
                        for o in o0..o1 {
                            acc += xrow[o * stride + k - pad_left] * grow[o];
                        }
                    }
                    w_grad[(co * c_in + ci) * kernel + k] += acc;
                }
            }
        }
    }
}

/// Permutes axes: `out` axis `i` is input axis `perm[i]`.
pub fn permute<T: Scalar>(x: &[T], shape: &[usize], perm: &[usize], out: &mut [T]) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for o in out.iter_mut() {
        *o = x[src];
        // increment multi-index in output order
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; g.output_len()];
        for b in 0..g.batch {
            for co in 0..g.c_out {
                for o in 0..g.len_out {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for k in 0..g.kernel {
                            let pos = (o * g.stride + k) as isize - g.pad_left as isize;
                            if pos >= 0 && (pos as usize) < g.len_in {
                                acc += w[(co * g.c_in + ci) * g.kernel + k]
                                    * x[(b * g.c_in + ci) * g.len_in + pos as usize];
                            }
                        }
                    }
                    y[(b * g.c_out + co) * g.len_out + o] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_explicit_padding_loop() {
        let cases: [(usize, usize, usize, usize); 5] = [(3, 2, 1, 8), (3, 1, 1, 7), (2, 1, 1, 5), (1, 1, 0, 4), (3, 2, 1, 9)];
        for (k, s, pl, len_in) in cases {
            // symmetric padding
            let len_out = (len_in + 2 * pl - k) / s + 1;
            let g = ConvGeom { batch: 2, c_in: 3, c_out: 2, kernel: k, stride: s, pad_left: pl, len_in, len_out };
            let x: Vec<f64> = (0..g.input_len()).map(|i| (i as f64 * 0.37).sin()).collect();
            let w: Vec<f64> = (0..g.c_out * g.c_in * k).map(|i| (i as f64 * 0.91).cos()).collect();
            let mut y = vec![0.0; g.output_len()];
            conv_forward(&g, &x, &w, &mut y);
            let expected = naive_conv(&g, &x, &w);
            for (a, b) in y.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permute_2d_is_transpose() {
        let x: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let mut out = vec![0.0; 6];
        permute(&x, &[2, 3], &[1, 0], &mut out);
        assert_eq!(out, vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn permute_3d() {
        let shape = [2, 3, 4];
        let x: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let mut out = vec![0.0; 24];
        permute(&x, &shape, &[0, 2, 1], &mut out);
        // out[b, l, c] = x[b, c, l]
        for b in 0..2 {
            for l in 0..4 {
                for c in 0..3 {
                    assert_eq!(out[(b * 4 + l) * 3 + c], x[(b * 3 + c) * 4 + l]);
                }
            }
        }
    }
}
