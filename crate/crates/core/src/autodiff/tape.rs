//! Operation recording and the reverse sweep.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::kernels::{self, ConvGeom};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
}

/// How the two operands of a binary op map onto the output.
#[derive(Clone, Debug)]
pub(crate) enum Bcast {
    Same,
    ScalarA,
    ScalarB,
    /// Per output element, flat source index into `a` and `b`.
    General(Vec<usize>, Vec<usize>),
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Binary { kind: BinKind, a: Var, b: Var, bcast: Bcast },
    Scale { a: Var, c: T },
    AddScalar { a: Var },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Concat { parts: Vec<Var>, axis_lens: Vec<usize>, outer: usize, inner: usize },
    Slice { a: Var, start: usize, len: usize, axis_len: usize, outer: usize, inner: usize },
    Reshape { a: Var },
    Permute { a: Var, perm: Vec<usize> },
    Unary { kind: UnaryKind, a: Var },
    Clamp { a: Var, lo: T, hi: T },
    Softmax { a: Var, cols: usize },
    Sum { a: Var },
    SoftmaxXent { logits: Var, targets: Vec<usize>, weights: Vec<T>, probs: Vec<T>, cols: usize },
    Conv { x: Var, w: Var, bias: Option<Var>, geom: ConvGeom, transposed: bool },
    LayerNorm { x: Var, gain: Var, bias: Var, group: usize, xhat: Vec<T>, inv_std: Vec<T> },
    BatchNorm { x: Var, gain: Var, bias: Var, dims: [usize; 3], xhat: Vec<T>, inv_std: Vec<T> },
    ChannelAffine { x: Var, gain: Var, bias: Var, dims: [usize; 3], mean: Vec<T>, inv_std: Vec<T> },
    Gather { table: Var, ids: Vec<usize>, cols: usize },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<T>>,
    pub(crate) op: Op<T>,
}

/// Records operations in execution order and differentiates them in reverse.
///
/// Leaf gradients accumulate across calls to [`Tape::backward`]; call
/// [`Tape::zero_grad`] between passes to start from zero.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Nothing to differentiate through: keep the value, drop the op's saved state.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Reverse sweep from a scalar `loss`. Every reachable leaf with
    /// `requires_grad` gets `d loss / d leaf` added to its gradient slot.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 || loss_node.value.rank() != 0 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        if !loss_node.requires_grad {
            return Ok(());
        }

        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((i, g));
                continue;
            }
            self.backward_op(i, &g, &mut adj);
        }

        for (i, g) in leaf_grads {
            let slot = &mut self.nodes[i].grad;
            match slot {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn backward_op(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let out = nodes[i].value.data();
        // Runs `f` on the adjoint buffer of `v` if `v` needs a gradient.
        let mut with = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let n = &nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let buf = adj[v.0].get_or_insert_with(|| vec![T::zero(); n.value.numel()]);
            f(buf);
        };
        let val = |v: Var| nodes[v.0].value.data();

        match &nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::Binary { kind, a, b, bcast } => {
                let (av, bv) = (val(*a), val(*b));
                let sign_b = if *kind == BinKind::Sub { -T::one() } else { T::one() };
                match bcast {
                    Bcast::Same => {
                        with(*a, &mut |ga| match kind {
                            BinKind::Mul => ga.iter_mut().zip(g).zip(bv).for_each(|((d, &g), &y)| *d += g * y),
                            _ => ga.iter_mut().zip(g).for_each(|(d, &g)| *d += g),
                        });
                        with(*b, &mut |gb| match kind {
                            BinKind::Mul => gb.iter_mut().zip(g).zip(av).for_each(|((d, &g), &x)| *d += g * x),
                            _ => gb.iter_mut().zip(g).for_each(|(d, &g)| *d += sign_b * g),
                        });
                    }
                    Bcast::ScalarB => {
                        let s = bv[0];
                        with(*a, &mut |ga| match kind {
                            BinKind::Mul => ga.iter_mut().zip(g).for_each(|(d, &g)| *d += g * s),
                            _ => ga.iter_mut().zip(g).for_each(|(d, &g)| *d += g),
                        });
                        with(*b, &mut |gb| {
                            let mut acc = T::zero();
                            match kind {
                                BinKind::Mul => g.iter().zip(av).for_each(|(&g, &x)| acc += g * x),
                                _ => g.iter().for_each(|&g| acc += g),
                            }
                            gb[0] += sign_b * acc;
                        });
                    }
                    Bcast::ScalarA => {
                        let s = av[0];
                        with(*a, &mut |ga| {
                            let mut acc = T::zero();
                            match kind {
                                BinKind::Mul => g.iter().zip(bv).for_each(|(&g, &y)| acc += g * y),
                                _ => g.iter().for_each(|&g| acc += g),
                            }
                            ga[0] += acc;
                        });
                        with(*b, &mut |gb| match kind {
                            BinKind::Mul => gb.iter_mut().zip(g).for_each(|(d, &g)| *d += g * s),
                            _ => gb.iter_mut().zip(g).for_each(|(d, &g)| *d += sign_b * g),
                        });
                    }
                    Bcast::General(ai, bi) => {
                        with(*a, &mut |ga| {
                            for (o, &gv) in g.iter().enumerate() {
                                ga[ai[o]] += match kind {
                                    BinKind::Mul => gv * bv[bi[o]],
                                    _ => gv,
                                };
                            }
                        });
                        with(*b, &mut |gb| {
                            for (o, &gv) in g.iter().enumerate() {
                                gb[bi[o]] += match kind {
                                    BinKind::Mul => gv * av[ai[o]],
                                    _ => sign_b * gv,
                                };
                            }
                        });
                    }
                }
            }
            Op::Scale { a, c } => with(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(d, &g)| *d += *c * g)),
            Op::AddScalar { a } | Op::Reshape { a } => {
                with(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(d, &g)| *d += g))
            }
            Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (val(*a), val(*b));
                // dA = G B^T, dB = A^T G
                with(*a, &mut |ga| kernels::gemm(g, bv, ga, *m, *n, *k, false, true));
                with(*b, &mut |gb| kernels::gemm(av, g, gb, *k, *m, *n, true, false));
            }
            Op::Concat { parts, axis_lens, outer, inner } => {
                let total: usize = axis_lens.iter().sum();
                let mut offset = 0;
                for (p, &len) in parts.iter().zip(axis_lens) {
                    with(*p, &mut |gp| {
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..][..len * inner];
                            let dst = &mut gp[o * len * inner..][..len * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { a, start, len, axis_len, outer, inner } => with(*a, &mut |ga| {
                for o in 0..*outer {
                    let dst = &mut ga[(o * axis_len + start) * inner..][..len * inner];
                    let src = &g[o * len * inner..][..len * inner];
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                }
            }),
            Op::Permute { a, perm } => {
                let out_shape = nodes[i].value.shape();
                let mut inv = vec![0; perm.len()];
                for (j, &p) in perm.iter().enumerate() {
                    inv[p] = j;
                }
                let mut tmp = vec![T::zero(); g.len()];
                kernels::permute(g, out_shape, &inv, &mut tmp);
                with(*a, &mut |ga| ga.iter_mut().zip(&tmp).for_each(|(d, &s)| *d += s));
            }
            Op::Unary { kind, a } => {
                let x = val(*a);
                with(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        let d = match kind {
                            // relu'(0) := 0
                            UnaryKind::Relu => {
                                if x[j] > T::zero() {
                                    g[j]
                                } else {
                                    T::zero()
                                }
                            }
                            UnaryKind::Sigmoid => g[j] * out[j] * (T::one() - out[j]),
                            UnaryKind::Tanh => g[j] * (T::one() - out[j] * out[j]),
                            UnaryKind::Exp => g[j] * out[j],
                            UnaryKind::Log => g[j] / x[j],
                        };
                        ga[j] += d;
                    }
                });
            }
            Op::Clamp { a, lo, hi } => {
                let x = val(*a);
                with(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        if x[j] >= *lo && x[j] <= *hi {
                            ga[j] += g[j];
                        }
                    }
                });
            }
            Op::Softmax { a, cols } => with(*a, &mut |ga| {
                for ((grow, yrow), drow) in g.chunks(*cols).zip(out.chunks(*cols)).zip(ga.chunks_mut(*cols)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                    for j in 0..*cols {
                        drow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }),
            Op::Sum { a } => with(*a, &mut |ga| ga.iter_mut().for_each(|d| *d += g[0])),
            Op::SoftmaxXent { logits, targets, weights, probs, cols } => with(*logits, &mut |gl| {
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    let scale = w * g[0];
                    let row = &mut gl[r * cols..(r + 1) * cols];
                    let prow = &probs[r * cols..(r + 1) * cols];
                    for j in 0..*cols {
                        row[j] += scale * prow[j];
                    }
                    row[t] -= scale;
                }
            }),
            Op::Conv { x, w, bias, geom, transposed } => {
                let (xv, wv) = (val(*x), val(*w));
                if !*transposed {
                    with(*x, &mut |gx| kernels::conv_adjoint_input(geom, g, wv, gx));
                    with(*w, &mut |gw| kernels::conv_adjoint_weight(geom, xv, g, gw));
                    if let Some(b) = bias {
                        with(*b, &mut |gb| channel_sum(g, geom.batch, geom.c_out, geom.len_out, gb));
                    }
                } else {
                    // Forward was the input-adjoint of `geom`: input lives on the conv's
                    // output side, result on the conv's input side.
                    with(*x, &mut |gx| kernels::conv_forward(geom, g, wv, gx));
                    with(*w, &mut |gw| kernels::conv_adjoint_weight(geom, g, xv, gw));
                    if let Some(b) = bias {
                        with(*b, &mut |gb| channel_sum(g, geom.batch, geom.c_in, geom.len_in, gb));
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, group, xhat, inv_std } => {
                let gainv = val(*gain);
                let d = gainv.len();
                with(*gain, &mut |gg| {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                });
                with(*bias, &mut |gb| {
                    for grow in g.chunks(d) {
                        gb.iter_mut().zip(grow).for_each(|(b, &v)| *b += v);
                    }
                });
                with(*x, &mut |gx| {
                    let h = *group;
                    let hn = T::lit(h as f64);
                    let mut dh = vec![T::zero(); h];
                    for (gi, ((grow, hrow), drow)) in g
                        .chunks(h)
                        .zip(xhat.chunks(h))
                        .zip(gx.chunks_mut(h))
                        .enumerate()
                    {
                        let goff = (gi * h) % d;
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..h {
                            dh[j] = grow[j] * gainv[goff + j];
                            mean_dh += dh[j];
                            mean_dh_h += dh[j] * hrow[j];
                        }
                        mean_dh /= hn;
                        mean_dh_h /= hn;
                        let s = inv_std[gi];
                        for j in 0..h {
                            drow[j] += s * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::BatchNorm { x, gain, bias, dims, xhat, inv_std } => {
                let [nb, nc, nl] = *dims;
                let gainv = val(*gain);
                let count = T::lit((nb * nl) as f64);
                let mut sum_g = vec![T::zero(); nc];
                let mut sum_gh = vec![T::zero(); nc];
                for b in 0..nb {
                    for c in 0..nc {
                        let off = (b * nc + c) * nl;
                        for j in off..off + nl {
                            sum_g[c] += g[j];
                            sum_gh[c] += g[j] * xhat[j];
                        }
                    }
                }
                with(*gain, &mut |gg| gg.iter_mut().zip(&sum_gh).for_each(|(d, &s)| *d += s));
                with(*bias, &mut |gb| gb.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += s));
                with(*x, &mut |gx| {
                    for b in 0..nb {
                        for c in 0..nc {
                            let off = (b * nc + c) * nl;
                            let mg = sum_g[c] / count;
                            let mgh = sum_gh[c] / count;
                            let k = gainv[c] * inv_std[c];
                            for j in off..off + nl {
                                gx[j] += k * (g[j] - mg - xhat[j] * mgh);
                            }
                        }
                    }
                });
            }
            Op::ChannelAffine { x, gain, bias, dims, mean, inv_std } => {
                let [nb, nc, nl] = *dims;
                let xv = val(*x);
                let gainv = val(*gain);
                with(*x, &mut |gx| {
                    for b in 0..nb {
                        for c in 0..nc {
                            let off = (b * nc + c) * nl;
                            let k = gainv[c] * inv_std[c];
                            for j in off..off + nl {
                                gx[j] += k * g[j];
                            }
                        }
                    }
                });
                with(*gain, &mut |gg| {
                    for b in 0..nb {
                        for c in 0..nc {
                            let off = (b * nc + c) * nl;
                            for j in off..off + nl {
                                gg[c] += g[j] * (xv[j] - mean[c]) * inv_std[c];
                            }
                        }
                    }
                });
                with(*bias, &mut |gb| channel_sum(g, nb, nc, nl, gb));
            }
            Op::Gather { table, ids, cols } => with(*table, &mut |gt| {
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut gt[id * cols..(id + 1) * cols];
                    dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]).for_each(|(d, &s)| *d += s);
                }
            }),
        }
    }
}

fn channel_sum<T: Scalar>(g: &[T], nb: usize, nc: usize, nl: usize, out: &mut [T]) {
    for b in 0..nb {
        for c in 0..nc {
            let off = (b * nc + c) * nl;
            out[c] += g[off..off + nl].iter().copied().sum::<T>();
        }
    }
}
