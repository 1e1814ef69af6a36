//! Finite-difference gradient checks over every differentiable op, layer
//! and model variant, on random float64 instances.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckReport, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{kl_divergence, reconstruction_nll, reparameterize, ModelSpec, Posterior, TextVae, Variant};
use crate::nn::{
    grad_check_store, BatchNorm1d, Conv1d, Deconv1d, Embedding, Linear, LstmCell, MaskedConvStack, ParamStore, Session,
};
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Tolerance for smooth ops.
pub const TOL_SMOOTH: f64 = 1e-5;
/// Tolerance for piecewise ops and for layers or models containing them.
pub const TOL_PIECEWISE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Layers,
    Models,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Self::Ops),
            "layers" => Ok(Self::Layers),
            "models" => Ok(Self::Models),
            _ => Err(Error::Config(format!("unknown gradcheck scope {s:?} (ops, layers, models)"))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ops => "ops",
            Self::Layers => "layers",
            Self::Models => "models",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

type Check = Box<dyn Fn(&mut ChaCha8Rng) -> Result<GradCheckReport>>;

/// Runs `instances` random checks of every case in `scope`.
pub fn run(scope: Scope, instances: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    let cases = match scope {
        Scope::Ops => op_cases(),
        Scope::Layers => layer_cases(),
        Scope::Models => model_cases(),
    };
    let mut out = Vec::with_capacity(cases.len());
    for (i, (name, tol, check)) in cases.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64 + 1) << 32));
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let r = check(&mut rng)?;
            worst = worst.max(r.worst());
        }
        out.push(SuiteEntry { name, instances, max_rel_err: worst, tol, passed: worst < tol });
    }
    Ok(out)
}

/// Plain-text table of suite results.
pub fn format_table(entries: &[SuiteEntry]) -> String {
    let mut s = format!("{:<28} {:>9} {:>12} {:>9}  result\n", "case", "instances", "max_rel_err", "tol");
    for e in entries {
        s.push_str(&format!(
            "{:<28} {:>9} {:>12.3e} {:>9.0e}  {}\n",
            e.name,
            e.instances,
            e.max_rel_err,
            e.tol,
            if e.passed { "ok" } else { "FAIL" }
        ));
    }
    s
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values with magnitude in `[gap, 1 + gap)` and random sign, away from a
/// kink at zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = gap + rng.random_range(0.0..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces `out` to a scalar with fixed pseudo-random weights so every
/// output element contributes a distinct gradient.
fn weighted_sum(t: &mut Tape<f64>, out: Var) -> Result<Var> {
    let shape = t.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(crate::tensor::numel(&shape) as u64 + 17);
    let w = t.constant(uniform(&mut rng, &shape, -1.0, 1.0));
    let p = t.mul(out, w)?;
    Ok(t.sum(p))
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=4)
}

/// Uniform tensor with a random shape of the given rank.
fn urand(rng: &mut ChaCha8Rng, rank: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let shape: Vec<usize> = (0..rank).map(|_| dim(rng)).collect();
    uniform(rng, &shape, lo, hi)
}

fn op_case(
    name: &str,
    tol: f64,
    make: impl Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>) + 'static,
) -> (String, f64, Check) {
    let check: Check = Box::new(move |rng| {
        let (inputs, f) = make(rng);
        grad_check(
            |t: &mut Tape<f64>, v: &[Var]| {
                let out = f(t, v)?;
                weighted_sum(t, out)
            },
            &inputs,
            FD_STEP,
            tol,
        )
    });
    (name.to_string(), tol, check)
}

fn op_cases() -> Vec<(String, f64, Check)> {
    let mut cases = vec![
        op_case("add (broadcast row)", TOL_SMOOTH, |r| {
            let (a, b) = (dim(r), dim(r));
            (vec![uniform(r, &[a, b], -1.0, 1.0), uniform(r, &[b], -1.0, 1.0)], Box::new(|t, v| t.add(v[0], v[1])))
        }),
        op_case("sub (broadcast column)", TOL_SMOOTH, |r| {
            let (a, b) = (dim(r), dim(r));
            (vec![uniform(r, &[a, b], -1.0, 1.0), uniform(r, &[a, 1], -1.0, 1.0)], Box::new(|t, v| t.sub(v[0], v[1])))
        }),
        op_case("mul (general broadcast)", TOL_SMOOTH, |r| {
            let (a, b, c) = (dim(r), dim(r), dim(r));
            (
                vec![uniform(r, &[a, b, c], -1.0, 1.0), uniform(r, &[b, 1], -1.0, 1.0)],
                Box::new(|t, v| t.mul(v[0], v[1])),
            )
        }),
        op_case("scale", TOL_SMOOTH, |r| {
            let c = r.random_range(-2.0..2.0);
            (vec![urand(r, 2, -1.0, 1.0)], Box::new(move |t, v| Ok(t.scale(v[0], c))))
        }),
        op_case("add_scalar", TOL_SMOOTH, |r| {
            let c = r.random_range(-2.0..2.0);
            (vec![urand(r, 2, -1.0, 1.0)], Box::new(move |t, v| Ok(t.add_scalar(v[0], c))))
        }),
        op_case("matmul", TOL_SMOOTH, |r| {
            let (m, k, n) = (dim(r), dim(r), dim(r));
            (vec![uniform(r, &[m, k], -1.0, 1.0), uniform(r, &[k, n], -1.0, 1.0)], Box::new(|t, v| t.matmul(v[0], v[1])))
        }),
        op_case("concat", TOL_SMOOTH, |r| {
            let axis = r.random_range(0..2usize);
            let (a, b, c) = (dim(r), dim(r), dim(r));
            let (s1, s2) = if axis == 0 { ([a, c], [b, c]) } else { ([c, a], [c, b]) };
            (
                vec![uniform(r, &s1, -1.0, 1.0), uniform(r, &s2, -1.0, 1.0)],
                Box::new(move |t, v| t.concat(&[v[0], v[1]], axis)),
            )
        }),
        op_case("slice", TOL_SMOOTH, |r| {
            let (a, b) = (dim(r) + 1, dim(r));
            let start = r.random_range(0..a);
            let len = r.random_range(1..=a - start);
            (vec![uniform(r, &[a, b], -1.0, 1.0)], Box::new(move |t, v| t.slice(v[0], 0, start, len)))
        }),
        op_case("reshape", TOL_SMOOTH, |r| {
            let (a, b) = (dim(r), dim(r));
            (vec![uniform(r, &[a, b], -1.0, 1.0)], Box::new(move |t, v| t.reshape(v[0], &[b, a])))
        }),
        op_case("permute", TOL_SMOOTH, |r| {
            (vec![urand(r, 3, -1.0, 1.0)], Box::new(|t, v| t.permute(v[0], &[2, 0, 1])))
        }),
        op_case("transpose", TOL_SMOOTH, |r| {
            (vec![urand(r, 3, -1.0, 1.0)], Box::new(|t, v| t.transpose(v[0])))
        }),
        op_case("relu", TOL_PIECEWISE, |r| {
            (vec![{ let (a, b) = (dim(r), dim(r)); away_from_zero(r, &[a, b], 0.05) }], Box::new(|t, v| Ok(t.relu(v[0]))))
        }),
        op_case("clamp", TOL_PIECEWISE, |r| {
            // values avoid the bounds at +-0.5 by at least 0.05
            let (a, b) = (dim(r), dim(r));
            let x = Tensor::from_fn(&[a, b], |_| {
                let v: f64 = r.random_range(-1.5..1.5);
                if (v.abs() - 0.5).abs() < 0.05 {
                    v * 1.3
                } else {
                    v
                }
            });
            (vec![x], Box::new(|t, v| Ok(t.clamp(v[0], -0.5, 0.5))))
        }),
        op_case("sigmoid", TOL_SMOOTH, |r| {
            (vec![urand(r, 2, -3.0, 3.0)], Box::new(|t, v| Ok(t.sigmoid(v[0]))))
        }),
        op_case("tanh", TOL_SMOOTH, |r| {
            (vec![urand(r, 2, -3.0, 3.0)], Box::new(|t, v| Ok(t.tanh(v[0]))))
        }),
        op_case("exp", TOL_SMOOTH, |r| {
            (vec![urand(r, 2, -2.0, 2.0)], Box::new(|t, v| Ok(t.exp(v[0]))))
        }),
        op_case("log", TOL_SMOOTH, |r| {
            (vec![urand(r, 2, 0.3, 3.0)], Box::new(|t, v| t.log(v[0])))
        }),
        op_case("softmax", TOL_SMOOTH, |r| {
            (vec![{ let (a, b) = (dim(r), dim(r) + 1); uniform(r, &[a, b], -2.0, 2.0) }], Box::new(|t, v| t.softmax(v[0])))
        }),
        op_case("sum", TOL_SMOOTH, |r| {
            (vec![urand(r, 2, -1.0, 1.0)], Box::new(|t, v| Ok(t.sum(v[0]))))
        }),
        op_case("mean", TOL_SMOOTH, |r| {
            (vec![urand(r, 2, -1.0, 1.0)], Box::new(|t, v| Ok(t.mean(v[0]))))
        }),
        op_case("softmax_cross_entropy", TOL_SMOOTH, |r| {
            let (n, c) = (dim(r), dim(r) + 1);
            let targets: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
            let weights: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
            (
                vec![uniform(r, &[n, c], -2.0, 2.0)],
                Box::new(move |t, v| t.softmax_cross_entropy(v[0], &targets, &weights)),
            )
        }),
        op_case("layer_norm", TOL_SMOOTH, |r| {
            let (n, g) = (dim(r), dim(r) + 1);
            let d = 2 * g;
            (
                vec![uniform(r, &[n, d], -2.0, 2.0), uniform(r, &[d], 0.5, 1.5), uniform(r, &[d], -1.0, 1.0)],
                Box::new(move |t, v| t.layer_norm(v[0], v[1], v[2], g, 1e-5)),
            )
        }),
        op_case("batch_norm_train", TOL_SMOOTH, |r| {
            let (b, c, l) = (dim(r) + 1, dim(r), dim(r));
            (
                vec![uniform(r, &[b, c, l], -2.0, 2.0), uniform(r, &[c], 0.5, 1.5), uniform(r, &[c], -1.0, 1.0)],
                Box::new(|t, v| Ok(t.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0)),
            )
        }),
        op_case("batch_norm_fixed", TOL_SMOOTH, |r| {
            let (b, c, l) = (dim(r), dim(r), dim(r));
            let mean: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
            let var: Vec<f64> = (0..c).map(|_| r.random_range(0.5..2.0)).collect();
            (
                vec![uniform(r, &[b, c, l], -2.0, 2.0), uniform(r, &[c], 0.5, 1.5), uniform(r, &[c], -1.0, 1.0)],
                Box::new(move |t, v| t.batch_norm_fixed(v[0], v[1], v[2], &mean, &var, 1e-5)),
            )
        }),
        op_case("gather_rows", TOL_SMOOTH, |r| {
            let (rows, d) = (dim(r) + 1, dim(r));
            let ids: Vec<usize> = (0..dim(r) + 2).map(|_| r.random_range(0..rows)).collect();
            (vec![uniform(r, &[rows, d], -1.0, 1.0)], Box::new(move |t, v| t.gather_rows(v[0], &ids)))
        }),
    ];
    for (stride, kernel) in CONV_SHAPES {
        let pad = (kernel - 1) / 2;
        cases.push(op_case(&format!("conv1d s{stride} k{kernel}"), TOL_SMOOTH, move |r| {
            let (b, ci, co) = (dim(r), dim(r), dim(r));
            let len_in = stride * (dim(r) + 1);
            let len_out = len_in.div_ceil(stride);
            (
                vec![
                    uniform(r, &[b, ci, len_in], -1.0, 1.0),
                    uniform(r, &[co, ci, kernel], -1.0, 1.0),
                    uniform(r, &[co], -1.0, 1.0),
                ],
                Box::new(move |t, v| t.conv1d(v[0], v[1], Some(v[2]), stride, pad, len_out)),
            )
        }));
        cases.push(op_case(&format!("conv_transpose1d s{stride} k{kernel}"), TOL_SMOOTH, move |r| {
            let (b, ci, co) = (dim(r), dim(r), dim(r));
            let len_in = dim(r) + 1;
            (
                vec![
                    uniform(r, &[b, ci, len_in], -1.0, 1.0),
                    uniform(r, &[ci, co, kernel], -1.0, 1.0),
                    uniform(r, &[co], -1.0, 1.0),
                ],
                Box::new(move |t, v| t.conv_transpose1d(v[0], v[1], Some(v[2]), stride, pad, len_in * stride)),
            )
        }));
    }
    cases.push(op_case("conv1d causal k2", TOL_SMOOTH, |r| {
        let (b, ci, co, l) = (dim(r), dim(r), dim(r), dim(r) + 1);
        (
            vec![uniform(r, &[b, ci, l], -1.0, 1.0), uniform(r, &[co, ci, 2], -1.0, 1.0)],
            Box::new(move |t, v| t.conv1d(v[0], v[1], None, 1, 1, l)),
        )
    }));
    cases
}

/// `(stride, kernel)` pairs used by the models: strided encoder/decoder
/// convolutions and 1x1 output heads.
pub const CONV_SHAPES: [(usize, usize); 3] = [(2, 3), (1, 1), (1, 3)];

/// Randomizes every trainable entry so ReLU inputs do not sit exactly on the
/// kink (zero-initialized biases over zero-padded inputs would).
fn jitter(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for e in store.entries_mut().iter_mut().filter(|e| e.trainable) {
        for x in e.value.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
}

fn layer_case(
    name: &str,
    tol: f64,
    make: impl Fn(&mut ChaCha8Rng) -> (ParamStore<f64>, Box<dyn Fn(&mut Session<f64>) -> Result<Var>>) + 'static,
) -> (String, f64, Check) {
    let check: Check = Box::new(move |rng| {
        let (mut store, f) = make(rng);
        jitter(&mut store, rng);
        grad_check_store(
            &store,
            |s| {
                let out = f(s)?;
                weighted_sum(&mut s.tape, out)
            },
            FD_STEP,
            tol,
        )
    });
    (name.to_string(), tol, check)
}

/// Registers an input tensor as a trainable store entry so its gradient is
/// checked alongside the layer parameters.
fn input(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, shape: &[usize]) -> crate::nn::ParamId {
    store.add("input", uniform(rng, shape, -1.0, 1.0), true)
}

fn layer_cases() -> Vec<(String, f64, Check)> {
    vec![
        layer_case("Linear", TOL_SMOOTH, |r| {
            let mut st = ParamStore::new();
            let (n, i, o) = (dim(r), dim(r), dim(r));
            let l = Linear::new(&mut st, "lin", i, o, r);
            let x = input(&mut st, r, &[n, i]);
            (st, Box::new(move |s| {
                let xv = s.var(x);
                l.forward(s, xv)
            }))
        }),
        layer_case("Embedding", TOL_SMOOTH, |r| {
            let mut st = ParamStore::new();
            let (v, d) = (dim(r) + 1, dim(r));
            let e = Embedding::new(&mut st, "emb", v, d, r);
            let ids: Vec<usize> = (0..5).map(|_| r.random_range(0..v)).collect();
            (st, Box::new(move |s| e.forward(s, &ids)))
        }),
        layer_case("Conv1d", TOL_SMOOTH, |r| {
            let mut st = ParamStore::new();
            let (b, ci, co) = (dim(r), dim(r), dim(r));
            let c = Conv1d::new(&mut st, "conv", ci, co, 3, 2, r);
            let len = 2 * dim(r);
            let x = input(&mut st, r, &[b, ci, len]);
            (st, Box::new(move |s| {
                let xv = s.var(x);
                c.forward(s, xv)
            }))
        }),
        layer_case("Deconv1d", TOL_SMOOTH, |r| {
            let mut st = ParamStore::new();
            let (b, ci, co) = (dim(r), dim(r), dim(r));
            let d = Deconv1d::new(&mut st, "deconv", ci, co, 3, 2, r);
            let len = dim(r);
            let x = input(&mut st, r, &[b, ci, len]);
            (st, Box::new(move |s| {
                let xv = s.var(x);
                d.forward(s, xv)
            }))
        }),
        layer_case("BatchNorm1d", TOL_SMOOTH, |r| {
            let mut st = ParamStore::new();
            let (b, c, l) = (dim(r) + 1, dim(r), dim(r));
            let bn = BatchNorm1d::new(&mut st, "bn", c);
            let x = input(&mut st, r, &[b, c, l]);
            (st, Box::new(move |s| {
                let xv = s.var(x);
                bn.forward(s, xv)
            }))
        }),
        layer_case("LstmCell (3 steps, layer norm)", TOL_SMOOTH, |r| {
            let mut st = ParamStore::new();
            let (b, i, h) = (dim(r), dim(r), dim(r) + 1);
            let cell = LstmCell::new(&mut st, "lstm", i, h, r);
            let x = input(&mut st, r, &[3 * b, i]);
            let h0 = st.add("h0", uniform(r, &[b, h], -1.0, 1.0), true);
            let c0 = st.add("c0", uniform(r, &[b, h], -1.0, 1.0), true);
            (st, Box::new(move |s| {
                let xv = s.var(x);
                let xs = (0..3).map(|t| s.tape.slice(xv, 0, t * b, b)).collect::<Result<Vec<_>>>()?;
                let (hv, cv) = (s.var(h0), s.var(c0));
                let hs = cell.unroll(s, &xs, hv, cv)?;
                s.tape.concat(&hs, 0)
            }))
        }),
        layer_case("MaskedConvStack", TOL_PIECEWISE, |r| {
            let mut st = ParamStore::new();
            let (b, ci, c, n) = (dim(r), dim(r), dim(r), dim(r));
            let m = MaskedConvStack::new(&mut st, "masked", n, ci, c, r).expect("n >= 1");
            let len = dim(r) + 2;
            let x = input(&mut st, r, &[b, ci, len]);
            (st, Box::new(move |s| {
                let xv = s.var(x);
                m.forward(s, xv)
            }))
        }),
        layer_case("reparameterize", TOL_SMOOTH, |r| {
            let mut st = ParamStore::new();
            let (b, z) = (dim(r), dim(r));
            let mu = input(&mut st, r, &[b, z]);
            let lv = st.add("logvar", uniform(r, &[b, z], -2.0, 2.0), true);
            let noise = uniform(r, &[b, z], -2.0, 2.0);
            (st, Box::new(move |s| {
                let post = Posterior { mu: s.var(mu), logvar: s.var(lv) };
                reparameterize(&mut s.tape, post, noise.clone())
            }))
        }),
        layer_case("kl_divergence", TOL_SMOOTH, |r| {
            let mut st = ParamStore::new();
            let (b, z) = (dim(r), dim(r));
            let mu = input(&mut st, r, &[b, z]);
            let lv = st.add("logvar", uniform(r, &[b, z], -2.0, 2.0), true);
            (st, Box::new(move |s| {
                let post = Posterior { mu: s.var(mu), logvar: s.var(lv) };
                kl_divergence(&mut s.tape, post)
            }))
        }),
        layer_case("reconstruction_nll", TOL_SMOOTH, |r| {
            let mut st = ParamStore::new();
            let (b, l, v) = (dim(r), dim(r), dim(r) + 1);
            let logits = input(&mut st, r, &[b, l, v]);
            let targets: Vec<usize> = (0..b * l).map(|_| r.random_range(0..v)).collect();
            let mask: Vec<f64> = (0..b * l).map(|_| if r.random_bool(0.8) { 1.0 } else { 0.0 }).collect();
            (st, Box::new(move |s| {
                let lv = s.var(logits);
                reconstruction_nll(&mut s.tape, lv, &targets, &mask)
            }))
        }),
    ]
}

fn model_cases() -> Vec<(String, f64, Check)> {
    Variant::ALL
        .into_iter()
        .map(|variant| {
            let check: Check = Box::new(move |rng| {
                let spec = ModelSpec {
                    variant,
                    vocab_size: 7,
                    seq_len: 8,
                    latent_dim: 3,
                    embed_dim: 3,
                    channels: vec![3, 4],
                    lstm_hidden: 4,
                    bytenet_layers: 2,
                    bytenet_channels: 3,
                    ..Default::default()
                };
                let (model, mut store) = TextVae::build::<f64>(spec, rng.random())?;
                jitter(&mut store, rng);
                let b = 2;
                let seqs: Vec<Vec<usize>> = (0..b).map(|_| (0..6).map(|_| rng.random_range(5..7)).collect()).collect();
                let batch = crate::data::Batch::from_sequences(&seqs, 8, true)?;
                let noise = uniform(rng, &[b, 3], -1.0, 1.0);
                let history = batch.history();
                let kl_weight = rng.random_range(0.0..1.0);
                grad_check_store(
                    &store,
                    |s| Ok(model.forward(s, &batch, &history, noise.clone(), kl_weight, 0.3)?.loss),
                    FD_STEP,
                    TOL_PIECEWISE,
                )
            });
            (format!("model {variant}"), TOL_PIECEWISE, check)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_pass_on_a_few_instances() {
        for e in run(Scope::Ops, 2, 3).unwrap() {
            assert!(e.passed, "{e:?}");
        }
    }

    #[test]
    fn table_lists_every_case() {
        let entries = run(Scope::Layers, 1, 0).unwrap();
        let t = format_table(&entries);
        assert_eq!(t.lines().count(), entries.len() + 1);
        assert!(entries.iter().all(|e| e.passed), "{t}");
    }

    #[test]
    fn scope_names() {
        assert_eq!("models".parse::<Scope>().unwrap(), Scope::Models);
        assert!("all".parse::<Scope>().is_err());
    }
}
