//! Loss terms and their bookkeeping.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Posterior `q(z|x) = N(mu, exp(logvar))`, both `[B, Z]`.
#[derive(Clone, Copy, Debug)]
pub struct Posterior {
    pub mu: Var,
    pub logvar: Var,
}

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// `z = mu + exp(logvar / 2) * noise`; `noise: [B, Z]` is a constant.
pub fn reparameterize<T: Scalar>(tape: &mut Tape<T>, post: Posterior, noise: crate::tensor::Tensor<T>) -> Result<Var> {
    if noise.shape() != tape.shape(post.mu) {
        return shape_err("reparameterize", tape.shape(post.mu), noise.shape());
    }
    let eps = tape.constant(noise);
    let half = tape.scale(post.logvar, T::lit(0.5));
    let sigma = tape.exp(half);
    let spread = tape.mul(sigma, eps)?;
    tape.add(post.mu, spread)
}

/// `KL(q || N(0, I)) = 1/2 sum_j (mu^2 + sigma^2 - log sigma^2 - 1)`,
/// averaged over the batch.
pub fn kl_divergence<T: Scalar>(tape: &mut Tape<T>, post: Posterior) -> Result<Var> {
    let batch = tape.shape(post.mu)[0];
    let mu2 = tape.mul(post.mu, post.mu)?;
    let var = tape.exp(post.logvar);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, post.logvar)?;
    let c = tape.add_scalar(b, -T::one());
    let s = tape.sum(c);
    Ok(tape.scale(s, T::lit(0.5 / batch as f64)))
}

/// Softmax cross-entropy of `logits: [B, L, V]` against `targets: [B * L]`,
/// summed over scored positions and averaged over the batch (nats).
pub fn reconstruction_nll<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: &[usize], mask: &[f64]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 3 || targets.len() != shape[0] * shape[1] || mask.len() != targets.len() {
        return shape_err("reconstruction_nll", &shape, &[targets.len(), mask.len()]);
    }
    let inv_b = 1.0 / shape[0] as f64;
    let weights: Vec<T> = mask.iter().map(|&m| T::lit(m * inv_b)).collect();
    tape.softmax_cross_entropy(logits, targets, &weights)
}

/// Per-batch loss summary, all in nats per sequence unless noted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec_nll: f64,
    pub kl: f64,
    pub aux_nll: f64,
    pub kl_weight: f64,
    pub alpha: f64,
    /// `rec_nll + kl_weight * kl`
    pub j_vae: f64,
    /// `j_vae + alpha * aux_nll`
    pub j_hybrid: f64,
    /// Reconstruction in bits per scored character.
    pub bpc: f64,
    /// KL in bits per scored character.
    pub kl_bpc: f64,
    pub tokens_per_seq: f64,
}

impl LossBreakdown {
    /// Total bound `rec + kl` in bits per character.
    pub fn bound_bpc(&self) -> f64 {
        self.bpc + self.kl_bpc
    }

    /// KL in nats per character.
    pub fn kl_per_char(&self) -> f64 {
        self.kl / self.tokens_per_seq
    }
}

pub fn total_loss(rec: f64, kl: f64, aux: f64, kl_weight: f64, alpha: f64, tokens_per_seq: f64) -> LossBreakdown {
    let j_vae = rec + kl_weight * kl;
    let bits = tokens_per_seq * std::f64::consts::LN_2;
    LossBreakdown {
        rec_nll: rec,
        kl,
        aux_nll: aux,
        kl_weight,
        alpha,
        j_vae,
        j_hybrid: j_vae + alpha * aux,
        bpc: rec / bits,
        kl_bpc: kl / bits,
        tokens_per_seq,
    }
}
