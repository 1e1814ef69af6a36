//! Adam, learning-rate decay and the KL-annealing schedule.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_LR: f64 = 1e-3;
pub const LR_DECAY: f64 = 0.98;
pub const LR_DECAY_EVERY: u64 = 1000;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Bias-corrected Adam with one moment pair per trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    /// First and second moments, `None` for non-trainable entries.
    pub moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self::with_eps(store, ADAM_EPS)
    }

    pub fn with_eps(store: &ParamStore<T>, eps: f64) -> Self {
        let moments = store
            .entries()
            .iter()
            .map(|e| {
                e.trainable
                    .then(|| (Tensor::zeros(e.value.shape()), Tensor::zeros(e.value.shape())))
            })
            .collect();
        Self { beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps, t: 0, moments }
    }

    /// Applies one update. `grads[i]` is the gradient of store entry `i`;
    /// `None` means the parameter did not take part in the loss and counts as
    /// a zero gradient. A non-finite gradient aborts before anything changes.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<T>>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.moments.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}, got {} gradients",
                self.moments.len(),
                store.len(),
                grads.len()
            )));
        }
        for (e, g) in store.entries().iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != e.value.numel() {
                    return Err(Error::Contract(format!("gradient for {} has {} entries", e.name, g.len())));
                }
                if let Some(j) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of {}[{j}] is {} at step {}",
                        e.name,
                        g[j],
                        self.t + 1
                    )));
                }
            }
        }
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for ((entry, g), mom) in store.entries_mut().iter_mut().zip(grads).zip(&mut self.moments) {
            let Some((m, v)) = mom else { continue };
            let p = entry.value.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.as_ref().map_or(T::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm over all gradients.
pub fn global_norm<T: Scalar>(grads: &[Option<Vec<T>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Option<Vec<T>>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let k = T::lit(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}

/// Staircase decay: `base_lr * decay ^ floor(step / every)`.
pub fn lr_at(step: u64, base_lr: f64, decay: f64, every: u64) -> f64 {
    base_lr * decay.powi((step / every.max(1)) as i32)
}

/// Linear KL annealing from 0 at step 0 to 1 at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealSchedule {
    pub total_steps: u64,
}

impl AnnealSchedule {
    pub fn new(total_steps: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("anneal_steps must be positive".into()));
        }
        Ok(Self { total_steps })
    }

    pub fn weight(&self, step: u64) -> f64 {
        kl_weight_at(step, self.total_steps)
    }
}

pub fn kl_weight_at(step: u64, total_steps: u64) -> f64 {
    (step as f64 / total_steps as f64).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![vals.len()], vals.to_vec()).unwrap(), true);
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(&[0.5, -2.0, 3.0]);
        let mut adam = Adam::new(&s);
        adam.step(&mut s, &[Some(vec![1.0; 3])], 0.01).unwrap();
        // mhat = 1, vhat = 1, so the update is lr / (1 + eps)
        let expected = 0.01 / (1.0 + 1e-8);
        for (p, p0) in s.entries()[0].value.data().iter().zip([0.5, -2.0, 3.0]) {
            assert!((p0 - p - expected).abs() < 1e-15);
        }
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(&[1.0, 2.0]);
        let mut adam = Adam::new(&s);
        adam.step(&mut s, &[Some(vec![0.0, 0.0])], 0.1).unwrap();
        adam.step(&mut s, &[None], 0.1).unwrap();
        assert_eq!(s.entries()[0].value.data(), &[1.0, 2.0]);
    }

    #[test]
    fn two_steps_match_hand_evaluation() {
        let mut s = store(&[0.0]);
        let mut adam = Adam::new(&s);
        adam.step(&mut s, &[Some(vec![2.0])], 0.1).unwrap();
        adam.step(&mut s, &[Some(vec![-1.0])], 0.1).unwrap();
        let m1 = 0.1 * 2.0;
        let v1 = 0.001 * 4.0;
        let p1 = -0.1 * (m1 / 0.1) / ((v1 / 0.001f64).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + -0.1;
        let v2 = 0.999 * v1 + 0.001 * 1.0;
        let p2 = p1 - 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64 * 0.999)).sqrt() + 1e-8);
        assert!((s.entries()[0].value.data()[0] - p2).abs() < 1e-14);
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let mut s = store(&[1.0]);
        let mut adam = Adam::new(&s);
        let err = adam.step(&mut s, &[Some(vec![f64::NAN])], 0.1).unwrap_err();
        assert!(matches!(&err, Error::NonFinite(m) if m.contains("w[0]") && m.contains("step 1")));
        assert_eq!(s.entries()[0].value.data(), &[1.0]);
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn frozen_entries_are_skipped() {
        let mut s = store(&[1.0]);
        s.add("stat", Tensor::new(vec![1], vec![5.0]).unwrap(), false);
        let mut adam = Adam::new(&s);
        adam.step(&mut s, &[Some(vec![1.0]), Some(vec![1.0])], 0.1).unwrap();
        assert_eq!(s.entries()[1].value.data(), &[5.0]);
    }

    #[test]
    fn scale_invariance_when_warm() {
        let grads: Vec<f64> = (0..150).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let run = |k: f64| {
            let mut s = store(&[0.0, 0.0]);
            let mut adam = Adam::with_eps(&s, 1e-12);
            let mut last = 0.0;
            for (i, g) in grads.iter().enumerate() {
                let before = s.entries()[0].value.data()[0];
                adam.step(&mut s, &[Some(vec![g * k, -g * k])], 1e-3).unwrap();
                if i == grads.len() - 1 {
                    last = s.entries()[0].value.data()[0] - before;
                }
            }
            last
        };
        let (a, b) = (run(1.0), run(10.0));
        assert!(((a - b) / a).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn clipping() {
        let mut g = vec![Some(vec![3.0, 4.0]), None];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].as_ref().unwrap(), &[3.0, 4.0]);
        clip_global_norm(&mut g, 1.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn schedules() {
        assert_eq!(lr_at(0, 1e-3, LR_DECAY, LR_DECAY_EVERY), 1e-3);
        assert_eq!(lr_at(999, 1e-3, LR_DECAY, LR_DECAY_EVERY), 1e-3);
        assert!((lr_at(2500, 1e-3, LR_DECAY, LR_DECAY_EVERY) - 1e-3 * 0.98 * 0.98).abs() < 1e-18);
        let s = AnnealSchedule::new(400).unwrap();
        assert_eq!(s.weight(0), 0.0);
        assert_eq!(s.weight(200), 0.5);
        assert_eq!(s.weight(400), 1.0);
        assert_eq!(s.weight(800), 1.0);
        assert!(AnnealSchedule::new(0).is_err());
    }

    proptest! {
        #[test]
        fn kl_weight_is_monotone_and_bounded(a in 0u64..10_000, b in 0u64..10_000, t in 1u64..5_000) {
            let (lo, hi) = (a.min(b), a.max(b));
            let (wl, wh) = (kl_weight_at(lo, t), kl_weight_at(hi, t));
            prop_assert!((0.0..=1.0).contains(&wl) && (0.0..=1.0).contains(&wh));
            prop_assert!(wl <= wh);
        }
    }
}
