//! Linear probe measuring how much topic information the latent code holds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Trainer;
use crate::data::synth::two_topic_lines;
use crate::error::{Error, Result};
use crate::nn::{Mode, Session};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Binary logistic regression by full-batch gradient descent on
/// standardized features. The first half of the rows trains, the rest tests.
pub fn logistic_probe(features: &[Vec<f64>], labels: &[usize]) -> Result<ProbeReport> {
    let n = features.len();
    if n < 4 || labels.len() != n {
        return Err(Error::Contract(format!("probe needs >= 4 labelled rows, got {n}")));
    }
    let d = features[0].len();
    let split = n / 2;
    let (train, test) = features.split_at(split);
    let mean: Vec<f64> = (0..d).map(|j| train.iter().map(|r| r[j]).sum::<f64>() / split as f64).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let v = train.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / split as f64;
            v.sqrt().max(1e-12)
        })
        .collect();
    let norm = |r: &[f64]| -> Vec<f64> { r.iter().zip(&mean).zip(&sd).map(|((x, m), s)| (x - m) / s).collect() };
    let xs: Vec<Vec<f64>> = train.iter().map(|r| norm(r)).collect();
    let ys: Vec<f64> = labels[..split].iter().map(|&y| y as f64).collect();

    let (mut w, mut b) = (vec![0.0; d], 0.0);
    const STEPS: usize = 2000;
    const LR: f64 = 0.5;
    const L2: f64 = 1e-4;
    for _ in 0..STEPS {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let p = crate::autodiff::sigmoid(dot(&w, x) + b);
            let e = p - y;
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += e * xi);
            gb += e;
        }
        for j in 0..d {
            w[j] -= LR * (gw[j] / split as f64 + L2 * w[j]);
        }
        b -= LR * gb / split as f64;
    }
    let accuracy = |rows: &[Vec<f64>], labels: &[usize], normalize: bool| -> f64 {
        let hits = rows
            .iter()
            .zip(labels)
            .filter(|(r, &y)| {
                let x = if normalize { norm(r) } else { r.to_vec() };
                usize::from(dot(&w, &x) + b > 0.0) == y
            })
            .count();
        hits as f64 / rows.len() as f64
    };
    Ok(ProbeReport {
        train_accuracy: accuracy(&xs, &labels[..split], false),
        test_accuracy: accuracy(test, &labels[split..], true),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Encodes `count` fresh two-topic lines, samples `z` from each posterior
/// and probes the topic label. Requires a model trained on `synth:two_topic`.
pub fn topic_probe(trainer: &Trainer, count: usize, seed: u64) -> Result<ProbeReport> {
    let window = trainer.data.window;
    let lines = two_topic_lines(count, window, seed);
    let vocab = &trainer.data.vocab;
    let z_dim = trainer.config.model.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for chunk in lines.chunks(64) {
        let seqs: Vec<Vec<usize>> = chunk.iter().map(|(l, _)| vocab.encode(l)).collect();
        let batch = trainer.data.batch_from(&seqs)?;
        let mut s = Session::new(&trainer.store, Mode::Eval);
        let post = trainer.model.encode(&mut s, &batch.ids, chunk.len())?;
        let mu = s.tape.value(post.mu).data();
        let logvar = s.tape.value(post.logvar).data();
        for (i, (_, topic)) in chunk.iter().enumerate() {
            let z: Vec<f64> = (0..z_dim)
                .map(|j| {
                    let k = i * z_dim + j;
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    mu[k] + (0.5 * logvar[k]).exp() * eps
                })
                .collect();
            features.push(z);
            labels.push(*topic);
        }
    }
    logistic_probe(&features, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_data_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..200 {
            let y = i % 2;
            let noise: f64 = StandardNormal.sample(&mut rng);
            xs.push(vec![if y == 1 { 3.0 } else { -3.0 } + 0.5 * noise, noise]);
            ys.push(y);
        }
        let r = logistic_probe(&xs, &ys).unwrap();
        assert!(r.test_accuracy > 0.98, "{r:?}");
    }

    #[test]
    fn noise_is_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..400).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
        let ys: Vec<usize> = (0..400).map(|i| i % 2).collect();
        let r = logistic_probe(&xs, &ys).unwrap();
        assert!((r.test_accuracy - 0.5).abs() < 0.1, "{r:?}");
    }
}
