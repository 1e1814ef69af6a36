//! Prior sampling, greedy decoding and latent interpolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::TextVae;
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `count` draws of `z ~ N(0, I)` shaped `[count, z_dim]`.
pub fn sample_prior<T: Scalar>(count: usize, z_dim: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[count, z_dim], |_| {
        let x: f64 = StandardNormal.sample(&mut rng);
        T::lit(x)
    })
}

/// Greedy decoding of each row of `z` to text of at most `max_len`
/// characters. Decoding consumes only `z` and the model's own outputs.
pub fn greedy_decode<T: Scalar>(
    model: &TextVae,
    store: &ParamStore<T>,
    vocab: &Vocab,
    z: &Tensor<T>,
    max_len: usize,
) -> Result<Vec<String>> {
    let rows = model.greedy_decode(store, z)?;
    Ok(rows.iter().map(|r| vocab.decode(&r[..max_len.min(r.len())])).collect())
}

/// `steps` evenly spaced points from `z_a` to `z_b`, endpoints included.
pub fn interpolation_path<T: Scalar>(z_a: &[T], z_b: &[T], steps: usize) -> Result<Tensor<T>> {
    if steps < 2 {
        return Err(Error::Contract(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    if z_a.len() != z_b.len() {
        return crate::error::shape_err("interpolate", &[z_a.len()], &[z_b.len()]);
    }
    let d = z_a.len();
    let mut data = Vec::with_capacity(steps * d);
    for i in 0..steps {
        if i == steps - 1 {
            data.extend_from_slice(z_b);
            continue;
        }
        let t = T::lit(i as f64 / (steps - 1) as f64);
        data.extend(z_a.iter().zip(z_b).map(|(&a, &b)| (T::one() - t) * a + t * b));
    }
    Tensor::new(vec![steps, d], data)
}

pub fn interpolate<T: Scalar>(
    model: &TextVae,
    store: &ParamStore<T>,
    vocab: &Vocab,
    z_a: &[T],
    z_b: &[T],
    steps: usize,
    max_len: usize,
) -> Result<Vec<String>> {
    let path = interpolation_path(z_a, z_b, steps)?;
    greedy_decode(model, store, vocab, &path, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, Variant};

    #[test]
    fn prior_moments() {
        let z: Tensor<f64> = sample_prior(100_000, 2, 11);
        for d in 0..2 {
            let xs: Vec<f64> = z.data().iter().skip(d).step_by(2).copied().collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.03, "var {var}");
        }
        assert_eq!(sample_prior::<f64>(3, 2, 5), sample_prior::<f64>(3, 2, 5));
        assert_ne!(sample_prior::<f64>(3, 2, 5), sample_prior::<f64>(3, 2, 6));
    }

    #[test]
    fn path_endpoints_and_midpoint() {
        let (a, b) = ([1.0, -2.0], [3.0, 0.5]);
        let p = interpolation_path(&a, &b, 3).unwrap();
        assert_eq!(&p.data()[..2], &a);
        assert_eq!(&p.data()[2..4], &[2.0, -0.75]);
        assert_eq!(&p.data()[4..], &b);
        assert_eq!(interpolation_path(&a, &b, 2).unwrap().data(), &[1.0, -2.0, 3.0, 0.5]);
        assert!(interpolation_path(&a, &b, 1).is_err());
    }

    fn tiny() -> (TextVae, ParamStore<f64>, Vocab) {
        let vocab = Vocab::from_chars(vec!['a', 'b']);
        let spec = ModelSpec {
            variant: Variant::HybridLstm,
            vocab_size: vocab.len(),
            seq_len: 8,
            latent_dim: 3,
            embed_dim: 3,
            channels: vec![3, 4],
            lstm_hidden: 5,
            ..Default::default()
        };
        let (m, s) = TextVae::build(spec, 4).unwrap();
        (m, s, vocab)
    }

    #[test]
    fn greedy_is_deterministic_and_interpolation_hits_endpoints() {
        let (m, s, v) = tiny();
        let z = sample_prior::<f64>(2, 3, 1);
        let a = greedy_decode(&m, &s, &v, &z, 8).unwrap();
        assert_eq!(a, greedy_decode(&m, &s, &v, &z, 8).unwrap());
        let path = interpolate(&m, &s, &v, &z.data()[..3], &z.data()[3..], 4, 8).unwrap();
        assert_eq!(path.len(), 4);
        assert_eq!(path[0], a[0]);
        assert_eq!(path[3], a[1]);
    }

    #[test]
    fn favoured_character_everywhere() {
        // conv_deconv with the output bias pushed to 'a' decodes "aaaa..."
        let vocab = Vocab::from_chars(vec!['a', 'b']);
        let spec = ModelSpec {
            variant: Variant::ConvDeconv,
            vocab_size: vocab.len(),
            seq_len: 4,
            latent_dim: 2,
            embed_dim: 2,
            channels: vec![2],
            ..Default::default()
        };
        let (m, mut s) = TextVae::build::<f64>(spec, 0).unwrap();
        let id = s.find("dec.aux_head.weight").unwrap();
        s.get_mut(id).data_mut().iter_mut().for_each(|w| *w = 0.0);
        let id = s.find("dec.aux_head.bias").unwrap();
        s.get_mut(id).data_mut()[vocab.id('a')] = 5.0;
        let z = sample_prior::<f64>(1, 2, 0);
        assert_eq!(greedy_decode(&m, &s, &vocab, &z, 4).unwrap(), vec!["aaaa".to_string()]);
        assert_eq!(greedy_decode(&m, &s, &vocab, &z, 2).unwrap(), vec!["aa".to_string()]);
    }
}
