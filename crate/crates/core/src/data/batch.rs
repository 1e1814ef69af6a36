use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Fixed-length, integer-encoded sequences, row-major `[batch_size, seq_len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    /// 1.0 where a position counts toward the loss, 0.0 on padding.
    pub mask: Vec<f64>,
    /// Scored positions per row.
    pub lengths: Vec<usize>,
    pub batch_size: usize,
    pub seq_len: usize,
}

impl Batch {
    /// Pads each sequence with PAD up to `seq_len`, optionally appending EOS
    /// first. Sequences that do not fit are truncated.
    pub fn from_sequences(seqs: &[Vec<usize>], seq_len: usize, append_eos: bool) -> Result<Self> {
        if seqs.is_empty() || seq_len == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        let mut ids = Vec::with_capacity(seqs.len() * seq_len);
        let mut mask = Vec::with_capacity(seqs.len() * seq_len);
        let mut lengths = Vec::with_capacity(seqs.len());
        for s in seqs {
            let body = if append_eos { seq_len - 1 } else { seq_len };
            let mut row: Vec<usize> = s.iter().copied().take(body).collect();
            if append_eos {
                row.push(EOS);
            }
            let len = row.len();
            row.resize(seq_len, PAD);
            ids.extend_from_slice(&row);
            mask.extend((0..seq_len).map(|i| if i < len { 1.0 } else { 0.0 }));
            lengths.push(len);
        }
        Ok(Self { ids, mask, lengths, batch_size: seqs.len(), seq_len })
    }

    /// Decoder input: targets shifted right by one with BOS in front.
    pub fn history(&self) -> Vec<usize> {
        let mut h = Vec::with_capacity(self.ids.len());
        for row in self.ids.chunks(self.seq_len) {
            h.push(BOS);
            h.extend_from_slice(&row[..self.seq_len - 1]);
        }
        h
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.seq_len..(b + 1) * self.seq_len]
    }

    /// Mean number of scored positions per sequence.
    pub fn tokens_per_seq(&self) -> f64 {
        self.lengths.iter().sum::<usize>() as f64 / self.batch_size as f64
    }
}

/// Uniform window start positions in `[0, corpus_len - window]`.
pub fn window_starts<R: Rng + ?Sized>(corpus_len: usize, window: usize, count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if window == 0 || corpus_len < window {
        return Err(Error::Data(format!(
            "corpus of {corpus_len} characters is shorter than window {window}"
        )));
    }
    Ok((0..count).map(|_| rng.random_range(0..=corpus_len - window)).collect())
}

/// `count` windows of `window` ids, deterministic in `seed`.
pub fn sample_windows(corpus: &[usize], window: usize, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = window_starts(corpus.len(), window, count, &mut rng)?;
    Ok(starts.into_iter().map(|s| corpus[s..s + window].to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_window_of_exact_length() {
        let corpus: Vec<usize> = (10..20).collect();
        let w = sample_windows(&corpus, 10, 5, 1).unwrap();
        assert!(w.iter().all(|x| x == &corpus));
    }

    #[test]
    fn short_corpus_is_an_error() {
        assert!(sample_windows(&[1, 2, 3], 4, 1, 0).is_err());
    }

    #[test]
    fn windows_are_seeded() {
        let corpus: Vec<usize> = (0..1000).collect();
        assert_eq!(sample_windows(&corpus, 30, 50, 9).unwrap(), sample_windows(&corpus, 30, 50, 9).unwrap());
        assert_ne!(sample_windows(&corpus, 30, 50, 9).unwrap(), sample_windows(&corpus, 30, 50, 10).unwrap());
    }

    #[test]
    fn windows_stay_inside() {
        let corpus: Vec<usize> = (0..40).collect();
        for w in sample_windows(&corpus, 7, 500, 3).unwrap() {
            assert_eq!(w.len(), 7);
            assert_eq!(w[6], w[0] + 6);
        }
    }

    #[test]
    fn padding_and_eos() {
        let b = Batch::from_sequences(&[vec![5, 6], vec![7, 8, 9, 10, 11]], 4, true).unwrap();
        assert_eq!(b.row(0), &[5, 6, EOS, PAD]);
        assert_eq!(b.row(1), &[7, 8, 9, EOS]);
        assert_eq!(b.mask, vec![1., 1., 1., 0., 1., 1., 1., 1.]);
        assert_eq!(b.lengths, vec![3, 4]);
        assert_eq!(b.history(), vec![BOS, 5, 6, EOS, BOS, 7, 8, 9]);
    }

    #[test]
    fn padded_running_windows() {
        let b = Batch::from_sequences(&[vec![5, 6, 7]], 4, false).unwrap();
        assert_eq!(b.row(0), &[5, 6, 7, PAD]);
        assert_eq!(b.tokens_per_seq(), 3.0);
    }
}
