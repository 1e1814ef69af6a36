//! Training/validation data assembled from a corpus description.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::{window_starts, Batch};
use super::synth::{synth_corpus, two_topic_lines, Grammar, TWO_TOPIC_LINE_LEN};
use super::text::{clean_tweet, decode_bytes, split_lines};
use super::vocab::Vocab;
use crate::error::{Error, Result};

/// Where the text comes from and how it is cut into samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    /// `synth:<grammar>` or a file path (relative paths resolve against the
    /// data directory).
    pub source: String,
    /// Characters generated for synthetic corpora.
    pub synth_length: usize,
    /// Treat the file as one sample per line.
    pub lines: bool,
    /// Normalize mentions and links (line corpora only).
    pub clean_tweets: bool,
    /// Characters per sample; running text is cut into windows of this size.
    pub window: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            source: "synth:repeat_pattern".into(),
            synth_length: 20_000,
            lines: false,
            clean_tweets: false,
            window: 32,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Samples {
    /// Continuous text; samples are random windows.
    Running(Vec<usize>),
    /// One sample per entry, EOS-terminated.
    Lines(Vec<Vec<usize>>),
}

impl Samples {
    fn is_empty(&self) -> bool {
        match self {
            Samples::Running(t) => t.is_empty(),
            Samples::Lines(l) => l.is_empty(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocab,
    pub train: Samples,
    pub valid: Samples,
    pub window: usize,
    /// Model sequence length: `window` (plus EOS for lines) rounded up to a
    /// multiple of the encoder's down-sampling factor.
    pub seq_len: usize,
}

/// Smallest multiple of `multiple` that is `>= n`.
pub fn pad_to_multiple(n: usize, multiple: usize) -> usize {
    n.div_ceil(multiple) * multiple
}

impl Dataset {
    /// Loads the corpus. `len_multiple` is the factor the model length must
    /// be divisible by; `data_dir` resolves relative paths.
    pub fn load(spec: &CorpusSpec, len_multiple: usize, data_dir: Option<&std::path::Path>) -> Result<Self> {
        if let Some(name) = spec.source.strip_prefix("synth:") {
            let grammar: Grammar = name.parse()?;
            return Self::synthetic(grammar, spec, len_multiple);
        }
        let mut path = std::path::PathBuf::from(&spec.source);
        if path.is_relative() {
            if let Some(dir) = data_dir {
                path = dir.join(path);
            }
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let text = decode_bytes(&bytes);
        if spec.lines {
            let text: String = if spec.clean_tweets {
                text.lines().map(clean_tweet).collect::<Vec<_>>().join("\n")
            } else {
                text
            };
            let (train, valid) = split_lines(&text);
            Self::from_lines(train, valid, spec.window, len_multiple)
        } else {
            // running text: the final 5% is held out
            let chars: Vec<char> = text.chars().collect();
            let cut = chars.len() - chars.len() / 20;
            let train: String = chars[..cut].iter().collect();
            let valid: String = chars[cut..].iter().collect();
            Self::from_running(&train, &valid, spec.window, len_multiple)
        }
    }

    fn synthetic(grammar: Grammar, spec: &CorpusSpec, len_multiple: usize) -> Result<Self> {
        if grammar.is_line_based() {
            let count = spec.synth_length.div_ceil(TWO_TOPIC_LINE_LEN + 1).max(1);
            let take = |seed| two_topic_lines(count, spec.window, seed).into_iter().map(|(l, _)| l).collect();
            let train: Vec<String> = take(spec.seed);
            let valid: Vec<String> = take(spec.seed.wrapping_add(0x9e37_79b9));
            Self::from_lines_fixed(train, valid, spec.window, len_multiple)
        } else {
            let train = synth_corpus(grammar, spec.synth_length, spec.seed);
            let valid = synth_corpus(grammar, (spec.synth_length / 10).max(spec.window * 4), spec.seed.wrapping_add(0x9e37_79b9));
            Self::from_running(&train, &valid, spec.window, len_multiple)
        }
    }

    pub fn from_running(train: &str, valid: &str, window: usize, len_multiple: usize) -> Result<Self> {
        let vocab = Vocab::build(train)?;
        let (t, v) = (vocab.encode(train), vocab.encode(valid));
        for (name, s) in [("train", &t), ("valid", &v)] {
            if s.len() < window {
                return Err(Error::Data(format!("{name} text has {} characters, window is {window}", s.len())));
            }
        }
        Ok(Self {
            vocab,
            train: Samples::Running(t),
            valid: Samples::Running(v),
            window,
            seq_len: pad_to_multiple(window, len_multiple),
        })
    }

    /// Variable-length lines: each is truncated to `window`, EOS-terminated
    /// and padded.
    pub fn from_lines(train: Vec<String>, valid: Vec<String>, window: usize, len_multiple: usize) -> Result<Self> {
        let mut ds = Self::lines_common(train, valid, window)?;
        ds.seq_len = pad_to_multiple(window + 1, len_multiple);
        Ok(ds)
    }

    /// Fixed-length lines used as samples directly, without EOS.
    fn from_lines_fixed(train: Vec<String>, valid: Vec<String>, window: usize, len_multiple: usize) -> Result<Self> {
        let mut ds = Self::lines_common(train, valid, window)?;
        ds.seq_len = pad_to_multiple(window, len_multiple);
        Ok(ds)
    }

    fn lines_common(train: Vec<String>, valid: Vec<String>, window: usize) -> Result<Self> {
        let vocab = Vocab::build(&train.concat())?;
        let enc = |ls: Vec<String>| -> Vec<Vec<usize>> {
            ls.iter().map(|l| vocab.encode(l).into_iter().take(window).collect()).collect()
        };
        let (t, mut v) = (enc(train), enc(valid));
        if v.is_empty() {
            v = t.iter().take(64).cloned().collect();
        }
        let ds = Self {
            train: Samples::Lines(t),
            valid: Samples::Lines(v),
            vocab,
            window,
            seq_len: 0,
        };
        if ds.train.is_empty() {
            return Err(Error::Data("no training lines".into()));
        }
        Ok(ds)
    }

    fn appends_eos(&self) -> bool {
        matches!(self.train, Samples::Lines(_)) && self.seq_len > self.window
    }

    pub fn samples(&self, split: Split) -> &Samples {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
        }
    }

    /// A batch of `batch_size` random samples.
    pub fn sample_batch<R: Rng + ?Sized>(&self, split: Split, batch_size: usize, rng: &mut R) -> Result<Batch> {
        let seqs: Vec<Vec<usize>> = match self.samples(split) {
            Samples::Running(text) => window_starts(text.len(), self.window, batch_size, rng)?
                .into_iter()
                .map(|s| text[s..s + self.window].to_vec())
                .collect(),
            Samples::Lines(lines) => (0..batch_size)
                .map(|_| lines.choose(rng).expect("non-empty").clone())
                .collect(),
        };
        Batch::from_sequences(&seqs, self.seq_len, self.appends_eos())
    }

    pub fn batch_from(&self, seqs: &[Vec<usize>]) -> Result<Batch> {
        Batch::from_sequences(seqs, self.seq_len, self.appends_eos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn running_windows_padded_to_multiple() {
        let spec = CorpusSpec { window: 30, ..Default::default() };
        let ds = Dataset::load(&spec, 8, None).unwrap();
        assert_eq!(ds.seq_len, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = ds.sample_batch(Split::Train, 4, &mut rng).unwrap();
        assert_eq!(b.ids.len(), 4 * 32);
        assert_eq!(b.lengths, vec![30; 4]);
    }

    #[test]
    fn two_topic_lines_fill_the_window() {
        let spec = CorpusSpec { source: "synth:two_topic".into(), window: 32, ..Default::default() };
        let ds = Dataset::load(&spec, 8, None).unwrap();
        assert_eq!(ds.seq_len, 32);
        assert_eq!(ds.vocab.len(), 5 + 12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = ds.sample_batch(Split::Valid, 3, &mut rng).unwrap();
        assert!(b.mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn tweet_file_lines_get_eos() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tweets.txt");
        let body: String = (0..300).map(|i| format!("@user{i} hello http://x.y/{i}\n")).collect();
        std::fs::write(&path, body).unwrap();
        let spec = CorpusSpec {
            source: "tweets.txt".into(),
            lines: true,
            clean_tweets: true,
            window: 20,
            ..Default::default()
        };
        let ds = Dataset::load(&spec, 8, Some(dir.path())).unwrap();
        assert_eq!(ds.seq_len, 24);
        let Samples::Lines(lines) = &ds.train else { panic!() };
        assert_eq!(ds.vocab.decode(&lines[0]), "@userid hello url");
        let b = ds.batch_from(&lines[..1]).unwrap();
        assert_eq!(b.lengths, vec![18]);
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let spec = CorpusSpec { source: "/nonexistent/corpus.txt".into(), ..Default::default() };
        assert!(matches!(Dataset::load(&spec, 8, None), Err(Error::Data(_))));
    }
}
