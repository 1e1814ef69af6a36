//! Character corpora, vocabularies and batching.

mod batch;
mod dataset;
pub mod synth;
pub mod text;
pub mod vocab;

pub use batch::{sample_windows, window_starts, Batch};
pub use dataset::{pad_to_multiple, CorpusSpec, Dataset, Samples, Split};
pub use synth::{synth_corpus, Grammar};
pub use text::clean_tweet;
pub use vocab::Vocab;
