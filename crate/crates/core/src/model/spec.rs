use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Convolutional encoder, deconvolutional decoder, no history.
    ConvDeconv,
    /// Deconvolutional features fed to an LSTM language model.
    HybridLstm,
    /// Deconvolutional features fed to a masked-convolution language model.
    HybridBytenet,
    /// LSTM encoder and LSTM decoder.
    LstmVae,
}

impl Variant {
    pub fn has_conv_encoder(self) -> bool {
        !matches!(self, Self::LstmVae)
    }

    pub fn has_aux_pathway(self) -> bool {
        matches!(self, Self::HybridLstm | Self::HybridBytenet)
    }

    pub fn uses_history(self) -> bool {
        !matches!(self, Self::ConvDeconv)
    }

    pub const ALL: [Variant; 4] = [Self::ConvDeconv, Self::HybridLstm, Self::HybridBytenet, Self::LstmVae];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ConvDeconv => "conv_deconv",
            Self::HybridLstm => "hybrid_lstm",
            Self::HybridBytenet => "hybrid_bytenet",
            Self::LstmVae => "lstm_vae",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant {s:?}")))
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Filled in from the corpus vocabulary when zero.
    pub vocab_size: usize,
    /// Model sequence length; must be a multiple of `stride ^ channels.len()`
    /// for convolutional variants. Filled in from the corpus when zero.
    pub seq_len: usize,
    pub latent_dim: usize,
    pub embed_dim: usize,
    /// Encoder feature maps per layer; the decoder mirrors them.
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub lstm_hidden: usize,
    /// Masked convolution layers N (receptive field N + 1).
    pub bytenet_layers: usize,
    pub bytenet_channels: usize,
    /// Probability of replacing a history token with DROP.
    pub input_dropout: f64,
}

/// Encoder feature maps used in the tweet experiments at full scale.
pub const FULL_SCALE_CHANNELS: [usize; 5] = [128, 256, 512, 512, 512];
pub const DESK_CHANNELS: [usize; 5] = [32, 64, 128, 128, 128];

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            variant: Variant::HybridLstm,
            vocab_size: 0,
            seq_len: 0,
            latent_dim: 64,
            embed_dim: 16,
            channels: DESK_CHANNELS.to_vec(),
            kernel_size: 3,
            stride: 2,
            lstm_hidden: 128,
            bytenet_layers: 3,
            bytenet_channels: 64,
            input_dropout: 0.0,
        }
    }
}

impl ModelSpec {
    /// Factor the sequence length has to be divisible by.
    pub fn length_multiple(&self) -> usize {
        if self.variant.has_conv_encoder() {
            self.stride.pow(self.channels.len() as u32)
        } else {
            1
        }
    }

    pub fn top_len(&self) -> usize {
        self.seq_len / self.length_multiple()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if self.seq_len == 0 || self.latent_dim == 0 || self.embed_dim == 0 {
            return fail("seq_len, latent_dim and embed_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.input_dropout) {
            return fail(format!("input_dropout must be in [0, 1], got {}", self.input_dropout));
        }
        if self.variant.has_conv_encoder() {
            if self.channels.is_empty() || self.channels.contains(&0) {
                return fail("channels must be a non-empty list of positive sizes".into());
            }
            if self.kernel_size == 0 || self.stride == 0 {
                return fail("kernel_size and stride must be positive".into());
            }
            let m = self.length_multiple();
            if !self.seq_len.is_multiple_of(m) {
                return Err(Error::Contract(format!(
                    "sequence length {} is not divisible by {m}",
                    self.seq_len
                )));
            }
        }
        if matches!(self.variant, Variant::HybridLstm | Variant::LstmVae) && self.lstm_hidden == 0 {
            return fail("lstm_hidden must be positive".into());
        }
        if self.variant == Variant::HybridBytenet && (self.bytenet_layers == 0 || self.bytenet_channels == 0) {
            return Err(Error::Contract("the masked convolution decoder needs at least one layer".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(variant: Variant) -> ModelSpec {
        ModelSpec { variant, vocab_size: 10, seq_len: 64, ..Default::default() }
    }

    #[test]
    fn divisibility_is_enforced() {
        assert!(spec(Variant::ConvDeconv).validate().is_ok());
        let bad = ModelSpec { seq_len: 48, ..spec(Variant::ConvDeconv) };
        assert!(matches!(bad.validate(), Err(Error::Contract(_))));
        // the LSTM baseline has no length constraint
        assert!(ModelSpec { seq_len: 50, ..spec(Variant::LstmVae) }.validate().is_ok());
    }

    #[test]
    fn zero_masked_layers_rejected() {
        let s = ModelSpec { bytenet_layers: 0, ..spec(Variant::HybridBytenet) };
        assert!(s.validate().is_err());
    }

    #[test]
    fn ranges() {
        assert!(ModelSpec { input_dropout: 1.5, ..spec(Variant::LstmVae) }.validate().is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
    }
}
