//! Text VAE architectures and their objective.

mod loss;
mod spec;
mod vae;

pub use loss::{
    kl_divergence, reconstruction_nll, reparameterize, total_loss, LossBreakdown, Posterior, LOGVAR_MAX, LOGVAR_MIN,
};
pub use spec::{ModelSpec, Variant, DESK_CHANNELS, FULL_SCALE_CHANNELS};
pub use vae::{argmax, Decoded, StepOutput, TextVae};
