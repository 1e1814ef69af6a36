//! Neural network layers.

mod layers;
mod params;

pub use layers::{
    BatchNorm1d, Conv1d, Deconv1d, Embedding, Linear, LstmCell, MaskedConvStack, BATCH_NORM_EPS,
    BATCH_NORM_MOMENTUM, LAYER_NORM_EPS,
};
pub use params::{grad_check_store, Mode, ParamEntry, ParamId, ParamStore, Session};
