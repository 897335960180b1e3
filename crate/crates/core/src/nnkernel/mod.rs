//! Deterministic dense-network kernel: seeded RNG, parameters, forward and
//! backward passes, losses and optimizers.

mod loss;
mod matrix;
mod network;
mod optim;
mod params;
mod rng;

pub use loss::{bce_loss, softmax_cross_entropy, PROB_EPS};
pub use matrix::{one_hot, Matrix};
pub use network::{Network, Trace};
pub use optim::{apply_update, OptimizerKind, OptimizerState};
pub use params::{
    decode_layout, encode_layout, encoded_layout_len, init_params, init_params_with, param_count,
    validate_layers, Activation, InitScheme, LayerSpec, LayoutEntry, ParamVector,
};
pub use rng::{splitmix64, Rng};

pub(crate) use loss::clamp_prob;
