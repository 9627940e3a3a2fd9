//! Network assembly: depthwise convolutions, Mamba / MambaDC layers, the
//! mask estimator, parameter sets and checkpoints.

mod checkpoint;
mod config;
mod conv;
mod layers;
mod weights;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC, VERSION,
};
pub use config::{ModelConfig, Padding};
pub use conv::depthwise_conv1d;
pub use layers::{
    forward, forward_bidirectional, forward_logits, mamba_layer, mambadc_layer, network_logits,
    network_mask, DwConvWeights, MambaDcLayerWeights, MambaLayerWeights,
};
pub use weights::{
    count_params, init_params, param_specs, BoundWeights, Init, NetworkWeights, ParamSpec,
    Parameter, DT_MAX, DT_MIN,
};
