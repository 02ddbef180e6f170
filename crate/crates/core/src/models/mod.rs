//! Network definitions, the reference architectures and weight storage.

pub mod gradcheck;
pub mod network;
pub mod spec;
pub mod weights;
pub mod zoo;

pub use network::{layer_backward, layer_forward, LayerCache, LayerOutput, Model, ModelGrads, Tape};
pub use spec::{
    separable_conv_params, standard_conv_params, ActShape, LayerSpec, ModelSpec, ParamBreakdown, ParamCount, ParamShape,
};
pub use weights::{load_weights, model_size_bytes, save_weights};
pub use zoo::{
    build_baseline_cnn, build_manual_cnn, build_mobilenetv2_regressor, custom_cnn_spec, make_divisible,
    mobilenetv2_spec, Architecture,
};
