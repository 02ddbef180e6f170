//! The three benchmarked architectures and the custom-CNN family the tuner
//! searches over.

use super::network::Model;
use super::spec::{LayerSpec, ModelSpec};
use crate::dataset::{IMAGE_SIDE, NUM_COORDS};
use crate::error::{Error, Result};
use crate::tensor::Padding;

pub const BASELINE_FILTERS: [usize; 5] = [32, 64, 128, 256, 512];
pub const BASELINE_DENSE: usize = 64;
pub const MANUAL_FILTERS: [usize; 5] = [8, 16, 32, 64, 128];
pub const MANUAL_DENSE: usize = 128;

/// Inverted-residual stages: (expansion, output channels, repeats, stride).
pub const MOBILENET_V2_STAGES: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

/// Named architectures accepted by the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Baseline,
    Manual,
    MobileNetV2,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Baseline, Architecture::Manual, Architecture::MobileNetV2];

    pub fn label(self) -> &'static str {
        match self {
            Architecture::Baseline => "baseline",
            Architecture::Manual => "manual",
            Architecture::MobileNetV2 => "mobilenetv2",
        }
    }

    pub fn spec(self) -> Result<ModelSpec> {
        match self {
            Architecture::Baseline => custom_cnn_spec("baseline", &BASELINE_FILTERS, BASELINE_DENSE),
            Architecture::Manual => custom_cnn_spec("manual", &MANUAL_FILTERS, MANUAL_DENSE),
            Architecture::MobileNetV2 => mobilenetv2_spec(1.0),
        }
    }

    pub fn build(self, seed: u64) -> Result<Model> {
        Model::init(self.spec()?, seed)
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Architecture::Baseline),
            "manual" => Ok(Architecture::Manual),
            "mobilenetv2" | "mobilenet-v2" => Ok(Architecture::MobileNetV2),
            other => Err(Error::invalid(format!(
                "unknown model {other:?} (expected baseline, manual or mobilenetv2)"
            ))),
        }
    }
}

/// Stacks of `conv3x3(same) + relu + maxpool2`, one per entry of `filters`,
/// then a valid convolution spanning the remaining map to `dense_width`
/// channels at 1x1 and a relu. The head's GAP then sees a 1x1 map, so the
/// final convolution acts as a fully connected layer over all positions.
pub fn custom_cnn_spec(name: &str, filters: &[usize], dense_width: usize) -> Result<ModelSpec> {
    if filters.is_empty() || filters.contains(&0) || dense_width == 0 {
        return Err(Error::invalid(
            "custom CNN needs at least one block and non-zero widths",
        ));
    }
    let mut layers = Vec::new();
    let mut side = IMAGE_SIDE;
    for &f in filters {
        if side < 2 {
            return Err(Error::invalid(format!(
                "{} pooling blocks shrink a {IMAGE_SIDE}px input below 1px",
                filters.len()
            )));
        }
        layers.push(LayerSpec::conv(f, 3, 1, Padding::Same, true));
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
        side /= 2;
    }
    layers.push(LayerSpec::conv(dense_width, side, 1, Padding::Valid, true));
    layers.push(LayerSpec::Relu);
    Ok(ModelSpec {
        name: name.to_string(),
        input_shape: (1, IMAGE_SIDE, IMAGE_SIDE),
        layers,
        head_units: NUM_COORDS,
    })
}

pub fn build_baseline_cnn(seed: u64) -> Result<Model> {
    Architecture::Baseline.build(seed)
}

pub fn build_manual_cnn(seed: u64) -> Result<Model> {
    Architecture::Manual.build(seed)
}

/// Rounds `v` to a multiple of `divisor`, never dropping more than 10%.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut out = (((v + d / 2.0) / d).floor() * d).max(d) as usize;
    if (out as f64) < 0.9 * v {
        out += divisor;
    }
    out
}

/// MobileNetV2 trunk at width multiplier `width` on a 3-channel 96x96 input
/// (grayscale images are replicated across channels), followed by the shared
/// regression head. All convolutions are bias-free and followed by batch
/// norm; projections are linear.
pub fn mobilenetv2_spec(width: f64) -> Result<ModelSpec> {
    if width.is_nan() || width <= 0.0 {
        return Err(Error::invalid(format!("width multiplier must be > 0, got {width}")));
    }
    let mut layers = Vec::new();
    let bn = LayerSpec::batch_norm;

    let stem = make_divisible(32.0 * width, 8);
    layers.push(LayerSpec::conv(stem, 3, 2, Padding::Same, false));
    layers.push(bn());
    layers.push(LayerSpec::Relu6);

    let mut channels = stem;
    for &(t, c, n, s) in &MOBILENET_V2_STAGES {
        let out = make_divisible(c as f64 * width, 8);
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            let block_start = layers.len();
            if t != 1 {
                layers.push(LayerSpec::PointwiseConv {
                    filters: channels * t,
                    bias: false,
                });
                layers.push(bn());
                layers.push(LayerSpec::Relu6);
            }
            layers.push(LayerSpec::DepthwiseConv {
                kernel: 3,
                stride,
                padding: Padding::Same,
                bias: false,
            });
            layers.push(bn());
            layers.push(LayerSpec::Relu6);
            layers.push(LayerSpec::PointwiseConv {
                filters: out,
                bias: false,
            });
            layers.push(bn());
            if stride == 1 && channels == out {
                layers.push(LayerSpec::AddResidual { from: block_start });
            }
            channels = out;
        }
    }

    let last = if width > 1.0 {
        make_divisible(1280.0 * width, 8)
    } else {
        1280
    };
    layers.push(LayerSpec::PointwiseConv {
        filters: last,
        bias: false,
    });
    layers.push(bn());
    layers.push(LayerSpec::Relu6);

    Ok(ModelSpec {
        name: if width == 1.0 {
            "mobilenetv2".to_string()
        } else {
            format!("mobilenetv2-{width}")
        },
        input_shape: (3, IMAGE_SIDE, IMAGE_SIDE),
        layers,
        head_units: NUM_COORDS,
    })
}

pub fn build_mobilenetv2_regressor(width: f64, seed: u64) -> Result<Model> {
    Model::init(mobilenetv2_spec(width)?, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::spec::ActShape;

    #[test]
    fn divisible_rounding() {
        assert_eq!(make_divisible(32.0, 8), 32);
        assert_eq!(make_divisible(16.0 * 0.35, 8), 8);
        assert_eq!(make_divisible(24.0 * 0.75, 8), 24);
        assert_eq!(make_divisible(1.0, 8), 8);
    }

    #[test]
    fn mobilenet_final_map_is_3x3x1280() {
        let spec = mobilenetv2_spec(1.0).unwrap();
        let acts = spec.infer_shapes().unwrap();
        assert_eq!(acts[spec.layers.len()], ActShape::Spatial { c: 1280, h: 3, w: 3 });
        let adds = spec
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::AddResidual { .. }))
            .count();
        assert_eq!(adds, 10);
    }

    #[test]
    fn custom_cnn_ends_in_1x1() {
        let spec = custom_cnn_spec("m", &MANUAL_FILTERS, MANUAL_DENSE).unwrap();
        let acts = spec.infer_shapes().unwrap();
        assert_eq!(acts[spec.layers.len()], ActShape::Spatial { c: 128, h: 1, w: 1 });
        assert!(custom_cnn_spec("x", &[4; 8], 8).is_err());
    }

    #[test]
    fn architecture_names() {
        for a in Architecture::ALL {
            assert_eq!(a.label().parse::<Architecture>().unwrap(), a);
        }
        assert!("resnet".parse::<Architecture>().is_err());
    }
}
