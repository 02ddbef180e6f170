use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::conv_output_extent;
use crate::tensor::Padding;

pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;
pub const DEFAULT_BN_EPSILON: f64 = 1e-3;

/// One layer of a sequential network. Residual connections are expressed
/// with [`LayerSpec::AddResidual`], which adds the activation that entered
/// layer `from`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
    },
    DepthwiseConv {
        kernel: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
    },
    PointwiseConv {
        filters: usize,
        bias: bool,
    },
    Dense {
        units: usize,
        bias: bool,
    },
    Relu,
    Relu6,
    MaxPool {
        window: usize,
        stride: usize,
    },
    GlobalAvgPool,
    BatchNorm {
        momentum: f64,
        epsilon: f64,
    },
    AddResidual {
        from: usize,
    },
    Flatten,
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::DepthwiseConv { .. } => "depthwise_conv",
            LayerSpec::PointwiseConv { .. } => "pointwise_conv",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Relu6 => "relu6",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::AddResidual { .. } => "add_residual",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }

    pub fn conv(filters: usize, kernel: usize, stride: usize, padding: Padding, bias: bool) -> Self {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding,
            bias,
        }
    }

    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm {
            momentum: DEFAULT_BN_MOMENTUM,
            epsilon: DEFAULT_BN_EPSILON,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("{}: {m}", self.kind())));
        match *self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                ..
            } => {
                if filters == 0 || kernel == 0 || stride == 0 {
                    return bad("filters, kernel and stride must be >= 1");
                }
            }
            LayerSpec::DepthwiseConv { kernel, stride, .. } => {
                if kernel == 0 || stride == 0 {
                    return bad("kernel and stride must be >= 1");
                }
            }
            LayerSpec::PointwiseConv { filters, .. } | LayerSpec::Dense { units: filters, .. } => {
                if filters == 0 {
                    return bad("width must be >= 1");
                }
            }
            LayerSpec::MaxPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return bad("window and stride must be >= 1");
                }
            }
            LayerSpec::BatchNorm { momentum, epsilon } => {
                if !(0.0..=1.0).contains(&momentum) || epsilon.is_nan() || epsilon <= 0.0 {
                    return bad("momentum must be in [0,1] and epsilon > 0");
                }
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                return bad("rate must be in [0, 1)");
            }
            _ => {}
        }
        Ok(())
    }
}

/// Per-sample activation shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ActShape {
    pub fn elements(&self) -> usize {
        match *self {
            ActShape::Spatial { c, h, w } => c * h * w,
            ActShape::Flat(n) => n,
        }
    }

    pub fn with_batch(&self, b: usize) -> Vec<usize> {
        match *self {
            ActShape::Spatial { c, h, w } => vec![b, c, h, w],
            ActShape::Flat(n) => vec![b, n],
        }
    }

    fn channels(&self) -> usize {
        match *self {
            ActShape::Spatial { c, .. } => c,
            ActShape::Flat(n) => n,
        }
    }
}

impl std::fmt::Display for ActShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActShape::Spatial { c, h, w } => write!(f, "{c}x{h}x{w}"),
            ActShape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// Shape of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamShape {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl ParamShape {
    fn new(name: &'static str, shape: Vec<usize>, trainable: bool) -> Self {
        ParamShape { name, shape, trainable }
    }

    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub trainable: usize,
    pub non_trainable: usize,
    pub total: usize,
}

impl ParamCount {
    pub(crate) fn add_shape(&mut self, p: &ParamShape) {
        let n = p.elements();
        if p.trainable {
            self.trainable += n;
        } else {
            self.non_trainable += n;
        }
        self.total += n;
    }
}

impl std::ops::Add for ParamCount {
    type Output = ParamCount;

    fn add(self, o: ParamCount) -> ParamCount {
        ParamCount {
            trainable: self.trainable + o.trainable,
            non_trainable: self.non_trainable + o.non_trainable,
            total: self.total + o.total,
        }
    }
}

/// Parameters split between the convolutional trunk and the regression head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub trunk: ParamCount,
    pub head: ParamCount,
}

impl ParamBreakdown {
    pub fn total(&self) -> ParamCount {
        self.trunk + self.head
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// `(channels, height, width)`
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    /// Outputs of the GAP + dense head.
    pub head_units: usize,
}

impl ModelSpec {
    /// Trunk layers followed by the GAP + dense head.
    pub fn all_layers(&self) -> Vec<LayerSpec> {
        let mut v = self.layers.clone();
        v.push(LayerSpec::GlobalAvgPool);
        v.push(LayerSpec::Dense {
            units: self.head_units,
            bias: true,
        });
        v
    }

    pub fn input_act(&self) -> ActShape {
        let (c, h, w) = self.input_shape;
        ActShape::Spatial { c, h, w }
    }

    /// Activation shapes: entry `i` enters layer `i`, the last is the output.
    pub fn infer_shapes(&self) -> Result<Vec<ActShape>> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 || self.head_units == 0 {
            return Err(Error::invalid("input extents and head width must be >= 1"));
        }
        let layers = self.all_layers();
        let mut acts = vec![self.input_act()];
        for (i, layer) in layers.iter().enumerate() {
            layer.validate()?;
            let cur = acts[i];
            let next = next_shape(i, layer, cur, &acts)?;
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn output_units(&self) -> Result<usize> {
        match self.infer_shapes()?.last() {
            Some(ActShape::Flat(n)) => Ok(*n),
            _ => Err(Error::invalid("model output is not flat")),
        }
    }

    /// Parameter tensor shapes for every layer (trunk then head).
    pub fn param_shapes(&self) -> Result<Vec<Vec<ParamShape>>> {
        let acts = self.infer_shapes()?;
        Ok(self
            .all_layers()
            .iter()
            .zip(&acts)
            .map(|(layer, &input)| layer_param_shapes(layer, input))
            .collect())
    }

    pub fn parameter_breakdown(&self) -> Result<ParamBreakdown> {
        let shapes = self.param_shapes()?;
        let split = self.layers.len();
        let mut trunk = ParamCount::default();
        let mut head = ParamCount::default();
        for (i, layer) in shapes.iter().enumerate() {
            let target = if i < split { &mut trunk } else { &mut head };
            for p in layer {
                target.add_shape(p);
            }
        }
        Ok(ParamBreakdown { trunk, head })
    }

    /// Human-readable layer table with counts.
    pub fn describe(&self) -> Result<String> {
        let acts = self.infer_shapes()?;
        let shapes = self.param_shapes()?;
        let layers = self.all_layers();
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.name);
        let _ = writeln!(s, "input: {}", acts[0]);
        let _ = writeln!(s, "{:>4}  {:<16} {:>14} {:>12}", "idx", "layer", "output", "params");
        for (i, layer) in layers.iter().enumerate() {
            let n: usize = shapes[i].iter().map(ParamShape::elements).sum();
            let tag = if i >= self.layers.len() { " (head)" } else { "" };
            let _ = writeln!(
                s,
                "{:>4}  {:<16} {:>14} {:>12}{}",
                i,
                layer.kind(),
                acts[i + 1].to_string(),
                n,
                tag
            );
        }
        let b = self.parameter_breakdown()?;
        let t = b.total();
        let _ = writeln!(
            s,
            "trunk params: {} (trainable {}, non-trainable {})",
            b.trunk.total, b.trunk.trainable, b.trunk.non_trainable
        );
        let _ = writeln!(s, "head params: {}", b.head.total);
        let _ = writeln!(
            s,
            "total params: {} (trainable {}, non-trainable {})",
            t.total, t.trainable, t.non_trainable
        );
        Ok(s)
    }
}

fn spatial(i: usize, layer: &LayerSpec, s: ActShape) -> Result<(usize, usize, usize)> {
    match s {
        ActShape::Spatial { c, h, w } => Ok((c, h, w)),
        ActShape::Flat(_) => Err(Error::invalid(format!(
            "layer {i} ({}) needs a spatial input, got flat {s}",
            layer.kind()
        ))),
    }
}

fn next_shape(i: usize, layer: &LayerSpec, cur: ActShape, acts: &[ActShape]) -> Result<ActShape> {
    Ok(match *layer {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding,
            ..
        } => {
            let (_, h, w) = spatial(i, layer, cur)?;
            let (oh, _) = conv_output_extent(h, kernel, stride, padding)?;
            let (ow, _) = conv_output_extent(w, kernel, stride, padding)?;
            ActShape::Spatial {
                c: filters,
                h: oh,
                w: ow,
            }
        }
        LayerSpec::DepthwiseConv {
            kernel,
            stride,
            padding,
            ..
        } => {
            let (c, h, w) = spatial(i, layer, cur)?;
            let (oh, _) = conv_output_extent(h, kernel, stride, padding)?;
            let (ow, _) = conv_output_extent(w, kernel, stride, padding)?;
            ActShape::Spatial { c, h: oh, w: ow }
        }
        LayerSpec::PointwiseConv { filters, .. } => {
            let (_, h, w) = spatial(i, layer, cur)?;
            ActShape::Spatial { c: filters, h, w }
        }
        LayerSpec::Dense { units, .. } => match cur {
            ActShape::Flat(_) => ActShape::Flat(units),
            _ => {
                return Err(Error::invalid(format!(
                    "layer {i} (dense) needs a flat input, got {cur}"
                )))
            }
        },
        LayerSpec::MaxPool { window, stride } => {
            let (c, h, w) = spatial(i, layer, cur)?;
            let (oh, _) = conv_output_extent(h, window, stride, Padding::Valid)?;
            let (ow, _) = conv_output_extent(w, window, stride, Padding::Valid)?;
            ActShape::Spatial { c, h: oh, w: ow }
        }
        LayerSpec::GlobalAvgPool => {
            let (c, _, _) = spatial(i, layer, cur)?;
            ActShape::Flat(c)
        }
        LayerSpec::Flatten => ActShape::Flat(cur.elements()),
        LayerSpec::AddResidual { from } => {
            if from >= i {
                return Err(Error::invalid(format!(
                    "layer {i}: residual source {from} must precede the add"
                )));
            }
            if acts[from] != cur {
                return Err(Error::invalid(format!(
                    "layer {i}: residual shapes differ ({} vs {cur})",
                    acts[from]
                )));
            }
            cur
        }
        LayerSpec::Relu | LayerSpec::Relu6 | LayerSpec::BatchNorm { .. } | LayerSpec::Dropout { .. } => cur,
    })
}

fn layer_param_shapes(layer: &LayerSpec, input: ActShape) -> Vec<ParamShape> {
    let cin = input.channels();
    let mut v = Vec::new();
    let push_bias = |v: &mut Vec<ParamShape>, bias: bool, n: usize| {
        if bias {
            v.push(ParamShape::new("bias", vec![n], true));
        }
    };
    match *layer {
        LayerSpec::Conv {
            filters, kernel, bias, ..
        } => {
            v.push(ParamShape::new("weights", vec![filters, cin, kernel, kernel], true));
            push_bias(&mut v, bias, filters);
        }
        LayerSpec::DepthwiseConv { kernel, bias, .. } => {
            v.push(ParamShape::new("weights", vec![cin, 1, kernel, kernel], true));
            push_bias(&mut v, bias, cin);
        }
        LayerSpec::PointwiseConv { filters, bias } => {
            v.push(ParamShape::new("weights", vec![filters, cin, 1, 1], true));
            push_bias(&mut v, bias, filters);
        }
        LayerSpec::Dense { units, bias } => {
            v.push(ParamShape::new("weights", vec![cin, units], true));
            push_bias(&mut v, bias, units);
        }
        LayerSpec::BatchNorm { .. } => {
            v.push(ParamShape::new("gamma", vec![cin], true));
            v.push(ParamShape::new("beta", vec![cin], true));
            v.push(ParamShape::new("moving_mean", vec![cin], false));
            v.push(ParamShape::new("moving_var", vec![cin], false));
        }
        _ => {}
    }
    v
}

/// Parameters of a `k x k` convolution from `cin` to `cout` channels, no bias.
pub fn standard_conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k * k
}

/// Depthwise `k x k` plus pointwise `cin -> cout`, no bias.
pub fn separable_conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cin * k * k + cin * cout
}
