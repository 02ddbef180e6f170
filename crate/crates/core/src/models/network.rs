use std::borrow::Cow;
use std::collections::BTreeSet;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::spec::{ActShape, LayerSpec, ModelSpec, ParamCount};
use crate::error::{Error, Result};
use crate::tensor::{
    batch_norm, batch_norm_backward, conv2d, conv2d_backward, dense, dense_backward, depthwise_conv2d,
    depthwise_conv2d_backward, global_average_pool, global_average_pool_backward, max_pool2d, max_pool2d_backward,
    relu, relu6, relu6_backward, relu_backward, BatchNormCache, BatchNormMode, BatchNormParams, Element, LayerParams,
    Padding, Tensor,
};

/// State a layer keeps from its training-mode forward pass.
#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    /// The layer input (convolutions, dense, activations).
    Input(Tensor<T>),
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input_shape: Vec<usize>,
    },
    BatchNorm(BatchNormCache<T>),
    Flatten {
        input_shape: Vec<usize>,
    },
    Dropout {
        mask: Vec<T>,
    },
    Residual,
}

pub struct LayerOutput<T> {
    pub output: Tensor<T>,
    /// Present in training mode.
    pub cache: Option<LayerCache<T>>,
    /// Updated batch-norm `(moving_mean, moving_var)` in training mode.
    pub running: Option<(Tensor<T>, Tensor<T>)>,
}

fn weights_of<T>(index: usize, params: &LayerParams<T>) -> Result<&Tensor<T>> {
    params
        .weights
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("layer {index} has no weights")))
}

fn bn_of<T>(index: usize, params: &LayerParams<T>) -> Result<&BatchNormParams<T>> {
    params
        .bn
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("layer {index} has no batch-norm parameters")))
}

/// Runs one layer. `train` carries the dropout RNG and switches batch norm
/// to batch statistics; `residual` is the tensor added by
/// [`LayerSpec::AddResidual`]. With `keep_cache` the state needed by
/// [`layer_backward`] is returned even in inference mode.
pub fn layer_forward<T: Element>(
    index: usize,
    layer: &LayerSpec,
    params: &LayerParams<T>,
    input: &Tensor<T>,
    residual: Option<&Tensor<T>>,
    train: Option<&mut dyn RngCore>,
    keep_cache: bool,
) -> Result<LayerOutput<T>> {
    let is_train = train.is_some();
    let cached = is_train || keep_cache;
    let keep_input = || cached.then(|| LayerCache::Input(input.clone()));
    let mut running = None;
    let (output, cache) = match *layer {
        LayerSpec::Conv { stride, padding, .. } => (
            conv2d(input, weights_of(index, params)?, params.bias.as_ref(), stride, padding)?,
            keep_input(),
        ),
        LayerSpec::DepthwiseConv { stride, padding, .. } => (
            depthwise_conv2d(input, weights_of(index, params)?, params.bias.as_ref(), stride, padding)?,
            keep_input(),
        ),
        LayerSpec::PointwiseConv { .. } => (
            conv2d(
                input,
                weights_of(index, params)?,
                params.bias.as_ref(),
                1,
                Padding::Valid,
            )?,
            keep_input(),
        ),
        LayerSpec::Dense { .. } => (
            dense(input, weights_of(index, params)?, params.bias.as_ref())?,
            keep_input(),
        ),
        LayerSpec::Relu => (relu(input), keep_input()),
        LayerSpec::Relu6 => (relu6(input), keep_input()),
        LayerSpec::MaxPool { window, stride } => {
            let out = max_pool2d(input, window, stride)?;
            let cache = cached.then(|| LayerCache::MaxPool {
                input_shape: input.shape().to_vec(),
                argmax: out.argmax,
            });
            (out.output, cache)
        }
        LayerSpec::GlobalAvgPool => (
            global_average_pool(input)?,
            cached.then(|| LayerCache::GlobalAvgPool {
                input_shape: input.shape().to_vec(),
            }),
        ),
        LayerSpec::BatchNorm { momentum, epsilon } => {
            let mode = if is_train {
                BatchNormMode::Train { momentum }
            } else {
                BatchNormMode::Infer
            };
            let out = batch_norm(input, bn_of(index, params)?, mode, epsilon)?;
            running = out.running;
            (out.output, cached.then_some(LayerCache::BatchNorm(out.cache)))
        }
        LayerSpec::AddResidual { .. } => {
            let r = residual.ok_or(Error::MissingCache {
                layer: index,
                kind: "residual source activation",
            })?;
            (input.add(r)?, cached.then_some(LayerCache::Residual))
        }
        LayerSpec::Flatten => {
            let b = input.shape()[0];
            let n = input.len() / b;
            (
                input.clone().reshape(&[b, n])?,
                cached.then(|| LayerCache::Flatten {
                    input_shape: input.shape().to_vec(),
                }),
            )
        }
        LayerSpec::Dropout { rate } => match train {
            Some(rng) if rate > 0.0 => {
                let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
                let mask: Vec<T> = (0..input.len())
                    .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                    .collect();
                let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
                (
                    Tensor::new(input.shape().to_vec(), data)?,
                    Some(LayerCache::Dropout { mask }),
                )
            }
            Some(_) => (
                input.clone(),
                Some(LayerCache::Dropout {
                    mask: vec![T::one(); input.len()],
                }),
            ),
            None => (
                input.clone(),
                cached.then(|| LayerCache::Dropout {
                    mask: vec![T::one(); input.len()],
                }),
            ),
        },
    };
    Ok(LayerOutput { output, cache, running })
}

/// Gradient of one layer given its cached forward state. Returns the
/// gradient with respect to the layer input and parameter gradients shaped
/// like `params` (batch-norm statistics get zero gradients).
pub fn layer_backward<T: Element>(
    index: usize,
    layer: &LayerSpec,
    params: &LayerParams<T>,
    cache: Option<&LayerCache<T>>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, LayerParams<T>)> {
    let missing = |kind| Error::MissingCache { layer: index, kind };
    let cache = cache.ok_or(missing("forward state"))?;
    let input = || match cache {
        LayerCache::Input(x) => Ok(x),
        _ => Err(missing("layer input")),
    };
    let mut grads = LayerParams::empty();
    let dx = match *layer {
        LayerSpec::Conv {
            stride, padding, bias, ..
        } => {
            let g = conv2d_backward(input()?, weights_of(index, params)?, bias, stride, padding, grad_out)?;
            grads.weights = Some(g.weights);
            grads.bias = g.bias;
            g.input
        }
        LayerSpec::DepthwiseConv {
            stride, padding, bias, ..
        } => {
            let g = depthwise_conv2d_backward(input()?, weights_of(index, params)?, bias, stride, padding, grad_out)?;
            grads.weights = Some(g.weights);
            grads.bias = g.bias;
            g.input
        }
        LayerSpec::PointwiseConv { bias, .. } => {
            let g = conv2d_backward(input()?, weights_of(index, params)?, bias, 1, Padding::Valid, grad_out)?;
            grads.weights = Some(g.weights);
            grads.bias = g.bias;
            g.input
        }
        LayerSpec::Dense { bias, .. } => {
            let g = dense_backward(input()?, weights_of(index, params)?, bias, grad_out)?;
            grads.weights = Some(g.weights);
            grads.bias = g.bias;
            g.input
        }
        LayerSpec::Relu => relu_backward(input()?, grad_out)?,
        LayerSpec::Relu6 => relu6_backward(input()?, grad_out)?,
        LayerSpec::MaxPool { .. } => match cache {
            LayerCache::MaxPool { input_shape, argmax } => max_pool2d_backward(input_shape, argmax, grad_out)?,
            _ => return Err(missing("max-pool argmax")),
        },
        LayerSpec::GlobalAvgPool => match cache {
            LayerCache::GlobalAvgPool { input_shape } => global_average_pool_backward(input_shape, grad_out)?,
            _ => return Err(missing("pooled input shape")),
        },
        LayerSpec::BatchNorm { .. } => match cache {
            LayerCache::BatchNorm(c) => {
                let bn = bn_of(index, params)?;
                let (dx, dgamma, dbeta) = batch_norm_backward(c, &bn.gamma, grad_out)?;
                let c = bn.channels();
                grads.bn = Some(BatchNormParams {
                    gamma: dgamma,
                    beta: dbeta,
                    mean: Tensor::zeros(&[c])?,
                    var: Tensor::zeros(&[c])?,
                });
                dx
            }
            _ => return Err(missing("batch-norm statistics")),
        },
        LayerSpec::AddResidual { .. } => grad_out.clone(),
        LayerSpec::Flatten => match cache {
            LayerCache::Flatten { input_shape } => grad_out.clone().reshape(input_shape)?,
            _ => return Err(missing("flattened input shape")),
        },
        LayerSpec::Dropout { .. } => match cache {
            LayerCache::Dropout { mask } if mask.len() == grad_out.len() => {
                let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Tensor::new(grad_out.shape().to_vec(), data)?
            }
            _ => return Err(missing("dropout mask")),
        },
    };
    Ok((dx, grads))
}

/// Caches from [`Model::forward_train`], consumed by [`Model::backward`].
pub struct Tape<T> {
    caches: Vec<LayerCache<T>>,
}

impl<T> Tape<T> {
    pub fn len(&self) -> usize {
        self.caches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }
}

pub struct ModelGrads<T> {
    /// One entry per layer, shaped like the layer's parameters.
    pub params: Vec<LayerParams<T>>,
    /// Gradient with respect to the (channel-adapted) input.
    pub input: Tensor<T>,
}

/// A network definition together with its parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Element = f32> {
    spec: ModelSpec,
    layers: Vec<LayerSpec>,
    acts: Vec<ActShape>,
    params: Vec<LayerParams<T>>,
    residual_sources: BTreeSet<usize>,
}

impl<T: Element> Model<T> {
    /// Random initialization: He-normal trunk weights, Glorot-uniform head,
    /// zero biases, identity batch norm.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        let n_layers = shapes.len();
        let mut params = Vec::with_capacity(n_layers);
        for (i, layer_shapes) in shapes.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut p = LayerParams::empty();
            for ps in layer_shapes {
                match ps.name {
                    "weights" => {
                        let (fan_in, fan_out) = fans(&ps.shape);
                        let data: Vec<T> = if i + 1 == n_layers {
                            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                            let d = Uniform::new_inclusive(-limit, limit).map_err(|e| Error::invalid(e.to_string()))?;
                            (0..ps.elements())
                                .map(|_| T::from_f64_lossy(d.sample(&mut rng)))
                                .collect()
                        } else {
                            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                                .map_err(|e| Error::invalid(e.to_string()))?;
                            (0..ps.elements())
                                .map(|_| T::from_f64_lossy(d.sample(&mut rng)))
                                .collect()
                        };
                        p.weights = Some(Tensor::new(ps.shape.clone(), data)?);
                    }
                    "bias" => p.bias = Some(Tensor::zeros(&ps.shape)?),
                    "gamma" => p.bn = Some(BatchNormParams::identity(ps.shape[0])?),
                    _ => {}
                }
            }
            params.push(p);
        }
        Self::from_params(spec, params)
    }

    /// All weights zero, batch norm identity. Used as a template for loading.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        let mut params = Vec::with_capacity(shapes.len());
        for layer_shapes in &shapes {
            let mut p = LayerParams::empty();
            for ps in layer_shapes {
                match ps.name {
                    "weights" => p.weights = Some(Tensor::zeros(&ps.shape)?),
                    "bias" => p.bias = Some(Tensor::zeros(&ps.shape)?),
                    "gamma" => p.bn = Some(BatchNormParams::identity(ps.shape[0])?),
                    _ => {}
                }
            }
            params.push(p);
        }
        Self::from_params(spec, params)
    }

    /// Checks every tensor against the shapes the spec implies.
    pub fn from_params(spec: ModelSpec, params: Vec<LayerParams<T>>) -> Result<Self> {
        let acts = spec.infer_shapes()?;
        let shapes = spec.param_shapes()?;
        let layers = spec.all_layers();
        if params.len() != layers.len() {
            return Err(Error::ShapeMismatch {
                op: "model parameters",
                axis: "layers",
                expected: layers.len(),
                actual: params.len(),
            });
        }
        for (i, (p, expected)) in params.iter().zip(&shapes).enumerate() {
            let got = p.tensors();
            let names: Vec<_> = got.iter().map(|r| r.name).collect();
            let want: Vec<_> = expected.iter().map(|s| s.name).collect();
            if names != want {
                return Err(Error::invalid(format!(
                    "layer {i} ({}): expected parameters {want:?}, found {names:?}",
                    layers[i].kind()
                )));
            }
            for (r, s) in got.iter().zip(expected) {
                if r.tensor.shape() != s.shape.as_slice() {
                    return Err(Error::WeightShape {
                        name: format!("{i}.{}", s.name),
                        expected: s.shape.clone(),
                        found: r.tensor.shape().to_vec(),
                    });
                }
            }
        }
        let residual_sources = layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::AddResidual { from } => Some(*from),
                _ => None,
            })
            .collect();
        Ok(Model {
            spec,
            layers,
            acts,
            params,
            residual_sources,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Trunk and head layers in execution order.
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn activation_shapes(&self) -> &[ActShape] {
        &self.acts
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> ParamCount {
        let mut c = ParamCount::default();
        for p in self.params.iter().flat_map(LayerParams::tensors) {
            if p.trainable {
                c.trainable += p.tensor.len();
            } else {
                c.non_trainable += p.tensor.len();
            }
            c.total += p.tensor.len();
        }
        c
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            acts: self.acts.clone(),
            params: self.params.iter().map(LayerParams::cast).collect(),
            residual_sources: self.residual_sources.clone(),
        }
    }

    /// Accepts `[B, C, H, W]` matching the spec, or a single-channel batch
    /// for a multi-channel model, in which case the channel is replicated.
    pub fn adapt_input<'a>(&self, x: &'a Tensor<T>) -> Result<Cow<'a, Tensor<T>>> {
        let (b, c, h, w) = x.dims4("model input")?;
        let (sc, sh, sw) = self.spec.input_shape;
        for (axis, expected, actual) in [("height", sh, h), ("width", sw, w)] {
            if expected != actual {
                return Err(Error::ShapeMismatch {
                    op: "model input",
                    axis,
                    expected,
                    actual,
                });
            }
        }
        if c == sc {
            return Ok(Cow::Borrowed(x));
        }
        if c != 1 {
            return Err(Error::ShapeMismatch {
                op: "model input",
                axis: "channels",
                expected: sc,
                actual: c,
            });
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(b * sc * plane);
        for img in x.data().chunks(plane) {
            for _ in 0..sc {
                data.extend_from_slice(img);
            }
        }
        Ok(Cow::Owned(Tensor::new(vec![b, sc, h, w], data)?))
    }

    /// Inference pass (batch norm uses moving statistics, dropout off).
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = self.adapt_input(x)?.into_owned();
        let mut saved: Vec<Option<Tensor<T>>> = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate() {
            if self.residual_sources.contains(&i) {
                saved[i] = Some(cur.clone());
            }
            let residual = match layer {
                LayerSpec::AddResidual { from } => saved[*from].as_ref(),
                _ => None,
            };
            cur = layer_forward(i, layer, &self.params[i], &cur, residual, None, false)?.output;
        }
        Ok(cur)
    }

    /// Training pass: batch statistics, dropout active, moving statistics
    /// updated in place.
    pub fn forward_train<R: RngCore>(&mut self, x: &Tensor<T>, rng: &mut R) -> Result<(Tensor<T>, Tape<T>)> {
        let mut cur = self.adapt_input(x)?.into_owned();
        let mut saved: Vec<Option<Tensor<T>>> = vec![None; self.layers.len()];
        let mut caches = Vec::with_capacity(self.layers.len());
        for i in 0..self.layers.len() {
            if self.residual_sources.contains(&i) {
                saved[i] = Some(cur.clone());
            }
            let layer = &self.layers[i];
            let residual = match layer {
                LayerSpec::AddResidual { from } => saved[*from].as_ref(),
                _ => None,
            };
            let out = layer_forward(i, layer, &self.params[i], &cur, residual, Some(&mut *rng), true)?;
            if let (Some((mean, var)), Some(bn)) = (out.running, self.params[i].bn.as_mut()) {
                bn.mean = mean;
                bn.var = var;
            }
            caches.push(out.cache.ok_or(Error::MissingCache {
                layer: i,
                kind: "forward state",
            })?);
            cur = out.output;
        }
        Ok((cur, Tape { caches }))
    }

    pub fn backward(&self, tape: &Tape<T>, grad_out: &Tensor<T>) -> Result<ModelGrads<T>> {
        let n = self.layers.len();
        let mut pending: Vec<Option<Tensor<T>>> = vec![None; n + 1];
        let mut grads: Vec<LayerParams<T>> = vec![LayerParams::empty(); n];
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            if let Some(extra) = pending[i + 1].take() {
                g = g.add(&extra)?;
            }
            let layer = &self.layers[i];
            let (dx, pg) = layer_backward(i, layer, &self.params[i], tape.caches.get(i), &g)?;
            if let LayerSpec::AddResidual { from } = *layer {
                pending[from] = Some(match pending[from].take() {
                    Some(p) => p.add(&g)?,
                    None => g.clone(),
                });
            }
            grads[i] = pg;
            g = dx;
        }
        if let Some(extra) = pending[0].take() {
            g = g.add(&extra)?;
        }
        Ok(ModelGrads {
            params: grads,
            input: g,
        })
    }
}

/// `(fan_in, fan_out)` for conv `[out, in, kh, kw]` or dense `[in, out]`.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [o, i, kh, kw] => (i * kh * kw, o * kh * kw),
        [i, o] => (*i, *o),
        _ => (1, 1),
    }
}

/// ChaCha8 generator on its own stream.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            name: "tiny".into(),
            input_shape: (2, 6, 6),
            layers: vec![
                LayerSpec::conv(3, 3, 1, Padding::Same, true),
                LayerSpec::batch_norm(),
                LayerSpec::Relu,
                LayerSpec::PointwiseConv {
                    filters: 3,
                    bias: false,
                },
                LayerSpec::AddResidual { from: 3 },
                LayerSpec::MaxPool { window: 2, stride: 2 },
            ],
            head_units: 4,
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let m = Model::<f64>::init(tiny_spec(), 3).unwrap();
        let x = Tensor::from_fn(&[2, 2, 6, 6], |i| (i as f64 * 0.37).sin()).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 4]);
        let m2 = Model::<f64>::init(tiny_spec(), 3).unwrap();
        assert_eq!(m2.forward(&x).unwrap(), y);
    }

    #[test]
    fn single_channel_is_replicated() {
        let m = Model::<f64>::init(tiny_spec(), 1).unwrap();
        let x1 = Tensor::from_fn(&[1, 1, 6, 6], |i| i as f64 / 36.0).unwrap();
        let x2 = m.adapt_input(&x1).unwrap().into_owned();
        assert_eq!(x2.shape(), &[1, 2, 6, 6]);
        assert_eq!(m.forward(&x1).unwrap(), m.forward(&x2).unwrap());
        let bad = Tensor::<f64>::zeros(&[1, 3, 6, 6]).unwrap();
        assert!(m.forward(&bad).is_err());
    }

    #[test]
    fn backward_without_cache_errors() {
        let spec = tiny_spec();
        let layers = spec.all_layers();
        let p = LayerParams::<f64>::empty();
        let g = Tensor::zeros(&[1, 3, 6, 6]).unwrap();
        let err = layer_backward(2, &layers[2], &p, None, &g).unwrap_err();
        assert!(matches!(err, Error::MissingCache { layer: 2, .. }));
    }

    #[test]
    fn train_updates_moving_stats() {
        let mut m = Model::<f64>::init(tiny_spec(), 5).unwrap();
        let before = m.params()[1].bn.clone().unwrap();
        let x = Tensor::from_fn(&[4, 2, 6, 6], |i| (i as f64).cos() * 2.0 + 1.0).unwrap();
        let mut rng = seeded_rng(0, 0);
        let (y, tape) = m.forward_train(&x, &mut rng).unwrap();
        assert_eq!(tape.len(), m.layers().len());
        let after = m.params()[1].bn.clone().unwrap();
        assert_ne!(before.mean, after.mean);
        let grads = m.backward(&tape, &y).unwrap();
        assert_eq!(grads.params.len(), m.layers().len());
        assert_eq!(grads.input.shape(), x.shape());
    }

    #[test]
    fn dropout_scales_kept_units() {
        let layer = LayerSpec::Dropout { rate: 0.5 };
        let p = LayerParams::<f64>::empty();
        let x = Tensor::full(&[2, 1000], 1.0).unwrap();
        let mut rng = seeded_rng(1, 0);
        let out = layer_forward(0, &layer, &p, &x, None, Some(&mut rng), true).unwrap();
        let kept = out.output.data().iter().filter(|&&v| v > 0.0).count();
        assert!((800..1200).contains(&kept));
        assert!(out.output.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let inf = layer_forward(0, &layer, &p, &x, None, None, false).unwrap();
        assert_eq!(inf.output, x);
    }

    #[test]
    fn param_count_matches_spec() {
        let spec = tiny_spec();
        let m = Model::<f32>::init(spec.clone(), 0).unwrap();
        assert_eq!(m.param_count(), spec.parameter_breakdown().unwrap().total());
    }
}
