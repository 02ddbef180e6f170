//! Analytic gradients against central differences, in f64.
//!
//! Each check draws random layer shapes, parameters and inputs, forms the
//! scalar `sum(output * r)` for a fixed random `r`, and compares every
//! backward-pass gradient with the numeric one.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{layer_backward, layer_forward, Model};
use super::spec::{LayerSpec, ModelSpec};
use crate::dataset::NUM_COORDS;
use crate::error::Result;
use crate::tensor::gradcheck::max_relative_error;
use crate::tensor::{finite_difference_grad, BatchNormParams, LayerParams, Padding, Tensor};
use crate::training::mse_loss;

pub const STEP: f64 = 1e-6;
/// Denominator floor for the relative error, so exact zeros compare cleanly.
pub const FLOOR: f64 = 1e-7;

/// Worst relative error seen over `instances` random cases of one check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub label: &'static str,
    pub instances: usize,
    pub worst: f64,
}

/// Relative error that reports non-finite values as infinite instead of
/// letting `max` drop them.
fn rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    let all_finite = analytic.data().iter().chain(numeric.data()).all(|v| v.is_finite());
    if all_finite {
        max_relative_error(analytic, numeric, floor)
    } else {
        f64::INFINITY
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale)).expect("non-empty shape")
}

fn random_params(layer: &LayerSpec, cin: usize, rng: &mut ChaCha8Rng) -> Result<LayerParams<f64>> {
    let mut p = LayerParams::empty();
    match *layer {
        LayerSpec::Conv {
            filters, kernel, bias, ..
        } => {
            p.weights = Some(uniform(rng, &[filters, cin, kernel, kernel], 1.0));
            p.bias = bias.then(|| uniform(rng, &[filters], 1.0));
        }
        LayerSpec::DepthwiseConv { kernel, bias, .. } => {
            p.weights = Some(uniform(rng, &[cin, 1, kernel, kernel], 1.0));
            p.bias = bias.then(|| uniform(rng, &[cin], 1.0));
        }
        LayerSpec::PointwiseConv { filters, bias } => {
            p.weights = Some(uniform(rng, &[filters, cin, 1, 1], 1.0));
            p.bias = bias.then(|| uniform(rng, &[filters], 1.0));
        }
        LayerSpec::Dense { units, bias } => {
            p.weights = Some(uniform(rng, &[cin, units], 1.0));
            p.bias = bias.then(|| uniform(rng, &[units], 1.0));
        }
        LayerSpec::BatchNorm { .. } => {
            let mut bn = BatchNormParams::identity(cin)?;
            bn.gamma = uniform(rng, &[cin], 2.0);
            bn.beta = uniform(rng, &[cin], 1.0);
            bn.mean = uniform(rng, &[cin], 0.5);
            bn.var = Tensor::from_fn(&[cin], |_| rng.random_range(0.5..2.0))?;
            p.bn = Some(bn);
        }
        _ => {}
    }
    Ok(p)
}

/// `sum(layer(x) * r)`; `train` selects batch statistics and dropout masks,
/// the latter from a fixed seed so every probe sees the same mask.
fn probe(
    layer: &LayerSpec,
    p: &LayerParams<f64>,
    x: &Tensor<f64>,
    residual: Option<&Tensor<f64>>,
    r: &Tensor<f64>,
    train: bool,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let out = layer_forward(
        0,
        layer,
        p,
        x,
        residual,
        train.then_some(&mut rng as &mut dyn RngCore),
        true,
    )?;
    Ok(out.output.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Largest relative error over the input gradient and every trainable
/// parameter gradient of one layer instance.
pub fn layer_gradient_error(layer: &LayerSpec, x: &Tensor<f64>, train: bool, rng: &mut ChaCha8Rng) -> Result<f64> {
    let cin = x.shape()[1];
    let params = random_params(layer, cin, rng)?;
    let residual = matches!(layer, LayerSpec::AddResidual { .. }).then(|| uniform(rng, x.shape(), 1.0));
    let mut fwd_rng = ChaCha8Rng::seed_from_u64(99);
    let out = layer_forward(
        0,
        layer,
        &params,
        x,
        residual.as_ref(),
        train.then_some(&mut fwd_rng as &mut dyn RngCore),
        true,
    )?;
    let r = uniform(rng, out.output.shape(), 1.0);
    let (dx, grads) = layer_backward(0, layer, &params, out.cache.as_ref(), &r)?;

    let f =
        |q: &LayerParams<f64>, xp: &Tensor<f64>| probe(layer, q, xp, residual.as_ref(), &r, train).unwrap_or(f64::NAN);
    let numeric = finite_difference_grad(|xp| f(&params, xp), x, STEP);
    let mut worst = rel_err(&dx, &numeric, FLOOR);

    let analytic = grads.tensors();
    for (i, t) in params.tensors().iter().enumerate().filter(|(_, t)| t.trainable) {
        let numeric = finite_difference_grad(
            |v| {
                let mut q = params.clone();
                *q.tensors_mut()[i].1 = v.clone();
                f(&q, x)
            },
            t.tensor,
            STEP,
        );
        worst = worst.max(rel_err(analytic[i].tensor, &numeric, FLOOR));
    }
    Ok(worst)
}

fn spatial(rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    let b = rng.random_range(1..=3);
    let c = rng.random_range(1..=3);
    let h = rng.random_range(3..=7);
    let w = rng.random_range(3..=7);
    uniform(rng, &[b, c, h, w], scale)
}

fn padding(rng: &mut ChaCha8Rng) -> Padding {
    if rng.random_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    }
}

type CaseFn = fn(&mut ChaCha8Rng) -> (LayerSpec, Tensor<f64>, bool);

const CASES: [(&str, CaseFn); 13] = [
    ("conv", |rng| {
        let x = spatial(rng, 1.0);
        let kernel = rng.random_range(1..=3);
        let filters = rng.random_range(1..=4);
        let stride = rng.random_range(1..=2);
        (
            LayerSpec::conv(filters, kernel, stride, padding(rng), rng.random_bool(0.5)),
            x,
            true,
        )
    }),
    ("depthwise_conv", |rng| {
        let x = spatial(rng, 1.0);
        let layer = LayerSpec::DepthwiseConv {
            kernel: rng.random_range(1..=3),
            stride: rng.random_range(1..=2),
            padding: padding(rng),
            bias: rng.random_bool(0.5),
        };
        (layer, x, true)
    }),
    ("pointwise_conv", |rng| {
        let x = spatial(rng, 1.0);
        let layer = LayerSpec::PointwiseConv {
            filters: rng.random_range(1..=4),
            bias: rng.random_bool(0.5),
        };
        (layer, x, true)
    }),
    ("dense", |rng| {
        let b = rng.random_range(1..=4);
        let n = rng.random_range(1..=8);
        let x = uniform(rng, &[b, n], 1.0);
        let layer = LayerSpec::Dense {
            units: rng.random_range(1..=6),
            bias: rng.random_bool(0.5),
        };
        (layer, x, true)
    }),
    ("relu", |rng| (LayerSpec::Relu, spatial(rng, 2.0), true)),
    ("relu6", |rng| (LayerSpec::Relu6, spatial(rng, 8.0), true)),
    ("max_pool", |rng| {
        let window = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        (LayerSpec::MaxPool { window, stride }, spatial(rng, 1.0), true)
    }),
    ("global_avg_pool", |rng| {
        (LayerSpec::GlobalAvgPool, spatial(rng, 1.0), true)
    }),
    ("batch_norm/train", |rng| {
        (LayerSpec::batch_norm(), spatial(rng, 2.0), true)
    }),
    ("batch_norm/inference", |rng| {
        (LayerSpec::batch_norm(), spatial(rng, 2.0), false)
    }),
    ("add_residual", |rng| {
        (LayerSpec::AddResidual { from: 0 }, spatial(rng, 1.0), true)
    }),
    ("flatten", |rng| (LayerSpec::Flatten, spatial(rng, 1.0), true)),
    ("dropout", |rng| {
        (LayerSpec::Dropout { rate: 0.3 }, spatial(rng, 1.0), true)
    }),
];

/// One entry per layer kind (batch norm in both modes), each over
/// `instances` random cases.
pub fn layer_suite(instances: usize, seed: u64) -> Result<Vec<GradCheck>> {
    CASES
        .iter()
        .enumerate()
        .map(|(i, (label, make))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let mut worst = 0.0f64;
            for _ in 0..instances {
                let (layer, x, train) = make(&mut rng);
                worst = worst.max(layer_gradient_error(&layer, &x, train, &mut rng)?);
            }
            Ok(GradCheck {
                label,
                instances,
                worst,
            })
        })
        .collect()
}

/// Small network with residual branches, batch norm and both pooling kinds.
fn probe_model_spec() -> ModelSpec {
    ModelSpec {
        name: "gradcheck".into(),
        input_shape: (2, 6, 6),
        layers: vec![
            LayerSpec::conv(3, 3, 1, Padding::Same, false),
            LayerSpec::batch_norm(),
            LayerSpec::Relu6,
            LayerSpec::PointwiseConv {
                filters: 6,
                bias: false,
            },
            LayerSpec::DepthwiseConv {
                kernel: 3,
                stride: 1,
                padding: Padding::Same,
                bias: false,
            },
            LayerSpec::batch_norm(),
            LayerSpec::PointwiseConv { filters: 3, bias: true },
            LayerSpec::AddResidual { from: 3 },
            LayerSpec::MaxPool { window: 2, stride: 2 },
            LayerSpec::conv(4, 3, 1, Padding::Valid, true),
            LayerSpec::Relu,
        ],
        head_units: 5,
    }
}

/// Whole-model backward pass: input gradient and the weights of every
/// layer that has them.
pub fn model_suite(instances: usize, seed: u64) -> Result<GradCheck> {
    let spec = probe_model_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..instances as u64 {
        let model = Model::<f64>::init(spec.clone(), seed.wrapping_add(i))?;
        let x = uniform(&mut rng, &[3, 2, 6, 6], 1.0);
        let r = uniform(&mut rng, &[3, 5], 1.0);
        let f = |m: &Model<f64>, x: &Tensor<f64>| -> f64 {
            let mut m = m.clone();
            let mut d = ChaCha8Rng::seed_from_u64(0);
            match m.forward_train(x, &mut d) {
                Ok((y, _)) => y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum(),
                Err(_) => f64::NAN,
            }
        };
        let mut m = model.clone();
        let mut d = ChaCha8Rng::seed_from_u64(0);
        let (_, tape) = m.forward_train(&x, &mut d)?;
        let grads = model.backward(&tape, &r)?;

        let numeric = finite_difference_grad(|xp| f(&model, xp), &x, STEP);
        worst = worst.max(rel_err(&grads.input, &numeric, FLOOR));
        for (layer, p) in model.params().iter().enumerate() {
            let Some(w) = p.weights.clone() else { continue };
            let numeric = finite_difference_grad(
                |t| {
                    let mut q = model.clone();
                    q.params_mut()[layer].weights = Some(t.clone());
                    f(&q, &x)
                },
                &w,
                STEP,
            );
            if let Some(analytic) = grads.params[layer].weights.as_ref() {
                worst = worst.max(rel_err(analytic, &numeric, FLOOR));
            }
        }
    }
    Ok(GradCheck {
        label: "model",
        instances,
        worst,
    })
}

/// Masked MSE gradient with respect to the predictions.
pub fn loss_suite(instances: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let shape = [rng.random_range(1..5), NUM_COORDS];
        let pred = uniform(&mut rng, &shape, 1.0);
        let target = uniform(&mut rng, &shape, 1.0);
        let mut mask = Tensor::from_fn(&shape, |_| if rng.random_bool(0.7) { 1.0 } else { 0.0 })?;
        mask.data_mut()[0] = 1.0;
        let (_, grad) = mse_loss(&pred, &target, &mask)?;
        let numeric = finite_difference_grad(|p| mse_loss(p, &target, &mask).map_or(f64::NAN, |l| l.0), &pred, STEP);
        worst = worst.max(rel_err(&grad, &numeric, 1e-8));
    }
    Ok(GradCheck {
        label: "mse_loss",
        instances,
        worst,
    })
}
