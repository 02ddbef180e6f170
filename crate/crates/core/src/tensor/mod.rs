//! Dense tensors and the numeric kernels used by every network in the crate.
//!
//! Activations are laid out `[batch, channels, height, width]`, convolution
//! weights `[out_channels, in_channels, kernel_h, kernel_w]`, dense weights
//! `[inputs, outputs]`. All storage is contiguous row-major.

mod gemm;
pub mod grad;
pub mod gradcheck;
pub mod ops;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use gemm::Gemm;
pub use grad::{
    batch_norm_backward, conv2d_backward, dense_backward, depthwise_conv2d_backward, global_average_pool_backward,
    max_pool2d_backward, relu6_backward, relu_backward, ConvGrads, DenseGrads,
};
pub use gradcheck::finite_difference_grad;
pub use ops::{
    batch_norm, conv2d, conv_output_extent, dense, depthwise_conv2d, global_average_pool, max_pool2d, relu, relu6,
    BatchNormCache, BatchNormMode, BatchNormOutput, MaxPoolOutput, Padding,
};

/// Scalar type a [`Tensor`] can hold. Implemented for `f32` (training and
/// inference) and `f64` (gradient checking).
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + Gemm
    + Default
    + Debug
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Element for f32 {}
impl Element for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("holds {} values, shape implies {}", data.len(), expected),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        check_shape(shape)?;
        let n = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        check_shape(shape)?;
        let n = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        })
    }

    /// Shape-unchecked constructor for kernels that derive the shape from
    /// already validated operands.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Interprets the tensor as `[batch, channels, height, width]`.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::ShapeMismatch {
                op,
                axis: "rank",
                expected: 4,
                actual: self.rank(),
            }),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::ShapeMismatch {
                op,
                axis: "rank",
                expected: 2,
                actual: self.rank(),
            }),
        }
    }

    /// Elementwise sum with a tensor of identical shape.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        })
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        self.map(|v| v * factor)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        same_shape("max_abs_diff", self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank must be at least 1".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every extent must be at least 1".into(),
        });
    }
    Ok(())
}

pub(crate) fn same_shape<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape.len() != b.shape.len() {
        return Err(Error::ShapeMismatch {
            op,
            axis: "rank",
            expected: a.shape.len(),
            actual: b.shape.len(),
        });
    }
    for (axis, (&x, &y)) in a.shape.iter().zip(&b.shape).enumerate() {
        if x != y {
            return Err(Error::ShapeMismatch {
                op,
                axis: AXIS_NAMES.get(axis).copied().unwrap_or("trailing"),
                expected: x,
                actual: y,
            });
        }
    }
    Ok(())
}

const AXIS_NAMES: [&str; 4] = ["axis 0", "axis 1", "axis 2", "axis 3"];

/// Trainable tensors of one layer plus optional batch-norm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weights: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
    pub bn: Option<BatchNormParams<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Element> BatchNormParams<T> {
    /// gamma 1, beta 0, mean 0, var 1.
    pub fn identity(channels: usize) -> Result<Self> {
        Ok(BatchNormParams {
            gamma: Tensor::full(&[channels], T::one())?,
            beta: Tensor::zeros(&[channels])?,
            mean: Tensor::zeros(&[channels])?,
            var: Tensor::full(&[channels], T::one())?,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (axis, t) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("moving_mean", &self.mean),
            ("moving_var", &self.var),
        ] {
            if t.len() != channels {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm",
                    axis,
                    expected: channels,
                    actual: t.len(),
                });
            }
        }
        if self.var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::invalid("batch-norm variance must be non-negative"));
        }
        Ok(())
    }
}

/// A named view of one parameter tensor.
pub struct ParamRef<'a, T> {
    pub name: &'static str,
    pub tensor: &'a Tensor<T>,
    pub trainable: bool,
}

impl<T: Element> LayerParams<T> {
    pub fn empty() -> Self {
        LayerParams {
            weights: None,
            bias: None,
            bn: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_none() && self.bias.is_none() && self.bn.is_none()
    }

    /// Parameter tensors in serialization order.
    pub fn tensors(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        if let Some(w) = &self.weights {
            out.push(ParamRef {
                name: "weights",
                tensor: w,
                trainable: true,
            });
        }
        if let Some(b) = &self.bias {
            out.push(ParamRef {
                name: "bias",
                tensor: b,
                trainable: true,
            });
        }
        if let Some(bn) = &self.bn {
            out.push(ParamRef {
                name: "gamma",
                tensor: &bn.gamma,
                trainable: true,
            });
            out.push(ParamRef {
                name: "beta",
                tensor: &bn.beta,
                trainable: true,
            });
            out.push(ParamRef {
                name: "moving_mean",
                tensor: &bn.mean,
                trainable: false,
            });
            out.push(ParamRef {
                name: "moving_var",
                tensor: &bn.var,
                trainable: false,
            });
        }
        out
    }

    /// Mutable access in the same order as [`LayerParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>, bool)> {
        let mut out = Vec::new();
        if let Some(w) = &mut self.weights {
            out.push(("weights", w, true));
        }
        if let Some(b) = &mut self.bias {
            out.push(("bias", b, true));
        }
        if let Some(bn) = &mut self.bn {
            out.push(("gamma", &mut bn.gamma, true));
            out.push(("beta", &mut bn.beta, true));
            out.push(("moving_mean", &mut bn.mean, false));
            out.push(("moving_var", &mut bn.var, false));
        }
        out
    }

    pub fn cast<U: Element>(&self) -> LayerParams<U> {
        LayerParams {
            weights: self.weights.as_ref().map(Tensor::cast),
            bias: self.bias.as_ref().map(Tensor::cast),
            bn: self.bn.as_ref().map(|bn| BatchNormParams {
                gamma: bn.gamma.cast(),
                beta: bn.beta.cast(),
                mean: bn.mean.cast(),
                var: bn.var.cast(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn reshape_keeps_data() {
        let t = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32).unwrap();
        let r = t.clone().reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4]).is_err());
    }

    #[test]
    fn batch_norm_params_validation() {
        let mut p = BatchNormParams::<f32>::identity(3).unwrap();
        assert!(p.validate(3).is_ok());
        assert!(p.validate(4).is_err());
        p.var.data_mut()[1] = -1.0;
        assert!(p.validate(3).is_err());
    }
}
