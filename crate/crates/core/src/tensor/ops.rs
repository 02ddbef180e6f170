//! Forward kernels. All kernels are pure: inputs are borrowed immutably and a
//! fresh output tensor is returned.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BatchNormParams, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(input / stride)`; zeros split evenly, the odd
    /// pixel going to the bottom/right.
    Same,
    Valid,
}

/// Output extent and leading pad for one spatial axis.
///
/// Returns `(output, pad_before)`. The output always satisfies
/// `output == (input + pad_total - kernel) / stride + 1`.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if kernel == 0 {
        return Err(Error::invalid("kernel extent must be at least 1"));
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(Error::ShapeMismatch {
                    op: "conv",
                    axis: "spatial extent (valid padding needs input >= kernel)",
                    expected: kernel,
                    actual: input,
                });
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let pad_total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, pad_total / 2))
        }
    }
}

/// Resolved geometry of a 2-d sliding-window operation on one sample.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        channels: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (out_h, pad_top) = conv_output_extent(h, kh, stride, padding)?;
        let (out_w, pad_left) = conv_output_extent(w, kw, stride, padding)?;
        Ok(ConvGeom {
            channels,
            h,
            w,
            kh,
            kw,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn in_size(&self) -> usize {
        self.channels * self.h * self.w
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn is_pointwise_identity(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    /// Input coordinate for output index `o` and kernel offset `k`, if inside.
    #[inline]
    pub fn src(&self, o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// Unrolls one sample into a `[patch_len, out_pixels]` matrix.
    pub fn im2col<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let n = self.out_pixels();
        for c in 0..self.channels {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        match self.src(oy, ky, self.pad_top, self.h) {
                            None => line.fill(T::zero()),
                            Some(iy) => {
                                let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.src(ox, kx, self.pad_left, self.w) {
                                        Some(ix) => src_row[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters columns back, accumulating.
    pub fn col2im<T: Element>(&self, cols: &[T], dx: &mut [T]) {
        let n = self.out_pixels();
        for c in 0..self.channels {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.src(oy, ky, self.pad_top, self.h) else {
                            continue;
                        };
                        for ox in 0..self.out_w {
                            if let Some(ix) = self.src(ox, kx, self.pad_left, self.w) {
                                plane[iy * self.w + ix] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Element>(op: &'static str, bias: Option<&Tensor<T>>, n: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != n {
            return Err(Error::ShapeMismatch {
                op,
                axis: "bias",
                expected: n,
                actual: b.len(),
            });
        }
    }
    Ok(())
}

pub(crate) fn conv_geom<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, ConvGeom)> {
    let (b, cin, h, w) = input.dims4("conv2d")?;
    let (cout, wcin, kh, kw) = weights.dims4("conv2d")?;
    if wcin != cin {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            axis: "in_channels",
            expected: wcin,
            actual: cin,
        });
    }
    Ok((b, cout, ConvGeom::new(cin, h, w, kh, kw, stride, padding)?))
}

/// 2-d cross-correlation (no kernel flip).
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (b, cout, g) = conv_geom(input, weights, stride, padding)?;
    check_bias("conv2d", bias, cout)?;
    let n = g.out_pixels();
    let k = g.patch_len();
    let mut out = vec![T::zero(); b * cout * n];
    let w = weights.data();
    out.par_chunks_mut(cout * n)
        .zip(input.data().par_chunks(g.in_size()))
        .for_each(|(o, x)| {
            if g.is_pointwise_identity() {
                T::gemm(cout, k, n, T::one(), w, false, x, false, T::zero(), o);
            } else {
                let mut cols = vec![T::zero(); k * n];
                g.im2col(x, &mut cols);
                T::gemm(cout, k, n, T::one(), w, false, &cols, false, T::zero(), o);
            }
            if let Some(bias) = bias {
                for (plane, &bv) in o.chunks_mut(n).zip(bias.data()) {
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
    Ok(Tensor::from_parts(vec![b, cout, g.out_h, g.out_w], out))
}

pub(crate) fn depthwise_geom<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(usize, ConvGeom)> {
    let (b, c, h, w) = input.dims4("depthwise_conv2d")?;
    let (wc, mult, kh, kw) = weights.dims4("depthwise_conv2d")?;
    if wc != c {
        return Err(Error::ShapeMismatch {
            op: "depthwise_conv2d",
            axis: "channels",
            expected: wc,
            actual: c,
        });
    }
    if mult != 1 {
        return Err(Error::ShapeMismatch {
            op: "depthwise_conv2d",
            axis: "depth multiplier",
            expected: 1,
            actual: mult,
        });
    }
    Ok((b, ConvGeom::new(c, h, w, kh, kw, stride, padding)?))
}

/// Per-channel convolution: channel `c` only sees kernel `c`.
pub fn depthwise_conv2d<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (b, g) = depthwise_geom(input, weights, stride, padding)?;
    check_bias("depthwise_conv2d", bias, g.channels)?;
    let n = g.out_pixels();
    let plane_in = g.h * g.w;
    let ksz = g.kh * g.kw;
    let mut out = vec![T::zero(); b * g.channels * n];
    let w = weights.data();
    out.par_chunks_mut(g.channels * n)
        .zip(input.data().par_chunks(g.in_size()))
        .for_each(|(o, x)| {
            for c in 0..g.channels {
                let xp = &x[c * plane_in..(c + 1) * plane_in];
                let kern = &w[c * ksz..(c + 1) * ksz];
                let op = &mut o[c * n..(c + 1) * n];
                let bv = bias.map_or(T::zero(), |bb| bb.data()[c]);
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = T::zero();
                        for ky in 0..g.kh {
                            let Some(iy) = g.src(oy, ky, g.pad_top, g.h) else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                if let Some(ix) = g.src(ox, kx, g.pad_left, g.w) {
                                    acc += kern[ky * g.kw + kx] * xp[iy * g.w + ix];
                                }
                            }
                        }
                        op[oy * g.out_w + ox] = acc + bv;
                    }
                }
            }
        });
    Ok(Tensor::from_parts(vec![b, g.channels, g.out_h, g.out_w], out))
}

/// `input[B,N] . weights[N,M] + bias[M]`.
pub fn dense<T: Element>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (b, n) = input.dims2("dense")?;
    let (wn, m) = weights.dims2("dense")?;
    if wn != n {
        return Err(Error::ShapeMismatch {
            op: "dense",
            axis: "inner dimension",
            expected: wn,
            actual: n,
        });
    }
    check_bias("dense", bias, m)?;
    let mut out = vec![T::zero(); b * m];
    T::gemm(
        b,
        n,
        m,
        T::one(),
        input.data(),
        false,
        weights.data(),
        false,
        T::zero(),
        &mut out,
    );
    if let Some(bias) = bias {
        for row in out.chunks_mut(m) {
            row.iter_mut().zip(bias.data()).for_each(|(v, &bv)| *v += bv);
        }
    }
    Ok(Tensor::from_parts(vec![b, m], out))
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu6<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let six = T::from_f64_lossy(6.0);
    x.map(|v| v.max(T::zero()).min(six))
}

pub struct MaxPoolOutput<T> {
    pub output: Tensor<T>,
    /// Flat input index of each output's maximum.
    pub argmax: Vec<usize>,
}

pub fn max_pool2d<T: Element>(input: &Tensor<T>, window: usize, stride: usize) -> Result<MaxPoolOutput<T>> {
    let (b, c, h, w) = input.dims4("max_pool2d")?;
    let g = ConvGeom::new(c, h, w, window, window, stride, Padding::Valid)?;
    let n = g.out_pixels();
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * n);
    let mut argmax = Vec::with_capacity(b * c * n);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::from_parts(vec![b, c, g.out_h, g.out_w], out),
        argmax,
    })
}

pub fn global_average_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = input.dims4("global_average_pool")?;
    let hw = h * w;
    let denom = T::from_f64_lossy(hw as f64);
    let out = input
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().copied().sum::<T>() / denom)
        .collect();
    Ok(Tensor::from_parts(vec![b, c], out))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BatchNormMode {
    /// Normalize by batch statistics; running statistics move towards them
    /// as `running = momentum * running + (1 - momentum) * batch`.
    Train {
        momentum: f64,
    },
    Infer,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub train: bool,
}

pub struct BatchNormOutput<T> {
    pub output: Tensor<T>,
    pub cache: BatchNormCache<T>,
    /// Updated `(mean, var)` in train mode.
    pub running: Option<(Tensor<T>, Tensor<T>)>,
}

/// Channel axis is 1; any trailing axes are spatial.
fn bn_layout<T: Element>(input: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(Error::ShapeMismatch {
            op: "batch_norm",
            axis: "rank",
            expected: 2,
            actual: shape.len(),
        });
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

pub fn batch_norm<T: Element>(
    input: &Tensor<T>,
    params: &BatchNormParams<T>,
    mode: BatchNormMode,
    epsilon: f64,
) -> Result<BatchNormOutput<T>> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::invalid(format!("batch-norm epsilon must be > 0, got {epsilon}")));
    }
    let (b, c, s) = bn_layout(input)?;
    params.validate(c)?;
    let eps = T::from_f64_lossy(epsilon);
    let x = input.data();

    let (mean, var, running) = match mode {
        BatchNormMode::Infer => (params.mean.data().to_vec(), params.var.data().to_vec(), None),
        BatchNormMode::Train { momentum } => {
            if !(0.0..=1.0).contains(&momentum) {
                return Err(Error::invalid(format!("momentum must be in [0, 1], got {momentum}")));
            }
            let count = T::from_f64_lossy((b * s) as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut acc = T::zero();
                for bi in 0..b {
                    let off = (bi * c + ch) * s;
                    acc += x[off..off + s].iter().copied().sum::<T>();
                }
                let mu = acc / count;
                let mut sq = T::zero();
                for bi in 0..b {
                    let off = (bi * c + ch) * s;
                    sq += x[off..off + s].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
                mean[ch] = mu;
                var[ch] = sq / count;
            }
            let m = T::from_f64_lossy(momentum);
            let one_m = T::one() - m;
            let new_mean: Vec<T> = params
                .mean
                .data()
                .iter()
                .zip(&mean)
                .map(|(&r, &bm)| m * r + one_m * bm)
                .collect();
            let new_var: Vec<T> = params
                .var
                .data()
                .iter()
                .zip(&var)
                .map(|(&r, &bv)| m * r + one_m * bv)
                .collect();
            let running = Some((
                Tensor::from_parts(vec![c], new_mean),
                Tensor::from_parts(vec![c], new_var),
            ));
            (mean, var, running)
        }
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let gamma = params.gamma.data();
    let beta = params.beta.data();
    let mut x_hat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * s;
            for i in off..off + s {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                x_hat[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok(BatchNormOutput {
        output: Tensor::from_parts(input.shape().to_vec(), out),
        cache: BatchNormCache {
            x_hat: Tensor::from_parts(input.shape().to_vec(), x_hat),
            inv_std,
            train: matches!(mode, BatchNormMode::Train { .. }),
        },
        running,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_zero_input_gives_zero() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 3]).unwrap();
        let k = t(&[1, 1, 2, 2], &[0.3, -1.0, 2.0, 5.0]);
        let y = conv2d(&x, &k, None, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_hand_summed_windows() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = Tensor::full(&[1, 1, 2, 2], 1.0).unwrap();
        let y = conv2d(&x, &k, None, 1, Padding::Valid).unwrap();
        assert_eq!(y.data(), &[12., 16., 24., 28.]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::<f32>::from_fn(&[2, 1, 4, 5], |i| i as f32 * 0.25 - 3.0).unwrap();
        let k = Tensor::full(&[1, 1, 1, 1], 1.0).unwrap();
        let y = conv2d(&x, &k, None, 1, Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_is_cross_correlation() {
        // an asymmetric kernel would give a different answer if flipped
        let x = t(&[1, 1, 1, 3], &[1., 2., 3.]);
        let k = t(&[1, 1, 1, 2], &[1., 10.]);
        let y = conv2d(&x, &k, None, 1, Padding::Valid).unwrap();
        assert_eq!(y.data(), &[21., 32.]);
    }

    #[test]
    fn conv_channel_mismatch_names_axis() {
        let x = Tensor::<f32>::zeros(&[1, 2, 3, 3]).unwrap();
        let k = Tensor::<f32>::zeros(&[1, 3, 1, 1]).unwrap();
        let err = conv2d(&x, &k, None, 1, Padding::Valid).unwrap_err();
        assert!(err.to_string().contains("in_channels"), "{err}");
    }

    #[test]
    fn same_padding_puts_extra_pixel_bottom_right() {
        // even input, stride 2, kernel 3: pad_total 1 -> 0 before, 1 after
        assert_eq!(conv_output_extent(96, 3, 2, Padding::Same).unwrap(), (48, 0));
        assert_eq!(conv_output_extent(5, 3, 1, Padding::Same).unwrap(), (5, 1));
        assert_eq!(conv_output_extent(4, 2, 1, Padding::Same).unwrap(), (4, 0));
        assert!(conv_output_extent(2, 3, 1, Padding::Valid).is_err());
        assert!(conv_output_extent(4, 3, 0, Padding::Valid).is_err());
    }

    #[test]
    fn depthwise_scales_each_channel() {
        let x = t(&[1, 2, 2, 2], &[1., 2., 3., 4., 1., 2., 3., 4.]);
        let k = t(&[2, 1, 1, 1], &[2., 3.]);
        let y = depthwise_conv2d(&x, &k, None, 1, Padding::Same).unwrap();
        assert_eq!(y.data(), &[2., 4., 6., 8., 3., 6., 9., 12.]);
    }

    #[test]
    fn depthwise_window_sum_interior() {
        let c = 1.5f32;
        let x = Tensor::full(&[1, 1, 5, 5], c).unwrap();
        let k = Tensor::full(&[1, 1, 3, 3], 1.0).unwrap();
        let y = depthwise_conv2d(&x, &k, None, 1, Padding::Same).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 9.0 * c);
        // corners only see 4 pixels
        assert_eq!(y.data()[0], 4.0 * c);
    }

    #[test]
    fn depthwise_zero_and_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]).unwrap();
        let k = Tensor::full(&[3, 1, 3, 3], 0.7).unwrap();
        let y = depthwise_conv2d(&x, &k, None, 2, Padding::Same).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let bad = Tensor::full(&[2, 1, 3, 3], 0.7).unwrap();
        assert!(depthwise_conv2d(&x, &bad, None, 1, Padding::Same).is_err());
    }

    #[test]
    fn dense_examples() {
        let x = t(&[1, 2], &[1., 2.]);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        assert_eq!(dense(&x, &eye, None).unwrap(), x);
        let b = t(&[2], &[1., 1.]);
        assert_eq!(dense(&x, &eye, Some(&b)).unwrap().data(), &[2., 3.]);
        let zero = Tensor::zeros(&[2, 3]).unwrap();
        let b3 = t(&[3], &[0.5, -1., 2.]);
        let y = dense(&t(&[2, 2], &[9., 8., 7., 6.]), &zero, Some(&b3)).unwrap();
        assert_eq!(y.data(), &[0.5, -1., 2., 0.5, -1., 2.]);
        assert!(dense(&x, &Tensor::zeros(&[3, 2]).unwrap(), None).is_err());
    }

    #[test]
    fn activations() {
        let x = t(&[3], &[-1., 0., 2.]);
        assert_eq!(relu(&x).data(), &[0., 0., 2.]);
        assert_eq!(relu(&relu(&x)), relu(&x));
        assert_eq!(relu6(&t(&[2], &[8., -3.])).data(), &[6., 0.]);
    }

    #[test]
    fn max_pool_window_maxima() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 4, 4], |i| (i + 1) as f32).unwrap();
        let p = max_pool2d(&x, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[6., 8., 14., 16.]);
        let c = Tensor::full(&[2, 3, 6, 4], 2.5f32).unwrap();
        let pc = max_pool2d(&c, 2, 2).unwrap();
        assert_eq!(pc.output.shape(), &[2, 3, 3, 2]);
        assert!(pc.output.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn gap_means() {
        let x = t(&[1, 2, 2, 2], &[1., 2., 3., 4., 7., 7., 7., 7.]);
        let g = global_average_pool(&x).unwrap();
        assert_eq!(g.data(), &[2.5, 7.0]);
    }

    #[test]
    fn gap_then_dense_on_unit_spatial_equals_dense() {
        let x = Tensor::<f32>::from_fn(&[3, 4, 1, 1], |i| i as f32 - 5.0).unwrap();
        let w = Tensor::from_fn(&[4, 2], |i| (i as f32 * 0.3).cos()).unwrap();
        let b = t(&[2], &[0.1, -0.2]);
        let via_gap = dense(&global_average_pool(&x).unwrap(), &w, Some(&b)).unwrap();
        let squeezed = x.clone().reshape(&[3, 4]).unwrap();
        assert_eq!(via_gap, dense(&squeezed, &w, Some(&b)).unwrap());
    }

    #[test]
    fn batch_norm_identity_in_infer_mode() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 2, 2], |i| i as f32 * 0.1).unwrap();
        let p = BatchNormParams::identity(3).unwrap();
        let out = batch_norm(&x, &p, BatchNormMode::Infer, 1e-12).unwrap();
        assert!(out.output.max_abs_diff(&x).unwrap() < 1e-5);
        assert!(out.running.is_none());
    }

    #[test]
    fn batch_norm_train_mode_standardizes() {
        let x = Tensor::<f64>::from_fn(&[4, 2, 3, 3], |i| ((i * 37 % 11) as f64) * 0.7 - 2.0).unwrap();
        let p = BatchNormParams::identity(2).unwrap();
        let out = batch_norm(&x, &p, BatchNormMode::Train { momentum: 0.99 }, 1e-9).unwrap();
        let y = out.output.data();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y[(b * 2 + ch) * 9..(b * 2 + ch + 1) * 9].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
        let (rm, rv) = out.running.unwrap();
        // running stats moved 1% toward the batch
        assert!(rm.data().iter().all(|v| v.abs() < 0.1));
        assert!(rv.data().iter().all(|&v| v != 1.0));
    }

    #[test]
    fn batch_norm_zero_gamma_outputs_beta() {
        let x = Tensor::<f32>::from_fn(&[2, 2, 2, 2], |i| i as f32).unwrap();
        let mut p = BatchNormParams::identity(2).unwrap();
        p.gamma = Tensor::zeros(&[2]).unwrap();
        p.beta = t(&[2], &[0.25, -4.0]);
        let out = batch_norm(&x, &p, BatchNormMode::Train { momentum: 0.99 }, 1e-3).unwrap();
        for (i, &v) in out.output.data().iter().enumerate() {
            let ch = (i / 4) % 2;
            assert_eq!(v, [0.25, -4.0][ch]);
        }
    }

    #[test]
    fn batch_norm_rejects_bad_epsilon() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]).unwrap();
        let p = BatchNormParams::identity(1).unwrap();
        assert!(batch_norm(&x, &p, BatchNormMode::Infer, 0.0).is_err());
        assert!(batch_norm(&x, &p, BatchNormMode::Infer, -1.0).is_err());
    }
}
