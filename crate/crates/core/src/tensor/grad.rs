//! Backward kernels: gradients of a scalar loss with respect to each
//! kernel's inputs and parameters, given the upstream gradient.
//!
//! Weight gradients are reduced over fixed-size sample chunks and the
//! partial sums are added in chunk order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

use super::ops::{conv_geom, depthwise_geom, BatchNormCache, ConvGeom, Padding};
use super::{same_shape, Element, Tensor};
use crate::error::{Error, Result};

/// Samples per partial weight-gradient sum.
const GRAD_CHUNK: usize = 8;

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

fn check_upstream<T: Element>(op: &'static str, expected: &[usize], grad: &Tensor<T>) -> Result<()> {
    if grad.shape() != expected {
        let axis = expected.iter().zip(grad.shape()).position(|(a, b)| a != b).unwrap_or(0);
        return Err(Error::ShapeMismatch {
            op,
            axis: [
                "upstream axis 0",
                "upstream axis 1",
                "upstream axis 2",
                "upstream axis 3",
            ]
            .get(axis)
            .copied()
            .unwrap_or("upstream rank"),
            expected: expected.get(axis).copied().unwrap_or(expected.len()),
            actual: grad.shape().get(axis).copied().unwrap_or(grad.rank()),
        });
    }
    Ok(())
}

fn reduce_in_order<T: Element>(partials: Vec<(Vec<T>, Vec<T>)>, wlen: usize, blen: usize) -> (Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); wlen];
    let mut db = vec![T::zero(); blen];
    for (pw, pb) in partials {
        dw.iter_mut().zip(&pw).for_each(|(a, &b)| *a += b);
        db.iter_mut().zip(&pb).for_each(|(a, &b)| *a += b);
    }
    (dw, db)
}

pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (b, cout, g) = conv_geom(input, weights, stride, padding)?;
    check_upstream("conv2d_backward", &[b, cout, g.out_h, g.out_w], grad_out)?;
    let n = g.out_pixels();
    let k = g.patch_len();
    let w = weights.data();
    let in_sz = g.in_size();
    let out_sz = cout * n;
    let mut dx = vec![T::zero(); input.len()];

    let partials: Vec<(Vec<T>, Vec<T>)> = dx
        .par_chunks_mut(GRAD_CHUNK * in_sz)
        .zip(input.data().par_chunks(GRAD_CHUNK * in_sz))
        .zip(grad_out.data().par_chunks(GRAD_CHUNK * out_sz))
        .map(|((dx_chunk, x_chunk), dy_chunk)| {
            let mut dw = vec![T::zero(); cout * k];
            let mut db = vec![T::zero(); if has_bias { cout } else { 0 }];
            let mut cols = vec![T::zero(); k * n];
            let mut dcols = vec![T::zero(); k * n];
            for ((dxs, xs), dys) in dx_chunk
                .chunks_mut(in_sz)
                .zip(x_chunk.chunks(in_sz))
                .zip(dy_chunk.chunks(out_sz))
            {
                let pointwise = g.is_pointwise_identity();
                let cols_ref: &[T] = if pointwise {
                    xs
                } else {
                    g.im2col(xs, &mut cols);
                    &cols
                };
                // dW += dY . cols^T
                T::gemm(cout, n, k, T::one(), dys, false, cols_ref, true, T::one(), &mut dw);
                if has_bias {
                    for (acc, plane) in db.iter_mut().zip(dys.chunks(n)) {
                        *acc += plane.iter().copied().sum::<T>();
                    }
                }
                // dcols = W^T . dY
                if pointwise {
                    T::gemm(k, cout, n, T::one(), w, true, dys, false, T::zero(), dxs);
                } else {
                    T::gemm(k, cout, n, T::one(), w, true, dys, false, T::zero(), &mut dcols);
                    g.col2im(&dcols, dxs);
                }
            }
            (dw, db)
        })
        .collect();

    let (dw, db) = reduce_in_order(partials, cout * k, if has_bias { cout } else { 0 });
    Ok(ConvGrads {
        input: Tensor::from_parts(input.shape().to_vec(), dx),
        weights: Tensor::from_parts(weights.shape().to_vec(), dw),
        bias: has_bias.then(|| Tensor::from_parts(vec![cout], db)),
    })
}

pub fn depthwise_conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (b, g) = depthwise_geom(input, weights, stride, padding)?;
    let c = g.channels;
    check_upstream("depthwise_conv2d_backward", &[b, c, g.out_h, g.out_w], grad_out)?;
    let n = g.out_pixels();
    let plane_in = g.h * g.w;
    let ksz = g.kh * g.kw;
    let in_sz = g.in_size();
    let out_sz = c * n;
    let w = weights.data();
    let mut dx = vec![T::zero(); input.len()];

    let partials: Vec<(Vec<T>, Vec<T>)> = dx
        .par_chunks_mut(GRAD_CHUNK * in_sz)
        .zip(input.data().par_chunks(GRAD_CHUNK * in_sz))
        .zip(grad_out.data().par_chunks(GRAD_CHUNK * out_sz))
        .map(|((dx_chunk, x_chunk), dy_chunk)| {
            let mut dw = vec![T::zero(); c * ksz];
            let mut db = vec![T::zero(); if has_bias { c } else { 0 }];
            for ((dxs, xs), dys) in dx_chunk
                .chunks_mut(in_sz)
                .zip(x_chunk.chunks(in_sz))
                .zip(dy_chunk.chunks(out_sz))
            {
                for ch in 0..c {
                    depthwise_channel_backward(
                        &g,
                        &xs[ch * plane_in..(ch + 1) * plane_in],
                        &w[ch * ksz..(ch + 1) * ksz],
                        &dys[ch * n..(ch + 1) * n],
                        &mut dxs[ch * plane_in..(ch + 1) * plane_in],
                        &mut dw[ch * ksz..(ch + 1) * ksz],
                    );
                    if has_bias {
                        db[ch] += dys[ch * n..(ch + 1) * n].iter().copied().sum::<T>();
                    }
                }
            }
            (dw, db)
        })
        .collect();

    let (dw, db) = reduce_in_order(partials, c * ksz, if has_bias { c } else { 0 });
    Ok(ConvGrads {
        input: Tensor::from_parts(input.shape().to_vec(), dx),
        weights: Tensor::from_parts(weights.shape().to_vec(), dw),
        bias: has_bias.then(|| Tensor::from_parts(vec![c], db)),
    })
}

fn depthwise_channel_backward<T: Element>(g: &ConvGeom, x: &[T], kern: &[T], dy: &[T], dx: &mut [T], dw: &mut [T]) {
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let grad = dy[oy * g.out_w + ox];
            if grad == T::zero() {
                continue;
            }
            for ky in 0..g.kh {
                let Some(iy) = g.src(oy, ky, g.pad_top, g.h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    if let Some(ix) = g.src(ox, kx, g.pad_left, g.w) {
                        let xi = iy * g.w + ix;
                        dw[ky * g.kw + kx] += grad * x[xi];
                        dx[xi] += grad * kern[ky * g.kw + kx];
                    }
                }
            }
        }
    }
}

pub fn dense_backward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (b, n) = input.dims2("dense_backward")?;
    let (wn, m) = weights.dims2("dense_backward")?;
    if wn != n {
        return Err(Error::ShapeMismatch {
            op: "dense_backward",
            axis: "inner dimension",
            expected: wn,
            actual: n,
        });
    }
    check_upstream("dense_backward", &[b, m], grad_out)?;
    let dy = grad_out.data();
    // dX = dY . W^T
    let mut dx = vec![T::zero(); b * n];
    T::gemm(b, m, n, T::one(), dy, false, weights.data(), true, T::zero(), &mut dx);
    // dW = X^T . dY
    let mut dw = vec![T::zero(); n * m];
    T::gemm(n, b, m, T::one(), input.data(), true, dy, false, T::zero(), &mut dw);
    let bias = has_bias.then(|| {
        let mut db = vec![T::zero(); m];
        for row in dy.chunks(m) {
            db.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
        }
        Tensor::from_parts(vec![m], db)
    });
    Ok(DenseGrads {
        input: Tensor::from_parts(vec![b, n], dx),
        weights: Tensor::from_parts(vec![n, m], dw),
        bias,
    })
}

pub fn relu_backward<T: Element>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("relu_backward", input, grad_out)?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor::from_parts(input.shape().to_vec(), data))
}

pub fn relu6_backward<T: Element>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("relu6_backward", input, grad_out)?;
    let six = T::from_f64_lossy(6.0);
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() && x < six { g } else { T::zero() })
        .collect();
    Ok(Tensor::from_parts(input.shape().to_vec(), data))
}

pub fn max_pool2d_backward<T: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::ShapeMismatch {
            op: "max_pool2d_backward",
            axis: "output elements",
            expected: argmax.len(),
            actual: grad_out.len(),
        });
    }
    let mut dx = Tensor::zeros(input_shape)?;
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        if idx >= d.len() {
            return Err(Error::invalid("max-pool argmax index out of range"));
        }
        d[idx] += g;
    }
    Ok(dx)
}

pub fn global_average_pool_backward<T: Element>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = input_shape[..] else {
        return Err(Error::ShapeMismatch {
            op: "global_average_pool_backward",
            axis: "rank",
            expected: 4,
            actual: input_shape.len(),
        });
    };
    check_upstream("global_average_pool_backward", &[b, c], grad_out)?;
    let hw = h * w;
    let scale = T::one() / T::from_f64_lossy(hw as f64);
    let mut data = Vec::with_capacity(b * c * hw);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * scale, hw));
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), data))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward<T: Element>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    same_shape("batch_norm_backward", &cache.x_hat, grad_out)?;
    let shape = cache.x_hat.shape();
    let (b, c) = (shape[0], shape[1]);
    let s: usize = shape[2..].iter().product();
    if gamma.len() != c {
        return Err(Error::ShapeMismatch {
            op: "batch_norm_backward",
            axis: "gamma",
            expected: c,
            actual: gamma.len(),
        });
    }
    let xh = cache.x_hat.data();
    let dy = grad_out.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * s;
            for i in off..off + s {
                dbeta[ch] += dy[i];
                dgamma[ch] += dy[i] * xh[i];
            }
        }
    }
    let count = T::from_f64_lossy((b * s) as f64);
    let gm = gamma.data();
    let mut dx = vec![T::zero(); xh.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * s;
            let scale = gm[ch] * cache.inv_std[ch];
            for i in off..off + s {
                dx[i] = if cache.train {
                    scale * (dy[i] - dbeta[ch] / count - xh[i] * dgamma[ch] / count)
                } else {
                    scale * dy[i]
                };
            }
        }
    }
    Ok((
        Tensor::from_parts(shape.to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::dense;

    #[test]
    fn dense_input_grad_is_adjoint() {
        let x = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64).unwrap();
        let w = Tensor::from_fn(&[3, 2], |i| (i as f64) - 1.5).unwrap();
        let g = Tensor::new(vec![2, 2], vec![1.0, 0.5, -2.0, 3.0]).unwrap();
        let grads = dense_backward(&x, &w, true, &g).unwrap();
        // g . W^T by hand
        let wd = w.data();
        for r in 0..2 {
            for c in 0..3 {
                let want = g.data()[r * 2] * wd[c * 2] + g.data()[r * 2 + 1] * wd[c * 2 + 1];
                assert!((grads.input.data()[r * 3 + c] - want).abs() < 1e-12);
            }
        }
        assert_eq!(grads.bias.unwrap().data(), &[-1.0, 3.5]);
        let _ = dense(&x, &w, None).unwrap();
    }

    #[test]
    fn relu_grad_masks_non_positive() {
        let x = Tensor::<f32>::new(vec![4], vec![-1.0, 0.0, 0.5, 3.0]).unwrap();
        let g = Tensor::full(&[4], 2.0).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 2.0, 2.0]);
        let x6 = Tensor::<f32>::new(vec![3], vec![-1.0, 3.0, 7.0]).unwrap();
        let g3 = Tensor::full(&[3], 1.0).unwrap();
        assert_eq!(relu6_backward(&x6, &g3).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn upstream_shape_is_checked() {
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]).unwrap();
        let w = Tensor::<f32>::zeros(&[2, 1, 3, 3]).unwrap();
        let bad = Tensor::<f32>::zeros(&[1, 2, 3, 3]).unwrap();
        assert!(conv2d_backward(&x, &w, true, 1, Padding::Same, &bad).is_err());
    }
}
