//! Valid-mode convolution and its full-mode transpose.
//!
//! Both operate on `[batch, maps, rows, cols]` tensors with weights shaped
//! `[out_maps, in_maps, c, c]` and one bias per output map, followed by ReLU.
//! The convolution is a correlation (no kernel flip). The transposed
//! convolution scatters each input pixel times the kernel into the output,
//! which is the same as a zero-padded full correlation against the kernel
//! rotated by 180 degrees: a unit impulse reproduces the kernel unflipped.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

use super::LayerParams;

/// Saved forward state for [`conv_backward`].
#[derive(Debug, Clone)]
pub struct ConvCache {
    input_shape: [usize; 4],
    cols: Vec<f64>,
    output: Tensor,
}

/// Saved forward state for [`deconv_backward`].
#[derive(Debug, Clone)]
pub struct DeconvCache {
    input_shape: [usize; 4],
    /// Input permuted to `[in_maps, batch * rows * cols]`.
    input_mat: Vec<f64>,
    output: Tensor,
}

pub(crate) fn dims4(x: &Tensor, layer: &str) -> Result<[usize; 4]> {
    match x.shape() {
        &[b, c, h, w] => Ok([b, c, h, w]),
        other => Err(Error::Layer {
            layer: layer.into(),
            reason: format!("expected [batch, maps, rows, cols], got {other:?}"),
        }),
    }
}

/// Unfolds every `c x c` window: rows are `(map, dy, dx)`, columns are
/// `(sample, y, x)` over the valid output positions.
fn im2col(x: &[f64], [b, maps, h, w]: [usize; 4], c: usize) -> Vec<f64> {
    let (ho, wo) = (h - c + 1, w - c + 1);
    let cols_n = b * ho * wo;
    let mut cols = vec![0.0; maps * c * c * cols_n];
    for m in 0..maps {
        for dy in 0..c {
            for dx in 0..c {
                let row = (m * c + dy) * c + dx;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..b {
                    let plane = &x[(n * maps + m) * h * w..];
                    for y in 0..ho {
                        let src = &plane[(y + dy) * w + dx..(y + dy) * w + dx + wo];
                        let base = (n * ho + y) * wo;
                        dst[base..base + wo].copy_from_slice(src);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto the image, summing
/// overlaps.
fn col2im(cols: &[f64], [b, maps, h, w]: [usize; 4], c: usize) -> Vec<f64> {
    let (ho, wo) = (h - c + 1, w - c + 1);
    let cols_n = b * ho * wo;
    let mut x = vec![0.0; b * maps * h * w];
    for m in 0..maps {
        for dy in 0..c {
            for dx in 0..c {
                let row = (m * c + dy) * c + dx;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..b {
                    let plane = &mut x[(n * maps + m) * h * w..(n * maps + m + 1) * h * w];
                    for y in 0..ho {
                        let base = (n * ho + y) * wo;
                        let dst = &mut plane[(y + dy) * w + dx..(y + dy) * w + dx + wo];
                        for (d, s) in dst.iter_mut().zip(&src[base..base + wo]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[batch, maps, pixels]` -> `[maps, batch * pixels]`.
fn batch_major_to_map_major(x: &[f64], b: usize, maps: usize, pixels: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for n in 0..b {
        for m in 0..maps {
            let src = &x[(n * maps + m) * pixels..(n * maps + m + 1) * pixels];
            out[(m * b + n) * pixels..(m * b + n + 1) * pixels].copy_from_slice(src);
        }
    }
    out
}

fn map_major_to_batch_major(x: &[f64], b: usize, maps: usize, pixels: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for m in 0..maps {
        for n in 0..b {
            let src = &x[(m * b + n) * pixels..(m * b + n + 1) * pixels];
            out[(n * maps + m) * pixels..(n * maps + m + 1) * pixels].copy_from_slice(src);
        }
    }
    out
}

fn check_params(params: &LayerParams, in_maps: usize, layer: &str) -> Result<(usize, usize)> {
    let (out_maps, c) = match params.weights.shape() {
        &[o, i, c1, c2] if i == in_maps && c1 == c2 => (o, c1),
        other => {
            return Err(Error::Layer {
                layer: layer.into(),
                reason: format!("weights {other:?} do not fit {in_maps} input maps"),
            })
        }
    };
    if params.bias.shape() != [out_maps] {
        return Err(Error::Layer {
            layer: layer.into(),
            reason: format!("bias {:?} should be [{out_maps}]", params.bias.shape()),
        });
    }
    Ok((out_maps, c))
}

/// Bias add + ReLU over a `[maps, batch * pixels]` matrix, written out batch-major.
fn bias_relu_to_batch_major(
    mat: &[f64],
    bias: &[f64],
    b: usize,
    maps: usize,
    pixels: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; mat.len()];
    for m in 0..maps {
        let bm = bias[m];
        for n in 0..b {
            let src = &mat[(m * b + n) * pixels..(m * b + n + 1) * pixels];
            let dst = &mut out[(n * maps + m) * pixels..(n * maps + m + 1) * pixels];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s + bm).max(0.0);
            }
        }
    }
    out
}

/// Gates `grad_out` by the ReLU mask of `output` and returns it map-major,
/// together with the per-map bias gradient.
fn relu_gate_map_major(
    output: &Tensor,
    grad_out: &Tensor,
    b: usize,
    maps: usize,
    pixels: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut gated = vec![0.0; output.len()];
    let mut grad_bias = vec![0.0; maps];
    let (out, g) = (output.data(), grad_out.data());
    for n in 0..b {
        for m in 0..maps {
            let src = (n * maps + m) * pixels;
            let dst = (m * b + n) * pixels;
            let mut acc = 0.0;
            for p in 0..pixels {
                let v = if out[src + p] > 0.0 { g[src + p] } else { 0.0 };
                gated[dst + p] = v;
                acc += v;
            }
            grad_bias[m] += acc;
        }
    }
    (gated, grad_bias)
}

pub fn conv_forward(x: &Tensor, params: &LayerParams) -> Result<(Tensor, ConvCache)> {
    let dims @ [b, in_maps, h, w] = dims4(x, "conv")?;
    let (out_maps, c) = check_params(params, in_maps, "conv")?;
    if h < c || w < c {
        return Err(Error::Layer {
            layer: "conv".into(),
            reason: format!("input {h}x{w} is smaller than the {c}x{c} filter"),
        });
    }
    let (ho, wo) = (h - c + 1, w - c + 1);
    let k = in_maps * c * c;
    let cols_n = b * ho * wo;
    let cols = im2col(x.data(), dims, c);
    let mut pre = vec![0.0; out_maps * cols_n];
    gemm(out_maps, k, cols_n, 1.0, params.weights.data(), false, &cols, false, 0.0, &mut pre);
    let out = bias_relu_to_batch_major(&pre, params.bias.data(), b, out_maps, ho * wo);
    let output = Tensor::new(&[b, out_maps, ho, wo], out)?;
    Ok((
        output.clone(),
        ConvCache {
            input_shape: dims,
            cols,
            output,
        },
    ))
}

pub fn conv_backward(
    cache: &ConvCache,
    params: &LayerParams,
    grad_out: &Tensor,
) -> Result<(Tensor, LayerParams)> {
    if grad_out.shape() != cache.output.shape() {
        return Err(Error::ShapeMismatch {
            left: grad_out.shape().to_vec(),
            right: cache.output.shape().to_vec(),
        });
    }
    let [b, in_maps, h, w] = cache.input_shape;
    let (out_maps, c) = check_params(params, in_maps, "conv")?;
    let (ho, wo) = (h - c + 1, w - c + 1);
    let k = in_maps * c * c;
    let cols_n = b * ho * wo;
    let (gated, grad_bias) = relu_gate_map_major(&cache.output, grad_out, b, out_maps, ho * wo);

    let mut grad_w = vec![0.0; out_maps * k];
    gemm(out_maps, cols_n, k, 1.0, &gated, false, &cache.cols, true, 0.0, &mut grad_w);
    let mut grad_cols = vec![0.0; k * cols_n];
    gemm(k, out_maps, cols_n, 1.0, params.weights.data(), true, &gated, false, 0.0, &mut grad_cols);
    let grad_in = col2im(&grad_cols, cache.input_shape, c);

    Ok((
        Tensor::new(&cache.input_shape, grad_in)?,
        LayerParams {
            weights: Tensor::new(params.weights.shape(), grad_w)?,
            bias: Tensor::new(&[out_maps], grad_bias)?,
        },
    ))
}

/// `[out, in, c, c]` -> `[(out, dy, dx), in]`.
fn scatter_matrix(weights: &Tensor) -> Vec<f64> {
    let &[o, i, c, _] = weights.shape() else {
        unreachable!("checked by check_params")
    };
    let w = weights.data();
    let mut out = vec![0.0; w.len()];
    for om in 0..o {
        for im in 0..i {
            for t in 0..c * c {
                out[(om * c * c + t) * i + im] = w[(om * i + im) * c * c + t];
            }
        }
    }
    out
}

fn scatter_matrix_to_weights(mat: &[f64], shape: &[usize]) -> Vec<f64> {
    let &[o, i, c, _] = shape else {
        unreachable!("checked by check_params")
    };
    let mut out = vec![0.0; mat.len()];
    for om in 0..o {
        for im in 0..i {
            for t in 0..c * c {
                out[(om * i + im) * c * c + t] = mat[(om * c * c + t) * i + im];
            }
        }
    }
    out
}

pub fn deconv_forward(x: &Tensor, params: &LayerParams) -> Result<(Tensor, DeconvCache)> {
    let dims @ [b, in_maps, h, w] = dims4(x, "deconv")?;
    let (out_maps, c) = check_params(params, in_maps, "deconv")?;
    let (ho, wo) = (h + c - 1, w + c - 1);
    let cols_n = b * h * w;
    let input_mat = batch_major_to_map_major(x.data(), b, in_maps, h * w);
    let scatter = scatter_matrix(&params.weights);
    let rows = out_maps * c * c;
    let mut cols = vec![0.0; rows * cols_n];
    gemm(rows, in_maps, cols_n, 1.0, &scatter, false, &input_mat, false, 0.0, &mut cols);
    let mut out = col2im(&cols, [b, out_maps, ho, wo], c);
    let bias = params.bias.data();
    for n in 0..b {
        for m in 0..out_maps {
            let plane = &mut out[(n * out_maps + m) * ho * wo..(n * out_maps + m + 1) * ho * wo];
            for v in plane {
                *v = (*v + bias[m]).max(0.0);
            }
        }
    }
    let output = Tensor::new(&[b, out_maps, ho, wo], out)?;
    Ok((
        output.clone(),
        DeconvCache {
            input_shape: dims,
            input_mat,
            output,
        },
    ))
}

pub fn deconv_backward(
    cache: &DeconvCache,
    params: &LayerParams,
    grad_out: &Tensor,
) -> Result<(Tensor, LayerParams)> {
    if grad_out.shape() != cache.output.shape() {
        return Err(Error::ShapeMismatch {
            left: grad_out.shape().to_vec(),
            right: cache.output.shape().to_vec(),
        });
    }
    let [b, in_maps, h, w] = cache.input_shape;
    let (out_maps, c) = check_params(params, in_maps, "deconv")?;
    let (ho, wo) = (h + c - 1, w + c - 1);
    let cols_n = b * h * w;
    let rows = out_maps * c * c;

    let out = cache.output.data();
    let mut gated = grad_out.data().to_vec();
    let mut grad_bias = vec![0.0; out_maps];
    for n in 0..b {
        for m in 0..out_maps {
            let range = (n * out_maps + m) * ho * wo..(n * out_maps + m + 1) * ho * wo;
            let mut acc = 0.0;
            for idx in range {
                if out[idx] <= 0.0 {
                    gated[idx] = 0.0;
                }
                acc += gated[idx];
            }
            grad_bias[m] += acc;
        }
    }
    let grad_cols = im2col(&gated, [b, out_maps, ho, wo], c);

    let mut grad_scatter = vec![0.0; rows * in_maps];
    gemm(rows, cols_n, in_maps, 1.0, &grad_cols, false, &cache.input_mat, true, 0.0, &mut grad_scatter);
    let scatter = scatter_matrix(&params.weights);
    let mut grad_in_mat = vec![0.0; in_maps * cols_n];
    gemm(in_maps, rows, cols_n, 1.0, &scatter, true, &grad_cols, false, 0.0, &mut grad_in_mat);
    let grad_in = map_major_to_batch_major(&grad_in_mat, b, in_maps, h * w);

    Ok((
        Tensor::new(&cache.input_shape, grad_in)?,
        LayerParams {
            weights: Tensor::new(
                params.weights.shape(),
                scatter_matrix_to_weights(&grad_scatter, params.weights.shape()),
            )?,
            bias: Tensor::new(&[out_maps], grad_bias)?,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(weights: Tensor, out_maps: usize) -> LayerParams {
        LayerParams {
            weights,
            bias: Tensor::zeros(&[out_maps]),
        }
    }

    /// Nested-loop valid correlation, no ReLU.
    fn conv_oracle(x: &Tensor, w: &Tensor) -> Vec<f64> {
        let &[b, ci, h, wd] = x.shape() else { panic!() };
        let &[co, _, c, _] = w.shape() else { panic!() };
        let mut out = Vec::new();
        for n in 0..b {
            for o in 0..co {
                for y in 0..h - c + 1 {
                    for xx in 0..wd - c + 1 {
                        let mut s = 0.0;
                        for i in 0..ci {
                            for dy in 0..c {
                                for dx in 0..c {
                                    s += x.at(&[n, i, y + dy, xx + dx]) * w.at(&[o, i, dy, dx]);
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn sixteen_to_fourteen() {
        let x = Tensor::full(&[1, 1, 16, 16], 0.5);
        let p = params(Tensor::full(&[4, 1, 3, 3], 0.1), 4);
        let (y, _) = conv_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 4, 14, 14]);
    }

    #[test]
    fn unit_filter_is_identity_on_nonnegative_input() {
        let x = Tensor::from_fn(&[2, 1, 5, 5], |i| i as f64);
        let p = params(Tensor::full(&[1, 1, 1, 1], 1.0), 1);
        assert_eq!(conv_forward(&x, &p).unwrap().0, x);
        assert_eq!(deconv_forward(&x, &p).unwrap().0, x);
    }

    #[test]
    fn ones_filter_sums_windows() {
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| (i * i % 7) as f64);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let (y, _) = conv_forward(&x, &params(w.clone(), 1)).unwrap();
        assert_eq!(y.len(), 4);
        assert_eq!(y.data(), conv_oracle(&x, &w).as_slice());
    }

    #[test]
    fn random_multi_map_conv_matches_oracle() {
        let x = Tensor::from_fn(&[2, 3, 6, 7], |i| ((i * 37 % 23) as f64 - 11.0) / 7.0);
        let w = Tensor::from_fn(&[4, 3, 3, 3], |i| ((i * 13 % 17) as f64 - 8.0) / 9.0);
        let (y, _) = conv_forward(&x, &params(w.clone(), 4)).unwrap();
        for (got, want) in y.data().iter().zip(conv_oracle(&x, &w)) {
            assert!((got - want.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_small_input() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let p = params(Tensor::zeros(&[1, 1, 3, 3]), 1);
        assert!(conv_forward(&x, &p).is_err());
    }

    #[test]
    fn impulse_through_deconv_reproduces_kernel() {
        let x = Tensor::full(&[1, 1, 1, 1], 1.0);
        let w = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 + 1.0);
        let (y, _) = deconv_forward(&x, &params(w.clone(), 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data(), w.data());
    }

    #[test]
    fn deconv_matches_scatter_oracle() {
        let x = Tensor::from_fn(&[1, 2, 3, 4], |i| ((i * 5 % 11) as f64) / 3.0);
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 7 % 13) as f64 - 6.0) / 5.0);
        let (y, _) = deconv_forward(&x, &params(w.clone(), 3)).unwrap();
        assert_eq!(y.shape(), &[1, 3, 5, 6]);
        let mut oracle = vec![0.0; 3 * 5 * 6];
        for o in 0..3 {
            for i in 0..2 {
                for r in 0..3 {
                    for c in 0..4 {
                        for a in 0..3 {
                            for bb in 0..3 {
                                oracle[(o * 5 + r + a) * 6 + c + bb] +=
                                    x.at(&[0, i, r, c]) * w.at(&[o, i, a, bb]);
                            }
                        }
                    }
                }
            }
        }
        for (got, want) in y.data().iter().zip(oracle) {
            assert!((got - want.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn fourteen_to_sixteen() {
        let x = Tensor::full(&[1, 2, 14, 14], 0.3);
        let p = params(Tensor::full(&[1, 2, 3, 3], 0.2), 1);
        assert_eq!(deconv_forward(&x, &p).unwrap().0.shape(), &[1, 1, 16, 16]);
    }
}
