//! Fully connected ReLU layers and Gaussian input corruption.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{gemm, Tensor};

use super::LayerParams;

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Tensor,
    output: Tensor,
}

fn dims2(x: &Tensor) -> Result<[usize; 2]> {
    match x.shape() {
        &[b, f] => Ok([b, f]),
        other => Err(Error::Layer {
            layer: "dense".into(),
            reason: format!("expected [batch, units], got {other:?}"),
        }),
    }
}

/// `ReLU(W y + b)` for each row `y` of a `[batch, in]` input.
pub fn dense_forward(x: &Tensor, params: &LayerParams) -> Result<(Tensor, DenseCache)> {
    let [b, fan_in] = dims2(x)?;
    let &[units, w_in] = params.weights.shape() else {
        return Err(Error::Layer {
            layer: "dense".into(),
            reason: format!("weights {:?} are not a matrix", params.weights.shape()),
        });
    };
    if w_in != fan_in {
        return Err(Error::Layer {
            layer: "dense".into(),
            reason: format!("input has {fan_in} units, weights expect {w_in}"),
        });
    }
    if params.bias.shape() != [units] {
        return Err(Error::Layer {
            layer: "dense".into(),
            reason: format!("bias {:?} should be [{units}]", params.bias.shape()),
        });
    }
    let mut out = vec![0.0; b * units];
    gemm(b, fan_in, units, 1.0, x.data(), false, params.weights.data(), true, 0.0, &mut out);
    let bias = params.bias.data();
    for row in out.chunks_exact_mut(units) {
        for (v, &bb) in row.iter_mut().zip(bias) {
            *v = (*v + bb).max(0.0);
        }
    }
    let output = Tensor::new(&[b, units], out)?;
    Ok((
        output.clone(),
        DenseCache {
            input: x.clone(),
            output,
        },
    ))
}

pub fn dense_backward(
    cache: &DenseCache,
    params: &LayerParams,
    grad_out: &Tensor,
) -> Result<(Tensor, LayerParams)> {
    if grad_out.shape() != cache.output.shape() {
        return Err(Error::ShapeMismatch {
            left: grad_out.shape().to_vec(),
            right: cache.output.shape().to_vec(),
        });
    }
    let [b, fan_in] = dims2(&cache.input)?;
    let units = params.bias.len();
    let gated: Vec<f64> = relu_backward(cache.output.data(), grad_out.data());
    let mut grad_bias = vec![0.0; units];
    for row in gated.chunks_exact(units) {
        for (acc, &g) in grad_bias.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let mut grad_w = vec![0.0; units * fan_in];
    gemm(units, b, fan_in, 1.0, &gated, true, cache.input.data(), false, 0.0, &mut grad_w);
    let mut grad_in = vec![0.0; b * fan_in];
    gemm(b, units, fan_in, 1.0, &gated, false, params.weights.data(), false, 0.0, &mut grad_in);
    Ok((
        Tensor::new(&[b, fan_in], grad_in)?,
        LayerParams {
            weights: Tensor::new(&[units, fan_in], grad_w)?,
            bias: Tensor::new(&[units], grad_bias)?,
        },
    ))
}

/// ReLU gate: passes `grad_out` where the activation (equivalently the
/// pre-activation) is positive.
pub fn relu_backward(activation: &[f64], grad_out: &[f64]) -> Vec<f64> {
    activation
        .iter()
        .zip(grad_out)
        .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
        .collect()
}

/// Adds `N(0, noise_std^2)` noise. A zero standard deviation returns the
/// input unchanged.
pub fn corrupt_forward(x: &Tensor, noise_std: f64, rng: &mut SeededRng) -> Tensor {
    if noise_std == 0.0 {
        return x.clone();
    }
    let mut out = x.clone();
    for v in out.data_mut() {
        *v += noise_std * rng.normal();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let x = Tensor::new(&[1, 3], vec![0.5, 2.0, 0.0]).unwrap();
        let p = LayerParams {
            weights: Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }),
            bias: Tensor::zeros(&[3]),
        };
        assert_eq!(dense_forward(&x, &p).unwrap().0, x);
    }

    #[test]
    fn negative_preactivation_clamps() {
        let x = Tensor::new(&[1, 2], vec![3.0, 5.0]).unwrap();
        let p = LayerParams {
            weights: Tensor::new(&[1, 2], vec![1.0, -1.0]).unwrap(),
            bias: Tensor::zeros(&[1]),
        };
        assert_eq!(dense_forward(&x, &p).unwrap().0.data(), &[0.0]);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let x = Tensor::zeros(&[1, 4]);
        let p = LayerParams {
            weights: Tensor::zeros(&[2, 3]),
            bias: Tensor::zeros(&[2]),
        };
        assert!(dense_forward(&x, &p).is_err());
    }

    #[test]
    fn relu_gate() {
        // Activations of pre-activations [-1, 2].
        assert_eq!(relu_backward(&[0.0, 2.0], &[5.0, 5.0]), vec![0.0, 5.0]);
    }

    #[test]
    fn zero_noise_is_exact() {
        let x = Tensor::from_fn(&[2, 5], |i| i as f64 * 0.1);
        let mut rng = SeededRng::new(0);
        assert_eq!(corrupt_forward(&x, 0.0, &mut rng), x);
        let noisy = corrupt_forward(&x, 0.1, &mut rng);
        assert_ne!(noisy, x);
    }
}
