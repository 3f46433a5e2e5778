//! Central finite-difference gradient checks.
//!
//! A layer is checked through the scalar probe `L = sum(r * y)` with a fixed
//! random `r`, so the analytic input and parameter gradients come from one
//! backward pass with `grad_out = r`. A model is checked through its full
//! training loss. Relative error is `|a - n| / max(|a|, |n|, floor)`.
//!
//! Finite differences are meaningless across a ReLU kink, a max-pooling tie
//! or an L1 kink at a zero weight, so the case generators redraw any instance
//! that has a pre-activation, pooling gap or weight within [`KINK_MARGIN`] of
//! such a point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerSpec, Mode};
use crate::model::{Arch, ModelParams};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::train::loss_and_grad;

pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-6;
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_REDRAWS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradReport {
    fn push(&mut self, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(FLOOR);
        self.max_rel_error = self.max_rel_error.max((analytic - numeric).abs() / denom);
        self.checked += 1;
    }

    pub fn merge(self, other: GradReport) -> GradReport {
        GradReport {
            checked: self.checked + other.checked,
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
        }
    }
}

impl Default for GradReport {
    fn default() -> Self {
        Self {
            checked: 0,
            max_rel_error: 0.0,
        }
    }
}

/// Probe value for a layer; corruption noise is replayed from `noise_seed`.
fn probe(layer: &Layer, x: &Tensor, r: &Tensor, noise_seed: u64) -> Result<f64> {
    let (y, _) = layer.forward(x, Mode::Train, &mut SeededRng::new(noise_seed))?;
    Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Checks every input and parameter coordinate of `layer` at `x`.
pub fn check_layer(layer: &Layer, x: &Tensor, seed: u64) -> Result<GradReport> {
    let mut rng = SeededRng::new(seed);
    let noise_seed = rng.next_u64();
    let (y, cache) = layer.forward(x, Mode::Train, &mut SeededRng::new(noise_seed))?;
    let r = Tensor::from_fn(y.shape(), |_| rng.range(-1.0, 1.0));
    let (grad_x, grad_p) = layer.backward(cache.as_ref(), &r)?;

    let mut report = GradReport::default();
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + STEP;
        let up = probe(layer, &xp, &r, noise_seed)?;
        xp.data_mut()[i] = orig - STEP;
        let down = probe(layer, &xp, &r, noise_seed)?;
        xp.data_mut()[i] = orig;
        report.push(grad_x.data()[i], (up - down) / (2.0 * STEP));
    }
    if let (Some(params), Some(grads)) = (&layer.params, grad_p) {
        let mut l = layer.clone();
        for (which, analytic) in [(0, &grads.weights), (1, &grads.bias)] {
            let len = if which == 0 { params.weights.len() } else { params.bias.len() };
            for i in 0..len {
                let orig = *slot(&mut l, which, i);
                *slot(&mut l, which, i) = orig + STEP;
                let up = probe(&l, x, &r, noise_seed)?;
                *slot(&mut l, which, i) = orig - STEP;
                let down = probe(&l, x, &r, noise_seed)?;
                *slot(&mut l, which, i) = orig;
                report.push(analytic.data()[i], (up - down) / (2.0 * STEP));
            }
        }
    }
    Ok(report)
}

/// Weight (`which == 0`) or bias coordinate `i` of a parameterized layer.
fn slot(layer: &mut Layer, which: usize, i: usize) -> &mut f64 {
    let p = layer.params.as_mut().expect("parameterized layer");
    let t = if which == 0 { &mut p.weights } else { &mut p.bias };
    &mut t.data_mut()[i]
}

/// Checks every parameter of `model` against its regularized training loss
/// on `(inputs, labels)`.
pub fn check_model(model: &ModelParams, inputs: &Tensor, labels: &Tensor, l1: f64, l2: f64, seed: u64) -> Result<GradReport> {
    let total = |m: &ModelParams| -> Result<f64> {
        let (loss, _) = loss_and_grad(m, inputs, labels, l1, l2, &mut SeededRng::new(seed))?;
        Ok(loss.total)
    };
    let (_, grads) = loss_and_grad(model, inputs, labels, l1, l2, &mut SeededRng::new(seed))?;
    let mut report = GradReport::default();
    let mut m = model.clone();
    for (li, grad) in grads.iter().enumerate() {
        let Some(grad) = grad else { continue };
        for (which, analytic) in [(0, &grad.weights), (1, &grad.bias)] {
            for i in 0..analytic.len() {
                let orig = *slot(&mut m.layers[li], which, i);
                *slot(&mut m.layers[li], which, i) = orig + STEP;
                let up = total(&m)?;
                *slot(&mut m.layers[li], which, i) = orig - STEP;
                let down = total(&m)?;
                *slot(&mut m.layers[li], which, i) = orig;
                report.push(analytic.data()[i], (up - down) / (2.0 * STEP));
            }
        }
    }
    Ok(report)
}

/// Small layer instances on 6x6 inputs, one per layer kind, with batch 2.
pub fn layer_cases() -> Vec<(LayerSpec, Vec<usize>)> {
    use crate::layers::UnpoolMode;
    vec![
        (LayerSpec::Conv { in_maps: 2, out_maps: 3, filter: 3 }, vec![2, 2, 6, 6]),
        (LayerSpec::Deconv { in_maps: 2, out_maps: 3, filter: 3 }, vec![2, 2, 6, 6]),
        (LayerSpec::Maxpool { pool: 2 }, vec![2, 2, 6, 6]),
        (LayerSpec::Unpool { pool: 2, mode: UnpoolMode::Replicate }, vec![2, 2, 6, 6]),
        (LayerSpec::Unpool { pool: 3, mode: UnpoolMode::ZeroInsert }, vec![2, 2, 6, 6]),
        (LayerSpec::Dense { in_units: 36, units: 5 }, vec![2, 36]),
        (LayerSpec::Reshape { shape: vec![36] }, vec![2, 1, 6, 6]),
        (LayerSpec::Corrupt { noise_std: 0.1 }, vec![2, 36]),
    ]
}

/// Two conv/pool stages mirrored by two deconv/unpool stages around a dense
/// bottleneck, on 1x10x10 inputs.
pub fn composite_model(seed: u64) -> Result<ModelParams> {
    use crate::layers::UnpoolMode;
    let specs = vec![
        LayerSpec::Conv { in_maps: 1, out_maps: 2, filter: 3 },
        LayerSpec::Maxpool { pool: 2 },
        LayerSpec::Conv { in_maps: 2, out_maps: 3, filter: 3 },
        LayerSpec::Reshape { shape: vec![12] },
        LayerSpec::Corrupt { noise_std: 0.1 },
        LayerSpec::Dense { in_units: 12, units: 6 },
        LayerSpec::Dense { in_units: 6, units: 12 },
        LayerSpec::Reshape { shape: vec![3, 2, 2] },
        LayerSpec::Deconv { in_maps: 3, out_maps: 2, filter: 3 },
        LayerSpec::Unpool { pool: 2, mode: UnpoolMode::Replicate },
        LayerSpec::Deconv { in_maps: 2, out_maps: 1, filter: 3 },
    ];
    ModelParams::from_specs(Arch::Custom, &[1, 10, 10], specs, seed)
}

/// Distance of a forward pass from the nearest non-differentiable point:
/// the smallest |pre-activation| of any ReLU layer, the smallest gap between
/// the two largest values of any pooling window, and the smallest |weight|.
pub fn kink_margin(layers: &[Layer], x: &Tensor, noise_seed: u64) -> Result<f64> {
    let mut rng = SeededRng::new(noise_seed);
    let mut margin = f64::INFINITY;
    let mut h = x.clone();
    for layer in layers {
        let (y, _) = layer.forward(&h, Mode::Train, &mut rng)?;
        match &layer.spec {
            LayerSpec::Conv { .. } | LayerSpec::Deconv { .. } | LayerSpec::Dense { .. } => {
                // relu(z) - relu(-z) recovers z.
                let mut negated = layer.clone();
                if let Some(p) = negated.params.as_mut() {
                    p.weights = p.weights.scale(-1.0);
                    p.bias = p.bias.scale(-1.0);
                    margin = margin.min(p.weights.data().iter().fold(f64::INFINITY, |m, w| m.min(w.abs())));
                }
                let (y_neg, _) = negated.forward(&h, Mode::Infer, &mut rng)?;
                for (a, b) in y.data().iter().zip(y_neg.data()) {
                    margin = margin.min((a - b).abs());
                }
            }
            LayerSpec::Maxpool { pool } => margin = margin.min(pool_gap(&h, *pool)),
            _ => {}
        }
        h = y;
    }
    Ok(margin)
}

fn pool_gap(x: &Tensor, p: usize) -> f64 {
    let s = x.shape();
    let (maps, rows, cols) = (s[0] * s[1], s[2], s[3]);
    let mut gap = f64::INFINITY;
    for m in 0..maps {
        for wr in 0..rows / p {
            for wc in 0..cols / p {
                let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for r in 0..p {
                    for c in 0..p {
                        let v = x.data()[(m * rows + wr * p + r) * cols + wc * p + c];
                        if v > first {
                            second = first;
                            first = v;
                        } else if v > second {
                            second = v;
                        }
                    }
                }
                gap = gap.min(first - second);
            }
        }
    }
    gap
}

fn redraw_error(what: &str, instance: u64) -> Error {
    Error::InvalidArgument(format!(
        "no {what} instance {instance} clear of kinks after {MAX_REDRAWS} draws"
    ))
}

/// Random layer instance `instance` of `spec`: fresh parameters, random
/// biases and inputs uniform in `[-1, 1]`, clear of kinks.
pub fn random_layer_case(spec: &LayerSpec, input_shape: &[usize], instance: u64) -> Result<(Layer, Tensor)> {
    for draw in 0..MAX_REDRAWS {
        let mut rng = SeededRng::child(0x6752_4144 ^ draw, instance);
        let mut layer = Layer::init(spec.clone(), &mut rng)?;
        if let Some(p) = layer.params.as_mut() {
            p.bias.data_mut().iter_mut().for_each(|b| *b = rng.range(-0.5, 0.5));
        }
        let x = Tensor::from_fn(input_shape, |_| rng.range(-1.0, 1.0));
        if kink_margin(std::slice::from_ref(&layer), &x, 0)? >= KINK_MARGIN {
            return Ok((layer, x));
        }
    }
    Err(redraw_error("layer", instance))
}

/// Composite model, batch of two inputs and labels in `[0, 1]`, and the
/// corruption seed, clear of kinks.
pub fn composite_case(instance: u64) -> Result<(ModelParams, Tensor, Tensor, u64)> {
    for draw in 0..MAX_REDRAWS {
        let seed = SeededRng::derive_seed(instance, draw);
        let model = composite_model(seed)?;
        let mut rng = SeededRng::child(seed, 1);
        let x = Tensor::from_fn(&[2, 1, 10, 10], |_| rng.uniform());
        let y = Tensor::from_fn(&[2, 1, 10, 10], |_| rng.uniform());
        if kink_margin(&model.layers, &x, seed)? >= KINK_MARGIN {
            return Ok((model, x, y, seed));
        }
    }
    Err(redraw_error("composite", instance))
}
