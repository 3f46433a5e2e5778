//! Model 1 / Model 2 encoder-decoder stacks.
//!
//! The concrete stack for a 16x16 single-map patch:
//!
//! ```text
//! conv 3x3 1->32      16x16 -> 14x14
//! maxpool 2x2         14x14 -> 7x7
//! conv 3x3 32->64     7x7   -> 5x5
//! reshape             64x5x5 -> 1600
//! corrupt             Gaussian noise (training only)
//! dense 1600->160     encoder
//! dense 160->z*25     decoder
//! reshape             z x 5 x 5
//! deconv 3x3 z->z     5x5   -> 7x7
//! unpool 2x2          7x7   -> 14x14
//! deconv 3x3 z->1     14x14 -> 16x16
//! ```
//!
//! with `z = 96` decoder maps for Model 1 and `z = 128` for Model 2. Model 1
//! has 745 281 learnable parameters, Model 2 has 938 913.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerCache, LayerParams, LayerSpec, Mode, UnpoolMode};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const PATCH_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Compressed decoder, 96 maps.
    Model1,
    /// Uncompressed decoder, 128 maps.
    Model2,
    /// Any other layer stack (tests, truncated models).
    Custom,
}

impl Arch {
    pub fn decoder_maps(self) -> Option<usize> {
        match self {
            Arch::Model1 => Some(96),
            Arch::Model2 => Some(128),
            Arch::Custom => None,
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Arch::Custom => 0,
            Arch::Model1 => 1,
            Arch::Model2 => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Arch::Custom),
            1 => Some(Arch::Model1),
            2 => Some(Arch::Model2),
            _ => None,
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "model1" | "m1" | "1" => Ok(Arch::Model1),
            "model2" | "m2" | "2" => Ok(Arch::Model2),
            other => Err(Error::InvalidArgument(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Width knobs of the stack; only the decoder width differs between models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub conv1_maps: usize,
    pub conv2_maps: usize,
    pub bottleneck: usize,
    pub noise_std: f64,
    pub unpool_mode: UnpoolMode,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            conv1_maps: 32,
            conv2_maps: 64,
            bottleneck: 160,
            noise_std: 0.1,
            unpool_mode: UnpoolMode::Replicate,
        }
    }
}

impl StackConfig {
    pub fn layer_specs(&self, decoder_maps: usize) -> Vec<LayerSpec> {
        const C: usize = 3;
        // 16 -> 14 -> 7 -> 5 on the way down, mirrored on the way up.
        let code_side = (PATCH_SIDE - (C - 1)) / 2 - (C - 1);
        vec![
            LayerSpec::Conv { in_maps: 1, out_maps: self.conv1_maps, filter: C },
            LayerSpec::Maxpool { pool: 2 },
            LayerSpec::Conv { in_maps: self.conv1_maps, out_maps: self.conv2_maps, filter: C },
            LayerSpec::Reshape { shape: vec![self.conv2_maps * code_side * code_side] },
            LayerSpec::Corrupt { noise_std: self.noise_std },
            LayerSpec::Dense {
                in_units: self.conv2_maps * code_side * code_side,
                units: self.bottleneck,
            },
            LayerSpec::Dense {
                in_units: self.bottleneck,
                units: decoder_maps * code_side * code_side,
            },
            LayerSpec::Reshape { shape: vec![decoder_maps, code_side, code_side] },
            LayerSpec::Deconv { in_maps: decoder_maps, out_maps: decoder_maps, filter: C },
            LayerSpec::Unpool { pool: 2, mode: self.unpool_mode },
            LayerSpec::Deconv { in_maps: decoder_maps, out_maps: 1, filter: C },
        ]
    }
}

/// An ordered layer stack with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    /// Per-sample input shape, e.g. `[1, 16, 16]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Per-layer forward caches from a training-mode pass.
#[derive(Debug)]
pub struct ForwardTrace {
    caches: Vec<Option<LayerCache>>,
}

pub fn build_model(arch: Arch, seed: u64) -> Result<ModelParams> {
    build_model_with(arch, &StackConfig::default(), seed)
}

pub fn build_model_with(arch: Arch, stack: &StackConfig, seed: u64) -> Result<ModelParams> {
    let decoder_maps = arch.decoder_maps().ok_or_else(|| {
        Error::InvalidArgument("build_model needs Model1 or Model2; use ModelParams::from_specs".into())
    })?;
    let model = ModelParams::from_specs(arch, &[1, PATCH_SIDE, PATCH_SIDE], stack.layer_specs(decoder_maps), seed)?;
    let out = model.output_shape()?;
    if out != [1, PATCH_SIDE, PATCH_SIDE] {
        return Err(Error::InvalidArgument(format!(
            "stack does not close: 16x16 input maps to {out:?}"
        )));
    }
    Ok(model)
}

impl ModelParams {
    pub fn from_specs(arch: Arch, input_shape: &[usize], specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let layers = specs
            .into_iter()
            .map(|spec| Layer::init(spec, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let model = Self {
            arch,
            input_shape: input_shape.to_vec(),
            layers,
        };
        model.output_shape()?;
        Ok(model)
    }

    /// Per-sample output shape, checking every layer along the way.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(self.input_shape.clone(), |shape, layer| layer.spec.output_shape(&shape))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().filter_map(|l| l.params.as_ref()).map(LayerParams::len).sum()
    }

    pub fn noise_std(&self) -> Option<f64> {
        self.layers.iter().find_map(|l| match l.spec {
            LayerSpec::Corrupt { noise_std } => Some(noise_std),
            _ => None,
        })
    }

    pub fn set_noise_std(&mut self, std: f64) -> Result<()> {
        if !(std >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise_std must be >= 0, got {std}")));
        }
        for layer in &mut self.layers {
            if let LayerSpec::Corrupt { noise_std } = &mut layer.spec {
                *noise_std = std;
            }
        }
        Ok(())
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::InvalidArgument(format!(
                "model expects [batch, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Inference pass (no corruption, no caches).
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_batch(x)?;
        // Inference never draws from the generator.
        let mut rng = SeededRng::new(0);
        self.layers.iter().try_fold(x.clone(), |h, layer| {
            layer.forward(&h, Mode::Infer, &mut rng).map(|(y, _)| y)
        })
    }

    pub fn forward_train(&self, x: &Tensor, rng: &mut SeededRng) -> Result<(Tensor, ForwardTrace)> {
        self.check_batch(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&h, Mode::Train, rng)?;
            caches.push(cache);
            h = y;
        }
        Ok((h, ForwardTrace { caches }))
    }

    /// Backpropagates `grad_out` and returns the input gradient and the
    /// per-layer parameter gradients (aligned with `layers`).
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Vec<Option<LayerParams>>)> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::MissingCache("model"));
        }
        let mut grads = vec![None; self.layers.len()];
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (gi, gp) = layer.backward(trace.caches[i].as_ref(), &g)?;
            grads[i] = gp;
            g = gi;
        }
        Ok((g, grads))
    }

    /// Parameter tensors in layer order: weights then bias for each layer.
    pub fn param_tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .flat_map(|p| [&p.weights, &p.bias])
    }

    pub fn param_tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.params.as_mut())
            .flat_map(|p| [&mut p.weights, &mut p.bias])
    }

    pub fn weight_tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().filter_map(|l| l.params.as_ref()).map(|p| &p.weights)
    }

    /// Rescales each parameterized layer, in order, so the standard deviation
    /// of its pre-activation on `x` is `hidden_std` (`output_std` for the last
    /// one). Returns the standard deviations measured before rescaling.
    pub fn scale_to_data(&mut self, x: &Tensor, hidden_std: f64, output_std: f64) -> Result<Vec<f64>> {
        if !(hidden_std > 0.0 && output_std > 0.0) {
            return Err(Error::InvalidArgument("target standard deviations must be > 0".into()));
        }
        self.check_batch(x)?;
        let last = self.layers.iter().rposition(|l| l.params.is_some());
        let mut rng = SeededRng::new(0);
        let mut measured = Vec::new();
        let mut h = x.clone();
        for i in 0..self.layers.len() {
            if self.layers[i].params.is_some() {
                let std = std_dev(&pre_activation(&self.layers[i], &h)?);
                measured.push(std);
                let target = if Some(i) == last { output_std } else { hidden_std };
                if std > 0.0 {
                    let p = self.layers[i].params.as_mut().expect("checked");
                    p.weights = p.weights.scale(target / std);
                    p.bias = p.bias.scale(target / std);
                }
            }
            h = self.layers[i].forward(&h, Mode::Infer, &mut rng)?.0;
        }
        Ok(measured)
    }
}

/// Recovers `z` from `relu(z) - relu(-z)`, the second term from the layer
/// with negated parameters.
fn pre_activation(layer: &Layer, x: &Tensor) -> Result<Vec<f64>> {
    let mut rng = SeededRng::new(0);
    let mut negated = layer.clone();
    if let Some(p) = negated.params.as_mut() {
        p.weights = p.weights.scale(-1.0);
        p.bias = p.bias.scale(-1.0);
    }
    let (pos, _) = layer.forward(x, Mode::Infer, &mut rng)?;
    let (neg, _) = negated.forward(x, Mode::Infer, &mut rng)?;
    Ok(pos.data().iter().zip(neg.data()).map(|(a, b)| a - b).collect())
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}
