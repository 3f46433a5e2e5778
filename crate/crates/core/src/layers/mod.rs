//! Layer kinds of the selective autoencoder with forward and backward passes.
//!
//! All layers work on batches: spatial layers take `[batch, maps, rows, cols]`
//! and dense layers `[batch, units]`. Convolution, dense and transposed
//! convolution layers apply ReLU to their output.

pub mod conv;
pub mod dense;
pub mod pool;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use conv::{conv_backward, conv_forward, deconv_backward, deconv_forward, ConvCache, DeconvCache};
pub use dense::{corrupt_forward, dense_backward, dense_forward, relu_backward, DenseCache};
pub use pool::{maxpool_backward, maxpool_forward, unpool_backward, unpool_forward, PoolSwitches, UnpoolMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Maxpool,
    Dense,
    Reshape,
    Unpool,
    Deconv,
    Corrupt,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Maxpool => "maxpool",
            LayerKind::Dense => "dense",
            LayerKind::Reshape => "reshape",
            LayerKind::Unpool => "unpool",
            LayerKind::Deconv => "deconv",
            LayerKind::Corrupt => "corrupt",
        }
    }
}

/// Static description of one layer. Shapes are per sample (no batch axis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_maps: usize,
        out_maps: usize,
        filter: usize,
    },
    Maxpool {
        pool: usize,
    },
    Dense {
        in_units: usize,
        units: usize,
    },
    Reshape {
        shape: Vec<usize>,
    },
    Unpool {
        pool: usize,
        #[serde(default)]
        mode: UnpoolMode,
    },
    Deconv {
        in_maps: usize,
        out_maps: usize,
        filter: usize,
    },
    Corrupt {
        noise_std: f64,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv { .. } => LayerKind::Conv,
            LayerSpec::Maxpool { .. } => LayerKind::Maxpool,
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::Reshape { .. } => LayerKind::Reshape,
            LayerSpec::Unpool { .. } => LayerKind::Unpool,
            LayerSpec::Deconv { .. } => LayerKind::Deconv,
            LayerSpec::Corrupt { .. } => LayerKind::Corrupt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::Layer {
                layer: self.kind().name().into(),
                reason,
            })
        };
        match *self {
            LayerSpec::Conv { filter, in_maps, out_maps }
            | LayerSpec::Deconv { filter, in_maps, out_maps } => {
                if filter == 0 || filter % 2 == 0 {
                    return bad(format!("filter size must be odd and positive, got {filter}"));
                }
                if in_maps == 0 || out_maps == 0 {
                    return bad("map counts must be positive".into());
                }
            }
            LayerSpec::Maxpool { pool } | LayerSpec::Unpool { pool, .. } if pool < 2 => {
                return bad(format!("pool size must be at least 2, got {pool}"));
            }
            LayerSpec::Dense { in_units, units } if in_units == 0 || units == 0 => {
                return bad("unit counts must be positive".into());
            }
            LayerSpec::Corrupt { noise_std } if !(noise_std >= 0.0) => {
                return bad(format!("noise_std must be >= 0, got {noise_std}"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let fail = |reason: String| Error::Layer {
            layer: self.kind().name().into(),
            reason,
        };
        match (self, input) {
            (LayerSpec::Conv { in_maps, out_maps, filter }, &[m, h, w]) if m == *in_maps => {
                if h < *filter || w < *filter {
                    return Err(fail(format!("{h}x{w} input is smaller than filter {filter}")));
                }
                Ok(vec![*out_maps, h - filter + 1, w - filter + 1])
            }
            (LayerSpec::Deconv { in_maps, out_maps, filter }, &[m, h, w]) if m == *in_maps => {
                Ok(vec![*out_maps, h + filter - 1, w + filter - 1])
            }
            (LayerSpec::Maxpool { pool }, &[m, h, w]) => {
                if h % pool != 0 || w % pool != 0 {
                    return Err(fail(format!("{h}x{w} is not divisible by pool size {pool}")));
                }
                Ok(vec![m, h / pool, w / pool])
            }
            (LayerSpec::Unpool { pool, .. }, &[m, h, w]) => Ok(vec![m, h * pool, w * pool]),
            (LayerSpec::Dense { in_units, units }, &[n]) if n == *in_units => Ok(vec![*units]),
            (LayerSpec::Reshape { shape }, _) => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(fail(format!("cannot reshape {input:?} to {shape:?}")));
                }
                Ok(shape.clone())
            }
            (LayerSpec::Corrupt { .. }, _) => Ok(input.to_vec()),
            _ => Err(fail(format!("incompatible input shape {input:?}"))),
        }
    }

    /// Weight and bias shapes, or `None` for parameter-free layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv { in_maps, out_maps, filter }
            | LayerSpec::Deconv { in_maps, out_maps, filter } => {
                Some((vec![out_maps, in_maps, filter, filter], vec![out_maps]))
            }
            LayerSpec::Dense { in_units, units } => Some((vec![units, in_units], vec![units])),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv { in_maps, filter, .. } | LayerSpec::Deconv { in_maps, filter, .. } => {
                in_maps * filter * filter
            }
            LayerSpec::Dense { in_units, .. } => in_units,
            _ => 0,
        }
    }
}

/// Learnable parameters: weights plus one bias per output map or unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            weights: Tensor::zeros(self.weights.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Forward state retained for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv(ConvCache),
    Maxpool(PoolSwitches),
    Dense(DenseCache),
    Reshape { input_shape: Vec<usize> },
    Unpool,
    Deconv(DeconvCache),
    Corrupt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Option<LayerParams>,
}

impl Layer {
    /// Zero-mean uniform weights with bound `sqrt(6 / fan_in)`, zero biases.
    pub fn init(spec: LayerSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let params = spec.param_shapes().map(|(w_shape, b_shape)| {
            let bound = (6.0 / spec.fan_in() as f64).sqrt();
            LayerParams {
                weights: Tensor::from_fn(&w_shape, |_| rng.range(-bound, bound)),
                bias: Tensor::zeros(&b_shape),
            }
        });
        Ok(Self { spec, params })
    }

    pub fn kind(&self) -> LayerKind {
        self.spec.kind()
    }

    fn params(&self) -> Result<&LayerParams> {
        self.params.as_ref().ok_or_else(|| Error::Layer {
            layer: self.kind().name().into(),
            reason: "layer has no parameters".into(),
        })
    }

    /// Runs the layer on a batch. `rng` feeds corruption noise and is only
    /// consulted in training mode.
    pub fn forward(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Tensor, Option<LayerCache>)> {
        let keep = mode == Mode::Train;
        Ok(match &self.spec {
            LayerSpec::Conv { .. } => {
                let (y, cache) = conv_forward(x, self.params()?)?;
                (y, keep.then_some(LayerCache::Conv(cache)))
            }
            LayerSpec::Deconv { .. } => {
                let (y, cache) = deconv_forward(x, self.params()?)?;
                (y, keep.then_some(LayerCache::Deconv(cache)))
            }
            LayerSpec::Dense { .. } => {
                let (y, cache) = dense_forward(x, self.params()?)?;
                (y, keep.then_some(LayerCache::Dense(cache)))
            }
            LayerSpec::Maxpool { pool } => {
                let (y, switches) = maxpool_forward(x, *pool)?;
                (y, keep.then_some(LayerCache::Maxpool(switches)))
            }
            LayerSpec::Unpool { pool, mode: unpool_mode } => {
                (unpool_forward(x, *pool, *unpool_mode)?, keep.then_some(LayerCache::Unpool))
            }
            LayerSpec::Reshape { shape } => {
                let batch = x.shape()[0];
                let mut full = vec![batch];
                full.extend_from_slice(shape);
                let input_shape = x.shape().to_vec();
                (x.reshape(&full)?, keep.then_some(LayerCache::Reshape { input_shape }))
            }
            LayerSpec::Corrupt { noise_std } => {
                let y = match mode {
                    Mode::Train => corrupt_forward(x, *noise_std, rng),
                    Mode::Infer => x.clone(),
                };
                (y, keep.then_some(LayerCache::Corrupt))
            }
        })
    }

    /// Gradient with respect to the layer input, plus parameter gradients for
    /// layers that have parameters.
    pub fn backward(
        &self,
        cache: Option<&LayerCache>,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Option<LayerParams>)> {
        let name = self.kind().name();
        let cache = cache.ok_or(Error::MissingCache(name))?;
        Ok(match (&self.spec, cache) {
            (LayerSpec::Conv { .. }, LayerCache::Conv(c)) => {
                let (g, p) = conv_backward(c, self.params()?, grad_out)?;
                (g, Some(p))
            }
            (LayerSpec::Deconv { .. }, LayerCache::Deconv(c)) => {
                let (g, p) = deconv_backward(c, self.params()?, grad_out)?;
                (g, Some(p))
            }
            (LayerSpec::Dense { .. }, LayerCache::Dense(c)) => {
                let (g, p) = dense_backward(c, self.params()?, grad_out)?;
                (g, Some(p))
            }
            (LayerSpec::Maxpool { .. }, LayerCache::Maxpool(s)) => (maxpool_backward(s, grad_out)?, None),
            (LayerSpec::Unpool { pool, mode }, LayerCache::Unpool) => {
                (unpool_backward(grad_out, *pool, *mode)?, None)
            }
            (LayerSpec::Reshape { .. }, LayerCache::Reshape { input_shape }) => {
                (grad_out.reshape(input_shape)?, None)
            }
            (LayerSpec::Corrupt { .. }, LayerCache::Corrupt) => (grad_out.clone(), None),
            _ => return Err(Error::MissingCache(name)),
        })
    }
}
