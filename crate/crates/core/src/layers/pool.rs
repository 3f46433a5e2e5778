//! Non-overlapping max pooling and its upsampling counterpart.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::conv::dims4;

/// Flat input index of the winning element of each pooling window.
#[derive(Debug, Clone)]
pub struct PoolSwitches {
    input_shape: [usize; 4],
    argmax: Vec<usize>,
}

impl PoolSwitches {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// How [`unpool_forward`] fills each `p x p` block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnpoolMode {
    /// Nearest-neighbour replication of the value over the whole block.
    #[default]
    Replicate,
    /// Value in the top-left cell, zeros elsewhere.
    ZeroInsert,
}

fn check_pool(p: usize, layer: &str) -> Result<()> {
    if p < 2 {
        return Err(Error::Layer {
            layer: layer.into(),
            reason: format!("pool size must be at least 2, got {p}"),
        });
    }
    Ok(())
}

/// Max over each `p x p` window. Ties go to the first element in row-major
/// window order.
pub fn maxpool_forward(x: &Tensor, p: usize) -> Result<(Tensor, PoolSwitches)> {
    check_pool(p, "maxpool")?;
    let dims @ [b, maps, h, w] = dims4(x, "maxpool")?;
    if h % p != 0 || w % p != 0 {
        return Err(Error::Layer {
            layer: "maxpool".into(),
            reason: format!("input {h}x{w} is not divisible by pool size {p}"),
        });
    }
    let (ho, wo) = (h / p, w / p);
    let data = x.data();
    let mut out = Vec::with_capacity(b * maps * ho * wo);
    let mut argmax = Vec::with_capacity(b * maps * ho * wo);
    for plane in 0..b * maps {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best_idx = base + i * p * w + j * p;
                let mut best = data[best_idx];
                for di in 0..p {
                    for dj in 0..p {
                        let idx = base + (i * p + di) * w + j * p + dj;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((
        Tensor::new(&[b, maps, ho, wo], out)?,
        PoolSwitches {
            input_shape: dims,
            argmax,
        },
    ))
}

/// Routes each pooled gradient to the element that won its window.
pub fn maxpool_backward(switches: &PoolSwitches, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != switches.argmax.len() {
        return Err(Error::Layer {
            layer: "maxpool".into(),
            reason: format!(
                "gradient has {} elements, {} windows were pooled",
                grad_out.len(),
                switches.argmax.len()
            ),
        });
    }
    let mut grad = vec![0.0; switches.input_shape.iter().product()];
    for (&idx, &g) in switches.argmax.iter().zip(grad_out.data()) {
        grad[idx] += g;
    }
    Tensor::new(&switches.input_shape, grad)
}

pub fn unpool_forward(x: &Tensor, p: usize, mode: UnpoolMode) -> Result<Tensor> {
    check_pool(p, "unpool")?;
    let [b, maps, h, w] = dims4(x, "unpool")?;
    let (ho, wo) = (h * p, w * p);
    let data = x.data();
    let mut out = vec![0.0; b * maps * ho * wo];
    for plane in 0..b * maps {
        for i in 0..ho {
            for j in 0..wo {
                let keep = match mode {
                    UnpoolMode::Replicate => true,
                    UnpoolMode::ZeroInsert => i % p == 0 && j % p == 0,
                };
                if keep {
                    out[(plane * ho + i) * wo + j] = data[(plane * h + i / p) * w + j / p];
                }
            }
        }
    }
    Tensor::new(&[b, maps, ho, wo], out)
}

pub fn unpool_backward(grad_out: &Tensor, p: usize, mode: UnpoolMode) -> Result<Tensor> {
    check_pool(p, "unpool")?;
    let [b, maps, ho, wo] = dims4(grad_out, "unpool")?;
    if ho % p != 0 || wo % p != 0 {
        return Err(Error::Layer {
            layer: "unpool".into(),
            reason: format!("gradient {ho}x{wo} is not a multiple of {p}"),
        });
    }
    let (h, w) = (ho / p, wo / p);
    let g = grad_out.data();
    let mut grad = vec![0.0; b * maps * h * w];
    for plane in 0..b * maps {
        for i in 0..h {
            for j in 0..w {
                let acc = match mode {
                    UnpoolMode::Replicate => {
                        let mut s = 0.0;
                        for di in 0..p {
                            for dj in 0..p {
                                s += g[(plane * ho + i * p + di) * wo + j * p + dj];
                            }
                        }
                        s
                    }
                    UnpoolMode::ZeroInsert => g[(plane * ho + i * p) * wo + j * p],
                };
                grad[(plane * h + i) * w + j] = acc;
            }
        }
    }
    Tensor::new(&[b, maps, h, w], grad)
}
