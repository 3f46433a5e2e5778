//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "SELAECK\0"
//! version      u32      1
//! arch tag     u32      0 custom, 1 Model1, 2 Model2
//! flags        u32      bit 0: normalization map present
//! norm min     f64      (zero when absent)
//! norm max     f64
//! input rank   u32, then rank x u64 dims
//! layer count  u32
//! per layer    kind u32, field count u32, fields as u64
//! payload      per parameterized layer, weights then bias, as f64
//! ```
//!
//! Layer kinds and fields: 1 conv `[in, out, filter]`, 2 maxpool `[pool]`,
//! 3 dense `[in, units]`, 4 reshape `[dims..]`, 5 unpool `[pool, mode]`
//! (mode 0 replicate, 1 zero-insert), 6 deconv `[in, out, filter]`,
//! 7 corrupt `[noise_std as f64 bits]`.
//!
//! A JSON sidecar (`<file>.json`) carries human-readable metadata.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerParams, LayerSpec, UnpoolMode};
use crate::model::{Arch, ModelParams};
use crate::patch::NormalizationMap;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SELAECK\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub normalization: Option<NormalizationMap>,
}

fn spec_fields(spec: &LayerSpec) -> (u32, Vec<u64>) {
    let u = |v: usize| v as u64;
    match spec {
        LayerSpec::Conv { in_maps, out_maps, filter } => (1, vec![u(*in_maps), u(*out_maps), u(*filter)]),
        LayerSpec::Maxpool { pool } => (2, vec![u(*pool)]),
        LayerSpec::Dense { in_units, units } => (3, vec![u(*in_units), u(*units)]),
        LayerSpec::Reshape { shape } => (4, shape.iter().map(|&d| u(d)).collect()),
        LayerSpec::Unpool { pool, mode } => {
            let mode = match mode {
                UnpoolMode::Replicate => 0,
                UnpoolMode::ZeroInsert => 1,
            };
            (5, vec![u(*pool), mode])
        }
        LayerSpec::Deconv { in_maps, out_maps, filter } => (6, vec![u(*in_maps), u(*out_maps), u(*filter)]),
        LayerSpec::Corrupt { noise_std } => (7, vec![noise_std.to_bits()]),
    }
}

fn spec_from_fields(kind: u32, f: &[u64]) -> Result<LayerSpec> {
    let bad = || Error::Checkpoint(format!("layer kind {kind} with {} fields", f.len()));
    let z = |i: usize| f[i] as usize;
    let spec = match (kind, f.len()) {
        (1, 3) => LayerSpec::Conv {
            in_maps: z(0),
            out_maps: z(1),
            filter: z(2),
        },
        (2, 1) => LayerSpec::Maxpool { pool: z(0) },
        (3, 2) => LayerSpec::Dense {
            in_units: z(0),
            units: z(1),
        },
        (4, n) if n > 0 => LayerSpec::Reshape {
            shape: f.iter().map(|&d| d as usize).collect(),
        },
        (5, 2) => LayerSpec::Unpool {
            pool: z(0),
            mode: match f[1] {
                0 => UnpoolMode::Replicate,
                1 => UnpoolMode::ZeroInsert,
                _ => return Err(bad()),
            },
        },
        (6, 3) => LayerSpec::Deconv {
            in_maps: z(0),
            out_maps: z(1),
            filter: z(2),
        },
        (7, 1) => LayerSpec::Corrupt {
            noise_std: f64::from_bits(f[0]),
        },
        _ => return Err(bad()),
    };
    spec.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(spec)
}

impl Checkpoint {
    pub fn new(model: ModelParams, normalization: Option<NormalizationMap>) -> Self {
        Self { model, normalization }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.model.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.model.arch.tag().to_le_bytes());
        let norm = self.normalization;
        out.extend_from_slice(&(norm.is_some() as u32).to_le_bytes());
        let (lo, hi) = norm.map_or((0.0, 0.0), |n| (n.min, n.max));
        out.extend_from_slice(&lo.to_le_bytes());
        out.extend_from_slice(&hi.to_le_bytes());
        out.extend_from_slice(&(self.model.input_shape.len() as u32).to_le_bytes());
        for &d in &self.model.input_shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.model.layers.len() as u32).to_le_bytes());
        for layer in &self.model.layers {
            let (kind, fields) = spec_fields(&layer.spec);
            out.extend_from_slice(&kind.to_le_bytes());
            out.extend_from_slice(&(fields.len() as u32).to_le_bytes());
            for f in fields {
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        for t in self.model.param_tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let tag = r.u32()?;
        let arch = Arch::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("unknown arch tag {tag}")))?;
        let flags = r.u32()?;
        let (lo, hi) = (r.f64()?, r.f64()?);
        let normalization = (flags & 1 == 1).then_some(NormalizationMap { min: lo, max: hi });
        let rank = r.u32()? as usize;
        let input_shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n_layers = r.u32()? as usize;
        let mut specs = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let kind = r.u32()?;
            let n = r.u32()? as usize;
            let fields = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            specs.push(spec_from_fields(kind, &fields)?);
        }
        let mut layers = Vec::with_capacity(n_layers);
        for spec in specs {
            let params = match spec.param_shapes() {
                Some((ws, bs)) => {
                    let weights = r.tensor(&ws)?;
                    let bias = r.tensor(&bs)?;
                    Some(LayerParams { weights, bias })
                }
                None => None,
            };
            layers.push(Layer { spec, params });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = ModelParams {
            arch,
            input_shape,
            layers,
        };
        model.output_shape().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self { model, normalization })
    }

    /// Writes the binary file and its JSON sidecar.
    pub fn save(&self, path: &Path, metadata: &serde_json::Value) -> Result<()> {
        std::fs::write(path, self.encode())?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(metadata)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    #[test]
    fn round_trip() {
        let model = build_model(Arch::Model1, 9).unwrap();
        let ck = Checkpoint::new(model, Some(NormalizationMap { min: 3.0, max: 250.0 }));
        let bytes = ck.encode();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), ck);
    }

    #[test]
    fn file_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint::new(build_model(Arch::Model2, 1).unwrap(), None);
        ck.save(&path, &serde_json::json!({"seed": 1})).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(sidecar_path(&path).exists());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = Checkpoint::new(build_model(Arch::Model1, 2).unwrap(), None).encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::decode(&magic).is_err());
        let mut version = bytes;
        version[8] = 9;
        assert!(Checkpoint::decode(&version).is_err());
    }
}
