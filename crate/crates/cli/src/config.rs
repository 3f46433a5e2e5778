//! Run configuration: defaults, then an optional JSON file, then `key=value`
//! overrides addressed by dotted path (`train.learning_rate=0.001`).

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use selective_ae::detect::DetectConfig;
use selective_ae::metrics::DEFAULT_IOU_MIN;
use selective_ae::synth::{PatchDatasetConfig, SynthConfig};
use selective_ae::train::TrainConfig;

pub const BUILD_VERSION: &str = env!("SELAE_BUILD_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_min: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_min: DEFAULT_IOU_MIN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub strides: Vec<usize>,
    pub frame_rows: usize,
    pub frame_cols: usize,
    /// Timed detections per stride; the median is reported.
    pub repeats: usize,
    /// Allowed deviation of each normalized time from its normalized P.
    pub tolerance: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            strides: vec![2, 4, 8, 16],
            frame_rows: 480,
            frame_cols: 640,
            repeats: 1,
            tolerance: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRunConfig {
    pub frames: usize,
    pub first_index: usize,
    /// Every n-th frame (from the first) is a boundary case; 0 disables.
    pub boundary_every: usize,
}

impl Default for SynthRunConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            first_index: 0,
            boundary_every: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub dataset: SynthRunConfig,
    pub patches: PatchDatasetConfig,
    pub train: TrainConfig,
    pub detect: DetectConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    /// Defaults < `file` < `overrides`, in that order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let patch: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut value, patch);
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("override {item:?} is not key=value"))?;
            set_path(&mut value, key.trim(), parse_scalar(raw.trim()))?;
        }
        let config: RunConfig = serde_json::from_value(value).context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.detect.validate()?;
        if !(0.0..=1.0).contains(&self.eval.iou_min) {
            bail!("eval.iou_min must be in [0, 1]");
        }
        if self.bench.strides.is_empty() || self.bench.strides.contains(&0) || self.bench.repeats == 0 {
            bail!("bench needs nonzero strides and repeats >= 1");
        }
        Ok(())
    }
}

/// Values that parse as JSON keep their type; anything else is a string.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        // A different enum variant replaces the whole object.
        (Value::Object(b), Value::Object(p)) if p.contains_key("kind") && p.get("kind") != b.get("kind") => {
            *b = p;
        }
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                let slot = map.get_mut(*part).ok_or_else(|| anyhow!("unknown config key {key:?}"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| anyhow!("{key:?}: {part:?} is not an index"))?;
                let slot = items.get_mut(idx).ok_or_else(|| anyhow!("{key:?}: index {idx} out of range"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => bail!("config key {key:?} goes through a scalar"),
        };
    }
    bail!("empty config key")
}

/// What every artifact carries about the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
}

impl RunInfo {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: "selae".into(),
            version: BUILD_VERSION.into(),
            command: command.into(),
            config: config.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"train": {"learning_rate": 0.01, "seed": 4}, "detect": {"stride": 8}}"#).unwrap();
        let c = RunConfig::resolve(Some(&file), &["train.seed=9".into(), "detect.postprocess.stitch_mode=max".into()])
            .unwrap();
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.detect.stride, 8);
        assert_eq!(c.detect.postprocess.stitch_mode, selective_ae::postprocess::StitchMode::Max);
        assert_eq!(c.train.momentum, TrainConfig::default().momentum);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::resolve(None, &["train.lr=1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["nonsense".into()]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"train": {"lr": 0.01}}"#).unwrap();
        assert!(RunConfig::resolve(Some(&file), &[]).is_err());
    }

    #[test]
    fn tuple_and_list_entries_are_addressable() {
        let c = RunConfig::resolve(None, &["synth.eggs_per_frame.1=6".into(), "bench.strides=[4,8]".into()]).unwrap();
        assert_eq!(c.synth.eggs_per_frame, (1, 6));
        assert_eq!(c.bench.strides, vec![4, 8]);
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(RunConfig::resolve(None, &["train.momentum=1.5".into()]).is_err());
        assert!(RunConfig::resolve(None, &["detect.stride=0".into()]).is_err());
    }
}
