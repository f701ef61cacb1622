//! Run configuration: a JSON document merged over the defaults, then
//! `key.path=value` overrides.

use std::path::{Path, PathBuf};

use frustumocc::fusion::FusionParams;
use frustumocc::gfp::AttentionConfig;
use frustumocc::lift_splat::BevGridSpec;
use frustumocc::losses::{FocalParams, LossWeights};
use frustumocc::synth::{PseudoConfig, RigConfig, SceneConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub scene: SceneConfig,
    pub camera: RigConfig,
    pub bev: BevGridSpec,
    pub fusion: FusionParams,
    pub attention: AttentionConfig,
    pub pipeline: PipelineConfig,
    pub loss: LossWeights,
    pub focal: FocalParams,
    pub verify: VerifyConfig,
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Context feature channels per camera.
    pub channels: usize,
    /// Run occupancy-keyed attention over the context features.
    pub gfp: bool,
    /// Fraction of rendered depth pixels kept as supervision.
    pub depth_keep_rate: f64,
    pub pseudo: PseudoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Flip one occupancy label inside the oracle suites.
    pub inject_fault: bool,
    /// Criterion ids to run; empty runs all.
    pub suites: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub points: Vec<usize>,
    pub channels: usize,
    /// BEV cells per side.
    pub cells: usize,
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out: PathBuf::from("out"),
            scene: SceneConfig::default(),
            camera: RigConfig::default(),
            bev: BevGridSpec::square(128, 0.8, -10.0, 10.0).expect("valid default grid"),
            fusion: FusionParams { w_d: 1.0, w_im: 0.5, w_ex: 0.5 },
            attention: AttentionConfig::default(),
            pipeline: PipelineConfig { channels: 16, gfp: true, depth_keep_rate: 0.3, pseudo: PseudoConfig::default() },
            loss: LossWeights::default(),
            focal: FocalParams::default(),
            verify: VerifyConfig { inject_fault: false, suites: Vec::new() },
            bench: BenchConfig { points: vec![10_000, 100_000, 1_000_000], channels: 8, cells: 128, repeats: 3 },
        }
    }
}

impl RunConfig {
    /// Defaults, then the optional JSON file, then each `key=value` override.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut doc = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            let user: Value = serde_json::from_str(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            merge(&mut doc, user);
        }
        for item in overrides {
            apply_override(&mut doc, item)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Failure::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let wrap = |what: &str, r: frustumocc::Result<()>| r.map_err(|e| Failure::Config(format!("{what}: {e}")));
        wrap("scene", self.scene.validate())?;
        wrap("camera", self.camera.frustum_spec().map(|_| ()))?;
        wrap("bev", self.bev.validate())?;
        wrap("fusion", self.fusion.validate())?;
        wrap("attention", self.attention.validate())?;
        wrap("loss", self.loss.validate())?;
        wrap("focal", self.focal.validate())?;
        if self.camera.count == 0 {
            return Err(Failure::Config("camera.count must be at least 1".into()));
        }
        if self.pipeline.channels == 0 {
            return Err(Failure::Config("pipeline.channels must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pipeline.depth_keep_rate) {
            return Err(Failure::Config("pipeline.depth_keep_rate must lie in [0, 1]".into()));
        }
        let p = &self.pipeline.pseudo;
        if !(p.sharpness > 0.0 && p.sharpness.is_finite()) || !(0.0..0.5).contains(&p.floor) {
            return Err(Failure::Config("pipeline.pseudo needs sharpness > 0 and floor in [0, 0.5)".into()));
        }
        if self.bench.points.iter().any(|&n| n < 64) || self.bench.channels == 0 || self.bench.cells == 0 || self.bench.repeats == 0 {
            return Err(Failure::Config("bench needs points ≥ 64 and positive channels, cells and repeats".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
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

/// `a.b.c=value`; the value is parsed as JSON and falls back to a string.
fn apply_override(doc: &mut Value, item: &str) -> Result<(), Failure> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Failure::Config(format!("override `{item}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::Config(format!("malformed key `{key}`")));
    }
    for (depth, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Failure::Config(format!("`{}` is not a section", parts[..depth].join("."))))?;
        if depth + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(Failure::Config(format!("unknown config key `{key}`")));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one part")
}
