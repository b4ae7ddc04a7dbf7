//! Scenario files: one JSON document describing the scene, cameras,
//! localization parameters, robot, tool and what to run.
//!
//! Any block may carry `"units": "m" | "cm" | "mm"`; its lengths are
//! converted to meters once, on load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::camera::{CameraParams, CameraRig};
use crate::controller::{HarvestOptions, HarvestSetup};
use crate::error::{Error, Result};
use crate::localization::LocalizationParams;
use crate::motion::RobotParams;
use crate::scene::{generate_scene_with, SceneParams};
use crate::tool::{CutModel, ToolGeometry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cameras {
    #[serde(default = "CameraParams::default_cam1")]
    pub cam1: CameraParams,
    #[serde(default = "CameraParams::default_cam2")]
    pub cam2: CameraParams,
}

impl Default for Cameras {
    fn default() -> Self {
        Cameras {
            cam1: CameraParams::default_cam1(),
            cam2: CameraParams::default_cam2(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Lateral (y) localization offset, a length.
    Offset,
    /// Robot velocity scale.
    Velocity,
    /// Laser power in watts.
    Power,
    /// Depth noise sigma of both cameras, a length.
    Noise,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Offset => "offset",
            SweepAxis::Velocity => "velocity",
            SweepAxis::Power => "power",
            SweepAxis::Noise => "noise",
        }
    }

    fn is_length(self) -> bool {
        matches!(self, SweepAxis::Offset | SweepAxis::Noise)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSpec {
    /// Merged cloud sizes to time.
    pub sizes: Vec<usize>,
    pub repeats: usize,
    /// Latency budget per localization call (milliseconds).
    pub budget_ms: f64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            sizes: vec![12_500, 25_000, 50_000, 100_000],
            repeats: 20,
            budget_ms: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub scene: SceneParams,
    pub cameras: Cameras,
    pub localization: LocalizationParams,
    pub robot: RobotParams,
    pub tool: ToolGeometry,
    pub cut: CutModel,
    pub harvest: HarvestOptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "default".into(),
            seeds: vec![0],
            scene: SceneParams::default(),
            cameras: Cameras::default(),
            localization: LocalizationParams::default(),
            robot: RobotParams::default(),
            tool: ToolGeometry::default(),
            cut: CutModel::default(),
            harvest: HarvestOptions::default(),
            sweep: None,
            bench: None,
        }
    }
}

/// Blocks that may declare units, as JSON paths.
const UNIT_BLOCKS: [&[&str]; 8] = [
    &["scene"],
    &["cameras", "cam1"],
    &["cameras", "cam2"],
    &["localization"],
    &["robot"],
    &["tool"],
    &["harvest"],
    &["sweep"],
];

fn unit_factor(key: &str, unit: &Value) -> Result<f64> {
    match unit.as_str() {
        Some("m") => Ok(1.0),
        Some("cm") => Ok(100.0),
        Some("mm") => Ok(1000.0),
        _ => Err(Error::config(key, format!("unknown unit {unit}; expected \"m\", \"cm\" or \"mm\""))),
    }
}

fn block_mut<'a>(root: &'a mut Value, path: &[&str]) -> Option<&'a mut serde_json::Map<String, Value>> {
    let mut v = root;
    for p in path {
        v = v.get_mut(*p)?;
    }
    v.as_object_mut()
}

/// Fields left out of a block that declared units were filled with defaults,
/// which are already in meters and must not be converted. Put them back.
fn restore_defaults(cfg: ScenarioConfig, written: &[Option<Vec<String>>]) -> Result<ScenarioConfig> {
    if written.iter().all(Option::is_none) {
        return Ok(cfg);
    }
    let ser = |c: &ScenarioConfig| serde_json::to_value(c).map_err(|e| Error::config("<root>", e.to_string()));
    let mut value = ser(&cfg)?;
    let mut defaults = ser(&ScenarioConfig::default())?;
    for (path, keys) in UNIT_BLOCKS.iter().zip(written) {
        let (Some(keys), Some(fallback), Some(block)) =
            (keys, block_mut(&mut defaults, path), block_mut(&mut value, path))
        else {
            continue;
        };
        for (k, v) in fallback.iter() {
            if !keys.contains(k) {
                block.insert(k.clone(), v.clone());
            }
        }
    }
    serde_json::from_value(value).map_err(|e| Error::config("<root>", e.to_string()))
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut root: Value =
            serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        if !root.is_object() {
            return Err(Error::config("<root>", "scenario must be a JSON object"));
        }
        let mut divisors = [1.0; UNIT_BLOCKS.len()];
        let mut written: Vec<Option<Vec<String>>> = vec![None; UNIT_BLOCKS.len()];
        for (i, path) in UNIT_BLOCKS.iter().enumerate() {
            if let Some(block) = block_mut(&mut root, path) {
                if let Some(unit) = block.remove("units") {
                    divisors[i] = unit_factor(&format!("{}.units", path.join(".")), &unit)?;
                    written[i] = Some(block.keys().cloned().collect());
                }
            }
        }
        let mut cfg: ScenarioConfig = serde_path_to_error::deserialize(root).map_err(|e| {
            let key = e.path().to_string();
            Error::config(key, e.into_inner().to_string())
        })?;

        let [scene, cam1, cam2, loc, robot, tool, harvest, sweep] = divisors;
        cfg.scene.to_meters(scene);
        cfg.cameras.cam1.to_meters(cam1);
        cfg.cameras.cam2.to_meters(cam2);
        cfg.localization.to_meters(loc);
        cfg.robot.to_meters(robot);
        cfg.tool.to_meters(tool);
        for v in &mut cfg.harvest.offset {
            *v /= harvest;
        }
        if let Some(s) = &mut cfg.sweep {
            if s.axis.is_length() {
                for v in &mut s.values {
                    *v /= sweep;
                }
            }
        }
        let cfg = restore_defaults(cfg, &written)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ScenarioConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        self.scene.validate().map_err(|e| e.within("scene"))?;
        self.localization.validate().map_err(|e| e.within("localization"))?;
        self.rig()?;
        self.robot
            .state(&self.localization.window())
            .map_err(|e| e.within("robot"))?;
        self.tool.validate().map_err(|e| e.within("tool"))?;
        self.cut.validate().map_err(|e| e.within("cut"))?;
        self.harvest.validate().map_err(|e| e.within("harvest"))?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::config("sweep.values", "at least one value is required"));
            }
        }
        if let Some(b) = &self.bench {
            if b.sizes.is_empty() || b.sizes.contains(&0) {
                return Err(Error::config("bench.sizes", "sizes must be non-empty and positive"));
            }
            if b.repeats == 0 {
                return Err(Error::config("bench.repeats", "must be > 0"));
            }
        }
        Ok(())
    }

    pub fn rig(&self) -> Result<CameraRig> {
        CameraRig::from_params(&self.cameras.cam1, &self.cameras.cam2)
    }

    /// Canonical JSON of the resolved (meter-valued) configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Short SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Everything one harvest pass for `seed` needs.
    pub fn setup(&self, seed: u64) -> Result<HarvestSetup> {
        let window = self.localization.window();
        Ok(HarvestSetup {
            scene: generate_scene_with(&self.scene, seed).map_err(|e| e.within("scene"))?,
            rig: self.rig()?,
            params: self.localization.clone(),
            robot: self.robot.state(&window).map_err(|e| e.within("robot"))?,
            home: self.robot.home(),
            geom: self.tool.clone(),
            cut: self.cut.clone(),
            options: self.harvest.clone(),
            config_hash: self.hash(),
        })
    }
}
