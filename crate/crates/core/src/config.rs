//! Run configuration: TOML sections mirroring the parameter table the
//! optimizer was tuned with, plus the oracle/target registry.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::HashGridConfig;
use crate::guidance::{ConditionOracle, TargetSpec, RENDER_CONDITION};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SdsConfig {
    pub batch_size: usize,
    pub elevation_range: [f64; 2],
    pub azimuth_range: [f64; 2],
    pub camera_distance_range: [f64; 2],
    pub t_frac_range: [f64; 2],
    pub guidance_scale: f64,
    pub steps: usize,
    pub seed: u64,
    pub resolution: usize,
    pub lr: f64,
    pub fov_deg: f64,
    pub background: [f64; 3],
    /// Global-norm gradient clipping; off by default.
    pub clip_max_norm: Option<f64>,
    pub snapshot_every: usize,
}

impl Default for SdsConfig {
    fn default() -> Self {
        SdsConfig {
            batch_size: 8,
            elevation_range: [10.0, 80.0],
            azimuth_range: [0.0, 360.0],
            camera_distance_range: [1.0, 1.5],
            t_frac_range: [0.02, 0.98],
            guidance_scale: 100.0,
            steps: 5000,
            seed: 0,
            resolution: 64,
            lr: 0.01,
            fov_deg: 45.0,
            background: [0.5, 0.5, 0.5],
            clip_max_norm: None,
            snapshot_every: 100,
        }
    }
}

impl SdsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 1 {
            return bad("sds.batch_size must be >= 1".into());
        }
        let [tmin, tmax] = self.t_frac_range;
        if !(0.0..=1.0).contains(&tmin) || !(0.0..=1.0).contains(&tmax) || tmin >= tmax {
            return bad(format!("sds.t_frac_range [{tmin}, {tmax}] must satisfy 0 <= min < max <= 1"));
        }
        let [emin, emax] = self.elevation_range;
        if !(-90.0..=90.0).contains(&emin) || !(-90.0..=90.0).contains(&emax) || emin > emax {
            return bad(format!("sds.elevation_range [{emin}, {emax}] must lie in [-90, 90]"));
        }
        let [dmin, dmax] = self.camera_distance_range;
        if dmin <= 0.0 || dmin > dmax {
            return bad(format!("sds.camera_distance_range [{dmin}, {dmax}] invalid"));
        }
        if self.azimuth_range[0] > self.azimuth_range[1] {
            return bad("sds.azimuth_range min > max".into());
        }
        if self.resolution < 1 {
            return bad("sds.resolution must be >= 1".into());
        }
        if self.lr <= 0.0 {
            return bad("sds.lr must be positive".into());
        }
        if let Some(c) = self.clip_max_norm {
            if c <= 0.0 {
                return bad("sds.clip_max_norm must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

/// Prompt stand-in: named targets plus named conditions over them.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub targets: BTreeMap<String, TargetSpec>,
    pub conditions: BTreeMap<String, ConditionOracle>,
    /// Positive condition used for eps_cond.
    pub condition: String,
    /// CFG base; defaults to the reserved "render" condition
    /// (unconditional) when absent.
    pub negative_condition: Option<String>,
}

impl OracleConfig {
    /// Single delta condition "main" over one target.
    pub fn delta(target: TargetSpec) -> Self {
        let mut cfg = OracleConfig {
            condition: "main".into(),
            ..Default::default()
        };
        cfg.targets.insert("tgt".into(), target);
        cfg.conditions.insert(
            "main".into(),
            ConditionOracle::Delta {
                target: "tgt".into(),
            },
        );
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.condition.is_empty() {
            return Err(Error::Config("oracle.condition is required".into()));
        }
        if !self.conditions.contains_key(&self.condition) {
            return Err(Error::Config(format!(
                "oracle.condition '{}' not found in oracle.conditions",
                self.condition
            )));
        }
        if let Some(neg) = &self.negative_condition {
            if neg != RENDER_CONDITION && !self.conditions.contains_key(neg) {
                return Err(Error::Config(format!(
                    "oracle.negative_condition '{neg}' not found in oracle.conditions"
                )));
            }
        }
        for (id, cond) in &self.conditions {
            let mut refs: Vec<&String> = Vec::new();
            match cond {
                ConditionOracle::Delta { target } => refs.push(target),
                ConditionOracle::Mixture { modes } => {
                    if modes.is_empty() {
                        return Err(Error::Config(format!(
                            "oracle.conditions.{id} mixture has no modes"
                        )));
                    }
                    refs.extend(modes.iter().map(|m| &m.target));
                }
                ConditionOracle::DepthRouted { near, far, .. } => {
                    refs.push(near);
                    refs.push(far);
                }
            }
            for t in refs {
                if !self.targets.contains_key(t) {
                    return Err(Error::Config(format!(
                        "oracle.conditions.{id} references unknown target '{t}'"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: PathBuf,
    pub out: Option<PathBuf>,
    pub atlas_resolution: usize,
    pub grid: HashGridConfig,
    pub sds: SdsConfig,
    pub schedule: ScheduleConfig,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mesh: PathBuf::new(),
            out: None,
            atlas_resolution: 512,
            grid: HashGridConfig::default(),
            sds: SdsConfig::default(),
            schedule: ScheduleConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh.as_os_str().is_empty() {
            return Err(Error::Config("mesh path is required (key: mesh)".into()));
        }
        if !self.mesh.exists() {
            return Err(Error::Config(format!(
                "mesh file not found (key: mesh): {}",
                self.mesh.display()
            )));
        }
        if self.atlas_resolution < 1 {
            return Err(Error::Config("atlas_resolution must be >= 1".into()));
        }
        self.grid.validate()?;
        self.sds.validate()?;
        self.oracle.validate()?;
        Ok(())
    }

    /// FNV-1a over the echoed TOML; recorded in output sidecars.
    pub fn hash(&self) -> String {
        let text = self.to_toml_string();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
