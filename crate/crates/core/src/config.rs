//! JSON run configuration for the command-line tool.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, PRESET_NAMES};
use crate::efs::{EfsConfig, DEFAULT_BASE_CHANNELS};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::masks::{DEFAULT_DILATION, DEFAULT_TAU};
use crate::sim::ablation::{SuiteConfig, DEFAULT_SUITE_OBJECTS, DEFAULT_SUITE_SEEDS};
use crate::sim::detector::StubDetectorConfig;
use crate::sim::pipeline::{Harness, LinkConfig, MergePolicy, Synthesis, DEFAULT_NMS_IOU};

/// An agent given by preset name, by preset with overrides, or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentSpec {
    Name(String),
    Preset(PresetRef),
    Inline(AgentConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetRef {
    pub preset: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub lidar_beams: Option<u32>,
}

fn preset(name: &str) -> Result<AgentConfig> {
    AgentConfig::preset(name)
        .ok_or_else(|| Error::config(format!("unknown agent preset `{name}` (known: {})", PRESET_NAMES.join(", "))))
}

impl AgentSpec {
    pub fn resolve(&self) -> Result<AgentConfig> {
        let a = match self {
            AgentSpec::Name(n) => preset(n)?,
            AgentSpec::Preset(p) => {
                let mut a = preset(&p.preset)?;
                if let Some(n) = &p.name {
                    a.name = n.clone();
                }
                if let Some(b) = p.lidar_beams {
                    a.lidar_beams = b;
                }
                a
            }
            AgentSpec::Inline(a) => a.clone(),
        };
        a.validate()?;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ego: AgentSpec,
    pub aux: Vec<AgentSpec>,
    pub link: LinkConfig,
    pub detector: StubDetectorConfig,
    pub weights: LossWeights,
    pub seeds: Vec<u64>,
    pub n_objects: usize,
    /// Channel budget per frame, in bytes; absent means unlimited.
    pub budget_bytes: Option<u64>,
    pub out_dir: PathBuf,
    pub detector_seed: u64,
    pub params_seed: u64,
    pub encoder_seed: u64,
    pub base_channels: usize,
    pub merge: MergePolicy,
    pub nms_iou: f64,
    pub tau: f32,
    pub dilation: usize,
    pub det_loss: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ego: AgentSpec::Name("PP4".into()),
            aux: vec![
                AgentSpec::Preset(PresetRef { preset: "PP4".into(), name: Some("PP4-aux1".into()), lidar_beams: None }),
                AgentSpec::Preset(PresetRef { preset: "PP4".into(), name: Some("PP4-aux2".into()), lidar_beams: None }),
            ],
            link: LinkConfig::default(),
            detector: StubDetectorConfig::default(),
            weights: LossWeights::default(),
            seeds: (0..DEFAULT_SUITE_SEEDS).collect(),
            n_objects: DEFAULT_SUITE_OBJECTS,
            budget_bytes: None,
            out_dir: PathBuf::from("alf-out"),
            detector_seed: 0,
            params_seed: 0,
            encoder_seed: 1,
            base_channels: DEFAULT_BASE_CHANNELS,
            merge: MergePolicy::default(),
            nms_iou: DEFAULT_NMS_IOU,
            tau: DEFAULT_TAU,
            dilation: DEFAULT_DILATION,
            det_loss: 0.0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.harness()?.validate()?;
        self.weights.validate()?;
        if !(self.link.rate_hz.is_finite() && self.link.rate_hz > 0.0) {
            return Err(Error::config("rate_hz must be positive"));
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels must be positive"));
        }
        if !self.det_loss.is_finite() {
            return Err(Error::config("det_loss must be finite"));
        }
        Ok(())
    }

    pub fn harness(&self) -> Result<Harness> {
        let mut h = Harness::new(self.ego.resolve()?, self.aux.iter().map(AgentSpec::resolve).collect::<Result<_>>()?);
        h.detector = self.detector.clone();
        h.link = self.link.clone();
        h.nms_iou = self.nms_iou;
        h.merge = self.merge;
        h.detector_seed = self.detector_seed;
        Ok(h)
    }

    pub fn suite(&self) -> Result<SuiteConfig> {
        Ok(SuiteConfig { harness: self.harness()?, n_objects: self.n_objects, seeds: self.seeds.clone() })
    }

    pub fn synthesis(&self) -> Result<Synthesis> {
        let cfg = EfsConfig::for_agent(&self.ego.resolve()?)?.with_base_channels(self.base_channels);
        let mut syn = Synthesis::with_config(&cfg, self.params_seed, self.encoder_seed)?;
        syn.weights = self.weights;
        syn.tau = self.tau;
        syn.dilation = self.dilation;
        syn.det_loss = self.det_loss;
        Ok(syn)
    }

    pub fn budget_bits(&self) -> Option<u64> {
        self.budget_bytes.map(|b| 8 * b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.suite().unwrap(), SuiteConfig::default());
    }

    #[test]
    fn agent_forms() {
        let cfg = RunConfig::from_json(
            r#"{
                "ego": "PP4",
                "aux": [
                    "SD3",
                    {"preset": "PP8", "lidar_beams": 64},
                    {"name": "novel", "lidar_beams": 32,
                     "grid": {"x_min": -51.2, "x_max": 51.2, "y_min": -25.6, "y_max": 25.6, "v_x": 0.32, "v_y": 0.32},
                     "feature_channels": 128, "encoder_stride": 4}
                ],
                "seeds": [3]
            }"#,
        )
        .unwrap();
        let h = cfg.harness().unwrap();
        assert_eq!(h.aux[0].name, "SD3");
        assert_eq!((h.aux[1].name.as_str(), h.aux[1].lidar_beams), ("PP8", 64));
        assert_eq!(h.aux[2].bev_dims(), (320, 160));
    }

    #[test]
    fn rejects_unknown_keys_and_presets() {
        assert!(matches!(RunConfig::from_json(r#"{"egg": "PP4"}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"link": {"bitz": 8}}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"ego": "PP5"}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"link": {"bits": 7}}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json("not json"), Err(Error::Config(_))));
    }

    #[test]
    fn budget_in_bits() {
        let cfg = RunConfig::from_json(r#"{"budget_bytes": 100}"#).unwrap();
        assert_eq!(cfg.budget_bits(), Some(800));
    }
}
