//! Agent configurations: sensor tag, BEV grid, and encoder feature geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub name: String,
    /// LiDAR beam count (128 or 64 in the reference setups).
    pub lidar_beams: u32,
    pub grid: GridSpec,
    /// Channel count `C` of the encoder's BEV feature.
    pub feature_channels: usize,
    /// Total spatial downsampling `2^L` from BEV grid to feature map.
    pub encoder_stride: usize,
}

pub const PRESET_NAMES: [&str; 5] = ["PP4", "PP6", "PP8", "SD2", "SD3"];

const NARROW: [f64; 2] = [-102.4, 102.4];
const WIDE: [f64; 2] = [-105.6, 105.6];
const LATERAL: [f64; 2] = [-38.4, 38.4];

impl AgentConfig {
    /// PointPillar / SECOND configurations by name (`PP4`, `PP6`, `PP8`, `SD2`, `SD3`).
    pub fn preset(name: &str) -> Option<Self> {
        let (x, voxel, channels, stride) = match name {
            "PP4" => (NARROW, 0.4, 256, 4),
            "PP6" => (WIDE, 0.6, 256, 2),
            "PP8" => (NARROW, 0.8, 256, 2),
            "SD2" => (NARROW, 0.2, 512, 8),
            "SD3" => (WIDE, 0.3, 512, 4),
            _ => return None,
        };
        Some(Self {
            name: name.to_string(),
            lidar_beams: 128,
            grid: GridSpec::new(x, LATERAL, [voxel, voxel]),
            feature_channels: channels,
            encoder_stride: stride,
        })
    }

    pub fn with_beams(mut self, beams: u32) -> Self {
        self.lidar_beams = beams;
        self
    }

    pub fn bev_dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    /// Encoder feature dims `(H, W)`.
    pub fn feature_dims(&self) -> (usize, usize) {
        let (h, w) = self.grid.dims();
        (h / self.encoder_stride.max(1), w / self.encoder_stride.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let s = self.encoder_stride;
        if s == 0 || !s.is_power_of_two() {
            return Err(Error::config(format!("{}: encoder stride {s} is not a power of two", self.name)));
        }
        let (h, w) = self.grid.dims();
        if h % s != 0 || w % s != 0 {
            return Err(Error::config(format!("{}: grid {h}x{w} is not divisible by encoder stride {s}", self.name)));
        }
        if self.feature_channels == 0 || self.feature_channels % 2 != 0 {
            return Err(Error::config(format!("{}: feature channels must be even", self.name)));
        }
        if self.lidar_beams == 0 {
            return Err(Error::config(format!("{}: beam count must be positive", self.name)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_geometry() {
        let expect = [
            ("PP4", (512, 192), (128, 48), 256),
            ("PP6", (352, 128), (176, 64), 256),
            ("PP8", (256, 96), (128, 48), 256),
            ("SD2", (1024, 384), (128, 48), 512),
            ("SD3", (704, 256), (176, 64), 512),
        ];
        for (name, bev, feat, c) in expect {
            let a = AgentConfig::preset(name).unwrap();
            a.validate().unwrap();
            assert_eq!(a.bev_dims(), bev, "{name}");
            assert_eq!(a.feature_dims(), feat, "{name}");
            assert_eq!(a.feature_channels, c);
        }
        assert!(AgentConfig::preset("PP5").is_none());
    }

    #[test]
    fn rejects_inconsistent_stride() {
        let mut a = AgentConfig::preset("PP6").unwrap();
        a.encoder_stride = 3;
        assert!(a.validate().is_err());
        a.encoder_stride = 256;
        assert!(a.validate().is_err());
    }
}
