//! Stand-in per-agent detector: ground truth seen through noise, misses and
//! clutter.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, Poisson};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::error::{Error, Result};
use crate::geometry::{transform_box, BoxBEV, Pose2};

use super::scenario::{ObjectClass, Scenario};

/// Agents with at most this many beams get `beam_factor` times the noise.
pub const SPARSE_BEAMS: u32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StubDetectorConfig {
    /// Center noise std (m), per axis.
    pub sigma_pos: f64,
    /// Extent noise std (m), per extent.
    pub sigma_size: f64,
    /// Heading noise std (rad).
    pub sigma_yaw: f64,
    pub p_miss: f64,
    /// Expected false positives per frame.
    pub fp_rate: f64,
    /// False positive scores are uniform in `[0, fp_score_max)`.
    pub fp_score_max: f64,
    pub beam_factor: f64,
    /// Noise grows as `1 + d / range_scale_m` with distance `d` from the
    /// sensor; 0 disables the growth.
    pub range_scale_m: f64,
}

impl Default for StubDetectorConfig {
    fn default() -> Self {
        Self {
            sigma_pos: 0.2,
            sigma_size: 0.1,
            sigma_yaw: 0.03,
            p_miss: 0.1,
            fp_rate: 2.0,
            fp_score_max: 0.3,
            beam_factor: 1.5,
            range_scale_m: 50.0,
        }
    }
}

impl StubDetectorConfig {
    /// No noise, misses or clutter.
    pub fn perfect() -> Self {
        Self { sigma_pos: 0.0, sigma_size: 0.0, sigma_yaw: 0.0, p_miss: 0.0, fp_rate: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let sig = [self.sigma_pos, self.sigma_size, self.sigma_yaw, self.fp_rate, self.range_scale_m];
        if sig.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("detector noise, clutter rate and range scale must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.p_miss) || !(0.0..=1.0).contains(&self.fp_score_max) {
            return Err(Error::config("detector probabilities must lie in [0, 1]"));
        }
        if !(self.beam_factor.is_finite() && self.beam_factor >= 1.0) {
            return Err(Error::config("beam factor must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: ObjectClass,
    pub bbox: BoxBEV,
}

/// Detections of the agent at `pose` (its `T_{agent→ego}`), in the agent's
/// own frame. Only objects whose center falls inside the agent's grid are
/// seen. The score of a true detection is `exp(−e)` with
/// `e = |Δcenter| + (|Δw| + |Δl|) / 2 + |Δyaw|`, so exact boxes score 1.
pub fn stub_detect(
    s: &Scenario,
    agent: &AgentConfig,
    pose: &Pose2,
    cfg: &StubDetectorConfig,
    seed: u64,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let mut rng = SplitMix64::seed_from_u64(seed);
    let to_agent = pose.inverse();
    let beams = if agent.lidar_beams <= SPARSE_BEAMS { cfg.beam_factor } else { 1.0 };
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::new();

    for o in &s.objects {
        let b = transform_box(&o.bbox, &to_agent);
        if !agent.grid.contains(b.x, b.y) {
            continue;
        }
        if rng.random_bool(cfg.p_miss) {
            continue;
        }
        let range = if cfg.range_scale_m > 0.0 { 1.0 + b.x.hypot(b.y) / cfg.range_scale_m } else { 1.0 };
        let f = beams * range;
        let mut n = || unit.sample(&mut rng) * f;
        let (dx, dy) = (cfg.sigma_pos * n(), cfg.sigma_pos * n());
        let (dw, dl) = (cfg.sigma_size * n(), cfg.sigma_size * n());
        let dyaw = cfg.sigma_yaw * n();
        let w = (b.w + dw).max(0.1);
        let l = (b.l + dl).max(0.1);
        let err = dx.hypot(dy) + ((w - b.w).abs() + (l - b.l).abs()) / 2.0 + dyaw.abs();
        let bbox = BoxBEV::new(b.x + dx, b.y + dy, w, l, b.yaw + dyaw, (-err).exp());
        out.push(Detection { class: o.class, bbox });
    }

    if cfg.fp_rate > 0.0 {
        let count = Poisson::new(cfg.fp_rate).expect("positive rate").sample(&mut rng) as usize;
        let g = &agent.grid;
        for _ in 0..count {
            let class = ObjectClass::ALL[rng.random_range(0..3)];
            let (w, l) = class.prior_size();
            let bbox = BoxBEV::new(
                rng.random_range(g.x_min..g.x_max),
                rng.random_range(g.y_min..g.y_max),
                w,
                l,
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                rng.random_range(0.0..1.0) * cfg.fp_score_max,
            );
            out.push(Detection { class, bbox });
        }
    }
    Ok(out)
}
