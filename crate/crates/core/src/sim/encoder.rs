//! Stand-in for the frozen ego encoder: a fixed, seeded network of the same
//! family as the synthesizer (replicate, strided stages to `C/2`, one block
//! to `C`, three residual blocks). It supplies the ego's own feature and the
//! teacher features the synthesized ones are compared against.
//!
//! Unlike a freshly initialized synthesizer, the surrogate carries nonzero
//! batch-norm shifts, as a trained encoder would; empty regions therefore map
//! to nonzero feature vectors and cosine comparisons stay defined everywhere.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::agent::AgentConfig;
use crate::efs::{glorot_init, oce_stages, run_stages, Cba, EfsConfig, ResBlock};
use crate::error::{Error, Result};
use crate::geometry::{transform_box, BoxBEV};
use crate::raster::{rasterize, PseudoBev};
use crate::tensor::FeatureMap;

use super::scenario::Scenario;

pub const SHIFT_RANGE: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder {
    pub config: EfsConfig,
    pub seed: u64,
    pub stages: Vec<[Cba; 2]>,
    pub proj: Cba,
    pub res: [ResBlock; 3],
}

impl FrozenEncoder {
    /// Weights drawn as in [`crate::efs::init_params`] (stages, projection,
    /// then residual blocks); batch-norm shifts uniform in `±SHIFT_RANGE` from
    /// a second stream seeded with `!seed`, in the same block order.
    pub fn new(config: &EfsConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut enc = Self {
            config: config.clone(),
            seed,
            stages: oce_stages(config),
            proj: Cba::new(config.half(), c, 1),
            res: [ResBlock::new(c), ResBlock::new(c), ResBlock::new(c)],
        };
        let mut blocks: Vec<&mut Cba> = enc.stages.iter_mut().flat_map(|s| s.iter_mut()).collect();
        blocks.push(&mut enc.proj);
        for rb in enc.res.iter_mut() {
            blocks.push(&mut rb.inner);
            blocks.push(&mut rb.outer);
        }
        let mut rng = SplitMix64::seed_from_u64(!seed);
        for b in blocks.iter_mut() {
            for v in b.bn.shift.iter_mut() {
                *v = rng.random_range(-SHIFT_RANGE..SHIFT_RANGE);
            }
        }
        glorot_init(blocks, seed);
        Ok(enc)
    }

    pub fn encode(&self, x: &PseudoBev) -> Result<FeatureMap> {
        let (hb, wb) = self.config.bev_dims();
        if x.map.shape() != (hb, wb, 1) {
            return Err(Error::config(format!("encoder grid is {hb}x{wb}, input is {:?}", x.map.shape())));
        }
        let mut f = self.proj.forward(&run_stages(x, &self.stages, self.config.c0)?)?;
        for rb in &self.res {
            f = rb.forward(&f)?;
        }
        Ok(f)
    }

    /// Ego feature `F_1`: the ego's noiseless view of the scene.
    pub fn ego_feature(&self, s: &Scenario) -> Result<FeatureMap> {
        let boxes: Vec<BoxBEV> = s.objects.iter().map(|o| o.bbox).collect();
        self.encode(&rasterize(&boxes, &self.config.grid))
    }
}

/// Teacher feature for auxiliary agent `aux` (1-based agent index): the
/// objects inside that agent's range, expressed exactly in the ego frame and
/// encoded by the frozen ego encoder.
pub fn make_teacher_stub(s: &Scenario, aux: usize, agent: &AgentConfig, encoder: &FrozenEncoder) -> Result<FeatureMap> {
    let pose = s.agent_pose(aux).ok_or_else(|| Error::config(format!("scenario has no agent {aux}")))?;
    let to_agent = pose.inverse();
    let boxes: Vec<BoxBEV> = s
        .objects
        .iter()
        .filter(|o| {
            let b = transform_box(&o.bbox, &to_agent);
            agent.grid.contains(b.x, b.y)
        })
        .map(|o| o.bbox)
        .collect();
    encoder.encode(&rasterize(&boxes, &encoder.config.grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::cos_align;
    use crate::raster::GridSpec;
    use crate::sim::scenario::gen_scenario_in;

    fn small() -> (EfsConfig, AgentConfig) {
        let grid = GridSpec::new([-16.0, 16.0], [-8.0, 8.0], [0.5, 0.5]);
        let cfg = EfsConfig::new(grid, 16, 8, 8).unwrap().with_base_channels(4);
        let agent = AgentConfig { name: "small".into(), lidar_beams: 64, grid, feature_channels: 8, encoder_stride: 4 };
        (cfg, agent)
    }

    #[test]
    fn teacher_is_deterministic_and_ego_shaped() {
        let (cfg, agent) = small();
        let enc = FrozenEncoder::new(&cfg, 17).unwrap();
        let s = gen_scenario_in(4, 8, 1, &cfg.grid);
        let t = make_teacher_stub(&s, 1, &agent, &enc).unwrap();
        assert_eq!(t, make_teacher_stub(&s, 1, &agent, &enc).unwrap());
        assert_eq!(t.shape(), (16, 8, 8));
        assert_eq!(t.shape(), enc.ego_feature(&s).unwrap().shape());
        assert!(t.is_finite());
        assert!((0..16).all(|r| (0..8).all(|c| t.cell(r, c).iter().any(|&v| v != 0.0))));
        let mask = FeatureMap::filled(16, 8, 1, 1.0f32);
        assert!(cos_align(&t, &t, &mask).unwrap().abs() < 1e-6);
        assert!(make_teacher_stub(&s, 2, &agent, &enc).is_err());
    }

    #[test]
    fn seeds_change_weights() {
        let (cfg, _) = small();
        assert_ne!(FrozenEncoder::new(&cfg, 1).unwrap(), FrozenEncoder::new(&cfg, 2).unwrap());
        assert_eq!(FrozenEncoder::new(&cfg, 1).unwrap(), FrozenEncoder::new(&cfg, 1).unwrap());
    }
}
