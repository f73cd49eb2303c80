//! Seeded synthetic scenes: ground-truth objects in the ego frame and the
//! poses of the auxiliary agents.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::geometry::{intersection_area, BoxBEV, Pose2};
use crate::raster::GridSpec;

use super::stream_seed;

pub const DEFAULT_AUX_AGENTS: usize = 2;

/// Detection range of the reference ego grid.
pub const DEFAULT_SCENE_RANGE: ([f64; 2], [f64; 2]) = ([-102.4, 102.4], [-38.4, 38.4]);

/// Clear gap kept between objects when placing them.
const PLACEMENT_GAP_M: f64 = 0.5;
const PLACEMENT_TRIES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Truck,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::Car, ObjectClass::Pedestrian, ObjectClass::Truck];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Pedestrian => "ped",
            ObjectClass::Truck => "truck",
        }
    }

    /// Mean footprint `(w, l)` in meters.
    pub fn prior_size(self) -> (f64, f64) {
        match self {
            ObjectClass::Car => (1.9, 4.6),
            ObjectClass::Pedestrian => (0.7, 0.8),
            ObjectClass::Truck => (2.6, 9.5),
        }
    }

    /// Uniform size ranges `(w, l)` sampled around the prior.
    fn size_ranges(self) -> ([f64; 2], [f64; 2]) {
        match self {
            ObjectClass::Car => ([1.7, 2.1], [4.0, 5.2]),
            ObjectClass::Pedestrian => ([0.5, 0.9], [0.6, 1.0]),
            ObjectClass::Truck => ([2.4, 3.0], [7.5, 11.5]),
        }
    }

    /// Class whose prior footprint is nearest in `(w, l)`.
    pub fn from_size(w: f64, l: f64) -> ObjectClass {
        let d = |c: ObjectClass| {
            let (pw, pl) = c.prior_size();
            (w - pw).powi(2) + (l - pl).powi(2)
        };
        Self::ALL.into_iter().min_by(|&a, &b| d(a).total_cmp(&d(b))).expect("three classes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub class: ObjectClass,
    /// Ego-frame footprint, score 1.
    pub bbox: BoxBEV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub objects: Vec<GtObject>,
    /// The ego frame is the scene frame.
    pub ego_pose: Pose2,
    /// `T_{i→ego}` for each auxiliary agent.
    pub aux_poses: Vec<Pose2>,
}

/// Scene with `n_objects` objects inside the reference ego range and
/// [`DEFAULT_AUX_AGENTS`] auxiliary agents.
pub fn gen_scenario(seed: u64, n_objects: usize) -> Scenario {
    let (x, y) = DEFAULT_SCENE_RANGE;
    gen_scenario_in(seed, n_objects, DEFAULT_AUX_AGENTS, &GridSpec::new(x, y, [0.4, 0.4]))
}

/// Objects are placed with their whole footprint inside `range` and without
/// overlap (a slot that stays blocked after a bounded number of draws is
/// skipped, so crowded scenes may hold fewer objects). Class mix is 60 % car,
/// 25 % pedestrian, 15 % truck; vehicles drive roughly along ±x.
/// Auxiliary agents sit in the middle 60 % of the range with any heading.
pub fn gen_scenario_in(seed: u64, n_objects: usize, n_aux: usize, range: &GridSpec) -> Scenario {
    let mut rng = SplitMix64::seed_from_u64(stream_seed(seed, 0));
    let heading_jitter = Normal::new(0.0, 0.1).expect("valid std");
    let mut objects: Vec<GtObject> = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let u: f64 = rng.random();
        let class = if u < 0.6 {
            ObjectClass::Car
        } else if u < 0.85 {
            ObjectClass::Pedestrian
        } else {
            ObjectClass::Truck
        };
        let ([w0, w1], [l0, l1]) = class.size_ranges();
        for _ in 0..PLACEMENT_TRIES {
            let w = rng.random_range(w0..=w1);
            let l = rng.random_range(l0..=l1);
            let yaw = match class {
                ObjectClass::Pedestrian => rng.random_range(-PI..PI),
                _ => {
                    let base = if rng.random_bool(0.5) { 0.0 } else { PI };
                    base + heading_jitter.sample(&mut rng)
                }
            };
            let x = rng.random_range(range.x_min..range.x_max);
            let y = rng.random_range(range.y_min..range.y_max);
            let b = BoxBEV::new(x, y, w, l, yaw, 1.0);
            let (ax0, ax1, ay0, ay1) = b.aabb();
            if ax0 < range.x_min || ax1 > range.x_max || ay0 < range.y_min || ay1 > range.y_max {
                continue;
            }
            let padded = BoxBEV { w: w + PLACEMENT_GAP_M, l: l + PLACEMENT_GAP_M, ..b };
            let clear = objects.iter().all(|o| {
                let other = BoxBEV { w: o.bbox.w + PLACEMENT_GAP_M, l: o.bbox.l + PLACEMENT_GAP_M, ..o.bbox };
                intersection_area(&padded, &other) <= 0.0
            });
            if clear {
                objects.push(GtObject { class, bbox: b });
                break;
            }
        }
    }

    let mut rng = SplitMix64::seed_from_u64(stream_seed(seed, 1));
    let (cx, cy) = ((range.x_min + range.x_max) / 2.0, (range.y_min + range.y_max) / 2.0);
    let (hx, hy) = (0.3 * (range.x_max - range.x_min), 0.3 * (range.y_max - range.y_min));
    let aux_poses = (0..n_aux)
        .map(|_| {
            Pose2::new(
                rng.random_range(cx - hx..cx + hx),
                rng.random_range(cy - hy..cy + hy),
                rng.random_range(-PI..PI),
            )
        })
        .collect();
    Scenario { seed, objects, ego_pose: Pose2::IDENTITY, aux_poses }
}

impl Scenario {
    pub fn class_count(&self, class: ObjectClass) -> usize {
        self.objects.iter().filter(|o| o.class == class).count()
    }

    /// Pose of agent `index` in the ego frame; 0 is the ego itself.
    pub fn agent_pose(&self, index: usize) -> Option<Pose2> {
        match index {
            0 => Some(self.ego_pose),
            i => self.aux_poses.get(i - 1).copied(),
        }
    }
}
