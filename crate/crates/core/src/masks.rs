//! Object / background region masks derived from a pseudo-BEV map.

use crate::error::Result;
use crate::raster::PseudoBev;
use crate::tensor::{dilate_binary, max_pool_to, FeatureMap};

pub const DEFAULT_TAU: f32 = 0.0;
pub const DEFAULT_DILATION: usize = 2;

/// Binary single-channel masks at feature resolution. `obj` and `bg` are exact
/// complements; `fg` is the undilated foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub fg: FeatureMap<f32>,
    pub obj: FeatureMap<f32>,
    pub bg: FeatureMap<f32>,
}

impl RegionMasks {
    pub fn obj_cells(&self) -> usize {
        self.obj.data().iter().filter(|&&v| v > 0.5).count()
    }
}

/// Max-pools the map to `rows × cols`, thresholds with `> tau`, dilates by
/// `radius` cells (window `2·radius + 1`) and takes the complement as background.
pub fn build_masks(x: &PseudoBev, rows: usize, cols: usize, tau: f32, radius: usize) -> Result<RegionMasks> {
    let pooled = max_pool_to(&x.map, rows, cols)?;
    let fg = pooled.map(|v| if v > tau { 1.0 } else { 0.0 });
    let obj = dilate_binary(&fg, radius);
    let bg = obj.map(|v| 1.0 - v);
    Ok(RegionMasks { fg, obj, bg })
}
