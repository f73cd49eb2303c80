//! Box-to-BEV rasterization: decoded ego-frame boxes become a single-channel
//! occupancy map holding, per cell, the best score of any box covering the
//! cell center.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_box, BoxBEV};
use crate::tensor::FeatureMap;

/// Slack added before flooring extent/voxel ratios, so that e.g. 76.8 / 0.4
/// (which evaluates to 191.99999999999997) yields 192 cells.
const DIM_SLACK: f64 = 1e-9;

/// Detection range and voxel size of a BEV grid. Row `u` runs along x from
/// `x_min`, column `v` along y from `y_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub v_x: f64,
    pub v_y: f64,
}

impl GridSpec {
    pub fn new(x: [f64; 2], y: [f64; 2], voxel: [f64; 2]) -> Self {
        Self { x_min: x[0], x_max: x[1], y_min: y[0], y_max: y[1], v_x: voxel[0], v_y: voxel[1] }
    }

    /// `(H_bev, W_bev)`; zero when a voxel is wider than the range.
    pub fn dims(&self) -> (usize, usize) {
        let n = |extent: f64, voxel: f64| {
            let r = extent / voxel;
            if r.is_finite() && r > 0.0 {
                (r + DIM_SLACK).floor() as usize
            } else {
                0
            }
        };
        (n(self.x_max - self.x_min, self.v_x), n(self.y_max - self.y_min, self.v_y))
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x_min, self.x_max, self.y_min, self.y_max, self.v_x, self.v_y];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("grid values must be finite"));
        }
        if self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::config(format!("empty detection range {self:?}")));
        }
        if self.v_x <= 0.0 || self.v_y <= 0.0 {
            return Err(Error::config("voxel sizes must be positive"));
        }
        let (h, w) = self.dims();
        if h == 0 || w == 0 {
            return Err(Error::config(format!("grid {self:?} has no cells")));
        }
        Ok(())
    }

    pub fn cell_center(&self, u: usize, v: usize) -> (f64, f64) {
        (self.x_min + (u as f64 + 0.5) * self.v_x, self.y_min + (v as f64 + 0.5) * self.v_y)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

pub fn grid_dims(g: &GridSpec) -> (usize, usize) {
    g.dims()
}

/// Single-channel pseudo-BEV map on a [`GridSpec`], values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBev {
    pub grid: GridSpec,
    pub map: FeatureMap<f32>,
}

impl PseudoBev {
    pub fn empty(grid: GridSpec) -> Self {
        let (h, w) = grid.dims();
        Self { grid, map: FeatureMap::zeros(h, w, 1) }
    }

    pub fn value(&self, u: usize, v: usize) -> f32 {
        self.map.get(u, v, 0)
    }

    pub fn occupied_cells(&self) -> usize {
        self.map.data().iter().filter(|&&v| v > 0.0).count()
    }

    /// Plain-text PGM (P2), values scaled by 255. Image rows are map rows.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (rows, cols, _) = self.map.shape();
        writeln!(w, "P2\n{cols} {rows}\n255")?;
        for u in 0..rows {
            let line: Vec<String> =
                (0..cols).map(|v| ((self.value(u, v) as f64 * 255.0).round() as u8).to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Index range of cells whose centers can fall in `[lo, hi]` along one axis.
fn cell_span(lo: f64, hi: f64, origin: f64, voxel: f64, n: usize) -> Option<(usize, usize)> {
    // Center of cell i is origin + (i + 0.5) * voxel; widen by one cell on each
    // side so rounding in the division never drops a boundary cell.
    let first = ((lo - origin) / voxel - 0.5).floor() - 1.0;
    let last = ((hi - origin) / voxel - 0.5).ceil() + 1.0;
    if !first.is_finite() || !last.is_finite() || last < 0.0 || first >= n as f64 {
        return None;
    }
    let first = first.max(0.0) as usize;
    let last = (last as usize).min(n - 1);
    (first <= last).then_some((first, last))
}

/// Rasterizes ego-frame boxes: each cell whose center lies inside a box
/// (boundary inclusive) takes the maximum score over covering boxes. Only the
/// cells under each box's bounding rectangle are visited.
pub fn rasterize(boxes: &[BoxBEV], grid: &GridSpec) -> PseudoBev {
    let mut out = PseudoBev::empty(*grid);
    let (h, w) = grid.dims();
    if h == 0 || w == 0 {
        return out;
    }
    for b in boxes {
        let score = b.score.clamp(0.0, 1.0) as f32;
        let (x0, x1, y0, y1) = b.aabb();
        let (Some((u0, u1)), Some((v0, v1))) =
            (cell_span(x0, x1, grid.x_min, grid.v_x, h), cell_span(y0, y1, grid.y_min, grid.v_y, w))
        else {
            continue;
        };
        for u in u0..=u1 {
            for v in v0..=v1 {
                let (cx, cy) = grid.cell_center(u, v);
                if point_in_box(cx, cy, b) {
                    let i = out.map.index(u, v, 0);
                    let cell = &mut out.map.data_mut()[i];
                    if score > *cell {
                        *cell = score;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;
    use std::f64::consts::PI;

    fn grid_of(name: &str) -> GridSpec {
        AgentConfig::preset(name).unwrap().grid
    }

    fn brute_force(boxes: &[BoxBEV], grid: &GridSpec) -> FeatureMap<f32> {
        let (h, w) = grid.dims();
        FeatureMap::from_fn(h, w, 1, |u, v, _| {
            let (cx, cy) = grid.cell_center(u, v);
            boxes.iter().filter(|b| point_in_box(cx, cy, b)).map(|b| b.score as f32).fold(0.0, f32::max)
        })
    }

    #[test]
    fn preset_grid_dims() {
        assert_eq!(grid_dims(&grid_of("PP4")), (512, 192));
        assert_eq!(grid_dims(&grid_of("PP8")), (256, 96));
        let degenerate = GridSpec::new([-1.0, 1.0], [-1.0, 1.0], [3.0, 0.5]);
        assert_eq!(degenerate.dims(), (0, 4));
        assert!(matches!(degenerate.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_list_gives_zero_map() {
        let bev = rasterize(&[], &grid_of("PP4"));
        assert_eq!(bev.map.shape(), (512, 192, 1));
        assert_eq!(bev.occupied_cells(), 0);
    }

    #[test]
    fn axis_aligned_box_footprint() {
        let grid = grid_of("PP4");
        let b = BoxBEV::new(0.0, 0.0, 2.0, 4.0, 0.0, 0.9);
        let bev = rasterize(&[b], &grid);
        assert_eq!(bev.map, brute_force(&[b], &grid));
        // x centers -1.8..1.8 step 0.4 (10 rows), y centers -0.6..0.6 (4 columns)
        // plus the boundary-inclusive ±1.0 centers (2 more columns).
        let cells: Vec<(usize, usize)> =
            (0..512).flat_map(|u| (0..192).map(move |v| (u, v))).filter(|&(u, v)| bev.value(u, v) > 0.0).collect();
        assert_eq!(cells.len(), 60);
        assert!(cells.iter().all(|&(u, v)| bev.value(u, v) == 0.9f32));
        let rows: std::collections::BTreeSet<usize> = cells.iter().map(|c| c.0).collect();
        let cols: std::collections::BTreeSet<usize> = cells.iter().map(|c| c.1).collect();
        assert_eq!((rows.len(), cols.len()), (10, 6));
    }

    #[test]
    fn overlapping_boxes_keep_max() {
        let grid = grid_of("PP4");
        let a = BoxBEV::new(0.0, 0.0, 2.0, 4.0, 0.0, 0.3);
        let b = BoxBEV::new(1.0, 0.0, 2.0, 4.0, 0.0, 0.8);
        let bev = rasterize(&[a, b], &grid);
        let (u, v) = (((0.6 + 102.4) / 0.4) as usize, ((0.2 + 38.4) / 0.4) as usize);
        assert_eq!(bev.value(u, v), 0.8);
        assert_eq!(bev.map, brute_force(&[a, b], &grid));
    }

    fn random_boxes(rng: &mut SplitMix64, grid: &GridSpec, n: usize) -> Vec<BoxBEV> {
        (0..n)
            .map(|_| {
                BoxBEV::new(
                    rng.random_range(grid.x_min - 5.0..grid.x_max + 5.0),
                    rng.random_range(grid.y_min - 5.0..grid.y_max + 5.0),
                    rng.random_range(0.2..4.0),
                    rng.random_range(0.2..12.0),
                    rng.random_range(-PI..PI),
                    rng.random_range(0.01..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let grid = GridSpec::new([-20.0, 20.0], [-12.0, 12.0], [0.4, 0.4]);
        let mut rng = SplitMix64::seed_from_u64(21);
        for _ in 0..40 {
            let n = rng.random_range(0..12);
            let boxes = random_boxes(&mut rng, &grid, n);
            assert_eq!(rasterize(&boxes, &grid).map, brute_force(&boxes, &grid));
        }
    }

    #[test]
    fn half_turn_leaves_footprint_unchanged() {
        let grid = GridSpec::new([-20.0, 20.0], [-12.0, 12.0], [0.4, 0.4]);
        let mut rng = SplitMix64::seed_from_u64(22);
        for b in random_boxes(&mut rng, &grid, 50) {
            let mut flipped = b;
            flipped.yaw = crate::geometry::wrap_angle(b.yaw + PI);
            let (p, q) = (rasterize(&[b], &grid), rasterize(&[flipped], &grid));
            // Cells exactly on an edge can flip under the rotation's rounding.
            let differing = p.map.data().iter().zip(q.map.data()).filter(|(a, b)| a != b).count();
            assert!(differing <= 2, "{differing} cells differ");
        }
    }

    #[test]
    fn monotone_and_values_from_inputs() {
        let grid = GridSpec::new([-20.0, 20.0], [-12.0, 12.0], [0.5, 0.5]);
        let mut rng = SplitMix64::seed_from_u64(23);
        let boxes = random_boxes(&mut rng, &grid, 20);
        let mut prev = rasterize(&[], &grid);
        for k in 1..=boxes.len() {
            let next = rasterize(&boxes[..k], &grid);
            assert!(prev.map.data().iter().zip(next.map.data()).all(|(a, b)| b >= a));
            prev = next;
        }
        let scores: Vec<f32> = boxes.iter().map(|b| b.score as f32).collect();
        assert!(prev.map.data().iter().all(|v| *v == 0.0 || scores.contains(v)));
    }

    #[test]
    fn straddling_box_is_clipped() {
        let grid = GridSpec::new([0.0, 4.0], [0.0, 4.0], [1.0, 1.0]);
        let b = BoxBEV::new(0.0, 0.0, 2.2, 2.2, 0.0, 1.0);
        let bev = rasterize(&[b], &grid);
        assert_eq!(bev.occupied_cells(), 1);
        assert_eq!(bev.value(0, 0), 1.0);
    }

    #[test]
    fn pgm_dump() {
        let grid = GridSpec::new([0.0, 3.0], [0.0, 2.0], [1.0, 1.0]);
        let bev = rasterize(&[BoxBEV::new(0.5, 0.5, 0.5, 0.5, 0.0, 1.0)], &grid);
        let mut buf = Vec::new();
        bev.write_pgm(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "P2\n2 3\n255\n255 0\n0 0\n0 0\n");
    }
}
