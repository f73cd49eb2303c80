//! Planar rigid transforms and oriented BEV boxes.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `[-π, π)`; `wrap_angle(π) == -π`.
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let t = (a + PI).rem_euclid(TAU) - PI;
    if t >= PI {
        t - TAU
    } else {
        t
    }
}

/// SE(2) element: rotation by `yaw` followed by translation `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose2 {
    pub const IDENTITY: Self = Self { x: 0.0, y: 0.0, yaw: 0.0 };

    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: wrap_angle(yaw) }
    }

    /// Maps a point from this pose's local frame into the parent frame.
    pub fn apply(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * px - s * py + self.x, s * px + c * py + self.y)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (x, y) = self.apply(other.x, other.y);
        Pose2::new(x, y, self.yaw + other.yaw)
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.yaw)
    }
}

/// Free-function form of [`Pose2::compose`].
pub fn pose_compose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.compose(b)
}

/// A BEV detection. `l` runs along the heading `yaw`, `w` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBEV {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
    pub score: f64,
}

impl BoxBEV {
    pub fn new(x: f64, y: f64, w: f64, l: f64, yaw: f64, score: f64) -> Self {
        Self { x, y, w, l, yaw: wrap_angle(yaw), score }
    }

    pub fn is_valid(&self) -> bool {
        let finite = [self.x, self.y, self.w, self.l, self.yaw, self.score].iter().all(|v| v.is_finite());
        finite && self.w > 0.0 && self.l > 0.0 && (0.0..=1.0).contains(&self.score)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.l.max(0.0)
    }

    /// Footprint corners in counter-clockwise order.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(u, v)| (self.x + c * u - s * v, self.y + s * u + c * v))
    }

    /// Axis-aligned bounds `(x_min, x_max, y_min, y_max)` of the footprint.
    pub fn aabb(&self) -> (f64, f64, f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let ex = (c * self.l / 2.0).abs() + (s * self.w / 2.0).abs();
        let ey = (s * self.l / 2.0).abs() + (c * self.w / 2.0).abs();
        (self.x - ex, self.x + ex, self.y - ey, self.y + ey)
    }
}

/// Re-expresses a box given in frame A in frame B, where `t` maps A into B.
pub fn transform_box(b: &BoxBEV, t: &Pose2) -> BoxBEV {
    let (x, y) = t.apply(b.x, b.y);
    BoxBEV { x, y, yaw: wrap_angle(b.yaw + t.yaw), ..*b }
}

/// Slack on the inclusive footprint boundary, in meters. Grid centers such as
/// -38.4 + 93.5 * 0.4 land a few ulps off the exact edge they lie on.
pub const BOUNDARY_EPS: f64 = 1e-9;

/// Inclusive footprint test: rotate the offset into the box frame and compare
/// against the half extents.
#[inline]
pub fn point_in_box(px: f64, py: f64, b: &BoxBEV) -> bool {
    let (dx, dy) = (px - b.x, py - b.y);
    let (s, c) = b.yaw.sin_cos();
    let xl = c * dx + s * dy;
    let yl = -s * dx + c * dy;
    xl.abs() <= b.l / 2.0 + BOUNDARY_EPS && yl.abs() <= b.w / 2.0 + BOUNDARY_EPS
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn shoelace(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    twice.abs() / 2.0
}

/// Clips `subject` against the convex counter-clockwise polygon `clip`.
fn clip_convex(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (e0, e1) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (dc, dp) = (cross(e0, e1, cur), cross(e0, e1, prev));
            if dc >= 0.0 {
                if dp < 0.0 {
                    output.push(intersect(prev, cur, dp, dc));
                }
                output.push(cur);
            } else if dp >= 0.0 {
                output.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    output
}

fn intersect(p: (f64, f64), q: (f64, f64), dp: f64, dq: f64) -> (f64, f64) {
    let t = dp / (dp - dq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

/// Overlap area of two footprints.
pub fn intersection_area(a: &BoxBEV, b: &BoxBEV) -> f64 {
    shoelace(&clip_convex(&a.corners(), &b.corners()))
}

/// Rotated-rectangle IoU. Zero-area boxes have IoU 0 with everything.
pub fn rotated_iou(a: &BoxBEV, b: &BoxBEV) -> f64 {
    let (aa, ab) = (a.area(), b.area());
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    // Cheap reject before clipping.
    let (ax0, ax1, ay0, ay1) = a.aabb();
    let (bx0, bx1, by0, by1) = b.aabb();
    if ax1 < bx0 || bx1 < ax0 || ay1 < by0 || by1 < ay0 {
        return 0.0;
    }
    let inter = intersection_area(a, b);
    let union = aa + ab - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Indices visited in descending score order, ties by ascending index.
pub fn score_order(boxes: &[BoxBEV]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| boxes[j].score.total_cmp(&boxes[i].score).then(i.cmp(&j)));
    order
}

/// Greedy NMS; returns the indices of survivors in visiting order.
pub fn nms_indices(boxes: &[BoxBEV], iou_threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(boxes) {
        if kept.iter().all(|&k| rotated_iou(&boxes[k], &boxes[i]) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

/// Greedy non-maximum suppression: a box is dropped when its IoU with an
/// already kept box exceeds `iou_threshold`.
pub fn nms_bev(boxes: &[BoxBEV], iou_threshold: f64) -> Vec<BoxBEV> {
    nms_indices(boxes, iou_threshold).into_iter().map(|i| boxes[i]).collect()
}

/// Parses the box list text format: one `x y w l yaw score` record per line.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_boxes(text: &str) -> Result<Vec<BoxBEV>> {
    let mut boxes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |reason: String| Error::Parse { line: i + 1, reason };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| fail(format!("not a number: {t:?}"))))
            .collect::<Result<_>>()?;
        let [x, y, w, l, yaw, score] = vals[..] else {
            return Err(fail(format!("expected 6 fields (x y w l yaw score), found {}", vals.len())));
        };
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite value".into()));
        }
        if w < 0.0 || l < 0.0 {
            return Err(fail("negative box extent".into()));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(fail(format!("score {score} outside [0, 1]")));
        }
        boxes.push(BoxBEV::new(x, y, w, l, yaw, score));
    }
    Ok(boxes)
}

pub fn format_boxes(boxes: &[BoxBEV]) -> String {
    let mut out = String::new();
    for b in boxes {
        let _ = writeln!(out, "{} {} {} {} {} {}", b.x, b.y, b.w, b.l, b.yaw, b.score);
    }
    out
}
