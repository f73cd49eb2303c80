//! Per-class average precision over rotated BEV IoU.

use serde::Serialize;

use crate::geometry::rotated_iou;

use super::detector::Detection;
use super::scenario::{GtObject, ObjectClass};

pub const IOU_THRESHOLDS: [f64; 2] = [0.5, 0.7];

/// `ap[t][c]`: AP of class `c` (in [`ObjectClass::ALL`] order) at
/// `IOU_THRESHOLDS[t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ap: [[f64; 3]; 2],
}

impl MetricsReport {
    pub fn ap_at(&self, class: ObjectClass, t: usize) -> f64 {
        self.ap[t][class.index()]
    }

    /// Unweighted mean of the three class APs at threshold index `t`.
    pub fn map(&self, t: usize) -> f64 {
        self.ap[t].iter().sum::<f64>() / 3.0
    }

    pub fn map50(&self) -> f64 {
        self.map(0)
    }

    pub fn map70(&self) -> f64 {
        self.map(1)
    }
}

/// One ranked prediction: `(score, frame, index within frame, true positive)`.
type Ranked = (f64, u64, usize, bool);

/// Pools matches over frames; AP is computed once over the pooled ranking.
#[derive(Debug, Clone, Default)]
pub struct ApAccumulator {
    ranked: [[Vec<Ranked>; 3]; 2],
    n_gt: [usize; 3],
}

impl ApAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Greedy matching: predictions of a class in descending score order (ties
    /// by index) each take the unmatched ground truth of that class with the
    /// highest IoU, counting as true positive when that IoU reaches the
    /// threshold.
    pub fn add_frame(&mut self, frame: u64, pred: &[Detection], gt: &[GtObject]) {
        for class in ObjectClass::ALL {
            let c = class.index();
            let gts: Vec<_> = gt.iter().filter(|g| g.class == class).collect();
            self.n_gt[c] += gts.len();
            let mut order: Vec<usize> = (0..pred.len()).filter(|&i| pred[i].class == class).collect();
            order.sort_by(|&i, &j| pred[j].bbox.score.total_cmp(&pred[i].bbox.score).then(i.cmp(&j)));
            for (t, &thr) in IOU_THRESHOLDS.iter().enumerate() {
                let mut taken = vec![false; gts.len()];
                for &i in &order {
                    let best = gts
                        .iter()
                        .enumerate()
                        .filter(|(g, _)| !taken[*g])
                        .map(|(g, o)| (g, rotated_iou(&pred[i].bbox, &o.bbox)))
                        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
                    let tp = match best {
                        Some((g, iou)) if iou >= thr => {
                            taken[g] = true;
                            true
                        }
                        _ => false,
                    };
                    self.ranked[t][c].push((pred[i].bbox.score, frame, i, tp));
                }
            }
        }
    }

    pub fn finish(&self) -> MetricsReport {
        let mut ap = [[0.0; 3]; 2];
        for (t, row) in ap.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                let mut r = self.ranked[t][c].clone();
                r.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let hits: Vec<bool> = r.iter().map(|e| e.3).collect();
                *v = average_precision(&hits, self.n_gt[c]);
            }
        }
        MetricsReport { ap }
    }
}

/// All-point interpolated AP of a ranked hit list. With no ground truth the
/// AP is 1 when nothing was predicted and 0 otherwise.
pub fn average_precision(ranked_hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if ranked_hits.is_empty() { 1.0 } else { 0.0 };
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked_hits.len());
    for (k, &hit) in ranked_hits.iter().enumerate() {
        tp += hit as usize;
        points.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut envelope = 0.0f64;
    let mut best_after = vec![0.0; points.len()];
    for k in (0..points.len()).rev() {
        envelope = envelope.max(points[k].1);
        best_after[k] = envelope;
    }
    for (k, &(recall, _)) in points.iter().enumerate() {
        ap += (recall - prev_recall) * best_after[k];
        prev_recall = recall;
    }
    ap
}

/// AP/mAP of one frame.
pub fn evaluate_boxes(pred: &[Detection], gt: &[GtObject]) -> MetricsReport {
    let mut acc = ApAccumulator::new();
    acc.add_frame(0, pred, gt);
    acc.finish()
}
