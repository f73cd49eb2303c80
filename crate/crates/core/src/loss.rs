//! Region-weighted cosine alignment between synthesized and teacher features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::RegionMasks;
use crate::tensor::{FeatureMap, Scalar};

/// Norms below this make a cell's cosine 0.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub a_det: f64,
    pub a_align: f64,
    pub a_obj: f64,
    pub a_bg: f64,
    pub a_cls: f64,
    pub a_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { a_det: 1.0, a_align: 1.0, a_obj: 1.0, a_bg: 0.5, a_cls: 1.0, a_reg: 2.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a_det, self.a_align, self.a_obj, self.a_bg, self.a_cls, self.a_reg];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

fn check_dims<T: Scalar>(fhat: &FeatureMap<T>, fstar: &FeatureMap<T>, omega: &FeatureMap<T>) -> Result<()> {
    let (h, w, _) = fhat.shape();
    if fhat.shape() != fstar.shape() || omega.shape() != (h, w, 1) {
        return Err(Error::shape(format!(
            "alignment needs equal features and a single-channel mask, got {:?}, {:?}, {:?}",
            fhat.shape(),
            fstar.shape(),
            omega.shape()
        )));
    }
    Ok(())
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn mask_weight<T: Scalar>(omega: &FeatureMap<T>) -> T {
    omega.data().iter().fold(T::zero(), |acc, &m| acc + m).max(T::one())
}

/// `Σ_{Ω} (1 − cos(f̂, f*)) / max(1, ‖Ω‖₁)`, cosine taken over channels per cell.
pub fn cos_align<T: Scalar>(fhat: &FeatureMap<T>, fstar: &FeatureMap<T>, omega: &FeatureMap<T>) -> Result<T> {
    check_dims(fhat, fstar, omega)?;
    let floor = T::from_f64(NORM_FLOOR);
    let mut sum = T::zero();
    for (i, &m) in omega.data().iter().enumerate() {
        if m == T::zero() {
            continue;
        }
        let (r, c) = (i / fhat.cols(), i % fhat.cols());
        let (a, b) = (fhat.cell(r, c), fstar.cell(r, c));
        let (na, nb) = (norm(a), norm(b));
        let cos = if na < floor || nb < floor { T::zero() } else { dot(a, b) / (na * nb) };
        sum = sum + m * (T::one() - cos);
    }
    Ok(sum / mask_weight(omega))
}

/// `α_obj · L(Ω_obj) + α_bg · L(Ω_bg)`.
pub fn align_loss_agent(fhat: &FeatureMap, fstar: &FeatureMap, masks: &RegionMasks, w: &LossWeights) -> Result<f64> {
    let obj = cos_align(fhat, fstar, &masks.obj)? as f64;
    let bg = cos_align(fhat, fstar, &masks.bg)? as f64;
    Ok(w.a_obj * obj + w.a_bg * bg)
}

/// Detection loss of the frozen head: `α_cls · L_cls + α_reg · L_reg`.
pub fn detection_loss(cls: f64, reg: f64, w: &LossWeights) -> f64 {
    w.a_cls * cls + w.a_reg * reg
}

/// `α_det · L_det + α_align · mean_i L_align^(i)`; the mean of no agents is 0.
pub fn total_loss(det_loss: f64, per_agent_align: &[f64], w: &LossWeights) -> f64 {
    let align = if per_agent_align.is_empty() {
        0.0
    } else {
        per_agent_align.iter().sum::<f64>() / per_agent_align.len() as f64
    };
    w.a_det * det_loss + w.a_align * align
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignGrad<T: Scalar = f32> {
    pub grad: FeatureMap<T>,
    /// Masked cells with a vanishing norm; their gradient is left at zero.
    pub degenerate_cells: usize,
}

/// Analytic `∂ cos_align / ∂ f̂`. Per masked cell with `a = f̂`, `b = f*`:
/// `−m/N · (b / (|a||b|) − cos · a / |a|²)`.
pub fn grad_cos_align<T: Scalar>(
    fhat: &FeatureMap<T>,
    fstar: &FeatureMap<T>,
    omega: &FeatureMap<T>,
) -> Result<AlignGrad<T>> {
    check_dims(fhat, fstar, omega)?;
    let (h, w, ch) = fhat.shape();
    let floor = T::from_f64(NORM_FLOOR);
    let n = mask_weight(omega);
    let mut grad = FeatureMap::zeros(h, w, ch);
    let mut degenerate_cells = 0;
    for (i, &m) in omega.data().iter().enumerate() {
        if m == T::zero() {
            continue;
        }
        let (r, c) = (i / w, i % w);
        let (a, b) = (fhat.cell(r, c), fstar.cell(r, c));
        let (na, nb) = (norm(a), norm(b));
        if na < floor || nb < floor {
            degenerate_cells += 1;
            continue;
        }
        let cos = dot(a, b) / (na * nb);
        let base = grad.index(r, c, 0);
        for k in 0..ch {
            let g = -(b[k] / (na * nb) - cos * a[k] / (na * na)) * m / n;
            grad.data_mut()[base + k] = g;
        }
    }
    Ok(AlignGrad { grad, degenerate_cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn random(rows: usize, cols: usize, ch: usize, rng: &mut SplitMix64) -> FeatureMap<f64> {
        FeatureMap::from_fn(rows, cols, ch, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_mask(rows: usize, cols: usize, p: f64, rng: &mut SplitMix64) -> FeatureMap<f64> {
        FeatureMap::from_fn(rows, cols, 1, |_, _, _| rng.random_bool(p) as u8 as f64)
    }

    #[test]
    fn reference_values() {
        let mut rng = SplitMix64::seed_from_u64(1);
        let f = random(4, 3, 5, &mut rng);
        let ones = FeatureMap::filled(4, 3, 1, 1.0);
        assert!(cos_align(&f, &f, &ones).unwrap().abs() < 1e-12);
        assert!((cos_align(&f.map(|v| -v), &f, &ones).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(cos_align(&f, &f.map(|v| -v), &FeatureMap::zeros(4, 3, 1)).unwrap(), 0.0);
    }

    #[test]
    fn zero_vectors_count_as_orthogonal() {
        let a = FeatureMap::<f64>::zeros(1, 2, 3);
        let b = FeatureMap::filled(1, 2, 3, 1.0);
        let m = FeatureMap::filled(1, 2, 1, 1.0);
        assert_eq!(cos_align(&a, &b, &m).unwrap(), 1.0);
        let g = grad_cos_align(&a, &b, &m).unwrap();
        assert_eq!(g.degenerate_cells, 2);
        assert!(g.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bounds_and_scale_invariance() {
        let mut rng = SplitMix64::seed_from_u64(2);
        for _ in 0..100 {
            let a = random(5, 4, 6, &mut rng);
            let b = random(5, 4, 6, &mut rng);
            let m = random_mask(5, 4, 0.5, &mut rng);
            let l = cos_align(&a, &b, &m).unwrap();
            assert!((0.0..=2.0).contains(&l));
            let c = rng.random_range(0.01..100.0);
            assert!((cos_align(&a.map(|v| c * v), &b, &m).unwrap() - l).abs() < 1e-6);
        }
    }

    #[test]
    fn disjoint_masks_add() {
        let mut rng = SplitMix64::seed_from_u64(3);
        for _ in 0..50 {
            let a = random(6, 6, 4, &mut rng);
            let b = random(6, 6, 4, &mut rng);
            let split = random_mask(6, 6, 0.5, &mut rng);
            let keep = random_mask(6, 6, 0.8, &mut rng);
            let ma = FeatureMap::from_fn(6, 6, 1, |r, c, _| keep.get(r, c, 0) * split.get(r, c, 0));
            let mb = FeatureMap::from_fn(6, 6, 1, |r, c, _| keep.get(r, c, 0) * (1.0 - split.get(r, c, 0)));
            let (na, nb, nu) =
                (ma.data().iter().sum::<f64>(), mb.data().iter().sum::<f64>(), keep.data().iter().sum::<f64>());
            if na < 1.0 || nb < 1.0 {
                continue;
            }
            let lhs = na * cos_align(&a, &b, &ma).unwrap() + nb * cos_align(&a, &b, &mb).unwrap();
            let rhs = nu * cos_align(&a, &b, &keep).unwrap();
            assert!((lhs - rhs).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = SplitMix64::seed_from_u64(4);
        let h = 1e-6;
        for _ in 0..50 {
            let a = random(3, 4, 5, &mut rng);
            let b = random(3, 4, 5, &mut rng);
            let m = random_mask(3, 4, 0.6, &mut rng);
            let g = grad_cos_align(&a, &b, &m).unwrap();
            assert_eq!(g.degenerate_cells, 0);
            let mut fd = Vec::with_capacity(a.data().len());
            for i in 0..a.data().len() {
                let mut plus = a.clone();
                plus.data_mut()[i] += h;
                let mut minus = a.clone();
                minus.data_mut()[i] -= h;
                fd.push((cos_align(&plus, &b, &m).unwrap() - cos_align(&minus, &b, &m).unwrap()) / (2.0 * h));
            }
            let diff: f64 = g.grad.data().iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = fd.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
            assert!(diff / scale <= 1e-4, "relative error {}", diff / scale);
        }
    }

    #[test]
    fn gradient_at_equality_has_no_radial_part() {
        let mut rng = SplitMix64::seed_from_u64(5);
        let a = random(4, 4, 6, &mut rng);
        let m = FeatureMap::filled(4, 4, 1, 1.0);
        let g = grad_cos_align(&a, &a, &m).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert!(dot(g.grad.cell(r, c), a.cell(r, c)).abs() < 1e-12);
            }
        }
        assert!(norm(g.grad.data()) <= 1e-6);
    }

    #[test]
    fn unmasked_cells_have_zero_gradient() {
        let mut rng = SplitMix64::seed_from_u64(6);
        let a = random(4, 4, 3, &mut rng);
        let b = random(4, 4, 3, &mut rng);
        let m = random_mask(4, 4, 0.5, &mut rng);
        let g = grad_cos_align(&a, &b, &m).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                if m.get(r, c, 0) == 0.0 {
                    assert!(g.grad.cell(r, c).iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn agent_and_total_weighting() {
        let w = LossWeights::default();
        assert_eq!((w.a_obj, w.a_bg, w.a_det, w.a_align, w.a_cls, w.a_reg), (1.0, 0.5, 1.0, 1.0, 1.0, 2.0));
        assert!((total_loss(0.7, &[0.2, 0.4], &w) - 1.0).abs() < 1e-12);
        assert_eq!(total_loss(0.7, &[], &w), 0.7);
        let ones = LossWeights { a_det: 1.0, a_align: 1.0, ..w };
        assert_eq!(total_loss(0.5, &[0.25], &ones), 0.75);
        assert_eq!(detection_loss(0.5, 0.25, &w), 1.0);

        // Teacher equals the synthesized feature on background cells only.
        let mut rng = SplitMix64::seed_from_u64(7);
        let fstar: FeatureMap = random(4, 4, 3, &mut rng).cast();
        let obj = FeatureMap::from_fn(4, 4, 1, |r, c, _| (r < 2 && c < 2) as u8 as f32);
        let masks = RegionMasks { fg: obj.clone(), bg: obj.map(|v| 1.0 - v), obj };
        let fhat = FeatureMap::from_fn(4, 4, 3, |r, c, k| {
            if masks.obj.get(r, c, 0) == 1.0 {
                -fstar.get(r, c, k)
            } else {
                fstar.get(r, c, k)
            }
        });
        let l = align_loss_agent(&fhat, &fstar, &masks, &w).unwrap();
        assert!((l - w.a_obj * cos_align(&fhat, &fstar, &masks.obj).unwrap() as f64).abs() < 1e-6);
        assert!((l - 2.0).abs() < 1e-5);
        assert!(align_loss_agent(&fstar, &fstar, &masks, &w).unwrap().abs() < 1e-6);
    }

    #[test]
    fn weights_reject_negative() {
        assert!(LossWeights { a_bg: -0.1, ..Default::default() }.validate().is_err());
        let parsed: LossWeights = serde_json::from_str(r#"{"a_bg": 0.25}"#).unwrap();
        assert_eq!(parsed.a_bg, 0.25);
        assert_eq!(parsed.a_reg, 2.0);
        assert!(serde_json::from_str::<LossWeights>(r#"{"a_foo": 1}"#).is_err());
    }
}
