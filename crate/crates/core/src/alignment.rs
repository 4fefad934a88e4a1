//! Affine alignment of relative depth.
//!
//! Two routes recover `(scale, shift)` such that `scale * d + shift` is
//! (pseudo-)metric: a closed-form least-squares fit against reference depth,
//! and a search that makes normals derived from the aligned depth agree with
//! a predicted normal map.
//!
//! Normals of a depth map are unchanged by a global rescaling of the scene,
//! so the normal-consistency objective only depends on `shift / scale`.
//! The search therefore runs over that ratio and reports the result in the
//! `scale = 1` gauge.

use rayon::prelude::*;

use crate::geometry::{
    angle_deg, normals_from_depth_with, DepthKind, DepthMap, Intrinsics, Mask, NormalEstimation,
    NormalMap,
};
use crate::{Error, Real, Result};

/// `metric = scale * relative + shift`, with `scale > 0`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AffineDepthParams<T> {
    pub scale: T,
    pub shift: T,
}

impl<T: Real> AffineDepthParams<T> {
    pub fn new(scale: T, shift: T) -> Result<Self> {
        if !(scale > T::zero()) || !scale.is_finite() || !shift.is_finite() {
            return Err(Error::invalid(format!(
                "affine params need finite scale > 0 and finite shift, got ({scale}, {shift})"
            )));
        }
        Ok(AffineDepthParams { scale, shift })
    }

    pub fn identity() -> Self {
        AffineDepthParams {
            scale: T::one(),
            shift: T::zero(),
        }
    }
}

/// Least-squares `(s, t) = argmin Σ (s·pred + t − gt)²` over the pixels
/// valid in `pred`, `gt` and the optional `mask`.
pub fn fit_affine_ls<T: Real>(
    pred: &DepthMap<T>,
    gt: &DepthMap<T>,
    mask: Option<&Mask>,
) -> Result<AffineDepthParams<T>> {
    let mut m = pred.mask().and(gt.mask())?;
    if let Some(extra) = mask {
        m = m.and(extra)?;
    }
    let pairs: Vec<(T, T)> = pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(m.as_slice())
        .filter_map(|((p, g), ok)| ok.then_some((*p, *g)))
        .collect();
    fit_affine_pairs(&pairs)
}

pub(crate) fn fit_affine_pairs<T: Real>(pairs: &[(T, T)]) -> Result<AffineDepthParams<T>> {
    if pairs.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = T::from_usize_lossy(pairs.len());
    let mean_x = pairs.iter().map(|p| p.0).sum::<T>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<T>() / n;
    let (mut sxx, mut sxy) = (T::zero(), T::zero());
    for (x, y) in pairs {
        let dx = *x - mean_x;
        sxx += dx * dx;
        sxy += dx * (*y - mean_y);
    }
    let scale_ref = pairs.iter().map(|p| p.0 * p.0).sum::<T>();
    if pairs.len() < 2 || !(sxx > scale_ref * T::epsilon() * T::epsilon()) {
        return Err(Error::Singular(
            "prediction is constant over the mask; scale and shift are undetermined".into(),
        ));
    }
    let s = sxy / sxx;
    let t = mean_y - s * mean_x;
    if !(s > T::zero()) {
        return Err(Error::Singular(format!(
            "least-squares scale {s} is not positive (prediction anti-correlated with reference)"
        )));
    }
    AffineDepthParams::new(s, t)
}

/// Elementwise `scale * d + shift`; non-positive results become invalid.
pub fn apply_affine<T: Real>(depth: &DepthMap<T>, p: &AffineDepthParams<T>) -> Result<DepthMap<T>> {
    depth.map_valid(DepthKind::Metric, |d| {
        let m = p.scale * d + p.shift;
        (m > T::zero() && m.is_finite()).then_some(m)
    })
}

/// Search configuration for [`optimize_scale_shift_by_normal`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScaleShiftSearch {
    pub normals: NormalEstimation,
    /// Coarse grid size over the clearance `shift + min(d)`.
    pub grid_points: usize,
    /// Clearance range as multiples of the depth reference (log-uniform).
    pub clearance_range: (f64, f64),
    /// Golden-section refinement stops at this relative bracket width.
    pub refine_tol: f64,
    /// Objective spread over the grid below which the problem is degenerate.
    pub min_variation_deg: f64,
}

impl Default for ScaleShiftSearch {
    fn default() -> Self {
        ScaleShiftSearch {
            normals: NormalEstimation::default(),
            grid_points: 121,
            clearance_range: (1e-3, 1e2),
            refine_tol: 1e-7,
            min_variation_deg: 0.1,
        }
    }
}

/// Result of the normal-consistency alignment.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct NormalAlignment<T> {
    /// Gauge-fixed parameters (`scale = 1`).
    pub params: AffineDepthParams<T>,
    /// Mean angular disagreement at `params`, degrees.
    pub objective_deg: T,
    /// `max - min` of the objective over the coarse grid, degrees.
    pub grid_variation_deg: T,
    /// Coarse grid as `(shift, objective)` pairs in the `scale = 1` gauge.
    pub grid: Vec<(T, T)>,
    pub evaluations: usize,
}

/// Mean angle between normals derived from the metric `depth` and
/// `pred_normal`, over pixels whose full plane-fit window is valid in both.
/// Returns `+inf` when no pixel qualifies.
pub fn normal_consistency<T: Real>(
    depth: &DepthMap<T>,
    pred_normal: &NormalMap<T>,
    k: &Intrinsics<T>,
    cfg: &NormalEstimation,
) -> Result<T> {
    let interior = depth.mask().and(pred_normal.mask())?.erode(cfg.radius());
    let derived = normals_from_depth_with(depth, k, cfg)?;
    Ok(mean_angle_on(&derived, pred_normal, &interior))
}

fn mean_angle_on<T: Real>(a: &NormalMap<T>, b: &NormalMap<T>, mask: &Mask) -> T {
    let mut sum = T::zero();
    let mut n = 0usize;
    for v in 0..mask.height() {
        for u in 0..mask.width() {
            if !mask.get(u, v) {
                continue;
            }
            if let (Some(x), Some(y)) = (a.get(u, v), b.get(u, v)) {
                sum += angle_deg(&x, &y);
                n += 1;
            }
        }
    }
    if n == 0 {
        T::infinity()
    } else {
        sum / T::from_usize_lossy(n)
    }
}

/// Recovers the affine correction of `pred_depth` that makes its derived
/// normals agree best with `pred_normal`.
///
/// Coarse log-uniform grid over the clearance `shift + min(d)` followed by a
/// golden-section refinement around the best grid cell. Reports
/// [`Error::Unidentifiable`] when the objective is flat over the grid.
pub fn optimize_scale_shift_by_normal<T: Real>(
    pred_depth: &DepthMap<T>,
    pred_normal: &NormalMap<T>,
    k: &Intrinsics<T>,
    cfg: &ScaleShiftSearch,
) -> Result<NormalAlignment<T>> {
    cfg.normals.validate()?;
    if cfg.grid_points < 3 {
        return Err(Error::invalid("scale/shift grid needs at least 3 points"));
    }
    let (lo, hi) = cfg.clearance_range;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::invalid("clearance range must satisfy 0 < lo < hi"));
    }
    k.check_size(pred_depth.width(), pred_depth.height())?;
    let shared = pred_depth.mask().and(pred_normal.mask())?;
    let base = pred_depth.restrict(&shared)?.relabel(DepthKind::AffineInvariant)?;
    let mut vals: Vec<T> = base.valid_values().collect();
    if vals.is_empty() {
        return Err(Error::EmptyMask);
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let d_min = vals[0];
    let d_max = vals[vals.len() - 1];
    let d_med = vals[vals.len() / 2];
    let reference = (d_max - d_min).max(d_med.abs());
    if !(reference > T::zero()) {
        return Err(Error::Unidentifiable { variation_deg: 0.0 });
    }

    let objective = |log_clearance: f64| -> T {
        let shift = T::lit(log_clearance.exp()) * reference - d_min;
        let Ok(shifted) = base.map_valid(DepthKind::Metric, |d| {
            let m = d + shift;
            (m > T::zero()).then_some(m)
        }) else {
            return T::infinity();
        };
        normal_consistency(&shifted, pred_normal, k, &cfg.normals).unwrap_or(T::infinity())
    };
    let to_shift = |log_clearance: f64| T::lit(log_clearance.exp()) * reference - d_min;

    let (llo, lhi) = (lo.ln(), hi.ln());
    let step = (lhi - llo) / (cfg.grid_points - 1) as f64;
    let nodes: Vec<f64> = (0..cfg.grid_points).map(|i| llo + step * i as f64).collect();
    let values: Vec<T> = nodes.par_iter().map(|x| objective(*x)).collect();
    let finite: Vec<T> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::EmptyMask);
    }
    let gmin = finite.iter().copied().fold(T::infinity(), T::min);
    let gmax = finite.iter().copied().fold(T::neg_infinity(), T::max);
    let variation = gmax - gmin;
    if variation < T::lit(cfg.min_variation_deg) {
        return Err(Error::Unidentifiable {
            variation_deg: variation.as_f64(),
        });
    }
    let best = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let a = nodes[best.saturating_sub(1)];
    let b = nodes[(best + 1).min(nodes.len() - 1)];
    let (x_ref, f_ref, evals) = golden_section(&objective, a, b, cfg.refine_tol);
    let (x_best, f_best) = if f_ref <= values[best] {
        (x_ref, f_ref)
    } else {
        (nodes[best], values[best])
    };

    Ok(NormalAlignment {
        params: AffineDepthParams::new(T::one(), to_shift(x_best))?,
        objective_deg: f_best,
        grid_variation_deg: variation,
        grid: nodes.iter().zip(&values).map(|(x, v)| (to_shift(*x), *v)).collect(),
        evaluations: cfg.grid_points + evals,
    })
}

fn golden_section<T: Real>(f: &impl Fn(f64) -> T, mut a: f64, mut b: f64, tol: f64) -> (f64, T, usize) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evals = 2;
    while (b - a).abs() > tol * (1.0 + a.abs().max(b.abs())) && evals < 200 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
        evals += 1;
    }
    if fc <= fd {
        (c, fc, evals)
    } else {
        (d, fd, evals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{plane_scene, sphere_cap};
    use crate::geometry::vec3;
    use proptest::prelude::*;

    fn depth(v: &[f64]) -> DepthMap<f64> {
        DepthMap::new(v.len(), 1, v.to_vec(), DepthKind::Metric).unwrap()
    }

    #[test]
    fn exact_scaling_and_shift() {
        let p = fit_affine_ls(&depth(&[2.0, 4.0, 6.0]), &depth(&[1.0, 2.0, 3.0]), None).unwrap();
        assert!((p.scale - 0.5).abs() < 1e-15 && p.shift.abs() < 1e-15);
        let p = fit_affine_ls(&depth(&[2.0, 3.0, 4.0]), &depth(&[1.0, 2.0, 3.0]), None).unwrap();
        assert!((p.scale - 1.0).abs() < 1e-15 && (p.shift + 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_and_empty_inputs() {
        assert!(matches!(
            fit_affine_ls(&depth(&[2.0, 2.0, 2.0]), &depth(&[1.0, 2.0, 3.0]), None),
            Err(Error::Singular(_))
        ));
        let m = Mask::empty(3, 1);
        assert!(matches!(
            fit_affine_ls(&depth(&[1.0, 2.0, 3.0]), &depth(&[1.0, 2.0, 3.0]), Some(&m)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn least_squares_beats_a_grid_around_the_solution() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pred: Vec<f64> = (0..200).map(|_| rng.random_range(0.5..5.0)).collect();
        let gt: Vec<f64> = pred.iter().map(|p| 1.7 * p + 0.3 + rng.random_range(-0.2..0.2)).collect();
        let p = fit_affine_ls(&depth(&pred), &depth(&gt), None).unwrap();
        let res = |s: f64, t: f64| -> f64 { pred.iter().zip(&gt).map(|(x, y)| (s * x + t - y).powi(2)).sum() };
        let best = res(p.scale, p.shift);
        for i in 0..100 {
            for j in 0..100 {
                let s = p.scale * (0.5 + i as f64 / 99.0);
                let t = p.shift + p.scale.abs().max(1.0) * (-0.5 + j as f64 / 99.0);
                assert!(best <= res(s, t) + 1e-12);
            }
        }
    }

    #[test]
    fn apply_affine_examples() {
        let d = depth(&[3.0, 5.0]);
        assert_eq!(apply_affine(&d, &AffineDepthParams::identity()).unwrap(), d);
        let p = apply_affine(&d, &AffineDepthParams::new(2.0, 1.0).unwrap()).unwrap();
        assert_eq!(p.get(0, 0), Some(7.0));
        let p = apply_affine(&d, &AffineDepthParams::new(1.0, -10.0).unwrap()).unwrap();
        assert_eq!(p.get(1, 0), None);
        assert!(AffineDepthParams::new(-1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn exact_affine_relation_is_recovered(
            s in 0.01f64..100.0, t in -50.0f64..50.0,
            pred in proptest::collection::vec(0.1f64..10.0, 3..64),
        ) {
            prop_assume!(pred.iter().any(|p| (p - pred[0]).abs() > 1e-3));
            let gt: Vec<f64> = pred.iter().map(|p| s * p + t).collect();
            let pm = DepthMap::new(pred.len(), 1, pred.clone(), DepthKind::AffineInvariant).unwrap();
            let gm = DepthMap::new(gt.len(), 1, gt, DepthKind::AffineInvariant).unwrap();
            let p = fit_affine_ls(&pm, &gm, None).unwrap();
            prop_assert!((p.scale - s).abs() <= 1e-9 * s.max(1.0));
            prop_assert!((p.shift - t).abs() <= 1e-9 * (t.abs() + s * 10.0).max(1.0));
        }
    }

    #[test]
    fn fixed_point_when_depth_already_consistent() {
        let scene = sphere_cap::<f64>(64).unwrap();
        let pred = scene.depth.clone().relabel(DepthKind::AffineInvariant).unwrap();
        let fit = optimize_scale_shift_by_normal(&pred, &scene.normals, &scene.intrinsics, &Default::default()).unwrap();
        assert_eq!(fit.params.scale, 1.0);
        assert!(fit.params.shift.abs() < 0.05, "shift {}", fit.params.shift);
        for (_, v) in &fit.grid {
            assert!(fit.objective_deg <= *v);
        }
    }

    #[test]
    fn fronto_parallel_scene_is_unidentifiable() {
        let k = Intrinsics::centered(40.0, 32, 32).unwrap();
        let s = plane_scene(k, [0.0, 0.0, 1.0], 2.0).unwrap();
        let pred = s.depth.relabel(DepthKind::AffineInvariant).unwrap();
        let r = optimize_scale_shift_by_normal(&pred, &s.normals, &k, &Default::default());
        assert!(matches!(r, Err(Error::Unidentifiable { .. })), "{r:?}");
    }

    #[test]
    fn objective_is_invariant_to_a_shared_rotation() {
        let scene = sphere_cap::<f64>(48).unwrap();
        let cfg = NormalEstimation::default();
        let axis = vec3::normalize(&[0.3, -0.5, 0.8]).unwrap();
        let rot = |n: [f64; 3]| vec3::rotate(&n, &axis, 0.7);
        let interior = scene.depth.mask().and(scene.normals.mask()).unwrap().erode(cfg.radius());
        let pred_rot = scene.normals.map_valid(rot).unwrap();
        let mut plain = Vec::new();
        let mut rotated = Vec::new();
        for shift in [-1.5, -1.0, 0.0, 0.5, 2.0, 10.0] {
            let d = scene.depth.map_valid(DepthKind::Metric, |d| Some(d + shift)).unwrap();
            let derived = normals_from_depth_with(&d, &scene.intrinsics, &cfg).unwrap();
            plain.push(mean_angle_on(&derived, &scene.normals, &interior));
            rotated.push(mean_angle_on(&derived.map_valid(rot).unwrap(), &pred_rot, &interior));
        }
        for (a, b) in plain.iter().zip(&rotated) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let argmin = |v: &[f64]| v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmin(&plain), argmin(&rotated));
    }
}
