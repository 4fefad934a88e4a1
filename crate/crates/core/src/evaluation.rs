//! Depth, normal and depth/normal consistency metrics, and the per-scene
//! affine-invariant depth histogram.

use std::str::FromStr;

use crate::alignment::{apply_affine, fit_affine_ls, fit_affine_pairs, AffineDepthParams};
use crate::geometry::{angle_deg, normals_from_depth, DepthKind, DepthMap, Intrinsics, Mask, NormalMap, DEFAULT_WINDOW};
use crate::{Error, Real, Result};

pub const DELTA1_THRESHOLD: f64 = 1.25;
pub const NORMAL_ACCURACY_DEG: f64 = 11.25;
pub const HISTOGRAM_BINS: usize = 100;

fn combined_mask<T: Real>(pred: &DepthMap<T>, gt: &DepthMap<T>, mask: Option<&Mask>) -> Result<Mask> {
    let mut m = pred.mask().and(gt.mask())?;
    if let Some(extra) = mask {
        m = m.and(extra)?;
    }
    if m.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(m)
}

fn pairs<T: Real>(pred: &DepthMap<T>, gt: &DepthMap<T>, mask: Option<&Mask>) -> Result<Vec<(T, T)>> {
    let m = combined_mask(pred, gt, mask)?;
    let out: Vec<(T, T)> = pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(m.as_slice())
        .filter_map(|((p, g), ok)| ok.then_some((*p, *g)))
        .collect();
    if let Some((_, g)) = out.iter().find(|(_, g)| !(*g > T::zero())) {
        return Err(Error::invalid(format!("reference depth must be positive, found {g}")));
    }
    Ok(out)
}

/// Mean of `|pred − gt| / gt` over pixels valid in both maps and `mask`.
pub fn absrel<T: Real>(pred: &DepthMap<T>, gt: &DepthMap<T>, mask: Option<&Mask>) -> Result<T> {
    let p = pairs(pred, gt, mask)?;
    let n = T::from_usize_lossy(p.len());
    Ok(p.iter().map(|(a, g)| (*a - *g).abs() / *g).sum::<T>() / n)
}

/// Fraction of pixels with `max(pred/gt, gt/pred) < 1.25`. Non-positive
/// predictions count as misses.
pub fn delta1<T: Real>(pred: &DepthMap<T>, gt: &DepthMap<T>, mask: Option<&Mask>) -> Result<T> {
    let p = pairs(pred, gt, mask)?;
    let thr = T::lit(DELTA1_THRESHOLD);
    let hits = p
        .iter()
        .filter(|(a, g)| *a > T::zero() && (*a / *g).max(*g / *a) < thr)
        .count();
    Ok(T::from_usize_lossy(hits) / T::from_usize_lossy(p.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NormalMetrics<T> {
    pub mean_angular_deg: T,
    pub within_11_25: T,
    pub pixel_count: usize,
}

pub fn normal_metrics<T: Real>(pred: &NormalMap<T>, gt: &NormalMap<T>, mask: Option<&Mask>) -> Result<NormalMetrics<T>> {
    let mut m = pred.mask().and(gt.mask())?;
    if let Some(extra) = mask {
        m = m.and(extra)?;
    }
    let angles: Vec<T> = (0..m.as_slice().len())
        .filter(|i| m.as_slice()[*i])
        .map(|i| angle_deg(&pred.values()[i], &gt.values()[i]))
        .collect();
    if angles.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = T::from_usize_lossy(angles.len());
    let thr = T::lit(NORMAL_ACCURACY_DEG);
    Ok(NormalMetrics {
        mean_angular_deg: angles.iter().copied().sum::<T>() / n,
        within_11_25: T::from_usize_lossy(angles.iter().filter(|a| **a < thr).count()) / n,
        pixel_count: angles.len(),
    })
}

/// How a relative prediction is put on the reference scale before depth
/// metrics are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    /// Use the prediction as is.
    None,
    /// Least-squares scale and shift on depth.
    #[default]
    DepthLeastSquares,
    /// Least-squares scale and shift on inverse depth, then inverted.
    DisparityLeastSquares,
}

impl FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AlignmentMode::None),
            "depth" | "depth_ls" | "depth-ls" => Ok(AlignmentMode::DepthLeastSquares),
            "disparity" | "disparity_ls" | "disparity-ls" => Ok(AlignmentMode::DisparityLeastSquares),
            other => Err(Error::invalid(format!("unknown alignment mode {other:?}"))),
        }
    }
}

/// Puts `pred` on the scale of `gt` according to `mode`.
pub fn align_prediction<T: Real>(
    pred: &DepthMap<T>,
    gt: &DepthMap<T>,
    mask: Option<&Mask>,
    mode: AlignmentMode,
) -> Result<DepthMap<T>> {
    match mode {
        AlignmentMode::None => Ok(pred.clone()),
        AlignmentMode::DepthLeastSquares => apply_affine(pred, &fit_affine_ls(pred, gt, mask)?),
        AlignmentMode::DisparityLeastSquares => {
            let m = combined_mask(pred, gt, mask)?;
            let inv = |d: T| (d > T::zero()).then(|| d.recip());
            let pd = pred.map_valid(DepthKind::Disparity, |d| {
                if pred.kind() == DepthKind::Disparity {
                    Some(d)
                } else {
                    inv(d)
                }
            })?;
            let pr: Vec<(T, T)> = (0..m.as_slice().len())
                .filter(|i| m.as_slice()[*i] && pd.mask().as_slice()[*i])
                .map(|i| (pd.values()[i], gt.values()[i].recip()))
                .collect();
            let p = fit_affine_pairs(&pr)?;
            pd.map_valid(DepthKind::Metric, |x| {
                let disp = p.scale * x + p.shift;
                (disp > T::zero()).then(|| disp.recip())
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GeometricConsistency<T> {
    pub mean_deg: T,
    pub window: usize,
    pub alignment: AffineDepthParams<T>,
    pub pixel_count: usize,
}

/// Aligns `pred_depth` to `gt_depth` by least squares, derives normals from
/// the aligned depth with a `window × window` plane fit, and reports the
/// mean angle to `pred_normal`.
pub fn geometric_consistency<T: Real>(
    pred_depth: &DepthMap<T>,
    pred_normal: &NormalMap<T>,
    gt_depth: &DepthMap<T>,
    k: &Intrinsics<T>,
    mask: Option<&Mask>,
    window: usize,
) -> Result<GeometricConsistency<T>> {
    gt_depth.require_metric("geometric consistency reference")?;
    let mut shared = pred_depth.mask().and(pred_normal.mask())?.and(gt_depth.mask())?;
    if let Some(extra) = mask {
        shared = shared.and(extra)?;
    }
    if shared.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let alignment = fit_affine_ls(pred_depth, gt_depth, Some(&shared))?;
    let aligned = apply_affine(&pred_depth.restrict(&shared)?, &alignment)?;
    let derived = normals_from_depth(&aligned, k, window)?;
    let m = derived.mask().and(&shared)?;
    let angles: Vec<T> = (0..m.as_slice().len())
        .filter(|i| m.as_slice()[*i])
        .map(|i| angle_deg(&derived.values()[i], &pred_normal.values()[i]))
        .collect();
    if angles.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(GeometricConsistency {
        mean_deg: angles.iter().copied().sum::<T>() / T::from_usize_lossy(angles.len()),
        window,
        alignment,
        pixel_count: angles.len(),
    })
}

/// Settings echoed into every [`MetricReport`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalConfig {
    pub alignment_mode: AlignmentMode,
    pub gc_window: usize,
    pub far_clip: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            alignment_mode: AlignmentMode::default(),
            gc_window: DEFAULT_WINDOW,
            far_clip: None,
        }
    }
}

/// Flat metric record. Fractions are in `[0, 1]`, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub absrel: f64,
    pub delta1: f64,
    pub mean_angular: f64,
    pub pct_within_11_25: f64,
    pub gc: f64,
    pub pixel_count: usize,
    #[serde(flatten)]
    pub config: EvalConfig,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("absrel", self.absrel),
            ("delta1", self.delta1),
            ("mean_angular", self.mean_angular),
            ("pct_within_11_25", self.pct_within_11_25),
            ("gc", self.gc),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} = {v} is not a finite non-negative value")));
            }
        }
        if self.delta1 > 1.0 || self.pct_within_11_25 > 1.0 {
            return Err(Error::invalid("fraction above 1"));
        }
        Ok(())
    }
}

/// Full metric suite for a depth + normal prediction against ground truth.
pub fn evaluate<T: Real>(
    pred_depth: &DepthMap<T>,
    pred_normal: &NormalMap<T>,
    gt_depth: &DepthMap<T>,
    gt_normal: &NormalMap<T>,
    k: &Intrinsics<T>,
    mask: Option<&Mask>,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    let gt_depth = match cfg.far_clip {
        Some(far) => crate::geometry::apply_far_plane(gt_depth, T::lit(far))?,
        None => gt_depth.clone(),
    };
    let aligned = align_prediction(pred_depth, &gt_depth, mask, cfg.alignment_mode)?;
    let depth_mask = combined_mask(&aligned, &gt_depth, mask)?;
    let nm = normal_metrics(pred_normal, gt_normal, mask)?;
    let gc = geometric_consistency(pred_depth, pred_normal, &gt_depth, k, mask, cfg.gc_window)?;
    let report = MetricReport {
        absrel: absrel(&aligned, &gt_depth, mask)?.as_f64(),
        delta1: delta1(&aligned, &gt_depth, mask)?.as_f64(),
        mean_angular: nm.mean_angular_deg.as_f64(),
        pct_within_11_25: nm.within_11_25.as_f64(),
        gc: gc.mean_deg.as_f64(),
        pixel_count: depth_mask.count(),
        config: *cfg,
    };
    report.validate()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DepthHistogram {
    /// `HISTOGRAM_BINS + 1` edges, `k / HISTOGRAM_BINS`.
    pub bin_edges: Vec<f64>,
    pub proportions: Vec<f64>,
    pub images_used: usize,
    pub images_skipped: usize,
}

impl DepthHistogram {
    pub fn bin_of(x: f64) -> usize {
        ((x * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
    }

    /// Proportion of the bin containing `x`.
    pub fn proportion_at(&self, x: f64) -> f64 {
        self.proportions[Self::bin_of(x)]
    }

    /// `"1.5%"` style rendering of a proportion.
    pub fn format_percent(p: f64) -> String {
        let s = format!("{:.2}", p * 100.0);
        let s = s.trim_end_matches('0').trim_end_matches('.');
        format!("{s}%")
    }
}

/// Pools per-image min-max normalized depth into 100 equal bins on
/// `[0, 1]`. Pixels beyond `far_clip` are dropped first; images left with
/// fewer than two valid pixels or a constant depth are skipped and counted.
pub fn scene_depth_histogram<T: Real>(depths: &[DepthMap<T>], far_clip: Option<T>) -> Result<DepthHistogram> {
    if let Some(f) = far_clip {
        if !(f > T::zero()) {
            return Err(Error::invalid(format!("far clip must be positive, got {f}")));
        }
    }
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    let (mut used, mut skipped) = (0, 0);
    for d in depths {
        let vals: Vec<T> = d
            .valid_values()
            .filter(|v| far_clip.is_none_or(|f| *v <= f))
            .collect();
        let lo = vals.iter().copied().fold(T::infinity(), T::min);
        let hi = vals.iter().copied().fold(T::neg_infinity(), T::max);
        if vals.len() < 2 || !(hi > lo) {
            skipped += 1;
            continue;
        }
        used += 1;
        let range = hi - lo;
        for v in vals {
            counts[DepthHistogram::bin_of(((v - lo) / range).as_f64())] += 1;
        }
    }
    if used == 0 {
        return Err(Error::invalid(format!(
            "no usable depth maps for the histogram ({skipped} skipped as degenerate)"
        )));
    }
    let total = counts.iter().sum::<u64>() as f64;
    Ok(DepthHistogram {
        bin_edges: (0..=HISTOGRAM_BINS).map(|k| k as f64 / HISTOGRAM_BINS as f64).collect(),
        proportions: counts.iter().map(|c| *c as f64 / total).collect(),
        images_used: used,
        images_skipped: skipped,
    })
}
