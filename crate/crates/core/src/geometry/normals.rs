//! Normal estimation from metric depth by windowed least-squares plane fits.

use rayon::prelude::*;

use super::vec3::{self, Vec3};
use super::{DepthMap, Intrinsics, Mask, NormalMap};
use crate::{Error, Real, Result};

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_MIN_VALID_FRACTION: f64 = 0.5;

/// Plane-fit stencil configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalEstimation {
    /// Odd side length of the square window, at least 3.
    pub window: usize,
    /// Fraction of the full window that must hold valid depth.
    pub min_valid_fraction: f64,
}

impl Default for NormalEstimation {
    fn default() -> Self {
        NormalEstimation {
            window: DEFAULT_WINDOW,
            min_valid_fraction: DEFAULT_MIN_VALID_FRACTION,
        }
    }
}

impl NormalEstimation {
    pub fn with_window(window: usize) -> Self {
        NormalEstimation {
            window,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::invalid(format!(
                "normal window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.min_valid_fraction > 0.0 && self.min_valid_fraction <= 1.0) {
            return Err(Error::invalid("min_valid_fraction must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        self.window / 2
    }

    fn min_points(&self) -> usize {
        let full = (self.window * self.window) as f64;
        ((self.min_valid_fraction * full).ceil() as usize).max(3)
    }
}

/// Normals with the default 5×5 window.
pub fn normals_from_depth<T: Real>(
    depth: &DepthMap<T>,
    k: &Intrinsics<T>,
    window: usize,
) -> Result<NormalMap<T>> {
    normals_from_depth_with(depth, k, &NormalEstimation::with_window(window))
}

pub fn normals_from_depth_with<T: Real>(
    depth: &DepthMap<T>,
    k: &Intrinsics<T>,
    cfg: &NormalEstimation,
) -> Result<NormalMap<T>> {
    cfg.validate()?;
    depth.require_metric("normals_from_depth")?;
    k.check_size(depth.width(), depth.height())?;
    if depth.mask().count() == 0 {
        return Err(Error::EmptyMask);
    }
    let (w, h) = (depth.width(), depth.height());
    let r = cfg.radius();
    let min_points = cfg.min_points();

    let rows: Vec<Vec<Option<Vec3<T>>>> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut row = Vec::with_capacity(w);
            let mut window_pts: Vec<Vec3<T>> = Vec::with_capacity(cfg.window * cfg.window);
            for u in 0..w {
                let Some(d0) = depth.get(u, v) else {
                    row.push(None);
                    continue;
                };
                let center = vec3::scale(&k.ray(u, v), d0);
                window_pts.clear();
                for y in v.saturating_sub(r)..=(v + r).min(h - 1) {
                    for x in u.saturating_sub(r)..=(u + r).min(w - 1) {
                        if let Some(d) = depth.get(x, y) {
                            let p = vec3::scale(&k.ray(x, y), d);
                            window_pts.push(vec3::sub(&p, &center));
                        }
                    }
                }
                if window_pts.len() < min_points {
                    row.push(None);
                    continue;
                }
                row.push(fit_plane_normal(&window_pts).map(|n| orient(n, &center)));
            }
            row
        })
        .collect();

    let mut values = Vec::with_capacity(w * h);
    let mut bits = Vec::with_capacity(w * h);
    for n in rows.into_iter().flatten() {
        bits.push(n.is_some());
        values.push(n.unwrap_or([T::zero(); 3]));
    }
    NormalMap::with_mask(values, Mask::new(w, h, bits)?)
}

/// Camera-facing surfaces get `n_z > 0`; at exactly `n_z = 0` the sign of
/// `n · p` decides.
fn orient<T: Real>(n: Vec3<T>, p: &Vec3<T>) -> Vec3<T> {
    let flip = if n[2] != T::zero() {
        n[2] < T::zero()
    } else {
        vec3::dot(&n, p) < T::zero()
    };
    if flip {
        [-n[0], -n[1], -n[2]]
    } else {
        n
    }
}

/// Total least-squares plane normal through `points` (unit, unoriented).
///
/// The scatter matrix is accumulated about the first point offset given by
/// the caller and corrected to the centroid, so coordinates that are exactly
/// equal across the window contribute exact zeros. Returns `None` when the
/// points are (numerically) collinear or coincident.
pub fn fit_plane_normal<T: Real>(points: &[Vec3<T>]) -> Option<Vec3<T>> {
    if points.len() < 3 {
        return None;
    }
    let n = T::from_usize_lossy(points.len());
    let mut sum = [T::zero(); 3];
    let mut outer = [[T::zero(); 3]; 3];
    for p in points {
        for i in 0..3 {
            sum[i] += p[i];
            for j in i..3 {
                outer[i][j] += p[i] * p[j];
            }
        }
    }
    let mut cov = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let c = outer[i][j] - sum[i] * sum[j] / n;
            cov[i][j] = c;
            cov[j][i] = c;
        }
    }
    let (evals, evecs) = symmetric_eigen3(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| evals[*a].partial_cmp(&evals[*b]).unwrap_or(std::cmp::Ordering::Equal));
    let (lo, mid, hi) = (evals[order[0]], evals[order[1]], evals[order[2]]);
    if !(hi > T::zero()) || !lo.is_finite() || mid <= hi * T::epsilon() * T::lit(1e3) {
        return None;
    }
    let c = order[0];
    vec3::normalize(&[evecs[0][c], evecs[1][c], evecs[2][c]])
}

/// Cyclic Jacobi eigen-decomposition of a symmetric 3×3 matrix. Returns the
/// eigenvalues and a matrix whose columns are the eigenvectors. Rotations
/// are skipped for off-diagonal entries that are exactly zero, so already
/// decoupled axes stay exact.
fn symmetric_eigen3<T: Real>(mut a: [[T; 3]; 3]) -> ([T; 3], [[T; 3]; 3]) {
    let mut v = [[T::zero(); 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }
    let two = T::lit(2.0);
    for _sweep in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off == T::zero() || off <= scale * T::epsilon() * T::lit(0.01) {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (two * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            for row in a.iter_mut() {
                let (akp, akq) = (row[p], row[q]);
                row[p] = c * akp - s * akq;
                row[q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            a[p][q] = T::zero();
            a[q][p] = T::zero();
            for row in v.iter_mut() {
                let (vkp, vkq) = (row[p], row[q]);
                row[p] = c * vkp - s * vkq;
                row[q] = s * vkp + c * vkq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angle_deg, DepthKind};

    fn k(f: f64, w: usize, h: usize) -> Intrinsics<f64> {
        Intrinsics::centered(f, w, h).unwrap()
    }

    #[test]
    fn jacobi_diagonalizes() {
        let m = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.0]];
        let (e, v) = symmetric_eigen3(m);
        for c in 0..3 {
            for r in 0..3 {
                let av: f64 = (0..3).map(|j| m[r][j] * v[j][c]).sum();
                assert!((av - e[c] * v[r][c]).abs() < 1e-12);
            }
        }
        let tr: f64 = e.iter().sum();
        assert!((tr - 8.0).abs() < 1e-12);
    }

    #[test]
    fn constant_depth_gives_exact_forward_normal() {
        for depth in [0.1, 1.0, 3.7, 42.0] {
            let d = DepthMap::new(16, 12, vec![depth; 192], DepthKind::Metric).unwrap();
            let n = normals_from_depth(&d, &k(20.0, 16, 12), 5).unwrap();
            for v in 2..10 {
                for u in 2..14 {
                    assert_eq!(n.get(u, v), Some([0.0, 0.0, 1.0]), "({u},{v}) at {depth}");
                }
            }
        }
    }

    #[test]
    fn tilted_plane_in_near_orthographic_limit() {
        // Large focal length and far plane: points span a tiny lateral patch
        // so the pinhole model approaches an orthographic camera.
        let (a, b) = (0.3, -0.2);
        let f = 1e5;
        let kk = k(f, 32, 32);
        let z0 = 1e3;
        // z = a x + b y + z0 solved along each ray.
        let d = DepthMap::from_fn(32, 32, DepthKind::Metric, |u, v| {
            let r = kk.ray(u, v);
            Some(z0 / (1.0 - a * r[0] - b * r[1]))
        })
        .unwrap();
        let n = normals_from_depth(&d, &kk, 3).unwrap();
        let expected = vec3::normalize(&[-a, -b, 1.0]).unwrap();
        for v in 1..31 {
            for u in 1..31 {
                let got = n.get(u, v).unwrap();
                assert!(angle_deg(&got, &expected) < 0.5);
            }
        }
    }

    #[test]
    fn collinear_window_is_invalidated() {
        // Single valid row: every window is collinear.
        let d = DepthMap::from_fn(9, 9, DepthKind::Metric, |_, v| (v == 4).then_some(2.0)).unwrap();
        let cfg = NormalEstimation {
            window: 3,
            min_valid_fraction: 0.1,
        };
        let n = normals_from_depth_with(&d, &k(10.0, 9, 9), &cfg).unwrap();
        assert_eq!(n.mask().count(), 0);
    }

    #[test]
    fn sparse_window_is_invalidated() {
        let d = DepthMap::from_fn(7, 7, DepthKind::Metric, |u, v| ((u + v) % 3 == 0).then_some(1.0))
            .unwrap();
        let n = normals_from_depth(&d, &k(10.0, 7, 7), 5).unwrap();
        assert_eq!(n.mask().count(), 0);
    }

    #[test]
    fn corners_lack_enough_support() {
        let d = DepthMap::new(8, 8, vec![1.0; 64], DepthKind::Metric).unwrap();
        let n = normals_from_depth(&d, &k(10.0, 8, 8), 5).unwrap();
        assert!(n.get(0, 0).is_none());
        assert!(n.get(0, 4).is_some());
    }

    #[test]
    fn rejects_bad_window_and_empty_mask() {
        let d = DepthMap::new(4, 4, vec![1.0; 16], DepthKind::Metric).unwrap();
        assert!(normals_from_depth(&d, &k(10.0, 4, 4), 4).is_err());
        assert!(normals_from_depth(&d, &k(10.0, 4, 4), 1).is_err());
        let empty = DepthMap::new(4, 4, vec![0.0; 16], DepthKind::Metric).unwrap();
        assert!(matches!(
            normals_from_depth(&empty, &k(10.0, 4, 4), 3),
            Err(Error::EmptyMask)
        ));
    }
}
