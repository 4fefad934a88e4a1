//! Camera-frame geometry: pinhole intrinsics, depth and normal maps,
//! unprojection, angular distances and far-plane handling.
//!
//! Frame convention: x right, y down, z forward into the scene. Normals are
//! oriented so that surfaces seen by the camera have a positive z component;
//! a fronto-parallel wall has normal `(0, 0, 1)`.

mod encode;
mod normals;
pub mod vec3;

pub use encode::{decode_normal_rgb, encode_normal_rgb, RgbImage, SKY_RGB};
pub use normals::{
    fit_plane_normal, normals_from_depth, normals_from_depth_with, NormalEstimation,
    DEFAULT_MIN_VALID_FRACTION, DEFAULT_WINDOW,
};
pub use vec3::Vec3;

use crate::{Error, Real, Result};

/// Pinhole camera intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Principal point at the image center.
    pub fn centered(focal: T, width: usize, height: usize) -> Result<Self> {
        let half = T::lit(0.5);
        Self::new(
            focal,
            focal,
            T::from_usize_lossy(width.saturating_sub(1)) * half,
            T::from_usize_lossy(height.saturating_sub(1)) * half,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("intrinsics: image size must be positive"));
        }
        if !(self.fx > T::zero() && self.fy > T::zero()) || !self.fx.is_finite() || !self.fy.is_finite()
        {
            return Err(Error::invalid("intrinsics: focal lengths must be positive and finite"));
        }
        let w = T::from_usize_lossy(self.width);
        let h = T::from_usize_lossy(self.height);
        if !(self.cx >= T::zero() && self.cx < w) || !(self.cy >= T::zero() && self.cy < h) {
            return Err(Error::invalid(format!(
                "intrinsics: principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Unnormalized viewing ray through pixel `(u, v)` with unit z.
    #[inline]
    pub fn ray(&self, u: usize, v: usize) -> Vec3<T> {
        [
            (T::from_usize_lossy(u) - self.cx) / self.fx,
            (T::from_usize_lossy(v) - self.cy) / self.fy,
            T::one(),
        ]
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    #[inline]
    pub fn project(&self, p: &Vec3<T>) -> (T, T) {
        (p[0] / p[2] * self.fx + self.cx, p[1] / p[2] * self.fy + self.cy)
    }

    pub(crate) fn check_size(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::shape(
                format!("{}x{} (intrinsics)", self.width, self.height),
                format!("{width}x{height}"),
            ));
        }
        Ok(())
    }
}

/// Per-pixel validity, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::shape(width * height, bits.len()));
        }
        Ok(Mask {
            width,
            height,
            bits,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                bits.push(f(u, v));
            }
        }
        Mask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.bits[v * self.width + u] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.check_same(other)?;
        Ok(Mask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }

    /// Keeps pixels whose whole `(2r+1)²` neighborhood lies inside the image
    /// and inside the mask.
    pub fn erode(&self, r: usize) -> Mask {
        Mask::from_fn(self.width, self.height, |u, v| {
            if u < r || v < r || u + r >= self.width || v + r >= self.height {
                return false;
            }
            (v - r..=v + r).all(|y| (u - r..=u + r).all(|x| self.get(x, y)))
        })
    }

    pub(crate) fn check_same(&self, other: &Mask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }
}

/// What a depth map's values mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthKind {
    /// Meters, strictly positive.
    Metric,
    /// Known only up to an unknown positive scale and additive shift.
    AffineInvariant,
    /// Inverse depth.
    Disparity,
}

/// Per-pixel scalar depth with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T> {
    width: usize,
    height: usize,
    values: Vec<T>,
    mask: Mask,
    kind: DepthKind,
}

impl<T: Real> DepthMap<T> {
    /// Builds a map whose mask is derived from the values: finite entries are
    /// valid, and for metric depth only strictly positive ones.
    pub fn new(width: usize, height: usize, values: Vec<T>, kind: DepthKind) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(width * height, values.len()));
        }
        let bits = values
            .iter()
            .map(|d| d.is_finite() && (kind != DepthKind::Metric || *d > T::zero()))
            .collect();
        Ok(DepthMap {
            width,
            height,
            values,
            mask: Mask {
                width,
                height,
                bits,
            },
            kind,
        })
    }

    /// Builds a map with an explicit mask. Valid entries must satisfy the
    /// kind's invariants.
    pub fn with_mask(values: Vec<T>, mask: Mask, kind: DepthKind) -> Result<Self> {
        if values.len() != mask.width * mask.height {
            return Err(Error::shape(mask.width * mask.height, values.len()));
        }
        for (i, (d, ok)) in values.iter().zip(&mask.bits).enumerate() {
            if !*ok {
                continue;
            }
            if !d.is_finite() {
                return Err(Error::NonFinite(format!("depth at index {i}")));
            }
            if kind == DepthKind::Metric && *d <= T::zero() {
                return Err(Error::invalid(format!(
                    "metric depth must be positive, got {d} at index {i}"
                )));
            }
        }
        Ok(DepthMap {
            width: mask.width,
            height: mask.height,
            values,
            mask,
            kind,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        kind: DepthKind,
        f: impl Fn(usize, usize) -> Option<T>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        let mut bits = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                match f(u, v) {
                    Some(d) => {
                        values.push(d);
                        bits.push(true);
                    }
                    None => {
                        values.push(T::zero());
                        bits.push(false);
                    }
                }
            }
        }
        Self::with_mask(values, Mask::new(width, height, bits)?, kind)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kind(&self) -> DepthKind {
        self.kind
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<T> {
        let i = v * self.width + u;
        self.mask.bits[i].then(|| self.values[i])
    }

    /// Valid values in row-major order.
    pub fn valid_values(&self) -> impl Iterator<Item = T> + '_ {
        self.values
            .iter()
            .zip(&self.mask.bits)
            .filter_map(|(d, ok)| ok.then_some(*d))
    }

    /// Same values under a new kind label. Re-validates the kind invariants
    /// on the valid pixels.
    pub fn relabel(self, kind: DepthKind) -> Result<Self> {
        Self::with_mask(self.values, self.mask, kind)
    }

    /// Intersects the validity mask with `mask`.
    pub fn restrict(&self, mask: &Mask) -> Result<Self> {
        let mask = self.mask.and(mask)?;
        Ok(DepthMap {
            width: self.width,
            height: self.height,
            values: self.values.clone(),
            mask,
            kind: self.kind,
        })
    }

    pub fn map_valid(&self, kind: DepthKind, f: impl Fn(T) -> Option<T>) -> Result<Self> {
        let mut values = self.values.clone();
        let mut bits = self.mask.bits.clone();
        for (d, ok) in values.iter_mut().zip(bits.iter_mut()) {
            if !*ok {
                continue;
            }
            match f(*d) {
                Some(x) => *d = x,
                None => *ok = false,
            }
        }
        Self::with_mask(values, Mask::new(self.width, self.height, bits)?, kind)
    }

    pub(crate) fn require_metric(&self, op: &str) -> Result<()> {
        if self.kind != DepthKind::Metric {
            return Err(Error::invalid(format!(
                "{op} requires metric depth, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Per-pixel unit normals with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap<T> {
    width: usize,
    height: usize,
    values: Vec<Vec3<T>>,
    mask: Mask,
}

/// Tolerance on `|n| = 1` accepted for valid normals.
pub const UNIT_TOLERANCE: f64 = 1e-6;

impl<T: Real> NormalMap<T> {
    /// Normalizes every finite non-zero vector; the rest become invalid.
    pub fn from_vectors(width: usize, height: usize, values: Vec<Vec3<T>>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(width * height, values.len()));
        }
        let mut bits = Vec::with_capacity(values.len());
        let values = values
            .into_iter()
            .map(|n| match vec3::normalize(&n) {
                Some(u) => {
                    bits.push(true);
                    u
                }
                None => {
                    bits.push(false);
                    [T::zero(); 3]
                }
            })
            .collect();
        Ok(NormalMap {
            width,
            height,
            values,
            mask: Mask {
                width,
                height,
                bits,
            },
        })
    }

    /// Explicit mask; valid vectors must already be unit length.
    pub fn with_mask(values: Vec<Vec3<T>>, mask: Mask) -> Result<Self> {
        if values.len() != mask.width * mask.height {
            return Err(Error::shape(mask.width * mask.height, values.len()));
        }
        let tol = T::lit(UNIT_TOLERANCE).max(T::epsilon() * T::lit(16.0));
        for (i, (n, ok)) in values.iter().zip(&mask.bits).enumerate() {
            if *ok && (!vec3::is_finite(n) || (vec3::norm(n) - T::one()).abs() > tol) {
                return Err(Error::invalid(format!(
                    "normal at index {i} is not unit length"
                )));
            }
        }
        Ok(NormalMap {
            width: mask.width,
            height: mask.height,
            values,
            mask,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> Option<Vec3<T>>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                values.push(f(u, v).unwrap_or([T::zero(); 3]));
            }
        }
        Self::from_vectors(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn values(&self) -> &[Vec3<T>] {
        &self.values
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<Vec3<T>> {
        let i = v * self.width + u;
        self.mask.bits[i].then(|| self.values[i])
    }

    pub fn restrict(&self, mask: &Mask) -> Result<Self> {
        Ok(NormalMap {
            width: self.width,
            height: self.height,
            values: self.values.clone(),
            mask: self.mask.and(mask)?,
        })
    }

    /// Applies `f` to every valid vector and renormalizes.
    pub fn map_valid(&self, f: impl Fn(Vec3<T>) -> Vec3<T>) -> Result<Self> {
        let values = self
            .values
            .iter()
            .zip(&self.mask.bits)
            .map(|(n, ok)| if *ok { f(*n) } else { [T::zero(); 3] })
            .collect();
        let mut out = Self::from_vectors(self.width, self.height, values)?;
        out.mask = out.mask.and(&self.mask)?;
        Ok(out)
    }
}

/// Grid of unprojected camera-frame points; invalid pixels carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGrid<T> {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Option<Vec3<T>>>,
}

impl<T: Real> PointGrid<T> {
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<Vec3<T>> {
        self.points[v * self.width + u]
    }
}

/// `p(u, v) = d(u, v) * ((u - cx) / fx, (v - cy) / fy, 1)`.
pub fn unproject<T: Real>(depth: &DepthMap<T>, k: &Intrinsics<T>) -> Result<PointGrid<T>> {
    depth.require_metric("unproject")?;
    k.check_size(depth.width, depth.height)?;
    let mut points = Vec::with_capacity(depth.width * depth.height);
    for v in 0..depth.height {
        for u in 0..depth.width {
            points.push(depth.get(u, v).map(|d| vec3::scale(&k.ray(u, v), d)));
        }
    }
    Ok(PointGrid {
        width: depth.width,
        height: depth.height,
        points,
    })
}

/// Great-circle angle between two unit vectors, in degrees.
pub fn angular_distance<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Result<T> {
    if !vec3::is_finite(a) || !vec3::is_finite(b) {
        return Err(Error::NonFinite("angular_distance input".into()));
    }
    Ok(angle_deg(a, b))
}

/// Unchecked variant of [`angular_distance`] for hot loops. Evaluated as
/// `atan2(|a × b|, a · b)`, which equals `acos(a · b)` for unit vectors and
/// stays accurate near 0° and 180°.
#[inline]
pub(crate) fn angle_deg<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    vec3::norm(&vec3::cross(a, b)).atan2(vec3::dot(a, b)).to_degrees()
}

/// Masks every pixel deeper than `far` meters. `far = inf` is the identity.
pub fn apply_far_plane<T: Real>(depth: &DepthMap<T>, far: T) -> Result<DepthMap<T>> {
    depth.require_metric("apply_far_plane")?;
    if far.is_nan() || far <= T::zero() {
        return Err(Error::invalid(format!("far plane must be positive, got {far}")));
    }
    depth.map_valid(DepthKind::Metric, |d| (d <= far).then_some(d))
}

/// Far-plane clipping that also synthesizes background normals: every pixel
/// removed by the far plane gets the canonical `(0, 0, 1)` orientation.
pub fn apply_far_plane_with_normals<T: Real>(
    depth: &DepthMap<T>,
    normals: &NormalMap<T>,
    far: T,
) -> Result<(DepthMap<T>, NormalMap<T>)> {
    depth.mask.check_same(&normals.mask)?;
    let clipped = apply_far_plane(depth, far)?;
    let mut values = normals.values.clone();
    let mut bits = normals.mask.bits.clone();
    for i in 0..values.len() {
        if depth.mask.bits[i] && !clipped.mask.bits[i] {
            values[i] = [T::zero(), T::zero(), T::one()];
            bits[i] = true;
        }
    }
    let normals = NormalMap::with_mask(values, Mask::new(depth.width, depth.height, bits)?)?;
    Ok((clipped, normals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_k(w: usize, h: usize) -> Intrinsics<f64> {
        Intrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: w,
            height: h,
        }
    }

    #[test]
    fn unit_depth_unprojects_to_pixel_coordinates() {
        let d = DepthMap::new(3, 2, vec![1.0; 6], DepthKind::Metric).unwrap();
        let pts = unproject(&d, &unit_k(3, 2)).unwrap();
        for v in 0..2 {
            for u in 0..3 {
                assert_eq!(pts.get(u, v), Some([u as f64, v as f64, 1.0]));
            }
        }
    }

    #[test]
    fn principal_ray_maps_to_optical_axis() {
        let k = Intrinsics::new(500.0, 400.0, 2.0, 1.0, 4, 3).unwrap();
        let d = DepthMap::new(4, 3, vec![3.5; 12], DepthKind::Metric).unwrap();
        let pts = unproject(&d, &k).unwrap();
        assert_eq!(pts.get(2, 1), Some([0.0, 0.0, 3.5]));
    }

    #[test]
    fn unproject_matches_per_pixel_formula() {
        let vals = [
            1.3, 2.7, 0.4, 5.1, 3.3, 1.9, 2.2, 0.8, 4.4, 1.1, 0.9, 2.6, 3.8, 1.7, 2.9, 0.6,
        ];
        let k = Intrinsics::new(2.5, 3.0, 1.5, 2.0, 4, 4).unwrap();
        let d = DepthMap::new(4, 4, vals.to_vec(), DepthKind::Metric).unwrap();
        let pts = unproject(&d, &k).unwrap();
        for (i, z) in vals.iter().enumerate() {
            let (u, v) = ((i % 4) as f64, (i / 4) as f64);
            let p = pts.points[i].unwrap();
            let want = [z * (u - 1.5) / 2.5, z * (v - 2.0) / 3.0, *z];
            for c in 0..3 {
                assert!((p[c] - want[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_pixels_have_no_point() {
        let d = DepthMap::new(2, 1, vec![1.0, -1.0], DepthKind::Metric).unwrap();
        let pts = unproject(&d, &unit_k(2, 1)).unwrap();
        assert!(pts.get(0, 0).is_some());
        assert!(pts.get(1, 0).is_none());
    }

    #[test]
    fn unproject_rejects_non_metric() {
        let d = DepthMap::new(2, 1, vec![1.0, 2.0], DepthKind::AffineInvariant).unwrap();
        assert!(unproject(&d, &unit_k(2, 1)).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 2, 2).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 2.0, 0.0, 2, 2).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 1.9, 1.9, 2, 2).is_ok());
    }

    #[test]
    fn angular_distance_examples() {
        let z = [0.0, 0.0, 1.0];
        assert_eq!(angular_distance(&z, &z).unwrap(), 0.0);
        let t = 10f64.to_radians();
        let a = angular_distance(&z, &[0.0, t.sin(), t.cos()]).unwrap();
        assert_abs_diff_eq!(a, 10.0, epsilon = 1e-9);
        let b = angular_distance(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]).unwrap();
        assert_eq!(b, 180.0);
        assert!(angular_distance(&[f64::NAN, 0.0, 1.0], &z).is_err());
    }

    #[test]
    fn far_plane_masks_distant_pixels() {
        let d = DepthMap::new(4, 1, vec![10.0, 79.9, 80.5, 120.0], DepthKind::Metric).unwrap();
        let c = apply_far_plane(&d, 80.0).unwrap();
        assert_eq!(c.mask().as_slice(), &[true, true, false, false]);
        let c = apply_far_plane(&d, 5.0).unwrap();
        assert_eq!(c.mask().count(), 0);
        let c = apply_far_plane(&d, f64::INFINITY).unwrap();
        assert_eq!(c, d);
        assert!(apply_far_plane(&d, 0.0).is_err());
        assert!(apply_far_plane(&d, -3.0).is_err());
    }

    #[test]
    fn far_plane_background_normals_point_along_z() {
        let d = DepthMap::new(2, 1, vec![3.0, 90.0], DepthKind::Metric).unwrap();
        let n = NormalMap::from_vectors(2, 1, vec![[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]).unwrap();
        let (cd, cn) = apply_far_plane_with_normals(&d, &n, 80.0).unwrap();
        assert_eq!(cd.mask().as_slice(), &[true, false]);
        assert_eq!(cn.get(1, 0), Some([0.0, 0.0, 1.0]));
        assert_eq!(cn.get(0, 0), n.get(0, 0));
    }

    #[test]
    fn erode_drops_border_and_mask_edges() {
        let mut m = Mask::full(5, 5);
        assert_eq!(m.erode(1).count(), 9);
        m.set(2, 2, false);
        assert_eq!(m.erode(1).count(), 0);
    }

    fn unit_vec() -> impl Strategy<Value = Vec3<f64>> {
        (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, phi)| {
            let r = (1.0 - z * z).sqrt();
            [r * phi.cos(), r * phi.sin(), z]
        })
    }

    proptest! {
        #[test]
        fn angular_distance_is_a_metric(a in unit_vec(), b in unit_vec(), c in unit_vec()) {
            let ab = angular_distance(&a, &b).unwrap();
            let ba = angular_distance(&b, &a).unwrap();
            let ac = angular_distance(&a, &c).unwrap();
            let cb = angular_distance(&c, &b).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=180.0).contains(&ab));
            prop_assert!(ab <= ac + cb + 1e-6);
            prop_assert!(angular_distance(&a, &a).unwrap() < 1e-5);
        }

        #[test]
        fn unproject_then_project_recovers_pixel(
            fx in 50.0f64..2000.0, fy in 50.0f64..2000.0,
            cx in 0.0f64..31.0, cy in 0.0f64..23.0,
            seed_depth in proptest::collection::vec(0.1f64..100.0, 32 * 24),
        ) {
            let k = Intrinsics::new(fx, fy, cx, cy, 32, 24).unwrap();
            let d = DepthMap::new(32, 24, seed_depth, DepthKind::Metric).unwrap();
            let pts = unproject(&d, &k).unwrap();
            for v in 0..24 {
                for u in 0..32 {
                    let (pu, pv) = k.project(&pts.get(u, v).unwrap());
                    prop_assert!((pu - u as f64).abs() < 1e-9);
                    prop_assert!((pv - v as f64).abs() < 1e-9);
                }
            }
        }
    }
}
