//! Analytic synthetic scenes with closed-form depth and normals.
//!
//! These are the ground truth for the accuracy checks and the procedural
//! training data of the toy denoiser. Everything here is computed directly
//! from ray/primitive intersection formulas and never through the
//! estimation routines it is used to check.

use crate::geometry::{vec3, DepthKind, DepthMap, Intrinsics, Mask, NormalMap, Vec3};
use crate::{Real, Result};

/// Depth, normals and camera of a synthetic view.
#[derive(Debug, Clone)]
pub struct Scene<T> {
    pub intrinsics: Intrinsics<T>,
    pub depth: DepthMap<T>,
    pub normals: NormalMap<T>,
}

/// Sphere seen by a pinhole camera.
#[derive(Debug, Clone, Copy)]
pub struct Sphere<T> {
    pub center: Vec3<T>,
    pub radius: T,
}

impl<T: Real> Sphere<T> {
    /// Nearest ray parameter along `ray` (with unit z, so this is depth).
    pub fn intersect(&self, ray: &Vec3<T>) -> Option<T> {
        let a = vec3::dot(ray, ray);
        let b = vec3::dot(ray, &self.center);
        let c = vec3::dot(&self.center, &self.center) - self.radius * self.radius;
        let disc = b * b - a * c;
        if disc <= T::zero() {
            return None;
        }
        let t = (b - disc.sqrt()) / a;
        (t > T::zero()).then_some(t)
    }

    /// Camera-facing normal (positive z on the visible cap).
    pub fn normal_at(&self, p: &Vec3<T>) -> Vec3<T> {
        vec3::scale(&vec3::sub(&self.center, p), T::one() / self.radius)
    }

    /// Signed distance-like residual `|p - c| - r`.
    pub fn surface_residual(&self, p: &Vec3<T>) -> T {
        vec3::norm(&vec3::sub(p, &self.center)) - self.radius
    }
}

/// Renders the visible cap of `sphere`. Pixels whose viewing ray meets the
/// surface at more than `max_incidence_deg` from the normal are masked out,
/// which keeps the grazing silhouette band out of the fixture.
pub fn sphere_scene<T: Real>(
    k: Intrinsics<T>,
    sphere: Sphere<T>,
    max_incidence_deg: T,
) -> Result<Scene<T>> {
    let cos_limit = max_incidence_deg.to_radians().cos();
    let hit = |u: usize, v: usize| -> Option<(T, Vec3<T>)> {
        let ray = k.ray(u, v);
        let d = sphere.intersect(&ray)?;
        let p = vec3::scale(&ray, d);
        let n = sphere.normal_at(&p);
        let dir = vec3::normalize(&ray)?;
        (vec3::dot(&n, &dir) >= cos_limit).then_some((d, n))
    };
    let depth = DepthMap::from_fn(k.width, k.height, DepthKind::Metric, |u, v| hit(u, v).map(|h| h.0))?;
    let normals = NormalMap::from_fn(k.width, k.height, |u, v| hit(u, v).map(|h| h.1))?;
    Ok(Scene {
        intrinsics: k,
        depth,
        normals,
    })
}

/// The default sphere-cap view: 128×128 image, focal 160 px, unit sphere
/// 3 m in front of the camera, silhouette band beyond 70° removed.
pub fn sphere_cap<T: Real>(size: usize) -> Result<Scene<T>> {
    let k = Intrinsics::centered(T::lit(160.0) * T::from_usize_lossy(size) / T::lit(128.0), size, size)?;
    let sphere = Sphere {
        center: [T::zero(), T::zero(), T::lit(3.0)],
        radius: T::one(),
    };
    sphere_scene(k, sphere, T::lit(70.0))
}

/// Plane `n · p = offset` (camera frame) rendered through `k`.
pub fn plane_scene<T: Real>(k: Intrinsics<T>, normal: Vec3<T>, offset: T) -> Result<Scene<T>> {
    let n = vec3::normalize(&normal).unwrap_or([T::zero(), T::zero(), T::one()]);
    let n = if n[2] < T::zero() { vec3::scale(&n, -T::one()) } else { n };
    let offset = if normal[2] < T::zero() { -offset } else { offset };
    let at = |u: usize, v: usize| -> Option<T> {
        let r = k.ray(u, v);
        let den = vec3::dot(&n, &r);
        if den <= T::zero() {
            return None;
        }
        let d = offset / den;
        (d > T::zero() && d.is_finite()).then_some(d)
    };
    let depth = DepthMap::from_fn(k.width, k.height, DepthKind::Metric, at)?;
    let normals = NormalMap::from_fn(k.width, k.height, |u, v| at(u, v).map(|_| n))?;
    Ok(Scene {
        intrinsics: k,
        depth,
        normals,
    })
}

/// Orthographic height field `z(x, y)` in pixel units with its analytic
/// normals `(-z_x, -z_y, 1) / |.|`.
pub fn height_field<T: Real>(
    width: usize,
    height: usize,
    z: impl Fn(T, T) -> T,
    grad: impl Fn(T, T) -> (T, T),
) -> Result<(DepthMap<T>, NormalMap<T>)> {
    let f = |u: usize| T::from_usize_lossy(u);
    let depth = DepthMap::from_fn(width, height, DepthKind::AffineInvariant, |u, v| Some(z(f(u), f(v))))?;
    let normals = NormalMap::from_fn(width, height, |u, v| {
        let (gx, gy) = grad(f(u), f(v));
        Some([-gx, -gy, T::one()])
    })?;
    Ok((depth, normals))
}

/// Two fronto-parallel slabs split at column `split`.
pub fn step_edge<T: Real>(width: usize, height: usize, split: usize, near: T, far: T) -> Result<DepthMap<T>> {
    DepthMap::from_fn(width, height, DepthKind::Metric, |u, _| Some(if u < split { near } else { far }))
}

/// Linear ramp over `count` pixels whose min-max normalized values are
/// `i / (count - 1)`.
pub fn linear_ramp<T: Real>(width: usize, height: usize) -> Result<DepthMap<T>> {
    let n = width * height;
    let denom = T::from_usize_lossy(n.saturating_sub(1).max(1));
    DepthMap::from_fn(width, height, DepthKind::Metric, |u, v| {
        Some(T::one() + T::from_usize_lossy(v * width + u) / denom)
    })
}

/// Mask of everything valid in both maps.
pub fn shared_mask<T: Real>(depth: &DepthMap<T>, normals: &NormalMap<T>) -> Result<Mask> {
    depth.mask().and(normals.mask())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_cap_points_lie_on_the_sphere() {
        let s: Scene<f64> = sphere_cap(64).unwrap();
        let sphere = Sphere {
            center: [0.0, 0.0, 3.0],
            radius: 1.0,
        };
        let mut n = 0;
        for v in 0..64 {
            for u in 0..64 {
                if let Some(d) = s.depth.get(u, v) {
                    let p = vec3::scale(&s.intrinsics.ray(u, v), d);
                    assert!(sphere.surface_residual(&p).abs() < 1e-12);
                    let nn = s.normals.get(u, v).unwrap();
                    assert!(nn[2] > 0.0);
                    n += 1;
                }
            }
        }
        assert!(n > 1000);
    }

    #[test]
    fn plane_scene_satisfies_plane_equation() {
        let k = Intrinsics::centered(50.0, 16, 16).unwrap();
        let s = plane_scene(k, [0.2, -0.1, 1.0], 2.0).unwrap();
        let n: Vec3<f64> = vec3::normalize(&[0.2, -0.1, 1.0]).unwrap();
        for v in 0..16 {
            for u in 0..16 {
                let p = vec3::scale(&k.ray(u, v), s.depth.get(u, v).unwrap());
                assert!((vec3::dot(&n, &p) - 2.0).abs() < 1e-12);
            }
        }
    }
}
