use crate::geometry::{unproject, vec3, DepthMap, Intrinsics, Mask, Vec3};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vec3<T>>>,
}

impl<T: Real> TriangleMesh<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|i| *i as usize >= n) {
                return Err(Error::invalid(format!("face {fi} references a vertex out of range")));
            }
            if self.face_area(fi) <= T::zero() {
                return Err(Error::invalid(format!("face {fi} has zero area")));
            }
        }
        if let Some(ns) = &self.normals {
            if ns.len() != n {
                return Err(Error::shape(n, ns.len()));
            }
        }
        Ok(())
    }

    pub fn face_area(&self, face: usize) -> T {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i as usize]);
        vec3::norm(&vec3::cross(&vec3::sub(&b, &a), &vec3::sub(&c, &a))) * T::lit(0.5)
    }
}

/// Lattice triangulation of the valid pixels of `depth ∧ mask`. Each pixel
/// quad yields up to two triangles; a triangle is dropped when any corner is
/// invalid, when `max/min` of its corner depths exceeds
/// `edge_depth_ratio_threshold`, or when it is degenerate.
pub fn mesh_from_depth<T: Real>(
    depth: &DepthMap<T>,
    k: &Intrinsics<T>,
    mask: &Mask,
    edge_depth_ratio_threshold: T,
) -> Result<TriangleMesh<T>> {
    let depth = depth.restrict(mask)?;
    if depth.mask().count() < 3 {
        return Err(Error::invalid("mesh needs at least 3 valid pixels"));
    }
    if !(edge_depth_ratio_threshold >= T::one()) {
        return Err(Error::invalid("edge depth ratio threshold must be >= 1"));
    }
    let pts = unproject(&depth, k)?;
    let (w, h) = (depth.width(), depth.height());
    let mut index = vec![u32::MAX; w * h];
    let mut vertices = Vec::new();
    for (i, p) in pts.points.iter().enumerate() {
        if let Some(p) = p {
            index[i] = vertices.len() as u32;
            vertices.push(*p);
        }
    }
    let mut faces = Vec::new();
    let mut push = |ids: [usize; 3]| {
        if ids.iter().any(|i| index[*i] == u32::MAX) {
            return;
        }
        let ds = ids.map(|i| depth.values()[i]);
        let lo = ds.iter().copied().fold(T::infinity(), T::min);
        let hi = ds.iter().copied().fold(T::neg_infinity(), T::max);
        if hi > lo * edge_depth_ratio_threshold {
            return;
        }
        let [a, b, c] = ids.map(|i| vertices[index[i] as usize]);
        let area = vec3::norm(&vec3::cross(&vec3::sub(&b, &a), &vec3::sub(&c, &a)));
        if !(area > T::zero()) {
            return;
        }
        faces.push(ids.map(|i| index[i]));
    };
    for v in 0..h.saturating_sub(1) {
        for u in 0..w.saturating_sub(1) {
            let i00 = v * w + u;
            let (i10, i01, i11) = (i00 + 1, i00 + w, i00 + w + 1);
            push([i00, i01, i10]);
            push([i10, i01, i11]);
        }
    }
    Ok(TriangleMesh {
        vertices,
        faces,
        normals: None,
    })
}
