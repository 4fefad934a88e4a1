//! Minimal fixed-size vector helpers on `[T; 3]`.

use crate::Real;

pub type Vec3<T> = [T; 3];

#[inline]
pub fn dot<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<T: Real>(a: &Vec3<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn sub<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Real>(a: &Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Returns `None` for zero or non-finite input.
#[inline]
pub fn normalize<T: Real>(a: &Vec3<T>) -> Option<Vec3<T>> {
    let n = norm(a);
    if n > T::zero() && n.is_finite() {
        Some(scale(a, T::one() / n))
    } else {
        None
    }
}

#[inline]
pub fn is_finite<T: Real>(a: &Vec3<T>) -> bool {
    a.iter().all(|c| c.is_finite())
}

/// Rodrigues rotation of `v` about the unit `axis` by `angle` radians.
pub fn rotate<T: Real>(v: &Vec3<T>, axis: &Vec3<T>, angle: T) -> Vec3<T> {
    let (s, c) = angle.sin_cos();
    let kxv = cross(axis, v);
    let kdv = dot(axis, v);
    [
        v[0] * c + kxv[0] * s + axis[0] * kdv * (T::one() - c),
        v[1] * c + kxv[1] * s + axis[1] * kdv * (T::one() - c),
        v[2] * c + kxv[2] * s + axis[2] * kdv * (T::one() - c),
    ]
}
