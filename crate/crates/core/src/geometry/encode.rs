//! 8-bit RGB encoding of normal maps: `rgb = round(255 * (n + 1) / 2)`.

use super::{vec3, Mask, NormalMap, Vec3};
use crate::{Error, Real, Result};

/// Visualization color for sky pixels; decodes to `(0, 0, 1)`.
pub const SKY_RGB: [u8; 3] = [0, 0, 255];

/// Packed RGB8 image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

/// Invalid pixels encode as black, which no unit vector maps to. Pixels in
/// `sky` are painted [`SKY_RGB`] regardless of their normal.
pub fn encode_normal_rgb<T: Real>(normals: &NormalMap<T>, sky: Option<&Mask>) -> Result<RgbImage> {
    if let Some(s) = sky {
        normals.mask().check_same(s)?;
    }
    let half = T::lit(0.5);
    let full = T::lit(255.0);
    let enc = |c: T| -> u8 {
        let x = (full * (c + T::one()) * half).round();
        x.max(T::zero()).min(full).to_u8().unwrap_or(0)
    };
    let pixels = normals
        .values()
        .iter()
        .zip(normals.mask().as_slice())
        .enumerate()
        .map(|(i, (n, ok))| {
            if sky.is_some_and(|s| s.as_slice()[i]) {
                SKY_RGB
            } else if *ok {
                [enc(n[0]), enc(n[1]), enc(n[2])]
            } else {
                [0, 0, 0]
            }
        })
        .collect();
    Ok(RgbImage {
        width: normals.width(),
        height: normals.height(),
        pixels,
    })
}

/// Inverse of [`encode_normal_rgb`] followed by renormalization. Black is
/// read as invalid and [`SKY_RGB`] as `(0, 0, 1)`.
pub fn decode_normal_rgb<T: Real>(img: &RgbImage) -> Result<NormalMap<T>> {
    if img.pixels.len() != img.width * img.height {
        return Err(Error::shape(img.width * img.height, img.pixels.len()));
    }
    let dec = |c: u8| T::lit(c as f64 * 2.0 / 255.0 - 1.0);
    let values: Vec<Vec3<T>> = img
        .pixels
        .iter()
        .map(|p| match *p {
            [0, 0, 0] => [T::zero(); 3],
            SKY_RGB => [T::zero(), T::zero(), T::one()],
            [r, g, b] => vec3::normalize(&[dec(r), dec(g), dec(b)]).unwrap_or([T::zero(); 3]),
        })
        .collect();
    NormalMap::from_vectors(img.width, img.height, values)
}
