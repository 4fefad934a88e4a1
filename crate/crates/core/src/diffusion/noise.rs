use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LatentTensor;
use crate::{Error, Real, Result};

pub const DEFAULT_LEVELS: usize = 4;
pub const DEFAULT_DECAY: f64 = 0.5;

/// Seeded standard Gaussian tensor. Draws are made in `f64` so that `f32`
/// and `f64` callers see the same stream.
pub fn gaussian<T: Real>(shape: (usize, usize, usize), rng: &mut impl Rng) -> LatentTensor<T> {
    let (c, h, w) = shape;
    let data = (0..c * h * w)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    LatentTensor::new(c, h, w, data).expect("gaussian draws are finite")
}

/// Bilinear resize of one `h × w` plane to `oh × ow` with half-pixel
/// centers and edge clamping.
fn upsample(src: &[f64], h: usize, w: usize, oh: usize, ow: usize, out: &mut [f64]) {
    let axis = |o: usize, n: usize, on: usize| -> (usize, usize, f64) {
        let x = ((o as f64 + 0.5) * n as f64 / on as f64 - 0.5).max(0.0);
        let i0 = (x.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, x - i0 as f64)
    };
    for y in 0..oh {
        let (y0, y1, fy) = axis(y, h, oh);
        for x in 0..ow {
            let (x0, x1, fx) = axis(x, w, ow);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out[y * ow + x] = top * (1.0 - fy) + bot * fy;
        }
    }
}

/// Multi-resolution Gaussian noise: level `l` is drawn at
/// `(h >> l) × (w >> l)`, bilinearly upsampled and weighted by `decay^l`.
/// With more than one level the sum is rescaled to unit sample variance;
/// a single level is returned as drawn.
pub fn multires_noise<T: Real>(shape: (usize, usize, usize), levels: usize, decay: f64, seed: u64) -> Result<LatentTensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    multires_noise_with(shape, levels, decay, &mut rng)
}

pub fn multires_noise_with<T: Real>(
    shape: (usize, usize, usize),
    levels: usize,
    decay: f64,
    rng: &mut impl Rng,
) -> Result<LatentTensor<T>> {
    let (c, h, w) = shape;
    if levels == 0 {
        return Err(Error::invalid("multi-resolution noise needs at least one level"));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::invalid(format!("decay {decay} outside (0, 1]")));
    }
    if c * h * w == 0 {
        return Err(Error::invalid("noise shape has a zero dimension"));
    }
    let coarsest = levels - 1;
    if coarsest >= usize::BITS as usize || (h >> coarsest) == 0 || (w >> coarsest) == 0 {
        return Err(Error::invalid(format!("level {coarsest} of a {h}x{w} field is below 1x1")));
    }
    if levels == 1 {
        return Ok(gaussian(shape, rng));
    }
    let plane = h * w;
    let mut acc = vec![0.0f64; c * plane];
    let mut up = vec![0.0f64; plane];
    for level in 0..levels {
        let (lh, lw) = (h >> level, w >> level);
        let weight = decay.powi(level as i32);
        let draws: Vec<f64> = (0..c * lh * lw).map(|_| rng.sample(StandardNormal)).collect();
        for ch in 0..c {
            upsample(&draws[ch * lh * lw..(ch + 1) * lh * lw], lh, lw, h, w, &mut up);
            for (a, u) in acc[ch * plane..(ch + 1) * plane].iter_mut().zip(&up) {
                *a += weight * u;
            }
        }
    }
    let n = acc.len() as f64;
    let mean = acc.iter().sum::<f64>() / n;
    let var = acc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt().recip() } else { 1.0 };
    LatentTensor::new(c, h, w, acc.into_iter().map(|v| T::lit(v * scale)).collect())
}
