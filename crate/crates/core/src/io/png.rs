//! 16-bit single-channel depth PNG and 8-bit RGB normal PNG.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};

use super::write_atomic;
use crate::geometry::{decode_normal_rgb, encode_normal_rgb, DepthKind, DepthMap, Mask, NormalMap, RgbImage};
use crate::{Error, Real, Result};

fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    let mut r = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png);
    r.limits(image::Limits::default());
    Ok(r.decode()?)
}

fn encode(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn check_divisor(divisor: f64) -> Result<()> {
    if !(divisor.is_finite() && divisor > 0.0) {
        return Err(Error::invalid(format!("divisor must be positive, got {divisor}")));
    }
    Ok(())
}

/// Metric depth `raw / divisor`; raw `0` is invalid.
pub fn decode_depth_png16<T: Real>(bytes: &[u8], divisor: f64) -> Result<DepthMap<T>> {
    check_divisor(divisor)?;
    let img = match decode(bytes)? {
        DynamicImage::ImageLuma16(img) => img,
        other => {
            return Err(Error::Format {
                format: "png16",
                offset: 0,
                message: format!("expected 16-bit single-channel image, got {:?}", other.color()),
            })
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img
        .into_raw()
        .into_iter()
        .map(|raw| if raw == 0 { T::zero() } else { T::lit(raw as f64 / divisor) })
        .collect();
    DepthMap::new(w, h, values, DepthKind::Metric)
}

/// Inverse of [`decode_depth_png16`]. Invalid pixels are written as `0`;
/// valid depths must round to a raw value in `1..=65535`.
pub fn encode_depth_png16<T: Real>(d: &DepthMap<T>, divisor: f64) -> Result<Vec<u8>> {
    check_divisor(divisor)?;
    let mut raw = Vec::with_capacity(d.values().len());
    for (i, (v, ok)) in d.values().iter().zip(d.mask().as_slice()).enumerate() {
        if !*ok {
            raw.push(0u16);
            continue;
        }
        let r = (v.as_f64() * divisor).round();
        if !(1.0..=65535.0).contains(&r) {
            return Err(Error::invalid(format!(
                "depth {v} at index {i} does not fit 16 bits with divisor {divisor}"
            )));
        }
        raw.push(r as u16);
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(d.width() as u32, d.height() as u32, raw).expect("buffer sized from map");
    encode(DynamicImage::ImageLuma16(img))
}

pub fn read_depth_png16<T: Real>(path: &Path, divisor: f64) -> Result<DepthMap<T>> {
    decode_depth_png16(&std::fs::read(path)?, divisor)
}

pub fn write_depth_png16<T: Real>(path: &Path, d: &DepthMap<T>, divisor: f64) -> Result<()> {
    write_atomic(path, &encode_depth_png16(d, divisor)?)
}

pub fn decode_normal_png<T: Real>(bytes: &[u8]) -> Result<NormalMap<T>> {
    let img = match decode(bytes)? {
        DynamicImage::ImageRgb8(img) => img,
        other => {
            return Err(Error::Format {
                format: "normal-png",
                offset: 0,
                message: format!("expected 8-bit RGB image, got {:?}", other.color()),
            })
        }
    };
    let (width, height) = (img.width() as usize, img.height() as usize);
    let pixels = img.pixels().map(|p| p.0).collect();
    decode_normal_rgb(&RgbImage { width, height, pixels })
}

pub fn encode_normal_png<T: Real>(n: &NormalMap<T>, sky: Option<&Mask>) -> Result<Vec<u8>> {
    let rgb = encode_normal_rgb(n, sky)?;
    let mut img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::new(rgb.width as u32, rgb.height as u32);
    for (dst, src) in img.pixels_mut().zip(&rgb.pixels) {
        *dst = Rgb(*src);
    }
    encode(DynamicImage::ImageRgb8(img))
}

pub fn read_normal_png<T: Real>(path: &Path) -> Result<NormalMap<T>> {
    decode_normal_png(&std::fs::read(path)?)
}

pub fn write_normal_png<T: Real>(path: &Path, n: &NormalMap<T>, sky: Option<&Mask>) -> Result<()> {
    write_atomic(path, &encode_normal_png(n, sky)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_png(raw: Vec<u16>) -> Vec<u8> {
        let n = raw.len() as u32;
        encode(DynamicImage::ImageLuma16(ImageBuffer::from_raw(n, 1, raw).unwrap())).unwrap()
    }

    #[test]
    fn divisor_conventions() {
        let d = decode_depth_png16::<f64>(&raw_png(vec![25600, 0, 5000]), 256.0).unwrap();
        assert_eq!(d.get(0, 0), Some(100.0));
        assert_eq!(d.get(1, 0), None);
        let d = decode_depth_png16::<f64>(&raw_png(vec![5000]), 1000.0).unwrap();
        assert_eq!(d.get(0, 0), Some(5.0));
    }

    #[test]
    fn rejects_eight_bit() {
        let img = DynamicImage::ImageLuma8(ImageBuffer::from_raw(1, 1, vec![3u8]).unwrap());
        assert!(matches!(decode_depth_png16::<f64>(&encode(img).unwrap(), 256.0), Err(Error::Format { .. })));
    }

    #[test]
    fn depth_round_trip() {
        let d = DepthMap::<f64>::new(3, 1, vec![1.5, 0.0, 255.99609375], DepthKind::Metric).unwrap();
        let back = decode_depth_png16::<f64>(&encode_depth_png16(&d, 256.0).unwrap(), 256.0).unwrap();
        assert_eq!(back, d);
        assert!(encode_depth_png16(&d, 1000.0).is_err());
    }

    #[test]
    fn normal_png_round_trip_is_close() {
        let n = NormalMap::<f64>::from_vectors(2, 1, vec![[0.3, -0.4, 0.866], [0.0, 0.0, 0.0]]).unwrap();
        let back = decode_normal_png::<f64>(&encode_normal_png(&n, None).unwrap()).unwrap();
        assert_eq!(back.mask(), n.mask());
        let a = crate::geometry::angular_distance(&n.get(0, 0).unwrap(), &back.get(0, 0).unwrap()).unwrap();
        assert!(a < 0.5, "{a}");
    }
}
