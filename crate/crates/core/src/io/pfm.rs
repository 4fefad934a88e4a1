//! Portable float map: `PF` (three channels) or `Pf` (one channel), then
//! width, height and a scale whose sign gives the byte order (negative is
//! little-endian). Rows are stored bottom to top.

use std::path::Path;

use super::write_atomic;
use crate::geometry::{DepthKind, DepthMap, NormalMap};
use crate::{Error, Real, Result};

const FORMAT: &str = "pfm";
const MAX_TOKEN: usize = 32;

/// Decoded raster with rows in top-down order and channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: FORMAT,
        offset,
        message: message.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn token(&mut self, what: &str) -> Result<(usize, &'a str)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            if self.pos - start >= MAX_TOKEN {
                return Err(err(start, format!("{what} field too long")));
            }
            self.pos += 1;
        }
        if self.pos == start || self.pos == self.bytes.len() {
            return Err(err(start, format!("unexpected end of header reading {what}")));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| err(start, format!("{what} field is not ASCII")))?;
        Ok((start, s))
    }

    fn dimension(&mut self, what: &str) -> Result<usize> {
        let (at, s) = self.token(what)?;
        match s.parse::<usize>() {
            Ok(0) => Err(err(at, format!("{what} is zero"))),
            Ok(n) => Ok(n),
            Err(_) => Err(err(at, format!("{what} {s:?} is not a positive integer"))),
        }
    }
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Pfm> {
    let mut h = Header { bytes, pos: 0 };
    let (_, magic) = h.token("magic")?;
    let channels = match magic {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(err(0, format!("bad magic {magic:?}, expected \"PF\" or \"Pf\""))),
    };
    let width = h.dimension("width")?;
    let height = h.dimension("height")?;
    let (at, s) = h.token("scale")?;
    let scale: f32 = s.parse().map_err(|_| err(at, format!("scale {s:?} is not a number")))?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(err(at, format!("scale {scale} must be finite and nonzero")));
    }
    let little = scale < 0.0;
    // Exactly one whitespace byte separates the header from the payload.
    let start = h.pos + 1;
    let size = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| err(0, format!("dimensions {width}x{height} overflow")))?;
    let have = bytes.len() - start;
    if have < size {
        return Err(err(bytes.len(), format!("truncated payload: expected {size} bytes, found {have}")));
    }
    if have > size {
        return Err(err(start + size, format!("{} trailing bytes after payload", have - size)));
    }
    let row = width * channels;
    let mut data = vec![0f32; row * height];
    for (i, chunk) in bytes[start..].chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("4 bytes");
        let x = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (r, c) = (i / row, i % row);
        data[(height - 1 - r) * row + c] = x;
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

/// Always writes little-endian with scale `-1.0`.
pub fn encode_pfm(p: &Pfm) -> Result<Vec<u8>> {
    let magic = match p.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::invalid(format!("PFM holds 1 or 3 channels, got {c}"))),
    };
    let row = p.width * p.channels;
    if p.data.len() != row * p.height {
        return Err(Error::shape(row * p.height, p.data.len()));
    }
    let header = format!("{magic}\n{} {}\n-1.0\n", p.width, p.height);
    let mut out = Vec::with_capacity(header.len() + 4 * p.data.len());
    out.extend_from_slice(header.as_bytes());
    for r in (0..p.height).rev() {
        for x in &p.data[r * row..(r + 1) * row] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn to_f32<T: Real>(x: T) -> f32 {
    x.to_f32().unwrap_or(f32::NAN)
}

fn from_f32<T: Real>(x: f32) -> T {
    T::from_f32(x).unwrap_or_else(T::nan)
}

/// Invalid pixels are written as `0` for metric depth and NaN otherwise, so
/// reading back with the same kind restores the mask.
pub fn encode_depth_pfm<T: Real>(d: &DepthMap<T>) -> Result<Vec<u8>> {
    let hole = if d.kind() == DepthKind::Metric { 0.0 } else { f32::NAN };
    let data = d
        .values()
        .iter()
        .zip(d.mask().as_slice())
        .map(|(v, ok)| if *ok { to_f32(*v) } else { hole })
        .collect();
    encode_pfm(&Pfm {
        width: d.width(),
        height: d.height(),
        channels: 1,
        data,
    })
}

/// Non-finite values are invalid; for metric depth so are values `<= 0`.
pub fn decode_depth_pfm<T: Real>(bytes: &[u8], kind: DepthKind) -> Result<DepthMap<T>> {
    let p = decode_pfm(bytes)?;
    if p.channels != 1 {
        return Err(err(0, "depth needs a single-channel \"Pf\" file"));
    }
    DepthMap::new(p.width, p.height, p.data.into_iter().map(from_f32).collect(), kind)
}

/// Invalid normals are written as `(0, 0, 0)`.
pub fn encode_normal_pfm<T: Real>(n: &NormalMap<T>) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(3 * n.values().len());
    for (v, ok) in n.values().iter().zip(n.mask().as_slice()) {
        if *ok {
            data.extend(v.iter().map(|c| to_f32(*c)));
        } else {
            data.extend([0.0; 3]);
        }
    }
    encode_pfm(&Pfm {
        width: n.width(),
        height: n.height(),
        channels: 3,
        data,
    })
}

/// Vectors are renormalized; zero or non-finite vectors become invalid.
pub fn decode_normal_pfm<T: Real>(bytes: &[u8]) -> Result<NormalMap<T>> {
    let p = decode_pfm(bytes)?;
    if p.channels != 3 {
        return Err(err(0, "normals need a three-channel \"PF\" file"));
    }
    let values = p
        .data
        .chunks_exact(3)
        .map(|c| [from_f32(c[0]), from_f32(c[1]), from_f32(c[2])])
        .collect();
    NormalMap::from_vectors(p.width, p.height, values)
}

pub fn read_depth_pfm<T: Real>(path: &Path, kind: DepthKind) -> Result<DepthMap<T>> {
    decode_depth_pfm(&std::fs::read(path)?, kind)
}

pub fn write_depth_pfm<T: Real>(path: &Path, d: &DepthMap<T>) -> Result<()> {
    write_atomic(path, &encode_depth_pfm(d)?)
}

pub fn read_normal_pfm<T: Real>(path: &Path) -> Result<NormalMap<T>> {
    decode_normal_pfm(&std::fs::read(path)?)
}

pub fn write_normal_pfm<T: Real>(path: &Path, n: &NormalMap<T>) -> Result<()> {
    write_atomic(path, &encode_normal_pfm(n)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn big_endian_and_row_order() {
        let mut bytes = b"Pf\n2 2\n1.0\n".to_vec();
        for x in [3f32, 4.0, 1.0, 2.0] {
            bytes.extend_from_slice(&x.to_be_bytes());
        }
        let p = decode_pfm(&bytes).unwrap();
        assert_eq!(p.data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn little_endian_on_negative_scale() {
        let mut bytes = b"Pf 1 1 -2.5 ".to_vec();
        bytes.extend_from_slice(&7.25f32.to_le_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().data, vec![7.25]);
    }

    #[test]
    fn hand_built_color_file_gives_unit_normals() {
        let mut bytes = b"PF\n2 1\n-1\n".to_vec();
        for x in [0f32, 0.0, 2.0, 3.0, 0.0, 4.0] {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let n = decode_normal_pfm::<f64>(&bytes).unwrap();
        assert_eq!(n.get(0, 0), Some([0.0, 0.0, 1.0]));
        let v = n.get(1, 0).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-7 && v[1] == 0.0 && (v[2] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn malformed_headers() {
        let cases: [(&[u8], usize); 6] = [
            (b"P6\n1 1\n-1\n\0\0\0\0", 0),
            (b"Pf\n0 1\n-1\n\0\0\0\0", 3),
            (b"Pf\n1 x\n-1\n\0\0\0\0", 5),
            (b"Pf\n1 1\n0\n\0\0\0\0", 7),
            (b"Pf\n1 1\n-1\n\0\0", 12),
            (b"Pf\n1 1\n-1\n\0\0\0\0\0", 14),
        ];
        for (bytes, offset) in cases {
            match decode_pfm(bytes) {
                Err(Error::Format { offset: o, .. }) => assert_eq!(o, offset, "{:?}", String::from_utf8_lossy(bytes)),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn huge_dimensions_do_not_allocate() {
        assert!(decode_pfm(b"PF\n99999999999 99999999999\n-1\n").is_err());
        assert!(decode_pfm(b"PF\n100000 100000\n-1\n\0\0\0\0").is_err());
    }
}
