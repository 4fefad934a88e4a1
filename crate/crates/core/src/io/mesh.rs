//! Wavefront OBJ and binary little-endian PLY meshes.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::write_atomic;
use crate::integration::TriangleMesh;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshFormat {
    Obj,
    #[default]
    PlyBinary,
}

impl FromStr for MeshFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obj" => Ok(MeshFormat::Obj),
            "ply" | "ply_binary" => Ok(MeshFormat::PlyBinary),
            _ => Err(Error::invalid(format!("unknown mesh format {s:?} (obj, ply)"))),
        }
    }
}

fn check<T: Real>(m: &TriangleMesh<T>) -> Result<()> {
    let n = m.vertices.len();
    if n > i32::MAX as usize {
        return Err(Error::invalid("too many vertices for int32 indices"));
    }
    if let Some(i) = m.faces.iter().position(|f| f.iter().any(|v| *v as usize >= n)) {
        return Err(Error::invalid(format!("face {i} references a vertex out of range")));
    }
    if let Some(ns) = &m.normals {
        if ns.len() != n {
            return Err(Error::shape(n, ns.len()));
        }
    }
    Ok(())
}

fn f32_of<T: Real>(x: T) -> f32 {
    x.to_f32().unwrap_or(f32::NAN)
}

/// `v x y z` lines, optional `vn` lines, then 1-based `f` lines. Values are
/// written as `f32` in shortest round-trip form.
pub fn encode_obj<T: Real>(m: &TriangleMesh<T>) -> Result<Vec<u8>> {
    check(m)?;
    let mut s = String::new();
    for v in &m.vertices {
        let _ = writeln!(s, "v {} {} {}", f32_of(v[0]), f32_of(v[1]), f32_of(v[2]));
    }
    if let Some(ns) = &m.normals {
        for n in ns {
            let _ = writeln!(s, "vn {} {} {}", f32_of(n[0]), f32_of(n[1]), f32_of(n[2]));
        }
    }
    for f in &m.faces {
        let [a, b, c] = f.map(|i| i + 1);
        if m.normals.is_some() {
            let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
        } else {
            let _ = writeln!(s, "f {a} {b} {c}");
        }
    }
    Ok(s.into_bytes())
}

pub fn encode_ply<T: Real>(m: &TriangleMesh<T>) -> Result<Vec<u8>> {
    check(m)?;
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        m.vertices.len()
    );
    if m.normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    let _ = write!(
        header,
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        m.faces.len()
    );
    let mut out = header.into_bytes();
    for (i, v) in m.vertices.iter().enumerate() {
        for c in v {
            out.extend_from_slice(&f32_of(*c).to_le_bytes());
        }
        if let Some(ns) = &m.normals {
            for c in &ns[i] {
                out.extend_from_slice(&f32_of(*c).to_le_bytes());
            }
        }
    }
    for f in &m.faces {
        out.push(3);
        for i in f {
            out.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    Ok(out)
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "ply",
        offset,
        message: message.into(),
    }
}

const MAX_HEADER: usize = 4096;
const XYZ: [&str; 3] = ["x", "y", "z"];

/// Reads the subset written by [`encode_ply`]: one vertex element with
/// float `x y z` and optional `nx ny nz`, one face element of triangles.
/// `comment` lines are skipped.
pub fn decode_ply<T: Real>(bytes: &[u8]) -> Result<TriangleMesh<T>> {
    let end = bytes
        .windows(11)
        .take(MAX_HEADER)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| err(0, "no \"end_header\" line in header"))?;
    let body = end + 11;
    let mut lines = Vec::new();
    let mut at = 0;
    let head = bytes[..end].strip_suffix(b"\n").unwrap_or(&bytes[..end]);
    for raw in head.split(|b| *b == b'\n') {
        let line = std::str::from_utf8(raw).map_err(|_| err(at, "header line is not ASCII"))?;
        if !line.starts_with("comment") {
            lines.push((at, line.trim_end_matches('\r')));
        }
        at += raw.len() + 1;
    }
    let mut it = lines.into_iter();
    let mut expect = |want: &str| -> Result<(usize, &str)> {
        match it.next() {
            Some((o, l)) if l == want || want.is_empty() => Ok((o, l)),
            Some((o, l)) => Err(err(o, format!("expected {want:?}, found {l:?}"))),
            None => Err(err(end, format!("header ends before {want:?}"))),
        }
    };
    expect("ply")?;
    expect("format binary_little_endian 1.0")?;
    let count = |(o, l): (usize, &str), name: &str| -> Result<usize> {
        let rest = l
            .strip_prefix("element ")
            .and_then(|r| r.strip_prefix(name))
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| err(o, format!("expected \"element {name} <count>\", found {l:?}")))?;
        rest.parse().map_err(|_| err(o, format!("bad {name} count {rest:?}")))
    };
    let nv = count(expect("")?, "vertex")?;
    for p in XYZ {
        expect(&format!("property float {p}"))?;
    }
    let (o, l) = expect("")?;
    let (with_normals, face_line) = if l == "property float nx" {
        expect("property float ny")?;
        expect("property float nz")?;
        (true, expect("")?)
    } else {
        (false, (o, l))
    };
    let nf = count(face_line, "face")?;
    expect("property list uchar int vertex_indices")?;
    if let Some((o, l)) = it.next() {
        return Err(err(o, format!("unsupported header line {l:?}")));
    }

    let per_vertex = if with_normals { 24 } else { 12 };
    let size = nv
        .checked_mul(per_vertex)
        .and_then(|a| nf.checked_mul(13).and_then(|b| a.checked_add(b)))
        .ok_or_else(|| err(0, "element counts overflow"))?;
    let have = bytes.len() - body;
    if have < size {
        return Err(err(bytes.len(), format!("truncated body: expected {size} bytes, found {have}")));
    }
    if have > size {
        return Err(err(body + size, format!("{} trailing bytes", have - size)));
    }
    let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let cast = |x: f32| T::from_f32(x).unwrap_or_else(T::nan);
    let mut vertices = Vec::with_capacity(nv);
    let mut normals = with_normals.then(|| Vec::with_capacity(nv));
    for i in 0..nv {
        let o = body + i * per_vertex;
        vertices.push([cast(f(o)), cast(f(o + 4)), cast(f(o + 8))]);
        if let Some(ns) = normals.as_mut() {
            ns.push([cast(f(o + 12)), cast(f(o + 16)), cast(f(o + 20))]);
        }
    }
    let mut faces = Vec::with_capacity(nf);
    let start = body + nv * per_vertex;
    for i in 0..nf {
        let o = start + i * 13;
        if bytes[o] != 3 {
            return Err(err(o, format!("face {i} has {} vertices, only triangles are supported", bytes[o])));
        }
        let mut face = [0u32; 3];
        for (k, slot) in face.iter_mut().enumerate() {
            let p = o + 1 + 4 * k;
            let idx = i32::from_le_bytes(bytes[p..p + 4].try_into().expect("4 bytes"));
            if idx < 0 || idx as usize >= nv {
                return Err(err(p, format!("face {i} index {idx} out of range 0..{nv}")));
            }
            *slot = idx as u32;
        }
        faces.push(face);
    }
    Ok(TriangleMesh {
        vertices,
        faces,
        normals,
    })
}

pub fn read_ply<T: Real>(path: &Path) -> Result<TriangleMesh<T>> {
    decode_ply(&std::fs::read(path)?)
}

pub fn write_mesh<T: Real>(path: &Path, m: &TriangleMesh<T>, format: MeshFormat) -> Result<()> {
    let bytes = match format {
        MeshFormat::Obj => encode_obj(m)?,
        MeshFormat::PlyBinary => encode_ply(m)?,
    };
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> TriangleMesh<f32> {
        TriangleMesh {
            vertices: vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.5]],
            faces: vec![[0, 1, 2]],
            normals: None,
        }
    }

    #[test]
    fn obj_lines() {
        let s = String::from_utf8(encode_obj(&triangle()).unwrap()).unwrap();
        assert_eq!(s.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(s.lines().filter(|l| l.starts_with("f ")).collect::<Vec<_>>(), vec!["f 1 2 3"]);
        assert!(s.contains("v 0 1 1.5\n"));
    }

    #[test]
    fn ply_round_trip_with_and_without_normals() {
        let mut m = triangle();
        assert_eq!(decode_ply::<f32>(&encode_ply(&m).unwrap()).unwrap(), m);
        m.normals = Some(vec![[0.0, 0.0, 1.0]; 3]);
        let bytes = encode_ply(&m).unwrap();
        assert!(bytes.starts_with(b"ply\nformat binary_little_endian 1.0\nelement vertex 3\n"));
        assert_eq!(decode_ply::<f32>(&bytes).unwrap(), m);
    }

    #[test]
    fn ply_rejects_bad_index_and_polygon() {
        let mut bytes = encode_ply(&triangle()).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&7i32.to_le_bytes());
        assert!(matches!(decode_ply::<f32>(&bytes), Err(Error::Format { offset, .. }) if offset == n - 4));
        bytes[n - 13] = 4;
        assert!(matches!(decode_ply::<f32>(&bytes), Err(Error::Format { offset, .. }) if offset == n - 13));
    }

    #[test]
    fn writer_rejects_out_of_range_faces() {
        let mut m = triangle();
        m.faces[0][2] = 3;
        assert!(encode_ply(&m).is_err() && encode_obj(&m).is_err());
    }
}
