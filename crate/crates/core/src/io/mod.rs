//! File formats: PFM, 16-bit depth PNG, 8-bit normal PNG, OBJ, binary PLY,
//! `key = value` intrinsics and toy-denoiser parameter files.
//!
//! Every writer goes through [`write_atomic`]. Every reader returns
//! [`Error::Format`](crate::Error::Format) with a byte offset on malformed
//! input instead of panicking.

mod intrinsics;
mod mesh;
mod pfm;
mod png;

use std::io::Write;
use std::path::Path;

pub use intrinsics::{format_intrinsics, parse_intrinsics, read_intrinsics, write_intrinsics};
pub use mesh::{decode_ply, encode_obj, encode_ply, read_ply, write_mesh, MeshFormat};
pub use pfm::{
    decode_depth_pfm, decode_normal_pfm, decode_pfm, encode_depth_pfm, encode_normal_pfm, encode_pfm,
    read_depth_pfm, read_normal_pfm, write_depth_pfm, write_normal_pfm, Pfm,
};
pub use png::{
    decode_depth_png16, decode_normal_png, encode_depth_png16, encode_normal_png, read_depth_png16,
    read_normal_png, write_depth_png16, write_normal_png,
};

use crate::diffusion::toy::{params_from_bytes, params_to_bytes, ToyParams};
use crate::{Real, Result};

/// Writes to a temporary file in the destination directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn read_toy_params<T: Real>(path: &Path) -> Result<ToyParams<T>> {
    params_from_bytes(&std::fs::read(path)?)
}

pub fn write_toy_params<T: Real>(path: &Path, p: &ToyParams<T>) -> Result<()> {
    write_atomic(path, &params_to_bytes(p))
}
