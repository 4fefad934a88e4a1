//! Geometry and diffusion mathematics for joint depth/normal estimation.
//!
//! * [`geometry`]: pinhole unprojection, plane-fit normals, angular distance,
//!   RGB normal encoding, far-plane handling.
//! * [`alignment`]: affine depth alignment by least squares and by
//!   normal consistency.
//! * [`integration`]: bilateral normal integration and meshing.
//! * [`evaluation`]: depth, normal and depth/normal consistency metrics.
//! * [`diffusion`]: variance-preserving schedule, v-prediction, multi-scale
//!   noise, conditioning embeddings, cross-domain attention and a toy
//!   denoiser with analytic gradients.
//! * [`io`]: PFM, PNG, OBJ/PLY and intrinsics files.
//!
//! All numeric code is generic over [`Real`]; the aliases below fix it to
//! `f64` or `f32`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod geometry;
pub mod integration;
pub mod io;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Intrinsics64 = geometry::Intrinsics<f64>;
pub type Intrinsics32 = geometry::Intrinsics<f32>;
pub type DepthMap64 = geometry::DepthMap<f64>;
pub type DepthMap32 = geometry::DepthMap<f32>;
pub type NormalMap64 = geometry::NormalMap<f64>;
pub type NormalMap32 = geometry::NormalMap<f32>;
pub type AffineDepthParams64 = alignment::AffineDepthParams<f64>;
pub type AffineDepthParams32 = alignment::AffineDepthParams<f32>;
