//! Reconstruction of physically consistent, time-varying 3D velocity fields
//! from a density-field sequence.
//!
//! The pipeline optimizes explicit per-frame velocity grids at two spatial
//! scales against transport, vorticity, divergence, kinetic-energy and
//! boundary losses (coarse level), then advection, warp and projection losses
//! (fine level), and combines both levels into a full velocity field. A small
//! buoyant-smoke solver generates ground-truth scenes, and a metric suite
//! (masked L2 errors, re-simulation PSNR/SSIM, tracer advection, ablations)
//! evaluates the result.
//!
//! All field math is generic over the scalar type via [`Real`]; the shipped
//! pipeline instantiates `f64` (see the type aliases at the crate root).
//! Single precision appears only in the on-disk field format.

use std::fmt;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

pub mod autodiff;
pub mod fields;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod ops;
pub mod projection;
pub mod recon;
pub mod render;
pub mod sim;
pub mod tracer;
pub mod transport;
pub mod util;
pub mod vec3;

/// Floating-point scalar usable for all field math: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + std::iter::Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + std::iter::Sum
        + fmt::Debug
        + fmt::Display
        + Send
        + Sync
        + 'static
{
}

/// Convert an `f64` literal into the working scalar type.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal must convert into the scalar type")
}

/// Scalar type used by the shipped pipeline and CLI.
pub type Scalar = f64;
/// Double-precision scalar grid.
pub type ScalarGrid64 = grid::ScalarGrid<f64>;
/// Double-precision vector grid.
pub type VectorGrid64 = grid::VectorGrid<f64>;
/// Double-precision scalar-field sequence.
pub type ScalarSeq64 = grid::ScalarSequence<f64>;
/// Double-precision vector-field sequence.
pub type VectorSeq64 = grid::VectorSequence<f64>;

/// Errors produced by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("field file: {0}")]
    Format(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("mask selects no cells")]
    EmptyMask,
    #[error("unknown loss '{0}'")]
    UnknownLoss(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
