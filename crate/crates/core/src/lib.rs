//! Forward light transport from an object through a Phong scattering surface
//! to a lens-imaged detector, the transfer matrix of that map, its
//! singular-value bandwidth, regularized inversion, SSIM scoring and dataset
//! export.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix it to `f64`.

pub mod brdf;
pub mod dataset;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod scalar;
pub mod transfer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec3d = geometry::Vec3<f64>;
pub type Scene = geometry::Scene<f64>;
pub type Surface = brdf::PhongSurface<f64>;
pub type Params = brdf::PhongParams<f64>;
pub type Object = forward::ObjectImage<f64>;
pub type Pattern = forward::ScatterPattern<f64>;
pub type Renderer = forward::Renderer<f64>;
pub type Matrix = transfer::TransferMatrix<f64>;
pub type Spectrum = transfer::SvdSpectrum<f64>;
pub type Factors = transfer::SvdFactors<f64>;
pub type Recon = transfer::Reconstruction<f64>;
pub type Grid = image::Image<f64>;
