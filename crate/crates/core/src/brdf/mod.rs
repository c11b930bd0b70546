//! Phong scattering model: a Lambertian floor plus a `cos^gamma` lobe around
//! the mirror direction.

mod fit;

pub use fit::{
    eval_fit_model, fit_loss, fit_phong, read_samples_csv, BrdfFitResult, BrdfSample, FitOptions,
    DEFAULT_ALPHA1, DEFAULT_ALPHA2,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Vec3, GEOMETRY_EPS_CM};
use crate::scalar::Real;

/// Weights and shininess at one surface point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhongParams<T> {
    pub sigma_l: T,
    pub sigma_s: T,
    pub gamma: T,
}

impl<T: Real> PhongParams<T> {
    pub fn new(sigma_l: T, sigma_s: T, gamma: T) -> Self {
        Self {
            sigma_l,
            sigma_s,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_l >= T::zero()
            && self.sigma_s >= T::zero()
            && self.gamma >= T::zero()
            && self.gamma.is_finite()
            && self.sigma_l.is_finite()
            && self.sigma_s.is_finite()
            && self.sigma_l + self.sigma_s > T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "phong parameters need sigma_l, sigma_s, gamma >= 0 (finite) and sigma_l + sigma_s > 0; got ({}, {}, {})",
                self.sigma_l, self.sigma_s, self.gamma
            )))
        }
    }
}

/// Regular grid of per-point Phong parameters on the scattering surface,
/// sampled by nearest neighbour (clamped at the grid edges).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMap<T> {
    /// Surface coordinate (cm) of sample `(0, 0)`.
    pub origin_x: T,
    pub origin_y: T,
    pub step_x: T,
    pub step_y: T,
    pub nx: usize,
    pub ny: usize,
    /// Row-major over `y` then `x`: index `iy * nx + ix`.
    pub samples: Vec<PhongParams<T>>,
}

impl<T: Real> SpatialMap<T> {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.samples.len() != self.nx * self.ny {
            return Err(Error::InvalidParameter(format!(
                "spatial map declares {}x{} samples but holds {}",
                self.nx,
                self.ny,
                self.samples.len()
            )));
        }
        if !(self.step_x > T::zero() && self.step_y > T::zero()) {
            return Err(Error::InvalidParameter(
                "spatial map steps must be > 0".into(),
            ));
        }
        self.samples.iter().try_for_each(PhongParams::validate)
    }

    fn nearest(coord: T, origin: T, step: T, n: usize) -> usize {
        let idx = ((coord - origin) / step).round();
        if idx <= T::zero() {
            0
        } else {
            idx.to_usize().unwrap_or(usize::MAX).min(n - 1)
        }
    }

    pub fn lookup(&self, x_s: T, y_s: T) -> PhongParams<T> {
        let ix = Self::nearest(x_s, self.origin_x, self.step_x, self.nx);
        let iy = Self::nearest(y_s, self.origin_y, self.step_y, self.ny);
        self.samples[iy * self.nx + ix]
    }
}

/// Scattering description of the whole surface: uniform parameters with an
/// optional spatially varying override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhongSurface<T> {
    pub sigma_l: T,
    pub sigma_s: T,
    pub gamma: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_map: Option<SpatialMap<T>>,
}

impl<T: Real> PhongSurface<T> {
    pub fn uniform(sigma_l: T, sigma_s: T, gamma: T) -> Self {
        Self {
            sigma_l,
            sigma_s,
            gamma,
            spatial_map: None,
        }
    }

    /// Purely diffuse surface with unit weight.
    pub fn lambertian() -> Self {
        Self::uniform(T::one(), T::zero(), T::zero())
    }

    /// Surface with `sigma_l = 1 - sigma_s`.
    pub fn complementary(sigma_s: T, gamma: T) -> Self {
        Self::uniform(T::one() - sigma_s, sigma_s, gamma)
    }

    pub fn with_map(mut self, map: SpatialMap<T>) -> Self {
        self.spatial_map = Some(map);
        self
    }

    pub fn validate(&self) -> Result<()> {
        PhongParams::new(self.sigma_l, self.sigma_s, self.gamma).validate()?;
        if let Some(m) = &self.spatial_map {
            m.validate()?;
        }
        Ok(())
    }

    /// Parameters in effect at the surface point `r_s`.
    #[inline]
    pub fn params_at(&self, r_s: Vec3<T>) -> PhongParams<T> {
        match &self.spatial_map {
            Some(m) => m.lookup(r_s.x, r_s.y),
            None => PhongParams::new(self.sigma_l, self.sigma_s, self.gamma),
        }
    }

    pub fn cast<U: Real>(&self) -> PhongSurface<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        let p = |q: &PhongParams<T>| PhongParams::new(c(q.sigma_l), c(q.sigma_s), c(q.gamma));
        PhongSurface {
            sigma_l: c(self.sigma_l),
            sigma_s: c(self.sigma_s),
            gamma: c(self.gamma),
            spatial_map: self.spatial_map.as_ref().map(|m| SpatialMap {
                origin_x: c(m.origin_x),
                origin_y: c(m.origin_y),
                step_x: c(m.step_x),
                step_y: c(m.step_y),
                nx: m.nx,
                ny: m.ny,
                samples: m.samples.iter().map(p).collect(),
            }),
        }
    }
}

/// Cosine between the viewing direction `r_s -> r_i` and the mirror
/// reflection of the incident direction `r_o -> r_s`, clamped at zero.
#[inline]
pub fn specular_cosine<T: Real>(r_o: Vec3<T>, r_s: Vec3<T>, r_i: Vec3<T>) -> Result<T> {
    let eps = T::lit(GEOMETRY_EPS_CM);
    if r_o.z <= T::zero() || r_i.z <= T::zero() {
        return Err(Error::DegenerateGeometry(
            "source and viewer must lie strictly above the surface".into(),
        ));
    }
    let incident = r_o - r_s;
    let view = r_i - r_s;
    let d_in = incident.norm();
    let d_view = view.norm();
    if d_in < eps || d_view < eps {
        return Err(Error::DegenerateGeometry(format!(
            "distance below {GEOMETRY_EPS_CM} cm (|r_o - r_s| = {d_in}, |r_i - r_s| = {d_view})"
        )));
    }
    // r_s - r_o + 2 (r_o . z) z; valid because r_s lies on z = 0
    let two = T::lit(2.0);
    let mirror = Vec3::new(r_s.x - r_o.x, r_s.y - r_o.y, r_s.z - r_o.z + two * r_o.z);
    let cos = mirror.dot(view) / (d_in * d_view);
    Ok(cos.max(T::zero()))
}

/// Specular lobe factor `cos^gamma` with back-hemisphere directions zeroed.
#[inline]
pub(crate) fn lobe<T: Real>(cos: T, gamma: T) -> T {
    if cos > T::zero() {
        cos.powf(gamma)
    } else {
        T::zero()
    }
}

/// `sigma_l + sigma_s * specular_cosine^gamma` at the surface point `r_s`.
#[inline]
pub fn phong_weight<T: Real>(
    r_o: Vec3<T>,
    r_s: Vec3<T>,
    r_i: Vec3<T>,
    surf: &PhongSurface<T>,
) -> Result<T> {
    let cos = specular_cosine(r_o, r_s, r_i)?;
    let p = surf.params_at(r_s);
    Ok(p.sigma_l + p.sigma_s * lobe(cos, p.gamma))
}
