//! Scene geometry: local object/detector planes, the lens, and chief-ray
//! intersection with the scattering surface.
//!
//! The scattering surface is the global `z = 0` plane with normal `+z`. The
//! object plane is tilted by `alpha` on the `-x` side, the detector axis by
//! `beta` on the `+x` side; both optical axes pass through the global origin.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Absolute floor (cm) below which a chief-ray denominator or a distance is
/// treated as degenerate.
pub const GEOMETRY_EPS_CM: f64 = 1e-9;

/// Point or direction in the global frame, lengths in cm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn unit_z() -> Self {
        Self::new(T::zero(), T::zero(), T::one())
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Geometric and optical parameters of the imaging setup.
///
/// Angles are in degrees, lengths in cm. The JSON field names are part of the
/// config file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub alpha_deg: f64,
    pub beta_deg: f64,
    #[serde(rename = "L_o_cm")]
    pub l_o_cm: f64,
    #[serde(rename = "L_i_cm")]
    pub l_i_cm: f64,
    pub d_cm: f64,
    pub a_lens_cm: f64,
    pub detector_pixels: usize,
    pub detector_size_cm: f64,
    pub object_pixels: usize,
    pub object_size_cm: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            alpha_deg: 15.0,
            beta_deg: 15.0,
            l_o_cm: 20.0,
            l_i_cm: 20.0,
            d_cm: 0.8,
            a_lens_cm: 0.1,
            detector_pixels: 128,
            detector_size_cm: 1.0,
            object_pixels: 30,
            object_size_cm: 18.0,
        }
    }
}

impl SceneConfig {
    /// Checks the config invariants. Emits a warning (not an error) when the
    /// lens numerical aperture leaves the small-aperture regime.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let all = [
            self.alpha_deg,
            self.beta_deg,
            self.l_o_cm,
            self.l_i_cm,
            self.d_cm,
            self.a_lens_cm,
            self.detector_size_cm,
            self.object_size_cm,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        for (name, v) in [
            ("L_o_cm", self.l_o_cm),
            ("L_i_cm", self.l_i_cm),
            ("d_cm", self.d_cm),
            ("a_lens_cm", self.a_lens_cm),
            ("detector_size_cm", self.detector_size_cm),
            ("object_size_cm", self.object_size_cm),
        ] {
            if v <= 0.0 {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [("alpha_deg", self.alpha_deg), ("beta_deg", self.beta_deg)] {
            if !(0.0..90.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 90), got {v}"));
            }
        }
        if self.detector_pixels == 0 || self.object_pixels == 0 {
            return bad("pixel counts must be >= 1".into());
        }
        let beta = self.beta_deg.to_radians();
        if self.d_cm * beta.cos() <= 0.5 * self.detector_size_cm * beta.sin() {
            return bad(format!(
                "chief-ray denominator vanishes inside the sensor: d*cos(beta) = {} <= (size/2)*sin(beta) = {}",
                self.d_cm * beta.cos(),
                0.5 * self.detector_size_cm * beta.sin()
            ));
        }
        let na = self.a_lens_cm / self.l_i_cm;
        if na > 0.05 {
            log::warn!(
                "a_lens/L_i = {na:.4} exceeds 0.05; the small-aperture approximation degrades"
            );
        }
        Ok(())
    }

    pub fn detector_pitch_cm(&self) -> f64 {
        self.detector_size_cm / self.detector_pixels as f64
    }

    pub fn object_pitch_cm(&self) -> f64 {
        self.object_size_cm / self.object_pixels as f64
    }

    /// Number of detector pixels (rows of the transfer matrix).
    pub fn detector_len(&self) -> usize {
        self.detector_pixels * self.detector_pixels
    }

    /// Number of object pixels (columns of the transfer matrix).
    pub fn object_len(&self) -> usize {
        self.object_pixels * self.object_pixels
    }
}

/// Local coordinate of the center of pixel `index` along one axis of an
/// `n`-pixel grid with the given pitch. Column index maps to `x`, and
/// `-(row index)` maps to `y` via [`pixel_center`].
#[inline]
fn axis_center<T: Real>(index: usize, n: usize, pitch: T) -> T {
    (T::from_usize_lossy(index) + T::lit(0.5) - T::from_usize_lossy(n) / T::lit(2.0)) * pitch
}

/// Local `(x, y)` of the center of pixel `(row, col)` on an `n`x`n` grid.
///
/// `x = (col + 0.5 - n/2) * pitch`, `y = (n/2 - row - 0.5) * pitch`.
#[inline]
pub fn pixel_center<T: Real>(row: usize, col: usize, n: usize, pitch: T) -> (T, T) {
    let x = axis_center(col, n, pitch);
    let y = (T::from_usize_lossy(n) / T::lit(2.0) - T::from_usize_lossy(row) - T::lit(0.5)) * pitch;
    (x, y)
}

/// A validated [`SceneConfig`] with angles converted and trigonometry cached.
#[derive(Debug, Clone)]
pub struct Scene<T> {
    config: SceneConfig,
    sin_alpha: T,
    cos_alpha: T,
    sin_beta: T,
    cos_beta: T,
    l_o: T,
    l_i: T,
    d: T,
    a_lens: T,
    detector_pitch: T,
    object_pitch: T,
    lens_center: Vec3<T>,
}

impl<T: Real> Scene<T> {
    pub fn new(config: &SceneConfig) -> Result<Self> {
        config.validate()?;
        let alpha = T::lit(config.alpha_deg.to_radians());
        let beta = T::lit(config.beta_deg.to_radians());
        let l_i = T::lit(config.l_i_cm);
        let (sin_beta, cos_beta) = (beta.sin(), beta.cos());
        Ok(Self {
            config: config.clone(),
            sin_alpha: alpha.sin(),
            cos_alpha: alpha.cos(),
            sin_beta,
            cos_beta,
            l_o: T::lit(config.l_o_cm),
            l_i,
            d: T::lit(config.d_cm),
            a_lens: T::lit(config.a_lens_cm),
            // pitch computed in f64 then rounded once
            detector_pitch: T::lit(config.detector_pitch_cm()),
            object_pitch: T::lit(config.object_pitch_cm()),
            lens_center: Vec3::new(l_i * sin_beta, T::zero(), l_i * cos_beta),
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    #[inline]
    pub fn detector_pitch(&self) -> T {
        self.detector_pitch
    }

    #[inline]
    pub fn object_pitch(&self) -> T {
        self.object_pitch
    }

    #[inline]
    pub fn a_lens(&self) -> T {
        self.a_lens
    }

    #[inline]
    pub fn d(&self) -> T {
        self.d
    }

    /// Pixel area `A_p` of one detector pixel.
    #[inline]
    pub fn pixel_area(&self) -> T {
        self.detector_pitch * self.detector_pitch
    }

    /// Local coordinates of detector pixel `index` in raster order.
    #[inline]
    pub fn detector_pixel(&self, index: usize) -> (T, T) {
        let n = self.config.detector_pixels;
        pixel_center(index / n, index % n, n, self.detector_pitch)
    }

    /// Local coordinates of object pixel `index` in raster order.
    #[inline]
    pub fn object_pixel(&self, index: usize) -> (T, T) {
        let n = self.config.object_pixels;
        pixel_center(index / n, index % n, n, self.object_pitch)
    }

    /// Global position of the local object-plane point `(x_o, y_o)`.
    #[inline]
    pub fn object_point(&self, x_o: T, y_o: T) -> Vec3<T> {
        Vec3::new(
            x_o * self.cos_alpha - self.l_o * self.sin_alpha,
            y_o,
            x_o * self.sin_alpha + self.l_o * self.cos_alpha,
        )
    }

    /// Global position of the local detector-plane point `(x_i, y_i)`.
    #[inline]
    pub fn detector_point(&self, x_i: T, y_i: T) -> Vec3<T> {
        let reach = self.l_i + self.d;
        Vec3::new(
            x_i * self.cos_beta + reach * self.sin_beta,
            y_i,
            -x_i * self.sin_beta + reach * self.cos_beta,
        )
    }

    /// Center `C` of the imaging lens.
    #[inline]
    pub fn lens_center(&self) -> Vec3<T> {
        self.lens_center
    }

    /// Point on the scattering surface imaged by the detector point
    /// `(x_i, y_i)`: the chief ray through the lens center meets `z = 0`.
    #[inline]
    pub fn surface_hit(&self, x_i: T, y_i: T) -> Result<Vec3<T>> {
        let den = x_i * self.sin_beta - self.d * self.cos_beta;
        if den.abs() < T::lit(GEOMETRY_EPS_CM) {
            return Err(Error::DegenerateGeometry(format!(
                "chief ray parallel to the surface at detector point ({x_i}, {y_i})"
            )));
        }
        Ok(Vec3::new(
            self.l_i * x_i / den,
            self.l_i * self.cos_beta * y_i / den,
            T::zero(),
        ))
    }
}

/// Convenience wrappers taking the plain config, for one-off evaluations.
pub fn object_point<T: Real>(x_o: T, y_o: T, cfg: &SceneConfig) -> Result<Vec3<T>> {
    Ok(Scene::new(cfg)?.object_point(x_o, y_o))
}

pub fn detector_point<T: Real>(x_i: T, y_i: T, cfg: &SceneConfig) -> Result<Vec3<T>> {
    Ok(Scene::new(cfg)?.detector_point(x_i, y_i))
}

pub fn lens_center<T: Real>(cfg: &SceneConfig) -> Vec3<T> {
    let beta = T::lit(cfg.beta_deg.to_radians());
    let l_i = T::lit(cfg.l_i_cm);
    Vec3::new(l_i * beta.sin(), T::zero(), l_i * beta.cos())
}

pub fn surface_hit<T: Real>(x_i: T, y_i: T, cfg: &SceneConfig) -> Result<Vec3<T>> {
    Scene::new(cfg)?.surface_hit(x_i, y_i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> SceneConfig {
        SceneConfig::default()
    }

    fn scene() -> Scene<f64> {
        Scene::new(&cfg()).unwrap()
    }

    fn with_angles(alpha: f64, beta: f64) -> SceneConfig {
        SceneConfig {
            alpha_deg: alpha,
            beta_deg: beta,
            ..cfg()
        }
    }

    #[test]
    fn object_origin_maps_onto_tilted_axis() {
        let p = scene().object_point(0.0, 0.0);
        let a = 15f64.to_radians();
        assert_relative_eq!(p.x, -20.0 * a.sin(), epsilon = 1e-14);
        assert_eq!(p.y, 0.0);
        assert_relative_eq!(p.z, 20.0 * a.cos(), epsilon = 1e-14);
        assert_relative_eq!(p.x, -5.176, epsilon = 1e-3);
        assert_relative_eq!(p.z, 19.319, epsilon = 1e-3);
    }

    #[test]
    fn zero_tilt_object_and_detector() {
        let s = Scene::<f64>::new(&with_angles(0.0, 0.0)).unwrap();
        assert_eq!(s.object_point(1.5, -2.0), Vec3::new(1.5, -2.0, 20.0));
        assert_eq!(s.detector_point(0.25, 0.1), Vec3::new(0.25, 0.1, 20.8));
        assert_eq!(s.lens_center(), Vec3::new(0.0, 0.0, 20.0));
    }

    #[test]
    fn object_point_matches_rotation_then_translation() {
        // rotate the local point about +y by -alpha, then translate along the
        // rotated axis by L_o
        let s = scene();
        let a = 15f64.to_radians();
        let (xo, yo) = (1.3, -2.0);
        // local plane point with normal +z, translated by L_o along z
        let local = [xo, yo, 20.0];
        let rot = [
            [a.cos(), 0.0, -a.sin()],
            [0.0, 1.0, 0.0],
            [a.sin(), 0.0, a.cos()],
        ];
        let oracle: Vec<f64> = (0..3)
            .map(|r| (0..3).map(|c| rot[r][c] * local[c]).sum())
            .collect();
        let p = s.object_point(xo, yo);
        assert_relative_eq!(p.x, oracle[0], max_relative = 1e-14);
        assert_relative_eq!(p.y, oracle[1], max_relative = 1e-14);
        assert_relative_eq!(p.z, oracle[2], max_relative = 1e-14);
    }

    #[test]
    fn detector_center_and_lens_center() {
        let s = scene();
        let b = 15f64.to_radians();
        let p = s.detector_point(0.0, 0.0);
        assert_relative_eq!(p.x, 20.8 * b.sin(), epsilon = 1e-14);
        assert_relative_eq!(p.z, 20.8 * b.cos(), epsilon = 1e-14);
        let c = s.lens_center();
        assert_relative_eq!(c.x, 5.176, epsilon = 1e-3);
        assert_relative_eq!(c.z, 19.319, epsilon = 1e-3);
        let grazing = lens_center::<f64>(&SceneConfig {
            beta_deg: 90.0,
            ..cfg()
        });
        assert_relative_eq!(grazing.x, 20.0, epsilon = 1e-12);
        assert!(grazing.z.abs() < 1e-12);
    }

    #[test]
    fn axial_chief_ray_hits_origin() {
        let hit = scene().surface_hit(0.0, 0.0).unwrap();
        assert_eq!(hit.x, 0.0);
        assert_eq!(hit.y, 0.0);
        assert_eq!(hit.z, 0.0);
    }

    #[test]
    fn off_axis_chief_ray_substitution() {
        let b = 15f64.to_radians();
        let hit = scene().surface_hit(0.1, 0.0).unwrap();
        assert_relative_eq!(
            hit.x,
            2.0 / (0.1 * b.sin() - 0.8 * b.cos()),
            max_relative = 1e-14
        );
        assert_relative_eq!(hit.x, -2.678, epsilon = 1e-3);
        assert_eq!(hit.y, 0.0);
    }

    #[test]
    fn degenerate_chief_ray_is_reported() {
        let s = scene();
        let b = 15f64.to_radians();
        let x_i = 0.8 * b.cos() / b.sin();
        assert!(matches!(
            s.surface_hit(x_i, 0.0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(SceneConfig {
            l_o_cm: 0.0,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(SceneConfig {
            beta_deg: 90.0,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(SceneConfig {
            object_pixels: 0,
            ..cfg()
        }
        .validate()
        .is_err());
        // sensor edge reaches the plane parallel to the chief ray
        assert!(SceneConfig {
            beta_deg: 60.0,
            d_cm: 0.2,
            ..cfg()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn config_json_keys_and_defaults() {
        let json = serde_json::to_value(cfg()).unwrap();
        for key in [
            "alpha_deg",
            "beta_deg",
            "L_o_cm",
            "L_i_cm",
            "d_cm",
            "a_lens_cm",
            "detector_pixels",
            "detector_size_cm",
            "object_pixels",
            "object_size_cm",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let partial: SceneConfig = serde_json::from_str(r#"{"alpha_deg": 10.0}"#).unwrap();
        assert_eq!(partial.alpha_deg, 10.0);
        assert_eq!(partial.l_i_cm, 20.0);
        assert!(serde_json::from_str::<SceneConfig>(r#"{"alfa": 1}"#).is_err());
    }

    #[test]
    fn pixel_center_convention() {
        let (x, y) = pixel_center::<f64>(0, 0, 4, 1.0);
        assert_eq!((x, y), (-1.5, 1.5));
        let (x, y) = pixel_center::<f64>(3, 3, 4, 1.0);
        assert_eq!((x, y), (1.5, -1.5));
        // mirrored rows give exactly negated y
        for n in [3, 30, 128] {
            for r in 0..n {
                let (_, y1) = pixel_center::<f64>(r, 0, n, 0.37);
                let (_, y2) = pixel_center::<f64>(n - 1 - r, 0, n, 0.37);
                assert_eq!(y1, -y2);
            }
        }
    }

    #[test]
    fn generic_over_f32() {
        let s = Scene::<f32>::new(&cfg()).unwrap();
        let hit = s.surface_hit(0.1, 0.2).unwrap();
        let hit64 = scene().surface_hit(0.1, 0.2).unwrap();
        assert_relative_eq!(hit.x as f64, hit64.x, max_relative = 1e-5);
        assert_relative_eq!(hit.y as f64, hit64.y, max_relative = 1e-5);
    }

    fn line_plane_oracle(p: Vec3<f64>, c: Vec3<f64>) -> (f64, f64) {
        // p + t (c - p) with z = 0
        let t = -p.z / (c.z - p.z);
        (p.x + t * (c.x - p.x), p.y + t * (c.y - p.y))
    }

    proptest! {
        #[test]
        fn chief_ray_matches_line_plane_intersection(
            x_i in -0.5f64..0.5, y_i in -0.5f64..0.5, beta in 0.0f64..40.0,
        ) {
            let s = Scene::<f64>::new(&with_angles(15.0, beta)).unwrap();
            let hit = s.surface_hit(x_i, y_i).unwrap();
            let (ox, oy) = line_plane_oracle(s.detector_point(x_i, y_i), s.lens_center());
            prop_assert!((hit.x - ox).abs() <= 1e-12 * ox.abs().max(1.0));
            prop_assert!((hit.y - oy).abs() <= 1e-12 * oy.abs().max(1.0));
        }

        #[test]
        fn chief_ray_is_collinear(x_i in -0.5f64..0.5, y_i in -0.5f64..0.5) {
            let s = scene();
            let rs = s.surface_hit(x_i, y_i).unwrap();
            let c = s.lens_center() - rs;
            let ri = s.detector_point(x_i, y_i) - rs;
            let cross = c.cross(ri).norm();
            prop_assert!(cross <= 1e-9 * c.norm() * ri.norm());
        }

        #[test]
        fn surface_hit_mirrors_in_y(x_i in -0.5f64..0.5, y_i in -0.5f64..0.5) {
            let s = scene();
            let a = s.surface_hit(x_i, y_i).unwrap();
            let b = s.surface_hit(x_i, -y_i).unwrap();
            prop_assert_eq!(a.x, b.x);
            prop_assert_eq!(a.y, -b.y);
        }

        #[test]
        fn lens_to_detector_distance_is_tilt_invariant(
            x_i in -0.5f64..0.5, y_i in -0.5f64..0.5, beta in 0.0f64..45.0,
        ) {
            let s = Scene::<f64>::new(&with_angles(15.0, beta)).unwrap();
            let dist = (s.detector_point(x_i, y_i) - s.lens_center()).norm();
            let oracle = (x_i * x_i + y_i * y_i + 0.8 * 0.8).sqrt();
            prop_assert!((dist - oracle).abs() <= 1e-12 * oracle);
        }

        #[test]
        fn local_planes_map_isometrically(
            a in prop::array::uniform2(-9.0f64..9.0),
            b in prop::array::uniform2(-9.0f64..9.0),
        ) {
            let s = scene();
            let local = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            let obj = (s.object_point(a[0], a[1]) - s.object_point(b[0], b[1])).norm();
            let det = (s.detector_point(a[0], a[1]) - s.detector_point(b[0], b[1])).norm();
            prop_assert!((obj - local).abs() <= 1e-12 * local.max(1e-9) + 1e-13);
            prop_assert!((det - local).abs() <= 1e-12 * local.max(1e-9) + 1e-13);
        }
    }
}
