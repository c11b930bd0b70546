//! Point-spread function and rendering of detected scattering patterns.
//!
//! An object pixel at `r_o` contributes to detector pixel `(x_i, y_i)` through
//! the surface point `r_s` on its chief ray:
//!
//! ```text
//! h = A_p π a² · ((r_o - r_s)·z) / (|r_i - C|² |r_o - r_s|³) · cos²ψ
//!       · (σ_l + σ_s cos^γ(δ)) / cos(θ_view)
//! ```
//!
//! where `ψ` is the angle between `C - r_s` and the lens axis, `δ` the
//! deviation from the mirror direction and `θ_view` the viewing angle at
//! `r_s`. The pattern is the midpoint-rule sum over object pixels of
//! `f · h · pitch²`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::brdf::{phong_weight, PhongSurface};
use crate::error::{Error, Result};
use crate::geometry::{Scene, SceneConfig, Vec3, GEOMETRY_EPS_CM};
use crate::image::Image;
use crate::scalar::Real;

/// Smallest accepted viewing cosine at the surface.
pub const MIN_VIEW_COSINE: f64 = 1e-6;

/// Batches at least this large precompute the full kernel once.
const KERNEL_BATCH_THRESHOLD: usize = 8;

/// Object intensity on the object-plane grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectImage<T> {
    image: Image<T>,
}

impl<T: Real> ObjectImage<T> {
    /// Wraps a square, nonnegative, finite grid.
    pub fn new(image: Image<T>) -> Result<Self> {
        if image.rows() != image.cols() {
            return Err(Error::DimensionMismatch {
                expected: "square object grid".into(),
                actual: format!("{}x{}", image.rows(), image.cols()),
            });
        }
        if let Some(v) = image
            .as_slice()
            .iter()
            .find(|v| !(v.is_finite() && **v >= T::zero()))
        {
            return Err(Error::InvalidParameter(format!(
                "object intensities must be finite and >= 0, found {v}"
            )));
        }
        Ok(Self { image })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            image: Image::zeros(n, n),
        }
    }

    /// Unit intensity at raster index `index`, zero elsewhere.
    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut image = Image::zeros(n, n);
        image.as_mut_slice()[index] = T::one();
        Self { image }
    }

    pub fn side(&self) -> usize {
        self.image.rows()
    }

    pub fn image(&self) -> &Image<T> {
        &self.image
    }

    pub fn into_image(self) -> Image<T> {
        self.image
    }

    pub fn as_slice(&self) -> &[T] {
        self.image.as_slice()
    }

    /// Physical pixel pitch (cm) under `cfg`.
    pub fn pitch_cm(&self, cfg: &SceneConfig) -> f64 {
        cfg.object_size_cm / self.side() as f64
    }
}

/// Detected flux on the detector grid, tagged with the scene fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPattern<T> {
    pub image: Image<T>,
    pub config_hash: String,
}

impl<T: Real> ScatterPattern<T> {
    pub fn as_slice(&self) -> &[T] {
        self.image.as_slice()
    }
}

/// Hex fingerprint of everything that determines a pattern or a matrix.
pub fn config_hash<T: Real>(cfg: &SceneConfig, surf: &PhongSurface<T>) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        scene: &'a SceneConfig,
        surface: PhongSurface<f64>,
        scalar: &'static str,
    }
    let key = Key {
        scene: cfg,
        surface: surf.cast(),
        scalar: T::NAME,
    };
    let bytes = serde_json::to_vec(&key).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-detector-pixel quantities that do not depend on the source point.
#[derive(Debug, Clone, Copy)]
struct DetectorRay<T> {
    r_s: Vec3<T>,
    r_i: Vec3<T>,
    /// `|r_i - C|²`
    lens_dist2: T,
    cos_psi2: T,
    view_cos: T,
}

impl<T: Real> DetectorRay<T> {
    fn new(scene: &Scene<T>, x_i: T, y_i: T) -> Result<Self> {
        let r_s = scene.surface_hit(x_i, y_i)?;
        let r_i = scene.detector_point(x_i, y_i);
        let c = scene.lens_center();
        let to_lens = c - r_s;
        let cos_psi = c.dot(to_lens) / (c.norm() * to_lens.norm());
        let view = r_i - r_s;
        let view_len = view.norm();
        if view_len < T::lit(GEOMETRY_EPS_CM) {
            return Err(Error::DegenerateGeometry(
                "detector point on the surface".into(),
            ));
        }
        let view_cos = view.z / view_len;
        if view_cos < T::lit(MIN_VIEW_COSINE) {
            return Err(Error::DegenerateGeometry(format!(
                "grazing view at surface point ({}, {}): cosine {view_cos}",
                r_s.x, r_s.y
            )));
        }
        Ok(Self {
            r_s,
            r_i,
            lens_dist2: (r_i - c).norm_squared(),
            cos_psi2: cos_psi * cos_psi,
            view_cos,
        })
    }
}

/// Forward model bound to one scene and surface, with per-pixel geometry
/// precomputed.
#[derive(Debug, Clone)]
pub struct Renderer<T> {
    scene: Scene<T>,
    surface: PhongSurface<T>,
    rays: Vec<DetectorRay<T>>,
    sources: Vec<Vec3<T>>,
    prefactor: T,
    cell_area: T,
    hash: String,
}

impl<T: Real> Renderer<T> {
    pub fn new(cfg: &SceneConfig, surf: &PhongSurface<T>) -> Result<Self> {
        surf.validate()?;
        let scene = Scene::new(cfg)?;
        let rays = (0..cfg.detector_len())
            .map(|i| {
                let (x, y) = scene.detector_pixel(i);
                DetectorRay::new(&scene, x, y)
            })
            .collect::<Result<Vec<_>>>()?;
        let sources = (0..cfg.object_len())
            .map(|b| {
                let (x, y) = scene.object_pixel(b);
                scene.object_point(x, y)
            })
            .collect();
        let a = scene.a_lens();
        let op = scene.object_pitch();
        Ok(Self {
            prefactor: scene.pixel_area() * T::PI() * a * a,
            cell_area: op * op,
            rays,
            sources,
            hash: config_hash(cfg, surf),
            surface: surf.clone(),
            scene,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        self.scene.config()
    }

    pub fn scene(&self) -> &Scene<T> {
        &self.scene
    }

    pub fn surface(&self) -> &PhongSurface<T> {
        &self.surface
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn detector_len(&self) -> usize {
        self.rays.len()
    }

    pub fn object_len(&self) -> usize {
        self.sources.len()
    }

    fn psf_at(&self, ray: &DetectorRay<T>, r_o: Vec3<T>) -> Result<T> {
        let incident = r_o - ray.r_s;
        let dist = incident.norm();
        if dist < T::lit(GEOMETRY_EPS_CM) {
            return Err(Error::DegenerateGeometry(
                "source lies on the surface point".into(),
            ));
        }
        let weight = phong_weight(r_o, ray.r_s, ray.r_i, &self.surface)?;
        Ok(
            self.prefactor * incident.z / (ray.lens_dist2 * dist * dist * dist)
                * ray.cos_psi2
                * weight
                / ray.view_cos,
        )
    }

    /// PSF value for detector pixel `detector` and object pixel `object`
    /// (raster indices).
    pub fn psf_pixel(&self, detector: usize, object: usize) -> Result<T> {
        self.psf_at(&self.rays[detector], self.sources[object])
            .map_err(|e| Error::RenderPixel {
                detector,
                object,
                source: Box::new(e),
            })
    }

    /// Quadrature weight of one object pixel: `psf * pitch²`. This is the
    /// transfer-matrix entry.
    #[inline]
    pub fn entry(&self, detector: usize, object: usize) -> Result<T> {
        Ok(self.psf_pixel(detector, object)? * self.cell_area)
    }

    fn check_object(&self, obj: &ObjectImage<T>) -> Result<()> {
        if obj.as_slice().len() != self.sources.len() {
            let n = self.config().object_pixels;
            return Err(Error::DimensionMismatch {
                expected: format!("{n}x{n} object"),
                actual: format!("{0}x{0}", obj.side()),
            });
        }
        Ok(())
    }

    fn pattern(&self, data: Vec<T>) -> ScatterPattern<T> {
        let n = self.config().detector_pixels;
        ScatterPattern {
            image: Image::from_vec(n, n, data).expect("detector grid size"),
            config_hash: self.hash.clone(),
        }
    }

    /// Renders one object. Each detector pixel accumulates object pixels in
    /// raster order; zero-intensity pixels are skipped (adding `+0` is exact).
    pub fn render(&self, obj: &ObjectImage<T>) -> Result<ScatterPattern<T>> {
        self.check_object(obj)?;
        let f = obj.as_slice();
        let lit: Vec<usize> = (0..f.len()).filter(|&b| f[b] != T::zero()).collect();
        let data = (0..self.rays.len())
            .into_par_iter()
            .map(|i| {
                let mut acc = T::zero();
                for &b in &lit {
                    acc += f[b] * self.entry(i, b)?;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(self.pattern(data))
    }

    /// Dense column-major kernel: element `(i, b)` at `b * rows + i`.
    pub fn kernel_matrix(&self) -> Result<Vec<T>> {
        let rows = self.rays.len();
        let columns = (0..self.sources.len())
            .into_par_iter()
            .map(|b| {
                (0..rows)
                    .map(|i| self.entry(i, b))
                    .collect::<Result<Vec<T>>>()
                    .map_err(|e| Error::MatrixColumn {
                        column: b,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<Vec<Vec<T>>>>()?;
        Ok(columns.concat())
    }
}

/// Accumulates `sum_b f_b * K[:, b]` column by column over nonzero `f_b`.
/// Each output pixel sees the same addition sequence as [`Renderer::render`].
pub(crate) fn apply_columns<T: Real>(kernel: &[T], rows: usize, f: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows];
    for (b, &fb) in f.iter().enumerate() {
        if fb == T::zero() {
            continue;
        }
        let col = &kernel[b * rows..(b + 1) * rows];
        for (o, &k) in out.iter_mut().zip(col) {
            *o += fb * k;
        }
    }
    out
}

/// PSF of the source at local object coordinates `(x_o, y_o)` seen by the
/// detector point `(x_i, y_i)`.
pub fn psf<T: Real>(
    x_i: T,
    y_i: T,
    x_o: T,
    y_o: T,
    cfg: &SceneConfig,
    surf: &PhongSurface<T>,
) -> Result<T> {
    surf.validate()?;
    let scene = Scene::new(cfg)?;
    let ray = DetectorRay::new(&scene, x_i, y_i)?;
    let a = scene.a_lens();
    let r = Renderer {
        prefactor: scene.pixel_area() * T::PI() * a * a,
        cell_area: T::one(),
        rays: Vec::new(),
        sources: Vec::new(),
        hash: String::new(),
        surface: surf.clone(),
        scene,
    };
    r.psf_at(&ray, r.scene.object_point(x_o, y_o))
}

pub fn render<T: Real>(
    obj: &ObjectImage<T>,
    cfg: &SceneConfig,
    surf: &PhongSurface<T>,
) -> Result<ScatterPattern<T>> {
    Renderer::new(cfg, surf)?.render(obj)
}

/// Renders a sequence of objects on `workers` threads. Output order follows
/// input order and every pattern is bitwise identical to [`render`].
pub fn render_batch<T: Real>(
    objs: &[ObjectImage<T>],
    cfg: &SceneConfig,
    surf: &PhongSurface<T>,
    workers: usize,
) -> Result<Vec<ScatterPattern<T>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    pool.install(|| {
        let renderer = Renderer::new(cfg, surf)?;
        let kernel = if objs.len() >= KERNEL_BATCH_THRESHOLD {
            Some(renderer.kernel_matrix()?)
        } else {
            None
        };
        let results: Vec<Result<ScatterPattern<T>>> = objs
            .par_iter()
            .map(|obj| match &kernel {
                Some(k) => {
                    renderer.check_object(obj)?;
                    Ok(renderer.pattern(apply_columns(k, renderer.detector_len(), obj.as_slice())))
                }
                None => renderer.render(obj),
            })
            .collect();
        let mut out = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (idx, r) in results.into_iter().enumerate() {
            match r {
                Ok(p) => out.push(p),
                Err(e) => failures.push((idx, e)),
            }
        }
        if failures.is_empty() {
            Ok(out)
        } else {
            Err(Error::Batch { failures })
        }
    })
}

/// Optional additive Gaussian noise, as a fraction of the pattern maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub relative_sigma: f64,
    pub seed: u64,
}

/// Adds seeded Gaussian noise and clips at zero so the pattern stays
/// nonnegative.
pub fn add_noise<T: Real>(pattern: &mut ScatterPattern<T>, spec: NoiseSpec) -> Result<()> {
    let sigma = spec.relative_sigma * pattern.image.max().to_f64_lossy();
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidParameter(format!("noise sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for v in pattern.image.as_mut_slice() {
        let noisy = v.to_f64_lossy() + normal.sample(&mut rng);
        *v = T::lit(noisy.max(0.0));
    }
    Ok(())
}
