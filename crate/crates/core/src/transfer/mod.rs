//! Discretized transfer matrix: impulse responses, singular-value spectrum,
//! bandwidth, and regularized inversion.

mod io;
mod svd;

pub use io::{
    read_matrix, write_matrix, write_spectrum_csv, MatrixCache, MatrixMeta, MATRIX_MAGIC,
    MATRIX_VERSION,
};
pub use svd::{singular_values, thin_svd, SvdFactors};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::brdf::PhongSurface;
use crate::error::{Error, Result};
use crate::forward::{apply_columns, ObjectImage, Renderer, ScatterPattern};
use crate::geometry::SceneConfig;
use crate::image::Image;
use crate::scalar::Real;

/// Default spectral threshold for bandwidth and default regularization.
pub const DEFAULT_THRESHOLD_DB: f64 = 50.0;

/// Dense `A x B` matrix mapping a raster-ordered object vector to a
/// raster-ordered detector vector. Stored column-major: column `b` is the
/// impulse response of object pixel `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    config: SceneConfig,
    surface: PhongSurface<T>,
    config_hash: String,
}

impl<T: Real> TransferMatrix<T> {
    pub fn from_parts(
        config: SceneConfig,
        surface: PhongSurface<T>,
        config_hash: String,
        rows: usize,
        cols: usize,
        data: Vec<T>,
    ) -> Result<Self> {
        if rows != config.detector_len() || cols != config.object_len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", config.detector_len(), config.object_len()),
                actual: format!("{rows}x{cols}"),
            });
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{} entries", rows * cols),
                actual: format!("{} entries", data.len()),
            });
        }
        Ok(Self {
            rows,
            cols,
            data,
            config,
            surface,
            config_hash,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column-major entries.
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[col * self.rows + row]
    }

    pub fn column(&self, col: usize) -> &[T] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn surface(&self) -> &PhongSurface<T> {
        &self.surface
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// `c * M`, keeping the fingerprint of the unscaled matrix.
    pub fn scaled(&self, c: T) -> Self {
        Self {
            data: self.data.iter().map(|&v| v * c).collect(),
            ..self.clone()
        }
    }

    /// `M x` for an arbitrary (possibly signed) object-space vector.
    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: format!("vector of length {}", self.cols),
                actual: format!("length {}", x.len()),
            });
        }
        Ok(apply_columns(&self.data, self.rows, x))
    }

    /// `Mᵀ y`.
    pub fn mul_transpose_vec(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: format!("vector of length {}", self.rows),
                actual: format!("length {}", y.len()),
            });
        }
        Ok((0..self.cols)
            .map(|b| self.column(b).iter().zip(y).map(|(&m, &v)| m * v).sum())
            .collect())
    }
}

/// Builds the matrix column by column from one-hot impulse responses.
pub fn build_matrix<T: Real>(
    cfg: &SceneConfig,
    surf: &PhongSurface<T>,
) -> Result<TransferMatrix<T>> {
    let renderer = Renderer::new(cfg, surf)?;
    let data = renderer.kernel_matrix()?;
    TransferMatrix::from_parts(
        cfg.clone(),
        surf.clone(),
        renderer.config_hash().to_owned(),
        renderer.detector_len(),
        renderer.object_len(),
        data,
    )
}

/// Matrix-vector product reshaped to the detector grid.
pub fn apply<T: Real>(m: &TransferMatrix<T>, f: &ObjectImage<T>) -> Result<ScatterPattern<T>> {
    let data = m.mul_vec(f.as_slice())?;
    let n = m.config.detector_pixels;
    Ok(ScatterPattern {
        image: Image::from_vec(n, n, data)?,
        config_hash: m.config_hash.clone(),
    })
}

/// Singular values in non-increasing order with normalized and dB views.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdSpectrum<T> {
    pub values: Vec<T>,
    pub normalized: Vec<T>,
    /// `20 log10(normalized)` (amplitude convention).
    pub db: Vec<T>,
}

impl<T: Real> SvdSpectrum<T> {
    pub fn from_values(mut values: Vec<T>) -> Self {
        // the solver already sorts; this keeps hand-built spectra honest
        values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        let top = values.first().copied().unwrap_or(T::zero());
        let normalized: Vec<T> = if top > T::zero() {
            values.iter().map(|&v| v / top).collect()
        } else {
            vec![T::zero(); values.len()]
        };
        let twenty = T::lit(20.0);
        let db = normalized.iter().map(|&v| twenty * v.log10()).collect();
        Self {
            values,
            normalized,
            db,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How a dB threshold maps to a ratio of singular values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DbConvention {
    /// `20 log10(s / s₁)`; singular values are operator amplitudes.
    Amplitude,
    /// `10 log10(s / s₁)`.
    Power,
}

impl DbConvention {
    pub fn cutoff(self, threshold_db: f64) -> f64 {
        match self {
            DbConvention::Amplitude => 10f64.powf(-threshold_db / 20.0),
            DbConvention::Power => 10f64.powf(-threshold_db / 10.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DbConvention::Amplitude => "amplitude (20 log10)",
            DbConvention::Power => "power (10 log10)",
        }
    }
}

/// Number of normalized singular values within `threshold_db` of the largest,
/// amplitude convention.
pub fn bandwidth_db<T: Real>(spec: &SvdSpectrum<T>, threshold_db: f64) -> Result<usize> {
    bandwidth_with(spec, threshold_db, DbConvention::Amplitude)
}

pub fn bandwidth_with<T: Real>(
    spec: &SvdSpectrum<T>,
    threshold_db: f64,
    convention: DbConvention,
) -> Result<usize> {
    if !(threshold_db > 0.0 && threshold_db.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be a positive dB value, got {threshold_db}"
        )));
    }
    let cutoff = T::lit(convention.cutoff(threshold_db));
    Ok(spec.normalized.iter().filter(|&&v| v >= cutoff).count())
}

pub fn svd_spectrum<T: Real>(m: &TransferMatrix<T>) -> Result<SvdSpectrum<T>> {
    Ok(SvdSpectrum::from_values(singular_values(m)?))
}

/// Inversion method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// Keep the `rank` leading singular triplets.
    TruncatedSvd { rank: usize },
    /// Minimize `|M x - y|² + λ² |x|²`.
    Tikhonov { lambda: f64 },
}

impl Regularization {
    /// Truncation at the bandwidth rank for `threshold_db` (at least 1).
    pub fn tsvd_at_db<T: Real>(spec: &SvdSpectrum<T>, threshold_db: f64) -> Result<Self> {
        Ok(Self::TruncatedSvd {
            rank: bandwidth_db(spec, threshold_db)?.max(1),
        })
    }

    /// Tikhonov with `λ = s₁ · 10^(-threshold/20)`.
    pub fn tikhonov_at_db<T: Real>(spec: &SvdSpectrum<T>, threshold_db: f64) -> Self {
        let s1 = spec.values.first().map(|v| v.to_f64_lossy()).unwrap_or(0.0);
        Self::Tikhonov {
            lambda: s1 * 10f64.powf(-threshold_db / 20.0),
        }
    }
}

impl fmt::Display for Regularization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularization::TruncatedSvd { rank } => write!(f, "tsvd:{rank}"),
            Regularization::Tikhonov { lambda } => write!(f, "tikhonov:{lambda}"),
        }
    }
}

impl FromStr for Regularization {
    type Err = Error;

    /// Parses `tsvd:K` or `tikhonov:LAMBDA`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidParameter(format!("expected `tsvd:K` or `tikhonov:LAMBDA`, got `{s}`"))
        };
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        match kind.trim() {
            "tsvd" => Ok(Self::TruncatedSvd {
                rank: value.trim().parse().map_err(|_| bad())?,
            }),
            "tikhonov" => Ok(Self::Tikhonov {
                lambda: value.trim().parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction<T> {
    /// Raw solver output on the object grid; may contain negative values.
    pub estimate: Image<T>,
    pub method: Regularization,
    /// `|M x - y|₂` for the unclamped estimate.
    pub residual_norm: T,
}

impl<T: Real> Reconstruction<T> {
    /// Estimate with negative values clamped to zero, for export and scoring.
    pub fn clamped(&self) -> ObjectImage<T> {
        ObjectImage::new(self.estimate.map(|v| v.max(T::zero())))
            .expect("clamped estimate is valid")
    }
}

/// Reconstructs the object from a pattern using precomputed factors of `m`.
pub fn reconstruct<T: Real>(
    m: &TransferMatrix<T>,
    factors: &SvdFactors<T>,
    pattern: &ScatterPattern<T>,
    reg: Regularization,
) -> Result<Reconstruction<T>> {
    let y = pattern.as_slice();
    if y.len() != m.rows() {
        return Err(Error::DimensionMismatch {
            expected: format!("pattern with {} pixels", m.rows()),
            actual: format!("{} pixels", y.len()),
        });
    }
    if factors.rows() != m.rows() || factors.cols() != m.cols() {
        return Err(Error::DimensionMismatch {
            expected: format!("factors of a {}x{} matrix", m.rows(), m.cols()),
            actual: format!("{}x{}", factors.rows(), factors.cols()),
        });
    }
    let k_max = factors.rank();
    let filter: Vec<T> = match reg {
        Regularization::TruncatedSvd { rank } => {
            if rank == 0 || rank > k_max {
                return Err(Error::InvalidParameter(format!(
                    "truncation rank {rank} outside 1..={k_max}"
                )));
            }
            (0..k_max)
                .map(|j| {
                    let s = factors.singular_value(j);
                    if j < rank && s > T::zero() {
                        T::one() / s
                    } else {
                        T::zero()
                    }
                })
                .collect()
        }
        Regularization::Tikhonov { lambda } => {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "tikhonov lambda must be > 0, got {lambda}"
                )));
            }
            let l2 = T::lit(lambda * lambda);
            (0..k_max)
                .map(|j| {
                    let s = factors.singular_value(j);
                    s / (s * s + l2)
                })
                .collect()
        }
    };
    let mut x = vec![T::zero(); m.cols()];
    for (j, &w) in filter.iter().enumerate() {
        if w == T::zero() {
            continue;
        }
        let coeff = w * factors.u_dot(j, y);
        for (xi, &vi) in x.iter_mut().zip(factors.v_col(j)) {
            *xi += coeff * vi;
        }
    }
    let fitted = m.mul_vec(&x)?;
    let residual_norm = fitted
        .iter()
        .zip(y)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        .sqrt();
    let n = m.config().object_pixels;
    Ok(Reconstruction {
        estimate: Image::from_vec(n, n, x)?,
        method: reg,
        residual_norm,
    })
}
