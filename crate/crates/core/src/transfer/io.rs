//! On-disk matrix format and a fingerprint-keyed cache.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "NLOSM1"  u16 version  u32 rows  u32 cols
//! rows*cols f64 entries, column-major
//! u32 n  n bytes of UTF-8 JSON metadata
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{build_matrix, SvdSpectrum, TransferMatrix};
use crate::brdf::PhongSurface;
use crate::error::{Error, Result};
use crate::forward::config_hash;
use crate::geometry::SceneConfig;
use crate::scalar::Real;

pub const MATRIX_MAGIC: &[u8; 6] = b"NLOSM1";
pub const MATRIX_VERSION: u16 = 1;

const HEADER_LEN: usize = 6 + 2 + 4 + 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub scene: SceneConfig,
    pub surface: PhongSurface<f64>,
    pub config_hash: String,
    /// Scalar type the matrix was built in.
    pub scalar: String,
    /// Unix seconds; taken from `SOURCE_DATE_EPOCH` when set.
    pub build_timestamp: u64,
}

fn build_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

fn encode<T: Real>(m: &TransferMatrix<T>) -> Result<Vec<u8>> {
    let meta = MatrixMeta {
        scene: m.config().clone(),
        surface: m.surface().cast(),
        config_hash: m.config_hash().to_owned(),
        scalar: T::NAME.to_owned(),
        build_timestamp: build_timestamp(),
    };
    let json = serde_json::to_vec(&meta)?;
    let rows = u32::try_from(m.rows())
        .map_err(|_| Error::DimensionOverflow(format!("rows {}", m.rows())))?;
    let cols = u32::try_from(m.cols())
        .map_err(|_| Error::DimensionOverflow(format!("cols {}", m.cols())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.as_slice().len() + 4 + json.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

/// Writes atomically: a sibling temp file is renamed into place.
pub fn write_matrix<T: Real>(m: &TransferMatrix<T>, path: &Path) -> Result<()> {
    let bytes = encode(m)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn read_matrix<T: Real>(path: &Path) -> Result<(TransferMatrix<T>, MatrixMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn decode<T: Real>(bytes: &[u8], path: &Path) -> Result<(TransferMatrix<T>, MatrixMeta)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..6] != MATRIX_MAGIC {
        return Err(Error::malformed(path, "missing NLOSM1 magic"));
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != MATRIX_VERSION {
        return Err(Error::malformed(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let rows = read_u32(bytes, 8) as usize;
    let cols = read_u32(bytes, 12) as usize;
    let body = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::DimensionOverflow(format!("{rows}x{cols}")))?;
    let meta_at = HEADER_LEN + body;
    if bytes.len() < meta_at + 4 {
        return Err(Error::Truncated {
            expected: meta_at + 4,
            found: bytes.len(),
        });
    }
    let meta_len = read_u32(bytes, meta_at) as usize;
    let end = meta_at + 4 + meta_len;
    if bytes.len() != end {
        return Err(if bytes.len() < end {
            Error::Truncated {
                expected: end,
                found: bytes.len(),
            }
        } else {
            Error::malformed(path, "trailing bytes after metadata")
        });
    }
    let meta: MatrixMeta = serde_json::from_slice(&bytes[meta_at + 4..end])?;
    let data = bytes[HEADER_LEN..meta_at]
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    let m = TransferMatrix::from_parts(
        meta.scene.clone(),
        meta.surface.cast(),
        meta.config_hash.clone(),
        rows,
        cols,
        data,
    )?;
    Ok((m, meta))
}

/// Matrices stored as `{dir}/{config_hash}.nlosm`.
#[derive(Debug, Clone)]
pub struct MatrixCache {
    dir: PathBuf,
}

impl MatrixCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.nlosm"))
    }

    /// Returns the cached matrix when its stored fingerprint matches,
    /// otherwise builds and stores it. The flag is `true` on a cache hit.
    pub fn load_or_build<T: Real>(
        &self,
        cfg: &SceneConfig,
        surf: &PhongSurface<T>,
    ) -> Result<(TransferMatrix<T>, bool)> {
        let hash = config_hash(cfg, surf);
        let path = self.path_for(&hash);
        if path.exists() {
            match read_matrix::<T>(&path) {
                Ok((m, meta)) if meta.config_hash == hash && meta.scalar == T::NAME => {
                    log::debug!("matrix cache hit {}", path.display());
                    return Ok((m, true));
                }
                Ok(_) => log::warn!("stale matrix at {}, rebuilding", path.display()),
                Err(e) => log::warn!("unreadable matrix at {} ({e}), rebuilding", path.display()),
            }
        }
        let m = build_matrix(cfg, surf)?;
        write_matrix(&m, &path)?;
        Ok((m, false))
    }
}

/// `index,sigma,normalized,db` with a 1-based index.
pub fn write_spectrum_csv<T: Real>(spec: &SvdSpectrum<T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "sigma", "normalized", "db"])?;
    for i in 0..spec.len() {
        w.write_record([
            (i + 1).to_string(),
            format!("{:e}", spec.values[i].to_f64_lossy()),
            format!("{:e}", spec.normalized[i].to_f64_lossy()),
            format!("{}", spec.db[i].to_f64_lossy()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (SceneConfig, PhongSurface<f64>) {
        (
            SceneConfig {
                detector_pixels: 6,
                object_pixels: 3,
                ..SceneConfig::default()
            },
            PhongSurface::complementary(0.1, 60.0),
        )
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (cfg, surf) = small();
        let m = build_matrix(&cfg, &surf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.nlosm");
        write_matrix(&m, &p).unwrap();
        let (back, meta) = read_matrix::<f64>(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta.scalar, "f64");
        assert_eq!(meta.config_hash, m.config_hash());
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..6], b"NLOSM1");
        assert_eq!(fs::metadata(&p).unwrap().len() as usize, bytes.len());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (cfg, surf) = small();
        let m = build_matrix(&cfg, &surf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.nlosm");
        write_matrix(&m, &p).unwrap();
        let bytes = fs::read(&p).unwrap();

        let cut = &bytes[..bytes.len() - 10];
        assert!(matches!(
            decode::<f64>(cut, &p),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode::<f64>(&bad, &p),
            Err(Error::Malformed { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode::<f64>(&extra, &p).is_err());
        assert!(decode::<f64>(&bytes[..4], &p).is_err());
    }

    #[test]
    fn cache_hits_and_rebuilds_on_mismatch() {
        let (cfg, surf) = small();
        let dir = tempfile::tempdir().unwrap();
        let cache = MatrixCache::new(dir.path());
        let (a, hit) = cache.load_or_build(&cfg, &surf).unwrap();
        assert!(!hit);
        let (b, hit) = cache.load_or_build(&cfg, &surf).unwrap();
        assert!(hit);
        assert_eq!(a, b);

        // plant a matrix for a different surface under this fingerprint
        let other = build_matrix(&cfg, &PhongSurface::<f64>::lambertian()).unwrap();
        write_matrix(&other, &cache.path_for(a.config_hash())).unwrap();
        let (c, hit) = cache.load_or_build(&cfg, &surf).unwrap();
        assert!(!hit);
        assert_eq!(c, a);
    }

    #[test]
    fn spectrum_csv_columns() {
        let spec = SvdSpectrum::from_values(vec![2.0, 1.0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_spectrum_csv(&spec, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("index,sigma,normalized,db"));
        assert!(lines.next().unwrap().starts_with("1,2e0,1e0,0"));
    }
}
