//! MNIST ingestion, object-grid embedding, bicubic resampling and dataset
//! export for training a learned reconstructor.

mod files;
mod idx;

pub use files::{
    encode_f64, encode_pgm16, encode_pgm8, read_f64_raw, read_f64_with_sidecar, sidecar_path,
    write_f64_raw, write_f64_with_sidecar, write_pgm16, write_pgm8, RawSidecar,
};
pub use idx::{load_idx, write_idx, IdxImageSet, IDX_IMAGE_MAGIC};

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brdf::PhongSurface;
use crate::error::{Error, Result};
use crate::forward::{apply_columns, ObjectImage, Renderer};
use crate::geometry::SceneConfig;
use crate::image::Image;
use crate::scalar::Real;

pub const MNIST_SIDE: usize = 28;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Target side when resizing is requested without an explicit size.
pub const DEFAULT_RESIZE: usize = 256;

const EXPORT_CHUNK: usize = 64;

/// Scales a 28×28 byte image to `[0, 1]` and pads it with a one-pixel zero
/// border to 30×30.
pub fn embed_object<T: Real>(pixels: &[u8], rows: usize, cols: usize) -> Result<ObjectImage<T>> {
    if rows != MNIST_SIDE || cols != MNIST_SIDE || pixels.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: format!("{MNIST_SIDE}x{MNIST_SIDE} image"),
            actual: format!("{rows}x{cols} with {} pixels", pixels.len()),
        });
    }
    let n = MNIST_SIDE + 2;
    let scale = T::lit(255.0);
    let img = Image::from_fn(n, n, |i, j| {
        if (1..=MNIST_SIDE).contains(&i) && (1..=MNIST_SIDE).contains(&j) {
            T::lit(pixels[(i - 1) * cols + (j - 1)] as f64) / scale
        } else {
            T::zero()
        }
    });
    ObjectImage::new(img)
}

/// Cubic convolution kernel with `a = -0.5`.
pub(crate) fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps for one output coordinate with pixel-center alignment.
fn taps_for(dst: usize, in_len: usize, out_len: usize) -> [(usize, f64); 4] {
    let src = (dst as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
    let base = src.floor();
    let frac = src - base;
    let mut out = [(0usize, 0.0); 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let offset = k as isize - 1;
        let idx = (base as isize + offset).clamp(0, in_len as isize - 1) as usize;
        *slot = (idx, cubic_weight(frac - offset as f64));
    }
    out
}

/// Bicubic resampling to `out_rows x out_cols`, edges clamped, output clamped
/// to the value range of the input.
pub fn bicubic_resize<T: Real>(
    img: &Image<T>,
    out_rows: usize,
    out_cols: usize,
) -> Result<Image<T>> {
    if out_rows == 0 || out_cols == 0 {
        return Err(Error::InvalidParameter(format!(
            "degenerate target size {out_rows}x{out_cols}"
        )));
    }
    if img.rows() < 4 || img.cols() < 4 {
        return Err(Error::InvalidParameter(format!(
            "bicubic resize needs at least 4x4 input, got {}x{}",
            img.rows(),
            img.cols()
        )));
    }
    let (lo, hi) = (img.min().to_f64_lossy(), img.max().to_f64_lossy());
    let row_taps: Vec<_> = (0..out_rows)
        .map(|r| taps_for(r, img.rows(), out_rows))
        .collect();
    let col_taps: Vec<_> = (0..out_cols)
        .map(|c| taps_for(c, img.cols(), out_cols))
        .collect();
    Ok(Image::from_fn(out_rows, out_cols, |r, c| {
        let mut acc = 0.0;
        for &(ri, wr) in &row_taps[r] {
            for &(ci, wc) in &col_taps[c] {
                acc += wr * wc * img.get(ri, ci).to_f64_lossy();
            }
        }
        T::lit(acc.clamp(lo, hi))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParameter(format!(
                "split must be `train` or `test`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExportOptions {
    pub split: Split,
    /// Square side of resized patterns; `None` keeps the detector grid.
    pub resize_to: Option<usize>,
    /// Also write 8-bit PGM previews of each pattern.
    pub previews: bool,
    pub workers: usize,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            split: Split::Train,
            resize_to: None,
            previews: false,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: usize,
    /// Index of the image in the source IDX file.
    pub source_index: usize,
    pub object: String,
    pub pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Always `per_pattern_max`.
    pub kind: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub scene: SceneConfig,
    pub surface: PhongSurface<f64>,
    pub split: Split,
    pub normalization: Normalization,
    /// `[rows, cols]`, raw little-endian `f64`, row-major.
    pub object_shape: [usize; 2],
    pub pattern_shape: [usize; 2],
    pub resize_to: Option<usize>,
    pub count: usize,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_slice(&text)?)
    }

    /// Checks that listed files parse with the declared shapes and that the
    /// item directories hold nothing else.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        if self.items.len() != self.count {
            return Err(Error::malformed(
                dir.join(MANIFEST_FILE),
                "count does not match item list",
            ));
        }
        let mut listed = BTreeSet::new();
        for item in &self.items {
            read_f64_raw(
                &dir.join(&item.object),
                self.object_shape[0],
                self.object_shape[1],
            )?;
            read_f64_raw(
                &dir.join(&item.pattern),
                self.pattern_shape[0],
                self.pattern_shape[1],
            )?;
            listed.insert(PathBuf::from(&item.object));
            listed.insert(PathBuf::from(&item.pattern));
            if let Some(p) = &item.preview {
                listed.insert(PathBuf::from(p));
            }
        }
        let mut on_disk = BTreeSet::new();
        for sub in ["objects", "patterns", "previews"] {
            let d = dir.join(sub);
            if !d.exists() {
                continue;
            }
            for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
                let entry = entry.map_err(|e| Error::io(&d, e))?;
                on_disk.insert(Path::new(sub).join(entry.file_name()));
            }
        }
        if listed != on_disk {
            let extra: Vec<_> = on_disk.symmetric_difference(&listed).take(3).collect();
            return Err(Error::malformed(
                dir,
                format!("manifest and files disagree, e.g. {extra:?}"),
            ));
        }
        Ok(())
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Renders every image and writes `objects/NNNNN.f64`, `patterns/NNNNN.f64`
/// (and `previews/NNNNN.pgm` when asked), then `manifest.json` last.
///
/// Patterns are max-normalized per item; when resized they are normalized
/// again so every exported pattern peaks at exactly 1.
pub fn export_dataset<T: Real>(
    images: &IdxImageSet,
    cfg: &SceneConfig,
    surf: &PhongSurface<T>,
    out_dir: &Path,
    opts: &ExportOptions,
) -> Result<DatasetManifest> {
    if let Some(0) = opts.resize_to {
        return Err(Error::InvalidParameter("resize target must be > 0".into()));
    }
    let manifest_path = out_dir.join(MANIFEST_FILE);
    create_dir(out_dir)?;
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }
    for sub in ["objects", "patterns"] {
        create_dir(&out_dir.join(sub))?;
    }
    if opts.previews {
        create_dir(&out_dir.join("previews"))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let renderer = Renderer::new(cfg, surf)?;
    let rows = renderer.detector_len();
    let side = cfg.detector_pixels;
    let out_side = opts.resize_to.unwrap_or(side);
    let kernel = pool.install(|| renderer.kernel_matrix())?;

    let write_item = |id: usize| -> Result<ManifestItem> {
        let obj = embed_object::<T>(images.image(id), images.rows, images.cols)?;
        let raw = Image::from_vec(side, side, apply_columns(&kernel, rows, obj.as_slice()))?;
        let mut pattern = raw.max_normalized();
        if out_side != side {
            pattern = bicubic_resize(&pattern, out_side, out_side)?.max_normalized();
        }
        let name = format!("{id:05}");
        let item = ManifestItem {
            id,
            source_index: id,
            object: format!("objects/{name}.f64"),
            pattern: format!("patterns/{name}.f64"),
            preview: opts.previews.then(|| format!("previews/{name}.pgm")),
        };
        write_f64_raw(obj.image(), &out_dir.join(&item.object))?;
        write_f64_raw(&pattern, &out_dir.join(&item.pattern))?;
        if let Some(p) = &item.preview {
            write_pgm8(&pattern, &out_dir.join(p))?;
        }
        Ok(item)
    };

    let mut items = Vec::with_capacity(images.count);
    for start in (0..images.count).step_by(EXPORT_CHUNK) {
        let end = (start + EXPORT_CHUNK).min(images.count);
        let chunk = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(write_item)
                .collect::<Vec<_>>()
        });
        for (k, r) in chunk.into_iter().enumerate() {
            items.push(r.map_err(|e| Error::Batch {
                failures: vec![(start + k, e)],
            })?);
        }
        log::debug!("exported {end}/{}", images.count);
    }

    let manifest = DatasetManifest {
        config_hash: renderer.config_hash().to_owned(),
        scene: cfg.clone(),
        surface: surf.cast(),
        split: opts.split,
        normalization: Normalization {
            kind: "per_pattern_max".into(),
            min: 0.0,
            max: 1.0,
        },
        object_shape: [MNIST_SIDE + 2, MNIST_SIDE + 2],
        pattern_shape: [out_side, out_side],
        resize_to: opts.resize_to,
        count: items.len(),
        items,
    };
    let tmp = out_dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn embedding() {
        let zero: ObjectImage<f64> = embed_object(&[0u8; 784], 28, 28).unwrap();
        assert_eq!(zero.side(), 30);
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));

        let mut px = [0u8; 784];
        px[0] = 255;
        let o: ObjectImage<f64> = embed_object(&px, 28, 28).unwrap();
        assert_eq!(o.image().get(1, 1), 1.0);
        assert_eq!(o.image().sum(), 1.0);

        let px: Vec<u8> = (0..784).map(|i| (i * 31 % 256) as u8).collect();
        let o: ObjectImage<f64> = embed_object(&px, 28, 28).unwrap();
        let expect: f64 = px.iter().map(|&v| v as f64 / 255.0).sum();
        assert_relative_eq!(o.image().sum(), expect, max_relative = 1e-13);
        assert_eq!(o.image().get(28, 28), px[27 * 28 + 27] as f64 / 255.0);
        assert!(embed_object::<f64>(&[0u8; 900], 30, 30).is_err());
    }

    #[test]
    fn kernel_is_a_partition_of_unity() {
        for k in 0..=10 {
            let f = k as f64 / 10.0;
            let s: f64 = (-1..=2).map(|o| cubic_weight(f - o as f64)).sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-15);
        }
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
        assert_eq!(cubic_weight(2.0), 0.0);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Image::from_fn(7, 9, |i, j| ((i * 13 + j * 7) % 10) as f64 / 9.0);
        let same = bicubic_resize(&img, 7, 9).unwrap();
        for (a, b) in same.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let c = Image::from_fn(5, 5, |_, _| 0.37);
        let up = bicubic_resize(&c, 13, 8).unwrap();
        assert!(up.as_slice().iter().all(|&v| v == 0.37));
        assert!(bicubic_resize(&c, 0, 3).is_err());
        assert!(bicubic_resize(&Image::<f64>::zeros(3, 8), 6, 6).is_err());
    }

    /// Two 1-D passes with an independently written kernel.
    fn separable_oracle(img: &Image<f64>, out_r: usize, out_c: usize) -> Image<f64> {
        fn k(x: f64) -> f64 {
            let a = -0.5;
            let x = x.abs();
            if x < 1.0 {
                (a + 2.0) * x.powi(3) - (a + 3.0) * x.powi(2) + 1.0
            } else if x < 2.0 {
                a * x.powi(3) - 5.0 * a * x.powi(2) + 8.0 * a * x - 4.0 * a
            } else {
                0.0
            }
        }
        fn resample(line: &[f64], n_out: usize) -> Vec<f64> {
            let n = line.len();
            (0..n_out)
                .map(|o| {
                    let s = (o as f64 + 0.5) * n as f64 / n_out as f64 - 0.5;
                    let i0 = s.floor() as isize;
                    (i0 - 1..=i0 + 2)
                        .map(|i| line[i.clamp(0, n as isize - 1) as usize] * k(s - i as f64))
                        .sum()
                })
                .collect()
        }
        let horiz: Vec<Vec<f64>> = (0..img.rows())
            .map(|r| resample(&img.as_slice()[r * img.cols()..(r + 1) * img.cols()], out_c))
            .collect();
        let mut out = Image::zeros(out_r, out_c);
        for c in 0..out_c {
            let col: Vec<f64> = horiz.iter().map(|row| row[c]).collect();
            for (r, v) in resample(&col, out_r).into_iter().enumerate() {
                out.set(r, c, v.clamp(img.min(), img.max()));
            }
        }
        out
    }

    #[test]
    fn ramp_upsample_matches_separable_oracle() {
        let ramp = Image::from_fn(8, 8, |i, j| (i * 8 + j) as f64 / 63.0);
        let up = bicubic_resize(&ramp, 16, 16).unwrap();
        let oracle = separable_oracle(&ramp, 16, 16);
        for (a, b) in up.as_slice().iter().zip(oracle.as_slice()) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
        let bumpy = Image::from_fn(6, 9, |i, j| ((i * 5 + j * 3) % 7) as f64);
        let down = bicubic_resize(&bumpy, 4, 5).unwrap();
        let oracle = separable_oracle(&bumpy, 4, 5);
        for (a, b) in down.as_slice().iter().zip(oracle.as_slice()) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn split_parsing() {
        assert_eq!("train".parse::<Split>().unwrap(), Split::Train);
        assert_eq!("test".parse::<Split>().unwrap(), Split::Test);
        assert!("val".parse::<Split>().is_err());
    }
}
