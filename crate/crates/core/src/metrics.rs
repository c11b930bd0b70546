//! Structural similarity with a Gaussian local-statistics window.
//!
//! Per pixel, from windowed means `μ`, deviations `σ` and covariance `σ_xy`:
//!
//! ```text
//! l = (2 μx μy + C1) / (μx² + μy² + C1)
//! c = (2 σx σy + C2) / (σx² + σy² + C2)
//! s = (σ_xy + C3) / (σx σy + C3)
//! SSIM = l^α c^β s^γ
//! ```
//!
//! with `C1 = (0.01 L)²`, `C2 = (0.03 L)²`, `C3 = C2 / 2`. The score is the
//! mean of the map.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Dynamic range `L` of the compared images.
    pub dynamic_range: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Odd window side.
    pub window: usize,
    pub window_sigma: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            dynamic_range: 1.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            window: 11,
            window_sigma: 1.5,
        }
    }
}

impl SsimParams {
    pub fn with_range(dynamic_range: f64) -> Self {
        Self {
            dynamic_range,
            ..Self::default()
        }
    }

    pub fn c1(&self) -> f64 {
        (0.01 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (0.03 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dynamic_range > 0.0 && self.dynamic_range.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dynamic range must be > 0, got {}",
                self.dynamic_range
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "exponent {name} must be > 0, got {v}"
                )));
            }
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "window side must be odd, got {}",
                self.window
            )));
        }
        if self.window_sigma.is_nan() || self.window_sigma <= 0.0 {
            return Err(Error::InvalidParameter("window sigma must be > 0".into()));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.window_sigma * self.window_sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Symmetric (half-sample) reflection: `… b a | a b c … | c b …`.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn filter_rows(src: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for i in 0..rows {
        let row = &src[i * cols..(i + 1) * cols];
        for j in 0..cols {
            out[i * cols + j] = taps
                .iter()
                .enumerate()
                .map(|(k, &w)| w * row[reflect(j as isize + k as isize - r, cols)])
                .sum();
        }
    }
    out
}

fn filter_cols(src: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = taps
                .iter()
                .enumerate()
                .map(|(k, &w)| w * src[reflect(i as isize + k as isize - r, rows) * cols + j])
                .sum();
        }
    }
    out
}

fn blur(src: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    filter_cols(&filter_rows(src, rows, cols, taps), rows, cols, taps)
}

fn power(v: f64, e: f64) -> f64 {
    if e == 1.0 {
        v
    } else {
        v.powf(e)
    }
}

/// Combines windowed statistics into one SSIM value.
pub(crate) fn ssim_from_stats(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, p: &SsimParams) -> f64 {
    let (c1, c2, c3) = (p.c1(), p.c2(), p.c3());
    let (sx, sy) = (vx.max(0.0).sqrt(), vy.max(0.0).sqrt());
    let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
    let c = (2.0 * sx * sy + c2) / (vx.max(0.0) + vy.max(0.0) + c2);
    let s = (cxy + c3) / (sx * sy + c3);
    power(l, p.alpha) * power(c, p.beta) * power(s, p.gamma)
}

fn check_pair<T: Real>(x: &Image<T>, y: &Image<T>, p: &SsimParams) -> Result<()> {
    p.validate()?;
    if !x.same_shape(y) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", x.rows(), x.cols()),
            actual: format!("{}x{}", y.rows(), y.cols()),
        });
    }
    if x.is_empty() {
        return Err(Error::InvalidParameter("cannot score empty images".into()));
    }
    Ok(())
}

/// Per-pixel SSIM map. Statistics are accumulated in `f64`.
pub fn ssim_map<T: Real>(x: &Image<T>, y: &Image<T>, p: &SsimParams) -> Result<Image<f64>> {
    check_pair(x, y, p)?;
    let (rows, cols) = (x.rows(), x.cols());
    let xs: Vec<f64> = x.as_slice().iter().map(|v| v.to_f64_lossy()).collect();
    let ys: Vec<f64> = y.as_slice().iter().map(|v| v.to_f64_lossy()).collect();
    let taps = p.taps();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).collect::<Vec<f64>>();
    let mx = blur(&xs, rows, cols, &taps);
    let my = blur(&ys, rows, cols, &taps);
    let exx = blur(&prod(&xs, &xs), rows, cols, &taps);
    let eyy = blur(&prod(&ys, &ys), rows, cols, &taps);
    let exy = blur(&prod(&xs, &ys), rows, cols, &taps);
    let map = (0..rows * cols)
        .map(|i| {
            let vx = exx[i] - mx[i] * mx[i];
            let vy = eyy[i] - my[i] * my[i];
            let cxy = exy[i] - mx[i] * my[i];
            ssim_from_stats(mx[i], my[i], vx, vy, cxy, p)
        })
        .collect();
    Image::from_vec(rows, cols, map)
}

/// Mean of [`ssim_map`].
pub fn ssim<T: Real>(x: &Image<T>, y: &Image<T>, p: &SsimParams) -> Result<f64> {
    let map = ssim_map(x, y, p)?;
    Ok(map.as_slice().iter().sum::<f64>() / map.len() as f64)
}

/// Which part of the grid is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Region {
    #[default]
    Full,
    /// Drop `border` pixels on every side (1 turns the padded 30×30 object
    /// back into the 28×28 digit).
    CenterCrop { border: usize },
}

impl Region {
    pub fn apply<T: Real>(&self, img: &Image<T>) -> Result<Image<T>> {
        match *self {
            Region::Full => Ok(img.clone()),
            Region::CenterCrop { border } => {
                if 2 * border >= img.rows() || 2 * border >= img.cols() {
                    return Err(Error::InvalidParameter(format!(
                        "crop border {border} leaves nothing of a {}x{} image",
                        img.rows(),
                        img.cols()
                    )));
                }
                let (r, c) = (img.rows() - 2 * border, img.cols() - 2 * border);
                Ok(Image::from_fn(r, c, |i, j| img.get(i + border, j + border)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimReport {
    pub mean_ssim: f64,
    pub scores: Vec<f64>,
    pub region: Region,
    pub params: SsimParams,
}

impl SsimReport {
    pub fn from_scores(scores: Vec<f64>, region: Region, params: SsimParams) -> Self {
        let mean_ssim = if scores.is_empty() {
            f64::NAN
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        };
        Self {
            mean_ssim,
            scores,
            region,
            params,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// `index,ssim` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "ssim"])?;
        for (i, s) in self.scores.iter().enumerate() {
            w.write_record([i.to_string(), s.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Scores `(estimate, truth)` pairs in parallel; order is preserved.
pub fn ssim_batch<T: Real>(
    pairs: &[(Image<T>, Image<T>)],
    region: Region,
    p: &SsimParams,
) -> Result<SsimReport> {
    let scores = pairs
        .par_iter()
        .map(|(x, y)| ssim(&region.apply(x)?, &region.apply(y)?, p))
        .collect::<Result<Vec<f64>>>()?;
    Ok(SsimReport::from_scores(scores, region, *p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn img(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Image<f64> {
        Image::from_fn(rows, cols, f)
    }

    fn pair16() -> (Image<f64>, Image<f64>) {
        let x = img(16, 16, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        let y = img(16, 16, |i, j| {
            ((i * 5 + j * 9) % 13) as f64 / 12.0 * 0.8 + 0.1 * (i as f64 / 15.0)
        });
        (x, y)
    }

    /// Direct per-pixel evaluation: explicit 2-D Gaussian weights over the
    /// reflected neighbourhood, two-pass moments.
    fn naive_ssim(x: &Image<f64>, y: &Image<f64>, p: &SsimParams) -> f64 {
        let (rows, cols) = (x.rows() as isize, x.cols() as isize);
        let r = (p.window / 2) as isize;
        let mut total = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                let mut wsum = 0.0;
                let mut cells = Vec::new();
                for di in -r..=r {
                    for dj in -r..=r {
                        let w =
                            (-((di * di + dj * dj) as f64) / (2.0 * p.window_sigma.powi(2))).exp();
                        let fold = |k: isize, n: isize| -> usize {
                            let mut k = k;
                            while k < 0 || k >= n {
                                k = if k < 0 { -k - 1 } else { 2 * n - k - 1 };
                            }
                            k as usize
                        };
                        let (a, b) = (fold(i + di, rows), fold(j + dj, cols));
                        cells.push((w, x.get(a, b), y.get(a, b)));
                        wsum += w;
                    }
                }
                let mx: f64 = cells.iter().map(|(w, a, _)| w * a).sum::<f64>() / wsum;
                let my: f64 = cells.iter().map(|(w, _, b)| w * b).sum::<f64>() / wsum;
                let vx: f64 = cells
                    .iter()
                    .map(|(w, a, _)| w * (a - mx).powi(2))
                    .sum::<f64>()
                    / wsum;
                let vy: f64 = cells
                    .iter()
                    .map(|(w, _, b)| w * (b - my).powi(2))
                    .sum::<f64>()
                    / wsum;
                let cxy: f64 = cells
                    .iter()
                    .map(|(w, a, b)| w * (a - mx) * (b - my))
                    .sum::<f64>()
                    / wsum;
                let (c1, c2, c3) = (p.c1(), p.c2(), p.c3());
                let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                let c = (2.0 * vx.sqrt() * vy.sqrt() + c2) / (vx + vy + c2);
                let s = (cxy + c3) / (vx.sqrt() * vy.sqrt() + c3);
                total += l.powf(p.alpha) * c.powf(p.beta) * s.powf(p.gamma);
            }
        }
        total / (rows * cols) as f64
    }

    #[test]
    fn matches_naive_windowed_implementation() {
        let (x, y) = pair16();
        let p = SsimParams::default();
        let fast = ssim(&x, &y, &p).unwrap();
        assert_relative_eq!(fast, naive_ssim(&x, &y, &p), epsilon = 1e-9);
        assert!(fast < 0.9);
        let p = SsimParams {
            alpha: 2.0,
            window: 7,
            window_sigma: 1.0,
            ..SsimParams::default()
        };
        let x2 = x.map(|v| v + 0.05);
        let y2 = x.map(|v| 0.9 * v + 0.1);
        assert_relative_eq!(
            ssim(&x2, &y2, &p).unwrap(),
            naive_ssim(&x2, &y2, &p),
            epsilon = 1e-9
        );
    }

    #[test]
    fn identity_scores_one() {
        let (x, _) = pair16();
        assert_relative_eq!(
            ssim(&x, &x, &SsimParams::default()).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn constant_images() {
        let p = SsimParams::default();
        let zero = Image::<f64>::zeros(12, 12);
        let one = img(12, 12, |_, _| 1.0);
        let expected = 0.0001 / 1.0001;
        assert_relative_eq!(
            ssim(&zero, &one, &p).unwrap(),
            expected,
            max_relative = 1e-9
        );
    }

    #[test]
    fn small_images_reflect_repeatedly() {
        let x = img(3, 4, |i, j| (i + j) as f64 / 5.0);
        let y = img(3, 4, |i, j| (i * j) as f64 / 6.0);
        let p = SsimParams::default();
        assert_relative_eq!(
            ssim(&x, &y, &p).unwrap(),
            naive_ssim(&x, &y, &p),
            epsilon = 1e-9
        );
    }

    #[test]
    fn errors() {
        let a = Image::<f64>::zeros(4, 4);
        let b = Image::<f64>::zeros(4, 5);
        assert!(ssim(&a, &b, &SsimParams::default()).is_err());
        assert!(ssim(&a, &a, &SsimParams::with_range(0.0)).is_err());
        assert!(ssim(&a, &a, &SsimParams::with_range(-1.0)).is_err());
        let even = SsimParams {
            window: 10,
            ..SsimParams::default()
        };
        assert!(ssim(&a, &a, &even).is_err());
    }

    #[test]
    fn reflect_indexing() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(got, vec![2, 2, 1, 0, 0, 1, 2, 2, 1, 0, 0, 1]);
    }

    #[test]
    fn region_crop_and_report() {
        let x = img(30, 30, |i, j| {
            if i == 0 || j == 29 {
                9.0
            } else {
                (i * j) as f64
            }
        });
        let c = Region::CenterCrop { border: 1 }.apply(&x).unwrap();
        assert_eq!((c.rows(), c.cols()), (28, 28));
        assert_eq!(c.get(0, 0), x.get(1, 1));
        assert!(Region::CenterCrop { border: 15 }.apply(&x).is_err());

        let (a, b) = pair16();
        let rep = ssim_batch(
            &[(a.clone(), b.clone()), (a.clone(), a.clone())],
            Region::Full,
            &SsimParams::default(),
        )
        .unwrap();
        assert_eq!(rep.scores.len(), 2);
        assert_relative_eq!(
            rep.mean_ssim,
            (rep.scores[0] + rep.scores[1]) / 2.0,
            epsilon = 1e-15
        );
        let dir = tempfile::tempdir().unwrap();
        rep.write_csv(&dir.path().join("s.csv")).unwrap();
        rep.write_json(&dir.path().join("s.json")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert!(text.starts_with("index,ssim\n0,"));
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap())
                .unwrap();
        assert!(v["mean_ssim"].is_number() && v["scores"].is_array());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn symmetric_bounded_and_scale_covariant(
            xs in proptest::collection::vec(0.0f64..1.0, 100),
            ys in proptest::collection::vec(0.0f64..1.0, 100),
            c in 0.01f64..100.0,
        ) {
            let x = Image::from_vec(10, 10, xs).unwrap();
            let y = Image::from_vec(10, 10, ys).unwrap();
            let p = SsimParams::default();
            let a = ssim(&x, &y, &p).unwrap();
            let b = ssim(&y, &x, &p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!(a <= 1.0 + 1e-12);
            let scaled = ssim(&x.scaled(c), &y.scaled(c), &SsimParams::with_range(c)).unwrap();
            prop_assert!((scaled - a).abs() <= 1e-12, "{} vs {}", scaled, a);
        }
    }
}
