//! Dense singular value decomposition backed by `faer`, run sequentially so
//! results are reproducible across thread counts.

use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::{svd, svd_scratch, ComputeSvdVectors, SvdError};
use faer::{Mat, Par};

use super::TransferMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Thin factors `M = U diag(s) Vᵀ`, singular values non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors<T> {
    rows: usize,
    cols: usize,
    /// Column-major `rows x k`.
    u: Vec<T>,
    s: Vec<T>,
    /// Column-major `cols x k`.
    v: Vec<T>,
}

impl<T: Real> SvdFactors<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of triplets, `min(rows, cols)`.
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn singular_values(&self) -> &[T] {
        &self.s
    }

    pub fn singular_value(&self, j: usize) -> T {
        self.s[j]
    }

    pub fn u_col(&self, j: usize) -> &[T] {
        &self.u[j * self.rows..(j + 1) * self.rows]
    }

    pub fn v_col(&self, j: usize) -> &[T] {
        &self.v[j * self.cols..(j + 1) * self.cols]
    }

    /// `u_jᵀ y`.
    pub fn u_dot(&self, j: usize, y: &[T]) -> T {
        self.u_col(j).iter().zip(y).map(|(&a, &b)| a * b).sum()
    }

    /// `Σ_{j<k} s_j u_j v_jᵀ`, column-major.
    pub fn reconstruct_rank(&self, k: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * self.cols];
        for j in 0..k.min(self.rank()) {
            let (uj, vj, sj) = (self.u_col(j), self.v_col(j), self.s[j]);
            for (c, &vc) in vj.iter().enumerate() {
                let w = sj * vc;
                for (o, &ur) in out[c * self.rows..(c + 1) * self.rows].iter_mut().zip(uj) {
                    *o += w * ur;
                }
            }
        }
        out
    }
}

fn to_mat<T: Real>(m: &TransferMatrix<T>) -> Mat<T> {
    let rows = m.rows();
    let data = m.as_slice();
    Mat::from_fn(rows, m.cols(), |i, j| data[j * rows + i])
}

type UV<T> = (Mat<T>, Mat<T>);

fn run<T: Real>(m: &TransferMatrix<T>, vectors: bool) -> Result<(Vec<T>, Option<UV<T>>)> {
    let (rows, cols) = (m.rows(), m.cols());
    let k = rows.min(cols);
    let a = to_mat(m);
    let mut s = Diag::<T>::zeros(k);
    let compute = if vectors {
        ComputeSvdVectors::Thin
    } else {
        ComputeSvdVectors::No
    };
    let mut uv = vectors.then(|| (Mat::<T>::zeros(rows, k), Mat::<T>::zeros(cols, k)));
    let mut buf = MemBuffer::new(svd_scratch::<T>(
        rows,
        cols,
        compute,
        compute,
        Par::Seq,
        Default::default(),
    ));
    let stack = MemStack::new(&mut buf);
    let (u, v) = match uv.as_mut() {
        Some((u, v)) => (Some(u.as_mut()), Some(v.as_mut())),
        None => (None, None),
    };
    svd(
        a.as_ref(),
        s.as_mut(),
        u,
        v,
        Par::Seq,
        stack,
        Default::default(),
    )
    .map_err(|e| match e {
        SvdError::NoConvergence => Error::SvdConvergence { rows, cols },
    })?;
    let values = (0..k).map(|j| s.column_vector()[j]).collect();
    Ok((values, uv))
}

/// Singular values only, non-increasing.
pub fn singular_values<T: Real>(m: &TransferMatrix<T>) -> Result<Vec<T>> {
    let (mut values, _) = run(m, false)?;
    values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(values)
}

pub fn thin_svd<T: Real>(m: &TransferMatrix<T>) -> Result<SvdFactors<T>> {
    let (rows, cols) = (m.rows(), m.cols());
    let (values, uv) = run(m, true)?;
    let (u, v) = uv.expect("vectors requested");
    let k = values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = SvdFactors {
        rows,
        cols,
        u: Vec::with_capacity(rows * k),
        s: Vec::with_capacity(k),
        v: Vec::with_capacity(cols * k),
    };
    for &j in &order {
        out.s.push(values[j]);
        out.u.extend((0..rows).map(|i| u[(i, j)]));
        out.v.extend((0..cols).map(|i| v[(i, j)]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brdf::PhongSurface;
    use crate::geometry::SceneConfig;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Wraps arbitrary data; the scene only fixes the declared shape.
    fn wrap(rows_side: usize, cols_side: usize, data: Vec<f64>) -> TransferMatrix<f64> {
        let cfg = SceneConfig {
            detector_pixels: rows_side,
            object_pixels: cols_side,
            ..SceneConfig::default()
        };
        let n = rows_side * rows_side * cols_side * cols_side;
        assert_eq!(data.len(), n);
        TransferMatrix::from_parts(
            cfg,
            PhongSurface::lambertian(),
            "test".into(),
            rows_side * rows_side,
            cols_side * cols_side,
            data,
        )
        .unwrap()
    }

    /// Singular values from the eigenvalues of `MᵀM`, via nalgebra.
    fn gram_oracle(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
        let m = nalgebra::DMatrix::from_column_slice(rows, cols, data);
        let g = m.transpose() * &m;
        let mut ev: Vec<f64> = g
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|&l| l.max(0.0).sqrt())
            .collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let n = 4;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        let m = wrap(2, 2, data);
        let s = singular_values(&m).unwrap();
        for v in s {
            assert_relative_eq!(v, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn diagonal_is_sorted_absolute() {
        let d = [0.5, -3.0, 2.0, 1e-3];
        let mut data = vec![0.0; 16];
        for (i, &v) in d.iter().enumerate() {
            data[i * 4 + i] = v;
        }
        let s = singular_values(&wrap(2, 2, data)).unwrap();
        let expect = [3.0, 2.0, 0.5, 1e-3];
        for (a, b) in s.iter().zip(expect) {
            assert_relative_eq!(*a, b, max_relative = 1e-13);
        }
    }

    #[test]
    fn rank_one_spectrum() {
        let u = [1.0, 2.0, 0.0, -1.0, 3.0, 0.5, 0.0, 1.0, 2.0];
        let v = [0.5, -1.0, 2.0, 1.0];
        let mut data = vec![0.0; 36];
        for c in 0..4 {
            for r in 0..9 {
                data[c * 9 + r] = u[r] * v[c];
            }
        }
        let s = singular_values(&wrap(3, 2, data)).unwrap();
        let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_relative_eq!(s[0], nu * nv, max_relative = 1e-13);
        assert!(s[1..].iter().all(|&x| x < 1e-12));
    }

    #[test]
    fn physical_matrix_matches_gram_oracle_and_reconstructs() {
        let cfg = SceneConfig {
            detector_pixels: 4,
            object_pixels: 3,
            ..SceneConfig::default()
        };
        let m = super::super::build_matrix(&cfg, &PhongSurface::complementary(0.3, 20.0)).unwrap();
        let f = thin_svd(&m).unwrap();
        let oracle = gram_oracle(16, 9, m.as_slice());
        let s1 = f.singular_value(0);
        for (a, b) in f.singular_values().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9 * s1, "{a} vs {b}");
        }
        let rebuilt = f.reconstruct_rank(9);
        let err: f64 = rebuilt
            .iter()
            .zip(m.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = m.as_slice().iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err <= 1e-8 * norm, "relative error {}", err / norm);
        assert_eq!(singular_values(&m).unwrap(), f.singular_values());
    }

    #[test]
    fn factors_are_orthonormal() {
        let cfg = SceneConfig {
            detector_pixels: 6,
            object_pixels: 4,
            ..SceneConfig::default()
        };
        let m = super::super::build_matrix(&cfg, &PhongSurface::complementary(0.5, 10.0)).unwrap();
        let f = thin_svd(&m).unwrap();
        for a in 0..f.rank() {
            for b in 0..f.rank() {
                let uu: f64 = f.u_col(a).iter().zip(f.u_col(b)).map(|(x, y)| x * y).sum();
                let vv: f64 = f.v_col(a).iter().zip(f.v_col(b)).map(|(x, y)| x * y).sum();
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((uu - e).abs() < 1e-10 && (vv - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn deterministic_across_calls() {
        let cfg = SceneConfig {
            detector_pixels: 8,
            object_pixels: 4,
            ..SceneConfig::default()
        };
        let m = super::super::build_matrix(&cfg, &PhongSurface::complementary(0.2, 60.0)).unwrap();
        assert_eq!(thin_svd(&m).unwrap(), thin_svd(&m).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn random_matrices_match_oracle(data in proptest::collection::vec(-1.0f64..1.0, 144)) {
            // 16x9 layout
            let m = wrap(4, 3, data.clone());
            let s = singular_values(&m).unwrap();
            let o = gram_oracle(16, 9, &data);
            let s1 = s[0].max(1e-300);
            prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
            for (a, b) in s.iter().zip(&o) {
                // Gram eigenvalues lose half the digits near zero
                prop_assert!((a - b).abs() <= 1e-7 * s1, "{} vs {}", a, b);
            }
        }

        #[test]
        fn spectrum_scales_linearly(c in 1e-3f64..1e3) {
            let cfg = SceneConfig { detector_pixels: 4, object_pixels: 3, ..SceneConfig::default() };
            let m = super::super::build_matrix(&cfg, &PhongSurface::complementary(0.4, 30.0)).unwrap();
            let a = super::super::svd_spectrum(&m).unwrap();
            let b = super::super::svd_spectrum(&m.scaled(c)).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x * c - y).abs() <= 1e-10 * y.abs().max(a.values[0] * c));
            }
            for (x, y) in a.normalized.iter().zip(&b.normalized) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
            prop_assert_eq!(
                super::super::bandwidth_db(&a, 50.0).unwrap(),
                super::super::bandwidth_db(&b, 50.0).unwrap()
            );
        }
    }
}
