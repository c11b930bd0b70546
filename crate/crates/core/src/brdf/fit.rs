//! Regularized least-squares fit of `f(θ) = σ_L cos(θ-θ₀) + σ_S cos(θ-θ₀)^γ`
//! to angular scattering measurements.
//!
//! Loss: `Σ (y_k - f(θ_k))² + α₁ σ_S + α₂ γ` on max-normalized data. For a
//! fixed `(γ, θ₀)` the model is linear in the weights, so the weights come
//! from a two-variable nonnegative least-squares solve; `(γ, θ₀)` are found by
//! an integer grid search refined by coordinate descent.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA1: f64 = 0.01;
pub const DEFAULT_ALPHA2: f64 = 0.0005;

const MIN_SAMPLES: usize = 4;
const MAX_REFINE_ITERS: usize = 20_000;
const REFINE_TOL: f64 = 1e-7;

/// One angular measurement. CSV header: `theta_deg,intensity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrdfSample {
    pub theta_deg: f64,
    pub intensity: f64,
}

impl BrdfSample {
    pub fn new(theta_deg: f64, intensity: f64) -> Self {
        Self {
            theta_deg,
            intensity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrdfFitResult {
    #[serde(rename = "sigma_L")]
    pub sigma_l: f64,
    #[serde(rename = "sigma_S")]
    pub sigma_s: f64,
    pub gamma: f64,
    pub theta0_deg: f64,
    /// Sum of squared errors on the max-normalized data, without penalties.
    pub residual: f64,
    /// False when refinement hit its iteration cap; the result is then the
    /// best point found so far.
    #[serde(default = "yes")]
    pub converged: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Rescale the fitted weights so that `σ_L + σ_S = 1`.
    pub unit_sum: bool,
    pub gamma_max: u32,
    pub theta0_max_deg: i32,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            alpha1: DEFAULT_ALPHA1,
            alpha2: DEFAULT_ALPHA2,
            unit_sum: false,
            gamma_max: 200,
            theta0_max_deg: 5,
        }
    }
}

impl FitOptions {
    pub fn with_alphas(alpha1: f64, alpha2: f64) -> Self {
        Self {
            alpha1,
            alpha2,
            ..Self::default()
        }
    }
}

#[inline]
fn clamped_cos(theta_deg: f64, theta0_deg: f64) -> f64 {
    (theta_deg - theta0_deg).to_radians().cos().clamp(0.0, 1.0)
}

#[inline]
fn lobe(cos: f64, gamma: f64) -> f64 {
    if cos > 0.0 {
        cos.powf(gamma)
    } else {
        0.0
    }
}

/// Fit model value at `theta_deg`. Cosines are clamped to `[0, 1]`.
pub fn eval_fit_model(theta_deg: f64, p: &BrdfFitResult) -> f64 {
    let c = clamped_cos(theta_deg, p.theta0_deg);
    p.sigma_l * c + p.sigma_s * lobe(c, p.gamma)
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    gamma: f64,
    theta0: f64,
    sigma_l: f64,
    sigma_s: f64,
    sse: f64,
    loss: f64,
}

struct Problem<'a> {
    theta: &'a [f64],
    y: &'a [f64],
    alpha1: f64,
    alpha2: f64,
}

impl Problem<'_> {
    fn sse(&self, a: f64, c: f64, b1: &[f64], b2: &[f64]) -> f64 {
        self.y
            .iter()
            .zip(b1.iter().zip(b2))
            .map(|(y, (p, q))| {
                let r = y - a * p - c * q;
                r * r
            })
            .sum()
    }

    /// Minimizes `|y - a b1 - c b2|² + α₁ c` over `a, c ≥ 0` by checking every
    /// KKT candidate of the convex two-variable problem.
    fn solve_weights(&self, gamma: f64, theta0: f64) -> Cell {
        let b1: Vec<f64> = self.theta.iter().map(|&t| clamped_cos(t, theta0)).collect();
        let b2: Vec<f64> = b1.iter().map(|&c| lobe(c, gamma)).collect();
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let (g11, g12, g22) = (dot(&b1, &b1), dot(&b1, &b2), dot(&b2, &b2));
        let r1 = dot(&b1, self.y);
        let r2 = dot(&b2, self.y) - 0.5 * self.alpha1;

        let mut candidates = vec![(0.0, 0.0)];
        if g11 > 0.0 {
            candidates.push(((r1 / g11).max(0.0), 0.0));
        }
        if g22 > 0.0 {
            candidates.push((0.0, (r2 / g22).max(0.0)));
        }
        let det = g11 * g22 - g12 * g12;
        if det > 1e-12 * g11 * g22 {
            let a = (r1 * g22 - g12 * r2) / det;
            let c = (g11 * r2 - g12 * r1) / det;
            if a >= 0.0 && c >= 0.0 {
                candidates.push((a, c));
            }
        }

        let mut best: Option<Cell> = None;
        for (a, c) in candidates {
            let sse = self.sse(a, c, &b1, &b2);
            let loss = sse + self.alpha1 * c + self.alpha2 * gamma;
            if best.is_none_or(|b| loss < b.loss) {
                best = Some(Cell {
                    gamma,
                    theta0,
                    sigma_l: a,
                    sigma_s: c,
                    sse,
                    loss,
                });
            }
        }
        best.expect("at least the zero candidate exists")
    }
}

/// Fits Phong parameters to angular measurements.
///
/// Intensities are max-normalized before fitting, which makes the result
/// invariant to the overall measurement scale.
pub fn fit_phong(samples: &[BrdfSample], opts: &FitOptions) -> Result<BrdfFitResult> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if !(opts.alpha1 >= 0.0 && opts.alpha2 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "regularization weights must be >= 0, got ({}, {})",
            opts.alpha1, opts.alpha2
        )));
    }
    for s in samples {
        if !(0.0..90.0).contains(&s.theta_deg) {
            return Err(Error::InvalidParameter(format!(
                "scattering angle {} outside [0, 90)",
                s.theta_deg
            )));
        }
        if !(s.intensity >= 0.0 && s.intensity.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "intensity must be finite and >= 0, got {}",
                s.intensity
            )));
        }
    }
    let peak = samples.iter().map(|s| s.intensity).fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::InvalidParameter("all intensities are zero".into()));
    }
    let theta: Vec<f64> = samples.iter().map(|s| s.theta_deg).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.intensity / peak).collect();
    let problem = Problem {
        theta: &theta,
        y: &y,
        alpha1: opts.alpha1,
        alpha2: opts.alpha2,
    };

    // row-major scan with strict improvement: ties keep the smaller gamma,
    // then the smaller offset
    let mut best = problem.solve_weights(0.0, -(opts.theta0_max_deg as f64));
    for g in 0..=opts.gamma_max {
        for t in -opts.theta0_max_deg..=opts.theta0_max_deg {
            let cell = problem.solve_weights(g as f64, t as f64);
            if cell.loss < best.loss {
                best = cell;
            }
        }
    }

    let (best, converged) = refine(&problem, best, opts);
    let mut result = BrdfFitResult {
        sigma_l: best.sigma_l,
        sigma_s: best.sigma_s,
        gamma: best.gamma,
        theta0_deg: best.theta0,
        residual: best.sse,
        converged,
    };
    if !converged {
        log::warn!("phong fit refinement hit {MAX_REFINE_ITERS} iterations; returning best point");
    }
    if opts.unit_sum {
        let total = result.sigma_l + result.sigma_s;
        if total > 0.0 {
            result.sigma_l /= total;
            result.sigma_s /= total;
            result.residual = theta
                .iter()
                .zip(&y)
                .map(|(&t, &yk)| (yk - eval_fit_model(t, &result)).powi(2))
                .sum();
        }
    }
    Ok(result)
}

/// Regularized loss of `p` on the max-normalized samples; the quantity
/// [`fit_phong`] minimizes.
pub fn fit_loss(samples: &[BrdfSample], p: &BrdfFitResult, opts: &FitOptions) -> f64 {
    let peak = samples.iter().map(|s| s.intensity).fold(0.0, f64::max);
    let sse: f64 = samples
        .iter()
        .map(|s| (s.intensity / peak - eval_fit_model(s.theta_deg, p)).powi(2))
        .sum();
    sse + opts.alpha1 * p.sigma_s + opts.alpha2 * p.gamma
}

/// Coordinate descent on `(γ, θ₀)` inside the search box, re-solving the
/// weights at every probe. Steps halve whenever neither direction improves.
fn refine(problem: &Problem<'_>, start: Cell, opts: &FitOptions) -> (Cell, bool) {
    let gamma_hi = opts.gamma_max as f64;
    let theta_hi = opts.theta0_max_deg as f64;
    let mut best = start;
    let mut step_gamma = 0.5;
    let mut step_theta = 0.5;
    for _ in 0..MAX_REFINE_ITERS {
        if step_gamma < REFINE_TOL && step_theta < REFINE_TOL {
            return (best, true);
        }
        let mut improved = false;
        for dir in [-1.0, 1.0] {
            let g = (best.gamma + dir * step_gamma).clamp(0.0, gamma_hi);
            let cell = problem.solve_weights(g, best.theta0);
            if cell.loss < best.loss {
                best = cell;
                improved = true;
                break;
            }
        }
        for dir in [-1.0, 1.0] {
            let t = (best.theta0 + dir * step_theta).clamp(-theta_hi, theta_hi);
            let cell = problem.solve_weights(best.gamma, t);
            if cell.loss < best.loss {
                best = cell;
                improved = true;
                break;
            }
        }
        if !improved {
            step_gamma *= 0.5;
            step_theta *= 0.5;
        }
    }
    (best, false)
}

/// Reads samples from a CSV file with header `theta_deg,intensity`.
pub fn read_samples_csv(path: impl AsRef<Path>) -> Result<Vec<BrdfSample>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                _ => unreachable!(),
            },
            _ => Error::Csv(e),
        })?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["theta_deg", "intensity"] {
        return Err(Error::malformed(
            path,
            format!(
                "expected header `theta_deg,intensity`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    reader
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}
