//! Bandwidth sweeps over (sigma_s, gamma).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use clap::Args;
use nlos::brdf::PhongSurface;
use nlos::geometry::SceneConfig;
use nlos::transfer::{build_matrix, svd_spectrum, write_spectrum_csv, MatrixCache};
use serde::Serialize;
use serde_json::{json, Value};

use crate::commands::bandwidths;
use crate::{CliError, CliResult, Common};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURES_FILE: &str = "failures.csv";

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Comma-separated `sigma_s:gamma` pairs.
    #[arg(long, conflicts_with = "preset")]
    pub points: Option<String>,

    /// Built-in point sets.
    #[arg(long, value_parser = ["sigma", "gamma", "claim"])]
    pub preset: Option<String>,

    /// Diffuse weight for every point; default 1 - sigma_s.
    #[arg(long)]
    pub sigma_l: Option<f64>,

    /// Build every matrix in memory without touching the cache.
    #[arg(long)]
    pub no_cache: bool,
}

/// One sweep point; `sigma_l` is `None` for the complementary default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub sigma_s: f64,
    pub gamma: f64,
    pub sigma_l: Option<f64>,
}

impl SweepPoint {
    pub fn surface(&self) -> CliResult<PhongSurface<f64>> {
        let surf = PhongSurface::uniform(
            self.sigma_l.unwrap_or(1.0 - self.sigma_s),
            self.sigma_s,
            self.gamma,
        );
        surf.validate()?;
        Ok(surf)
    }

    fn stem(&self) -> String {
        format!("spectrum_s{}_g{}.csv", self.sigma_s, self.gamma)
    }
}

pub fn preset(name: &str) -> CliResult<Vec<(f64, f64)>> {
    Ok(match name {
        "sigma" => [0.0, 0.05, 0.1, 0.2, 0.4]
            .iter()
            .map(|&s| (s, 60.0))
            .collect(),
        "gamma" => [0.0, 30.0, 60.0, 90.0, 120.0]
            .iter()
            .map(|&g| (0.1, g))
            .collect(),
        "claim" => vec![(0.0, 60.0), (0.1, 60.0)],
        other => return Err(CliError::Usage(format!("unknown preset `{other}`"))),
    })
}

pub fn parse_points(s: &str) -> CliResult<Vec<(f64, f64)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, b) = p.split_once(':').ok_or_else(|| {
                CliError::Usage(format!("sweep point `{p}` is not `sigma_s:gamma`"))
            })?;
            let num = |x: &str| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("bad number in sweep point `{p}`")))
            };
            Ok((num(a)?, num(b)?))
        })
        .collect()
}

impl SweepArgs {
    pub fn points(&self) -> CliResult<Vec<SweepPoint>> {
        let pairs = match (&self.points, &self.preset) {
            (Some(p), _) => parse_points(p)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => return Err(CliError::Usage("sweep needs --points or --preset".into())),
        };
        if pairs.is_empty() {
            return Err(CliError::Usage("sweep has no points".into()));
        }
        Ok(pairs
            .into_iter()
            .map(|(sigma_s, gamma)| SweepPoint {
                sigma_s,
                gamma,
                sigma_l: self.sigma_l,
            })
            .collect())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub sigma_s: f64,
    pub gamma: f64,
    pub n50: usize,
    pub n50_power: usize,
    pub ratio_vs_lambertian: f64,
    pub spectrum: String,
}

/// Index of the row the ratios are taken against: the first purely diffuse
/// point, otherwise the first point.
fn reference_index(points: &[(SweepPoint, usize)]) -> usize {
    points
        .iter()
        .position(|(p, _)| p.sigma_s == 0.0)
        .unwrap_or(0)
}

pub fn summary_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("sigma_s,gamma,n50,ratio_vs_lambertian\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{}",
            r.sigma_s, r.gamma, r.n50, r.ratio_vs_lambertian
        )
        .unwrap();
    }
    s
}

fn run_point(
    c: &Common,
    cfg: &SceneConfig,
    p: &SweepPoint,
    no_cache: bool,
    out: &Path,
) -> CliResult<(usize, usize)> {
    let surf = p.surface()?;
    let m = if no_cache {
        build_matrix(cfg, &surf)?
    } else {
        MatrixCache::new(&c.cache_dir).load_or_build(cfg, &surf)?.0
    };
    let spec = svd_spectrum(&m)?;
    drop(m);
    write_spectrum_csv(&spec, &out.join(p.stem()))?;
    bandwidths(&spec, c.threshold_db)
}

pub fn run(c: &Common, a: &SweepArgs) -> CliResult<Value> {
    let cfg = c.scene()?;
    let points = a.points()?;
    let out = c.out_or("sweep");
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let failures_path = out.join(FAILURES_FILE);
    if failures_path.exists() {
        fs::remove_file(&failures_path).map_err(|e| CliError::io(&failures_path, e))?;
    }

    let start = Instant::now();
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for p in &points {
        let t = Instant::now();
        match run_point(c, &cfg, p, a.no_cache, &out) {
            Ok(n) => {
                log::info!(
                    "sigma_s={} gamma={}: n50={} ({:.1}s)",
                    p.sigma_s,
                    p.gamma,
                    n.0,
                    t.elapsed().as_secs_f64()
                );
                done.push((*p, n));
            }
            Err(e) => {
                log::error!("sigma_s={} gamma={}: {e}", p.sigma_s, p.gamma);
                failures.push((*p, e.to_string()));
            }
        }
    }

    let bare: Vec<(SweepPoint, usize)> = done.iter().map(|(p, n)| (*p, n.0)).collect();
    let rows: Vec<SweepRow> = if done.is_empty() {
        Vec::new()
    } else {
        let r = &done[reference_index(&bare)].1;
        done.iter()
            .map(|(p, n)| SweepRow {
                sigma_s: p.sigma_s,
                gamma: p.gamma,
                n50: n.0,
                n50_power: n.1,
                ratio_vs_lambertian: n.0 as f64 / r.0 as f64,
                spectrum: p.stem(),
            })
            .collect()
    };
    let summary = out.join(SUMMARY_FILE);
    fs::write(&summary, summary_csv(&rows)).map_err(|e| CliError::io(&summary, e))?;

    if !failures.is_empty() {
        let mut s = String::from("sigma_s,gamma,error\n");
        for (p, e) in &failures {
            writeln!(s, "{},{},\"{}\"", p.sigma_s, p.gamma, e.replace('"', "'")).unwrap();
        }
        fs::write(&failures_path, s).map_err(|e| CliError::io(&failures_path, e))?;
        return Err(CliError::Partial(format!(
            "{} of {} sweep points failed; see {}",
            failures.len(),
            points.len(),
            failures_path.display()
        )));
    }

    Ok(json!({
        "command": "sweep",
        "out": out.display().to_string(),
        "summary": summary.display().to_string(),
        "threshold_db": c.threshold_db,
        "convention": "amplitude",
        "rows": rows,
        "seconds": start.elapsed().as_secs_f64(),
    }))
}
