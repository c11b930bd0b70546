use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use nlos::brdf::{
    fit_phong, read_samples_csv, FitOptions, PhongSurface, DEFAULT_ALPHA1, DEFAULT_ALPHA2,
};
use nlos::dataset::{
    embed_object, export_dataset, load_idx, read_f64_raw, read_f64_with_sidecar, sidecar_path,
    write_f64_with_sidecar, write_pgm16, ExportOptions, Split,
};
use nlos::forward::{add_noise, render as render_object, NoiseSpec, ObjectImage, ScatterPattern};
use nlos::geometry::SceneConfig;
use nlos::image::Image;
use nlos::metrics::{ssim as ssim_score, Region, SsimParams, SsimReport};
use nlos::transfer::{
    apply, bandwidth_with, reconstruct as solve, svd_spectrum, thin_svd, write_matrix,
    write_spectrum_csv, DbConvention, MatrixCache, Regularization, SvdSpectrum, TransferMatrix,
};
use serde_json::{json, Value};

use crate::{CliError, CliResult, Common};

/// Where an object comes from: a raw grid or one image of an IDX file.
#[derive(Debug, Clone, Args)]
pub struct ObjectSource {
    /// Raw little-endian f64 object grid (square, sidecar optional).
    #[arg(long, conflicts_with = "idx")]
    pub object: Option<PathBuf>,

    /// IDX image file (MNIST format); digits are embedded into 30x30.
    #[arg(long)]
    pub idx: Option<PathBuf>,

    /// First image taken from the IDX file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub source: ObjectSource,

    /// Additive Gaussian noise as a fraction of the pattern maximum.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub source: ObjectSource,

    /// Number of IDX images to render and reconstruct.
    #[arg(long, default_value_t = 1)]
    pub count: usize,

    /// Reconstruct this pattern file instead of rendering objects.
    #[arg(long, conflicts_with_all = ["object", "idx"])]
    pub pattern: Option<PathBuf>,

    /// Score the full 30x30 grid or the central 28x28 digit.
    #[arg(long, value_parser = ["full", "crop"], default_value = "full")]
    pub ssim_region: String,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// CSV with header `theta_deg,intensity`.
    #[arg(long)]
    pub samples: PathBuf,

    #[arg(long, default_value_t = DEFAULT_ALPHA1)]
    pub alpha1: f64,

    #[arg(long, default_value_t = DEFAULT_ALPHA2)]
    pub alpha2: f64,

    /// Rescale the fitted weights so they sum to one.
    #[arg(long)]
    pub unit_sum: bool,

    /// Half-width of the offset search in degrees.
    #[arg(long, default_value_t = 5)]
    pub theta0_max: i32,
}

#[derive(Debug, Clone, Args)]
pub struct SsimArgs {
    pub a: PathBuf,
    pub b: PathBuf,

    /// Dynamic range L.
    #[arg(long, default_value_t = 1.0)]
    pub range: f64,

    /// Pixels dropped from every side before scoring.
    #[arg(long, default_value_t = 0)]
    pub crop: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub idx: PathBuf,

    /// Export at most this many images.
    #[arg(long)]
    pub count: Option<usize>,

    #[arg(long, default_value = "train")]
    pub split: String,

    /// Resize patterns to N x N; a bare flag means 256.
    #[arg(long, num_args = 0..=1, default_missing_value = "256")]
    pub resize: Option<usize>,

    /// Write 8-bit PGM previews.
    #[arg(long)]
    pub previews: bool,
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Raw grid with an optional sidecar; without one the grid must be square.
fn read_grid(path: &Path) -> CliResult<Image<f64>> {
    if sidecar_path(path).exists() {
        return Ok(read_f64_with_sidecar(path)?.0);
    }
    let len = fs::metadata(path).map_err(|e| CliError::io(path, e))?.len() as usize / 8;
    let side = (len as f64).sqrt().round() as usize;
    if side * side != len {
        return Err(CliError::Usage(format!(
            "{}: {len} values is not a square grid and no sidecar is present",
            path.display()
        )));
    }
    Ok(read_f64_raw(path, side, side)?)
}

fn load_objects(
    src: &ObjectSource,
    cfg: &SceneConfig,
    count: usize,
) -> CliResult<Vec<ObjectImage<f64>>> {
    let objs = match (&src.object, &src.idx) {
        (Some(p), _) => vec![ObjectImage::new(read_grid(p)?)?],
        (None, Some(p)) => {
            let set = load_idx(p)?;
            let end = src.index.saturating_add(count);
            if count == 0 || end > set.count {
                return Err(CliError::Usage(format!(
                    "images {}..{end} requested but {} holds {}",
                    src.index,
                    p.display(),
                    set.count
                )));
            }
            (src.index..end)
                .map(|i| embed_object(set.image(i), set.rows, set.cols))
                .collect::<Result<_, _>>()?
        }
        (None, None) => {
            return Err(CliError::Usage(
                "one of --object or --idx is required".into(),
            ))
        }
    };
    if let Some(o) = objs.iter().find(|o| o.side() != cfg.object_pixels) {
        return Err(CliError::Usage(format!(
            "object is {}x{} but the config expects {}x{}",
            o.side(),
            o.side(),
            cfg.object_pixels,
            cfg.object_pixels
        )));
    }
    Ok(objs)
}

fn write_pattern(p: &ScatterPattern<f64>, out: &Path) -> CliResult<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    if out.extension().is_some_and(|e| e == "pgm") {
        write_pgm16(&p.image, out)?;
    } else {
        write_f64_with_sidecar(&p.image, &p.config_hash, out)?;
    }
    Ok(())
}

pub fn render(c: &Common, a: &RenderArgs) -> CliResult<Value> {
    let cfg = c.scene()?;
    let surf = c.surface()?;
    let obj = load_objects(&a.source, &cfg, 1)?.remove(0);
    let start = Instant::now();
    let mut pattern = render_object(&obj, &cfg, &surf)?;
    if a.noise > 0.0 {
        add_noise(
            &mut pattern,
            NoiseSpec {
                relative_sigma: a.noise,
                seed: a.seed,
            },
        )?;
    }
    let out = c.out_or("pattern.f64");
    write_pattern(&pattern, &out)?;
    let (max, mean) = (pattern.image.max(), pattern.image.mean());
    Ok(json!({
        "command": "render",
        "out": path_str(&out),
        "config_hash": pattern.config_hash,
        "max": max,
        "mean": mean,
        "peak_to_mean": if mean > 0.0 { max / mean } else { 0.0 },
        "seconds": start.elapsed().as_secs_f64(),
    }))
}

pub(crate) fn cached_matrix(
    c: &Common,
    cfg: &SceneConfig,
    surf: &PhongSurface<f64>,
) -> CliResult<(TransferMatrix<f64>, bool)> {
    Ok(MatrixCache::new(&c.cache_dir).load_or_build(cfg, surf)?)
}

pub fn matrix(c: &Common) -> CliResult<Value> {
    let cfg = c.scene()?;
    let surf = c.surface()?;
    let start = Instant::now();
    let (m, hit) = cached_matrix(c, &cfg, &surf)?;
    if let Some(out) = &c.out {
        write_matrix(&m, out)?;
    }
    Ok(json!({
        "command": "matrix",
        "path": path_str(&MatrixCache::new(&c.cache_dir).path_for(m.config_hash())),
        "out": c.out.as_deref().map(path_str),
        "config_hash": m.config_hash(),
        "rows": m.rows(),
        "cols": m.cols(),
        "cache_hit": hit,
        "seconds": start.elapsed().as_secs_f64(),
    }))
}

pub(crate) fn bandwidths(spec: &SvdSpectrum<f64>, threshold_db: f64) -> CliResult<(usize, usize)> {
    Ok((
        bandwidth_with(spec, threshold_db, DbConvention::Amplitude)?,
        bandwidth_with(spec, threshold_db, DbConvention::Power)?,
    ))
}

pub fn svd(c: &Common) -> CliResult<Value> {
    let cfg = c.scene()?;
    let surf = c.surface()?;
    let (m, hit) = cached_matrix(c, &cfg, &surf)?;
    let start = Instant::now();
    let spec = svd_spectrum(&m)?;
    let (n50, n50_power) = bandwidths(&spec, c.threshold_db)?;
    let out = c.out_or("spectrum.csv");
    write_spectrum_csv(&spec, &out)?;
    Ok(json!({
        "command": "svd",
        "out": path_str(&out),
        "config_hash": m.config_hash(),
        "cache_hit": hit,
        "threshold_db": c.threshold_db,
        "convention": "amplitude",
        "n50": n50,
        "n50_power": n50_power,
        "sigma_max": spec.values[0],
        "length": spec.len(),
        "seconds": start.elapsed().as_secs_f64(),
    }))
}

fn parse_reg(c: &Common, spec: &SvdSpectrum<f64>) -> CliResult<Regularization> {
    match c.reg.as_deref().map(str::trim) {
        None | Some("tsvd") => Ok(Regularization::tsvd_at_db(spec, c.threshold_db)?),
        Some("tikhonov") => Ok(Regularization::tikhonov_at_db(spec, c.threshold_db)),
        Some(s) => s
            .parse()
            .map_err(|e: nlos::Error| CliError::Usage(e.to_string())),
    }
}

pub fn reconstruct(c: &Common, a: &ReconstructArgs) -> CliResult<Value> {
    let cfg = c.scene()?;
    let surf = c.surface()?;
    let (m, _) = cached_matrix(c, &cfg, &surf)?;
    let factor_start = Instant::now();
    let factors = thin_svd(&m)?;
    let spec = SvdSpectrum::from_values(factors.singular_values().to_vec());
    let reg = parse_reg(c, &spec)?;
    let factor_seconds = factor_start.elapsed().as_secs_f64();

    let (patterns, truths): (Vec<ScatterPattern<f64>>, Option<Vec<ObjectImage<f64>>>) =
        match &a.pattern {
            Some(p) => {
                let (image, meta) = read_f64_with_sidecar(p)?;
                if meta.config_hash != m.config_hash() {
                    log::warn!(
                        "pattern {} was rendered under config {}, matrix is {}",
                        p.display(),
                        meta.config_hash,
                        m.config_hash()
                    );
                }
                (
                    vec![ScatterPattern {
                        image,
                        config_hash: meta.config_hash,
                    }],
                    None,
                )
            }
            None => {
                let objs = load_objects(&a.source, &cfg, a.count)?;
                let pats = objs
                    .iter()
                    .map(|o| apply(&m, o))
                    .collect::<Result<Vec<_>, _>>()?;
                (pats, Some(objs))
            }
        };

    let out = c.out_or("recon");
    let est_dir = out.join("estimates");
    fs::create_dir_all(&est_dir).map_err(|e| CliError::io(&est_dir, e))?;
    let start = Instant::now();
    let recs = patterns
        .iter()
        .map(|p| solve(&m, &factors, p, reg))
        .collect::<Result<Vec<_>, _>>()?;
    let solve_seconds = start.elapsed().as_secs_f64();
    for (i, r) in recs.iter().enumerate() {
        write_f64_with_sidecar(
            r.clamped().image(),
            m.config_hash(),
            &est_dir.join(format!("{i:05}.f64")),
        )?;
    }

    let mut result = json!({
        "command": "reconstruct",
        "out": path_str(&out),
        "config_hash": m.config_hash(),
        "reg": reg.to_string(),
        "count": recs.len(),
        "factor_seconds": factor_seconds,
        "items_per_second": recs.len() as f64 / solve_seconds.max(1e-9),
        "residual_norms": recs.iter().map(|r| r.residual_norm).collect::<Vec<_>>(),
    });
    if let Some(truths) = truths {
        let region = match a.ssim_region.as_str() {
            "crop" => Region::CenterCrop { border: 1 },
            _ => Region::Full,
        };
        let params = SsimParams::default();
        let scores = recs
            .iter()
            .zip(&truths)
            .map(|(r, t)| {
                let est = region.apply(r.clamped().image())?;
                ssim_score(&est, &region.apply(t.image())?, &params)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let report = SsimReport::from_scores(scores, region, params);
        report.write_json(&out.join("ssim.json"))?;
        report.write_csv(&out.join("ssim.csv"))?;
        result["mean_ssim"] = json!(report.mean_ssim);
        result["ssim_region"] = json!(a.ssim_region);
    }
    Ok(result)
}

pub fn fit_brdf(c: &Common, a: &FitArgs) -> CliResult<Value> {
    let samples = read_samples_csv(&a.samples)?;
    let opts = FitOptions {
        alpha1: a.alpha1,
        alpha2: a.alpha2,
        unit_sum: a.unit_sum,
        theta0_max_deg: a.theta0_max,
        ..FitOptions::default()
    };
    let fit = fit_phong(&samples, &opts)?;
    let mut v = serde_json::to_value(fit)?;
    if let Some(out) = &c.out {
        fs::write(out, serde_json::to_vec_pretty(&fit)?).map_err(|e| CliError::io(out, e))?;
        v["out"] = json!(path_str(out));
    }
    v["command"] = json!("fit-brdf");
    Ok(v)
}

pub fn ssim(_c: &Common, a: &SsimArgs) -> CliResult<Value> {
    let region = if a.crop == 0 {
        Region::Full
    } else {
        Region::CenterCrop { border: a.crop }
    };
    let x = region.apply(&read_grid(&a.a)?)?;
    let y = region.apply(&read_grid(&a.b)?)?;
    let s = ssim_score(&x, &y, &SsimParams::with_range(a.range))?;
    Ok(json!({ "command": "ssim", "ssim": s }))
}

pub fn dataset(c: &Common, a: &DatasetArgs) -> CliResult<Value> {
    let cfg = c.scene()?;
    let surf = c.surface()?;
    let split: Split = a
        .split
        .parse()
        .map_err(|e: nlos::Error| CliError::Usage(e.to_string()))?;
    let mut images = load_idx(&a.idx)?;
    if let Some(n) = a.count {
        images = images.take(n);
    }
    let out = c.out_or("dataset");
    let start = Instant::now();
    let manifest = export_dataset(
        &images,
        &cfg,
        &surf,
        &out,
        &ExportOptions {
            split,
            resize_to: a.resize,
            previews: a.previews,
            workers: c.workers(),
        },
    )?;
    let secs = start.elapsed().as_secs_f64();
    Ok(json!({
        "command": "dataset",
        "manifest": path_str(&out.join(nlos::dataset::MANIFEST_FILE)),
        "config_hash": manifest.config_hash,
        "count": manifest.count,
        "pattern_shape": manifest.pattern_shape,
        "seconds": secs,
        "items_per_second": manifest.count as f64 / secs.max(1e-9),
    }))
}
