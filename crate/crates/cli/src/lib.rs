//! `nlos` command-line front end. Every command prints one JSON line on
//! stdout; logs go to stderr.

mod commands;
pub mod sweep;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nlos::brdf::PhongSurface;
use nlos::geometry::SceneConfig;
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config not found: {}", .0.display())]
    ConfigNotFound(PathBuf),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] nlos::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Partial(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigNotFound(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "nlos",
    version,
    about = "Non-line-of-sight imaging off Phong surfaces"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scene configuration JSON; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Surface as "sigma_l,sigma_s,gamma".
    #[arg(long, global = true, default_value = "1,0,0")]
    pub surface: String,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// "tsvd:K", "tikhonov:LAMBDA", or a bare "tsvd" / "tikhonov" for the
    /// threshold-derived default.
    #[arg(long, global = true)]
    pub reg: Option<String>,

    /// Spectral threshold in dB below the largest singular value.
    #[arg(long, global = true, default_value_t = nlos::transfer::DEFAULT_THRESHOLD_DB)]
    pub threshold_db: f64,

    /// Transfer-matrix cache directory.
    #[arg(long, global = true, env = "NLOS_CACHE_DIR", default_value = "cache")]
    pub cache_dir: PathBuf,
}

impl Common {
    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            })
            .max(1)
    }

    pub fn scene(&self) -> CliResult<SceneConfig> {
        let cfg = match &self.config {
            None => SceneConfig::default(),
            Some(p) => load_config(p)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn surface(&self) -> CliResult<PhongSurface<f64>> {
        parse_surface(&self.surface)
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

pub fn load_config(path: &Path) -> CliResult<SceneConfig> {
    if !path.is_file() {
        return Err(CliError::ConfigNotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

pub fn parse_surface(s: &str) -> CliResult<PhongSurface<f64>> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            CliError::Usage(format!(
                "--surface expects \"sigma_l,sigma_s,gamma\", got `{s}`"
            ))
        })?;
    let [l, sp, g] = parts[..] else {
        return Err(CliError::Usage(format!(
            "--surface expects three values, got `{s}`"
        )));
    };
    let surf = PhongSurface::uniform(l, sp, g);
    surf.validate()?;
    Ok(surf)
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the scattering pattern of one object.
    Render(commands::RenderArgs),
    /// Sweep surface parameters and tabulate the spectral bandwidth.
    Sweep(sweep::SweepArgs),
    /// Build (or load from cache) the transfer matrix.
    Matrix,
    /// Singular-value spectrum and bandwidth of the transfer matrix.
    Svd,
    /// Reconstruct objects from rendered or supplied patterns.
    Reconstruct(commands::ReconstructArgs),
    /// Fit Phong parameters to angular scattering samples.
    FitBrdf(commands::FitArgs),
    /// Structural similarity between two grids.
    Ssim(commands::SsimArgs),
    /// Export a rendered training or test corpus.
    Dataset(commands::DatasetArgs),
}

/// Runs one command and returns its JSON result.
pub fn run(cli: &Cli) -> CliResult<Value> {
    let c = &cli.common;
    rayon::ThreadPoolBuilder::new()
        .num_threads(c.workers())
        .build_global()
        .ok();
    match &cli.command {
        Command::Render(a) => commands::render(c, a),
        Command::Sweep(a) => sweep::run(c, a),
        Command::Matrix => commands::matrix(c),
        Command::Svd => commands::svd(c),
        Command::Reconstruct(a) => commands::reconstruct(c, a),
        Command::FitBrdf(a) => commands::fit_brdf(c, a),
        Command::Ssim(a) => commands::ssim(c, a),
        Command::Dataset(a) => commands::dataset(c, a),
    }
}
