//! Batch front-end for the eLMG numerics: one subcommand per experiment,
//! CSV tables, a JSON manifest per run and an on-disk eigendecomposition
//! cache.

pub mod cache;
pub mod commands;
pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::time::Instant;

use clap::Parser;

use crate::cache::{default_root, EigenCache};
use crate::config::{Flags, RunConfig, Subcommand};
use crate::output::{sha256_hex, Manifest, OutputDir};

/// Failure of a run, classified by exit code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("resource guard: {0}")]
    Resource(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Resource(_) => 4,
        }
    }
}

impl From<elmg_core::Error> for CliError {
    fn from(e: elmg_core::Error) -> Self {
        use elmg_core::Error as E;
        match e {
            E::Domain(_) | E::PhaseDomain { .. } | E::Contract(_) => CliError::Usage(e.to_string()),
            E::Resource(_) => CliError::Resource(e.to_string()),
            E::Numeric(_) | E::Window(_) | E::Selection { .. } | E::Truncation { .. } => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "elmg",
    version,
    about = "FOTOC, complexity and geometry runs for the extended LMG model"
)]
#[command(
    after_help = "Cache root: $ELMG_CACHE_DIR, else $XDG_CACHE_HOME/elmg, else ~/.cache/elmg.\n\
Exit codes: 0 ok, 2 usage, 3 numeric failure, 4 resource guard."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Subcommand)]
pub enum Command {
    /// FOTOC time series F_G(t) from a coherent state.
    Fotoc(Flags),
    /// Rescaled FOTOC against the Loschmidt echo, with the t-power fit.
    EchoCompare(Flags),
    /// Exponential growth rate of 1 - Re F against twice the classical exponent.
    Lyapunov(Flags),
    /// dC/dξ_y of the Nielsen complexity across ξ_y (ε²-normalized).
    Complexity(Flags),
    /// Quantum information metric components and the Gaussian orbit over t.
    Metric(Flags),
    /// Ricci scalar map over an (Ω_x, ξ_y) grid.
    Curvature(Flags),
    /// Metric geodesics from given or reference initial conditions.
    Geodesic(Flags),
    /// Scalar observable over an (Ω_x, ξ_y) grid.
    Sweep(Flags),
}

impl Command {
    pub fn split(&self) -> (Subcommand, &Flags) {
        match self {
            Command::Fotoc(f) => (Subcommand::Fotoc, f),
            Command::EchoCompare(f) => (Subcommand::EchoCompare, f),
            Command::Lyapunov(f) => (Subcommand::Lyapunov, f),
            Command::Complexity(f) => (Subcommand::Complexity, f),
            Command::Metric(f) => (Subcommand::Metric, f),
            Command::Curvature(f) => (Subcommand::Curvature, f),
            Command::Geodesic(f) => (Subcommand::Geodesic, f),
            Command::Sweep(f) => (Subcommand::Sweep, f),
        }
    }
}

/// Resolves the configuration, runs the subcommand on a pool of the
/// requested size and writes the manifest.
pub fn execute(cli: &Cli) -> Result<Manifest, CliError> {
    let (cmd, flags) = cli.command.split();
    let cfg = RunConfig::resolve(cmd, flags)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Resource(format!("thread pool: {e}")))?;
    pool.install(|| run_config(&cfg))
}

pub fn run_config(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let start = Instant::now();
    let cache = if cfg.cache {
        EigenCache::new(Some(default_root()))
    } else {
        EigenCache::disabled()
    };
    let mut out = OutputDir::create(&cfg.out)?;
    log::info!("{} -> {}", cfg.subcommand.name(), cfg.out.display());
    let results = {
        let mut ctx = commands::Context {
            cfg,
            out: &mut out,
            cache: &cache,
        };
        commands::run(&mut ctx)?
    };
    let numeric = cfg.numeric_settings();
    let mut inputs = BTreeMap::new();
    let canonical: String = numeric.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    inputs.insert(
        "config_sha256".to_string(),
        sha256_hex(canonical.as_bytes()),
    );
    if let Some(path) = &cfg.config_file {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Resource(format!("cannot re-read {}: {e}", path.display())))?;
        inputs.insert("config_file".to_string(), path.display().to_string());
        inputs.insert("config_file_sha256".to_string(), sha256_hex(&bytes));
    }
    let manifest = Manifest {
        program: "elmg",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cfg.subcommand.name().to_string(),
        config: cfg.settings.clone(),
        inputs,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs: out.files().to_vec(),
        results,
        cache: cache.stats(),
    };
    manifest.write(out.root())?;
    log::info!(
        "cache: {} hit(s), {} miss(es); {:.2} s total",
        manifest.cache.hits,
        manifest.cache.misses,
        manifest.wall_time_seconds
    );
    Ok(manifest)
}

/// Entry point shared by the binary: parses `args`, runs, returns the exit code.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(m) => {
            eprintln!("wrote {} file(s) and manifest.json", m.outputs.len());
            0
        }
        Err(e) => {
            eprintln!("elmg: {e}");
            e.exit_code()
        }
    }
}
