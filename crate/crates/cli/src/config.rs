//! Run configuration: defaults, `key = value` config files, and CLI flag
//! overrides (flags win).

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config file line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("config file line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("config file line {line}: bad value for {key}: {value:?}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Everything a subcommand needs: paths, game parameters, solver tolerances
/// and simulation settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub map: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    pub blocks: Option<usize>,
    pub beta: f64,
    pub capture_radius: usize,
    pub slip: f64,
    pub tol: f64,
    pub episodes: usize,
    pub seed: u64,
    pub step_cap: usize,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub trajectories: bool,
    pub terminal_recurring: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            map: None,
            partition: None,
            blocks: None,
            beta: 0.95,
            capture_radius: 1,
            slip: 0.0,
            tol: 1e-6,
            episodes: 2000,
            seed: 0,
            step_cap: 1000,
            out: PathBuf::from("."),
            threads: None,
            trajectories: false,
            terminal_recurring: false,
        }
    }
}

/// Flags shared by the subcommands; every config-file key has a flag of the
/// same name.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonArgs {
    /// Config file of `key = value` lines; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Map file ('#' walls, '.' free cells).
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Partition file (comma-separated labels, -1 on walls).
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Superstate = a KxK block of rooms of the map's detected room grid.
    #[arg(long, value_name = "K")]
    pub blocks: Option<usize>,
    /// Discount factor in (0, 1).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Capture radius in cells (Chebyshev).
    #[arg(long)]
    pub capture_radius: Option<usize>,
    /// Probability that a commanded move is replaced by stay.
    #[arg(long)]
    pub slip: Option<f64>,
    /// Sup-norm convergence tolerance for the value iterations.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Episodes per matchup.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Base seed; episode k uses seed + k.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Step cap per episode; uncaptured episodes are censored.
    #[arg(long)]
    pub step_cap: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker thread cap (default: machine cores; env PEG_HIER_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write per-episode trajectory files.
    #[arg(long)]
    pub trajectories: bool,
    /// Treat aggregated terminal rewards as recurring instead of fixed.
    #[arg(long)]
    pub terminal_recurring: bool,
}

impl RunConfig {
    /// Defaults, then the config file (if any), then flag overrides.
    pub fn resolve(args: &CommonArgs) -> Result<RunConfig, ConfigError> {
        let mut config = RunConfig::default();
        if let Some(path) = &args.config {
            config.apply_file(path)?;
        }
        config.apply_flags(args);
        config.validate()?;
        Ok(config)
    }

    fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            let bad = |k: &str, v: &str| ConfigError::BadValue {
                line,
                key: k.to_string(),
                value: v.to_string(),
            };
            match key {
                "map" => self.map = Some(PathBuf::from(value)),
                "partition" => self.partition = Some(PathBuf::from(value)),
                "blocks" => self.blocks = Some(value.parse().map_err(|_| bad(key, value))?),
                "beta" => self.beta = value.parse().map_err(|_| bad(key, value))?,
                "capture-radius" => {
                    self.capture_radius = value.parse().map_err(|_| bad(key, value))?
                }
                "slip" => self.slip = value.parse().map_err(|_| bad(key, value))?,
                "tol" => self.tol = value.parse().map_err(|_| bad(key, value))?,
                "episodes" => self.episodes = value.parse().map_err(|_| bad(key, value))?,
                "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
                "step-cap" => self.step_cap = value.parse().map_err(|_| bad(key, value))?,
                "out" => self.out = PathBuf::from(value),
                "threads" => self.threads = Some(value.parse().map_err(|_| bad(key, value))?),
                "trajectories" => {
                    self.trajectories = value.parse().map_err(|_| bad(key, value))?
                }
                "terminal-recurring" => {
                    self.terminal_recurring = value.parse().map_err(|_| bad(key, value))?
                }
                other => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: other.to_string(),
                    })
                }
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, args: &CommonArgs) {
        if let Some(v) = &args.map {
            self.map = Some(v.clone());
        }
        if let Some(v) = &args.partition {
            self.partition = Some(v.clone());
        }
        if let Some(v) = args.blocks {
            self.blocks = Some(v);
        }
        if let Some(v) = args.beta {
            self.beta = v;
        }
        if let Some(v) = args.capture_radius {
            self.capture_radius = v;
        }
        if let Some(v) = args.slip {
            self.slip = v;
        }
        if let Some(v) = args.tol {
            self.tol = v;
        }
        if let Some(v) = args.episodes {
            self.episodes = v;
        }
        if let Some(v) = args.seed {
            self.seed = v;
        }
        if let Some(v) = args.step_cap {
            self.step_cap = v;
        }
        if let Some(v) = &args.out {
            self.out = v.clone();
        }
        if let Some(v) = args.threads {
            self.threads = Some(v);
        }
        if args.trajectories {
            self.trajectories = true;
        }
        if args.terminal_recurring {
            self.terminal_recurring = true;
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if !(0.0..1.0).contains(&self.slip) {
            return Err(ConfigError::Invalid(format!(
                "slip must lie in [0, 1), got {}",
                self.slip
            )));
        }
        if !(self.tol > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.episodes == 0 {
            return Err(ConfigError::Invalid("episodes must be positive".into()));
        }
        if self.step_cap == 0 {
            return Err(ConfigError::Invalid("step-cap must be positive".into()));
        }
        Ok(())
    }

    /// Thread cap: flag/config, else the PEG_HIER_THREADS variable.
    pub fn effective_threads(&self) -> Option<usize> {
        self.threads.or_else(|| {
            std::env::var("PEG_HIER_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
    }
}
