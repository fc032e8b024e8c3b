//! Flat key=value run configuration with command-line overrides.
//!
//! Precedence: built-in defaults, then the `--config` file, then flags in
//! the order given. Every key is validated against the schema below —
//! an unknown key anywhere is a hard error, so typos die loudly instead
//! of silently training with defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use bpdc_core::io::idx::Scaling;
use bpdc_core::net::Activation;

/// Everything the subcommands can be told. Paths are empty when unset.
#[derive(Debug, Clone)]
pub struct RunConfig {
    // model
    pub alpha: f64,
    pub gamma: f64,
    pub sigma2: f64,
    pub c: f64,
    pub k: usize,
    pub m: usize,
    pub d: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub l_max: usize,
    pub prune_threshold: f64,
    pub nonneg_dict: bool,
    // training
    pub batch_size: usize,
    pub n_iters: u64,
    pub tau0: f64,
    pub kappa: f64,
    pub adam_stepsize: f64,
    pub seed: u64,
    pub log_every: u64,
    pub threads: usize,
    pub checkpoint_every: u64,
    // io
    pub data: PathBuf,
    pub labels: PathBuf,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
    pub scaling: Scaling,
    pub export_figures: bool,
    pub resume: bool,
    pub n_samples: usize,
    pub c_sample: f64,
}

impl Default for RunConfig {
    /// Defaults follow the reference experiment: α = γ = 1, σ² = 100,
    /// c = 1e15, K = 75, batch 200 for 10000 iterations, τ₀ = 100,
    /// κ = 0.6, step size 0.001.
    fn default() -> Self {
        RunConfig {
            alpha: 1.0,
            gamma: 1.0,
            sigma2: 100.0,
            c: 1e15,
            k: 75,
            m: 64,
            d: 0,
            hidden: vec![64],
            activation: Activation::Tanh,
            l_max: 0,
            prune_threshold: 1e-3,
            nonneg_dict: false,
            batch_size: 200,
            n_iters: 10_000,
            tau0: 100.0,
            kappa: 0.6,
            adam_stepsize: 0.001,
            seed: 0,
            log_every: 10,
            threads: 1,
            checkpoint_every: 0,
            data: PathBuf::new(),
            labels: PathBuf::new(),
            checkpoint: PathBuf::new(),
            out_dir: PathBuf::from("out"),
            scaling: Scaling::UnitInterval,
            export_figures: true,
            resume: false,
            n_samples: 1000,
            c_sample: 1.0,
        }
    }
}

/// Every key the schema knows, in display order for `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("alpha", "beta-process mass parameter α"),
    ("gamma", "beta-process concentration γ (must be < k)"),
    ("sigma2", "observation noise variance σ²"),
    ("c", "prior variance of the per-datum scale λ"),
    ("k", "number of binary factors K"),
    ("m", "dictionary atom count M"),
    ("d", "data dimension (0 = take from the data file)"),
    ("hidden", "comma-separated hidden layer widths (empty = none)"),
    ("activation", "hidden activation: tanh | relu | sigmoid"),
    ("l_max", "max active bits per code (0 = no cap, i.e. K)"),
    ("prune_threshold", "prune factors when E[pi] falls below this"),
    ("nonneg_dict", "project dictionary entries to be non-negative"),
    ("batch_size", "minibatch size |S|"),
    ("n_iters", "training iterations"),
    ("tau0", "learning-rate schedule offset"),
    ("kappa", "learning-rate schedule exponent, in (0.5, 1]"),
    ("adam_stepsize", "ADAM step size"),
    ("seed", "master seed; every run output is a function of it"),
    ("log_every", "metrics row every this many iterations"),
    ("threads", "worker threads (BPDC_THREADS caps this)"),
    ("checkpoint_every", "periodic checkpoint interval (0 = final only)"),
    ("data", "dataset path (.idx/-ubyte image container, else CSV)"),
    ("labels", "label path (IDX or one integer per line)"),
    ("checkpoint", "checkpoint path (default <out_dir>/model.ckpt)"),
    ("out_dir", "output directory"),
    ("scaling", "pixel scaling: raw | unit_interval | zero_mean"),
    ("export_figures", "write figure exports after training"),
    ("resume", "load the checkpoint and continue training"),
    ("n_samples", "dataset size for the sample command"),
    ("c_sample", "scale variance used when drawing synthetic data"),
];

#[derive(Debug)]
pub enum ConfigError {
    Usage(String),
    Value(String),
    Io(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Usage(m) | ConfigError::Value(m) | ConfigError::Io(m) => {
                f.write_str(m)
            }
        }
    }
}

impl std::error::Error for ConfigError {}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, where_: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| {
        ConfigError::Value(format!("{where_}: '{value}' is not a valid value for {key}"))
    })
}

fn parse_bool(key: &str, value: &str, where_: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Value(format!(
            "{where_}: '{value}' is not a boolean for {key} (use true/false)"
        ))),
    }
}

fn parse_hidden(value: &str, where_: &str) -> Result<Vec<usize>, ConfigError> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|tok| {
            let w: usize = tok.trim().parse().map_err(|_| {
                ConfigError::Value(format!("{where_}: hidden width '{tok}' is not an integer"))
            })?;
            if w == 0 {
                return Err(ConfigError::Value(format!(
                    "{where_}: hidden widths must be positive"
                )));
            }
            Ok(w)
        })
        .collect()
}

impl RunConfig {
    /// Apply one key=value assignment. `where_` names the source (file
    /// line or flag) for error messages.
    pub fn set(&mut self, key: &str, value: &str, where_: &str) -> Result<(), ConfigError> {
        match key {
            "alpha" => self.alpha = parse_num(key, value, where_)?,
            "gamma" => self.gamma = parse_num(key, value, where_)?,
            "sigma2" => self.sigma2 = parse_num(key, value, where_)?,
            "c" => self.c = parse_num(key, value, where_)?,
            "k" => self.k = parse_num(key, value, where_)?,
            "m" => self.m = parse_num(key, value, where_)?,
            "d" => self.d = parse_num(key, value, where_)?,
            "hidden" => self.hidden = parse_hidden(value, where_)?,
            "activation" => {
                self.activation = Activation::from_name(value)
                    .map_err(|e| ConfigError::Value(format!("{where_}: {e}")))?
            }
            "l_max" => self.l_max = parse_num(key, value, where_)?,
            "prune_threshold" => self.prune_threshold = parse_num(key, value, where_)?,
            "nonneg_dict" => self.nonneg_dict = parse_bool(key, value, where_)?,
            "batch_size" => self.batch_size = parse_num(key, value, where_)?,
            "n_iters" => self.n_iters = parse_num(key, value, where_)?,
            "tau0" => self.tau0 = parse_num(key, value, where_)?,
            "kappa" => self.kappa = parse_num(key, value, where_)?,
            "adam_stepsize" => self.adam_stepsize = parse_num(key, value, where_)?,
            "seed" => self.seed = parse_num(key, value, where_)?,
            "log_every" => self.log_every = parse_num(key, value, where_)?,
            "threads" => self.threads = parse_num(key, value, where_)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value, where_)?,
            "data" => self.data = PathBuf::from(value),
            "labels" => self.labels = PathBuf::from(value),
            "checkpoint" => self.checkpoint = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "scaling" => {
                self.scaling = Scaling::from_name(value)
                    .map_err(|e| ConfigError::Value(format!("{where_}: {e}")))?
            }
            "export_figures" => self.export_figures = parse_bool(key, value, where_)?,
            "resume" => self.resume = parse_bool(key, value, where_)?,
            "n_samples" => self.n_samples = parse_num(key, value, where_)?,
            "c_sample" => self.c_sample = parse_num(key, value, where_)?,
            _ => {
                return Err(ConfigError::Usage(format!(
                    "{where_}: unknown configuration key '{key}'"
                )))
            }
        }
        Ok(())
    }

    /// Load assignments from a flat key=value file. Blank lines and lines
    /// starting with '#' are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::Io(format!("cannot read config {}: {e}", path.display()))
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let where_ = format!("{}:{}", path.display(), lineno + 1);
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::Usage(format!("{where_}: expected key=value, got '{line}'"))
            })?;
            self.set(key.trim(), value.trim(), &where_)?;
        }
        Ok(())
    }

    /// Effective worker thread count: the configured value, capped by the
    /// BPDC_THREADS environment variable when that parses to a positive
    /// integer.
    pub fn effective_threads(&self) -> usize {
        let cap = std::env::var("BPDC_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&v| v > 0);
        match cap {
            Some(c) => self.threads.min(c).max(1),
            None => self.threads.max(1),
        }
    }

    /// The checkpoint path, defaulting into the output directory.
    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.as_os_str().is_empty() {
            self.out_dir.join("model.ckpt")
        } else {
            self.checkpoint.clone()
        }
    }
}

/// Split raw CLI arguments into (subcommand, config). Flags are
/// `--key value`; `--config FILE` loads the file before any other flag
/// is applied, wherever it appears; `--out` and `--iters` are shorthand
/// for `out_dir` and `n_iters`.
pub fn parse_args(args: &[String]) -> Result<(String, RunConfig), ConfigError> {
    let sub = args
        .first()
        .ok_or_else(|| ConfigError::Usage("missing subcommand".into()))?
        .clone();

    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut i = 1;
    while i < args.len() {
        let flag = &args[i];
        let key = flag.strip_prefix("--").ok_or_else(|| {
            ConfigError::Usage(format!("expected a --flag, got '{flag}'"))
        })?;
        let value = args.get(i + 1).ok_or_else(|| {
            ConfigError::Usage(format!("flag --{key} is missing its value"))
        })?;
        pairs.push((key.to_string(), value.clone()));
        i += 2;
    }

    let mut cfg = RunConfig::default();
    for (key, value) in &pairs {
        if key == "config" {
            cfg.apply_file(Path::new(value))?;
        }
    }
    for (key, value) in &pairs {
        let canonical = match key.as_str() {
            "config" => continue,
            "out" => "out_dir",
            "iters" => "n_iters",
            k => k,
        };
        cfg.set(canonical, value, &format!("flag --{key}"))?;
    }
    Ok((sub, cfg))
}
