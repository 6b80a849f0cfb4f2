//! Run configuration: a flat `key = value` file merged with command-line
//! flags, flags winning.

use std::fmt::Write as _;
use std::path::PathBuf;

use reduced_bpre::bpre::{Regime, ScenarioSpec};
use reduced_bpre::envs::{EnvironmentModel, Family};
use reduced_bpre::StableSpec;
use serde::Serialize;

pub const THREADS_ENV: &str = "REDUCED_BPRE_THREADS";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    TypeMismatch {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("`seed` is required")]
    MissingSeed,
    #[error("`n` is required")]
    MissingHorizon,
    #[error("invalid schedule: {0}")]
    Regime(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub scenario: Regime,
    pub n: usize,
    pub k: Option<usize>,
    pub r: Option<usize>,
    pub theta: f64,
    pub t: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Scale of the stable law; the preset for `(alpha, beta)` when absent.
    pub c: Option<f64>,
    pub env: Family,
    /// Trial budget of the conditioned sampler.
    pub trials: u64,
    pub target_accepted: u64,
    pub seed: u64,
    pub threads: usize,
    /// Paths in the limit-law ensembles.
    pub paths: usize,
    /// Time steps per ensemble path (ignored when the minimum is exact).
    pub grid: usize,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
}

/// Configuration under construction; `seed` and `n` have no defaults.
#[derive(Debug, Clone)]
struct Draft {
    scenario: Regime,
    n: Option<usize>,
    k: Option<usize>,
    r: Option<usize>,
    m: Option<usize>,
    theta: f64,
    t: f64,
    alpha: f64,
    beta: f64,
    c: Option<f64>,
    env: Family,
    trials: u64,
    target_accepted: u64,
    seed: Option<u64>,
    threads: usize,
    paths: usize,
    grid: usize,
    out_dir: PathBuf,
    format: OutputFormat,
}

impl Default for Draft {
    fn default() -> Self {
        Self {
            scenario: Regime::Thm1SmallTail,
            n: None,
            k: None,
            r: None,
            m: None,
            theta: 1.0,
            t: 1.0,
            alpha: 2.0,
            beta: 0.0,
            c: None,
            env: Family::LinearFractional,
            trials: 2_000_000_000,
            target_accepted: 5000,
            seed: None,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            paths: 100_000,
            grid: 1000,
            out_dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
        }
    }
}

pub const KEYS: [&str; 19] = [
    "scenario",
    "n",
    "k",
    "r",
    "m",
    "theta",
    "t",
    "alpha",
    "beta",
    "c",
    "env",
    "trials",
    "target_accepted",
    "seed",
    "threads",
    "paths",
    "grid",
    "out_dir",
    "format",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::TypeMismatch {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

impl Draft {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let int = "an unsigned integer";
        let real = "a real number";
        match key.as_str() {
            "scenario" => {
                self.scenario = Regime::parse(value).ok_or_else(|| ConfigError::TypeMismatch {
                    key,
                    value: value.to_string(),
                    expected: "a scenario name",
                })?
            }
            "n" => self.n = Some(parse_num(&key, value, int)?),
            "k" => self.k = Some(parse_num(&key, value, int)?),
            "r" => self.r = Some(parse_num(&key, value, int)?),
            "m" => self.m = Some(parse_num(&key, value, int)?),
            "theta" => self.theta = parse_num(&key, value, real)?,
            "t" => self.t = parse_num(&key, value, real)?,
            "alpha" => self.alpha = parse_num(&key, value, real)?,
            "beta" => self.beta = parse_num(&key, value, real)?,
            "c" => self.c = Some(parse_num(&key, value, real)?),
            "env" => {
                self.env = Family::parse(value).ok_or_else(|| ConfigError::TypeMismatch {
                    key,
                    value: value.to_string(),
                    expected: "an environment family",
                })?
            }
            "trials" => self.trials = parse_num(&key, value, int)?,
            "target_accepted" => self.target_accepted = parse_num(&key, value, int)?,
            "seed" => self.seed = Some(parse_num(&key, value, int)?),
            "threads" => self.threads = parse_num(&key, value, int)?,
            "paths" => self.paths = parse_num(&key, value, int)?,
            "grid" => self.grid = parse_num(&key, value, int)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "format" => {
                self.format = match value {
                    "csv" => OutputFormat::Csv,
                    "json" => OutputFormat::Json,
                    _ => {
                        return Err(ConfigError::TypeMismatch {
                            key,
                            value: value.to_string(),
                            expected: "csv or json",
                        })
                    }
                }
            }
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }

    fn finish(self) -> Result<RunConfig, ConfigError> {
        let seed = self.seed.ok_or(ConfigError::MissingSeed)?;
        let n = self.n.ok_or(ConfigError::MissingHorizon)?;
        let r = match (self.r, self.m) {
            (Some(r), Some(m)) if r + m != n => {
                return Err(ConfigError::Invalid(format!("r = {r} and m = {m} disagree with n = {n}")))
            }
            (Some(r), _) => Some(r),
            (None, Some(m)) if m >= n => return Err(ConfigError::Regime(format!("m = {m} must be below n = {n}"))),
            (None, Some(m)) => Some(n - m),
            (None, None) => None,
        };
        if self.threads == 0 {
            return Err(ConfigError::Invalid("threads must be at least 1".into()));
        }
        if self.paths == 0 || self.grid == 0 {
            return Err(ConfigError::Invalid("paths and grid must be positive".into()));
        }
        let cfg = RunConfig {
            scenario: self.scenario,
            n,
            k: self.k,
            r,
            theta: self.theta,
            t: self.t,
            alpha: self.alpha,
            beta: self.beta,
            c: self.c,
            env: self.env,
            trials: self.trials,
            target_accepted: self.target_accepted,
            seed,
            threads: self.threads,
            paths: self.paths,
            grid: self.grid,
            out_dir: self.out_dir,
            format: self.format,
        };
        cfg.scenario_spec()?;
        Ok(cfg)
    }
}

/// Parse a config file body. Blank lines and `#` comments are skipped.
fn apply_text(draft: &mut Draft, text: &str) -> Result<(), ConfigError> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        draft.set(key, value)?;
    }
    Ok(())
}

/// `parse_config`: defaults, then the file text, then `overrides` in order,
/// then the thread-count environment variable.
pub fn parse_config(text: Option<&str>, overrides: &[(String, String)], env_threads: Option<&str>) -> Result<RunConfig, ConfigError> {
    let mut draft = Draft::default();
    if let Some(text) = text {
        apply_text(&mut draft, text)?;
    }
    for (k, v) in overrides {
        draft.set(k, v)?;
    }
    if let Some(v) = env_threads {
        draft.set("threads", v)?;
    }
    draft.finish()
}

impl RunConfig {
    pub fn stable(&self) -> Result<StableSpec, ConfigError> {
        match self.c {
            Some(c) => StableSpec::new(self.alpha, self.beta, c),
            None => StableSpec::preset(self.alpha, self.beta),
        }
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn model(&self) -> Result<EnvironmentModel, ConfigError> {
        Ok(EnvironmentModel::new(self.env, self.stable()?))
    }

    pub fn scenario_spec(&self) -> Result<ScenarioSpec, ConfigError> {
        let mut spec = ScenarioSpec::new(self.model()?, self.scenario, self.n, self.seed);
        spec.theta = self.theta;
        spec.t = self.t;
        spec.k = self.k;
        spec.r = self.r;
        spec.target_accepted = self.target_accepted;
        spec.max_trials = self.trials;
        spec.validate().map_err(|e| ConfigError::Regime(e.to_string()))?;
        Ok(spec)
    }

    /// Canonical `key = value` text; parsing it gives back the same config.
    pub fn to_canonical(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("scenario", self.scenario.name().to_string());
        put("n", self.n.to_string());
        if let Some(k) = self.k {
            put("k", k.to_string());
        }
        if let Some(r) = self.r {
            put("r", r.to_string());
        }
        put("theta", self.theta.to_string());
        put("t", self.t.to_string());
        put("alpha", self.alpha.to_string());
        put("beta", self.beta.to_string());
        if let Some(c) = self.c {
            put("c", c.to_string());
        }
        put("env", self.env.name().to_string());
        put("trials", self.trials.to_string());
        put("target_accepted", self.target_accepted.to_string());
        put("seed", self.seed.to_string());
        put("threads", self.threads.to_string());
        put("paths", self.paths.to_string());
        put("grid", self.grid.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put(
            "format",
            match self.format {
                OutputFormat::Csv => "csv",
                OutputFormat::Json => "json",
            }
            .to_string(),
        );
        out
    }
}
