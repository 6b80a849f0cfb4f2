use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use reduced_bpre_cli::config::THREADS_ENV;
use reduced_bpre_cli::{parse_config, report, run_scenario, write_outputs};

/// Simulate reduced branching processes in random environment conditioned
/// on survival with a low walk endpoint, and compare with the limit laws.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Flat `key = value` configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// thm1_small_tail, thm2_theta_m, thm3_k_gg_r, thm3_theta_r, thm3_min_gg_k or walk_only
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    c: Option<String>,
    /// linear_fractional or poisson
    #[arg(long)]
    env: Option<String>,
    /// Trial budget of the conditioned sampler
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    target_accepted: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    /// Paths in the limit-law ensembles
    #[arg(long)]
    paths: Option<String>,
    /// Time steps per ensemble path
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    /// csv or json
    #[arg(long)]
    format: Option<String>,
}

impl Cli {
    fn overrides(&self) -> Vec<(String, String)> {
        let pairs = [
            ("scenario", &self.scenario),
            ("n", &self.n),
            ("k", &self.k),
            ("r", &self.r),
            ("m", &self.m),
            ("theta", &self.theta),
            ("t", &self.t),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("c", &self.c),
            ("env", &self.env),
            ("trials", &self.trials),
            ("target_accepted", &self.target_accepted),
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("paths", &self.paths),
            ("grid", &self.grid),
            ("out_dir", &self.out_dir),
            ("format", &self.format),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => Some(t),
            Err(e) => {
                eprintln!("error: reading {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => None,
    };
    let env_threads = std::env::var(THREADS_ENV).ok();
    let cfg = match parse_config(text.as_deref(), &cli.overrides(), env_threads.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match run_scenario(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match write_outputs(&cfg, &result) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    for r in &result.rows {
        let verdict = match r.pass {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "info",
        };
        println!("{verdict:>4}  {:<26} {:>12.6}  [{:.6}, {:.6}]  {}", r.statistic, r.value, r.ci_low, r.ci_high, r.reference);
    }
    let code = report::exit_code(&result.rows);
    if code != 0 {
        eprintln!("failing rows:");
        for r in report::failing(&result.rows) {
            eprintln!("  {} = {} (expected {})", r.statistic, r.value, r.reference);
        }
    }
    ExitCode::from(code as u8)
}
