//! Scenario pipelines: conditioned trials compared against the matching
//! limit law, or the walk-only renewal and ladder checks.

use std::io::Write;
use std::path::PathBuf;

use reduced_bpre::bpre::{self, Regime, ScenarioSpec, TrialBatch};
use reduced_bpre::envs::IncrementLaw;
use reduced_bpre::limits::{self, CstarH, LawId, LimitLawTable};
use reduced_bpre::stable::{meander_density, MeanderConfig, PathEnsemble, StableSpec};
use reduced_bpre::stats::{dkw_half_width, ks_distance, Ecdf, Estimate, FnCdf, DKW_DELTA};
use reduced_bpre::walk::{self, LadderKind, RenewalConfig, RenewalTable};
use reduced_bpre::Error;

use crate::config::{ConfigError, RunConfig};
use crate::report::{self, ReportError, Row};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] Error),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Sizes of the auxiliary limit-law computations.
#[derive(Debug, Clone, Copy)]
pub struct LimitInputs {
    pub paths: usize,
    pub grid: usize,
    pub seed: u64,
}

/// The limit law of one regime, ready for KS comparisons.
#[derive(Debug, Clone)]
pub struct Reference {
    pub table: LimitLawTable,
    kind: RefKind,
}

#[derive(Debug, Clone)]
enum RefKind {
    /// `P(min Y ≤ z ∧ 0)` in closed form
    GaussianMin(StableSpec),
    /// tabulated, 1 for positive arguments
    MinTable,
    /// tabulated, 0 below zero
    Table,
    CstarH(Box<CstarH>),
    Tail { t: f64, alpha_rho: f64 },
}

impl Reference {
    pub fn cdf(&self, x: f64) -> f64 {
        match &self.kind {
            RefKind::GaussianMin(s) => limits::q_min_cdf(s, None, x).unwrap_or(1.0),
            RefKind::MinTable => {
                if x >= 0.0 {
                    1.0
                } else {
                    self.table.eval(x)
                }
            }
            RefKind::Table => {
                if x < 0.0 {
                    0.0
                } else {
                    self.table.eval(x)
                }
            }
            RefKind::CstarH(c) => c.cstar_h(x),
            RefKind::Tail { t, alpha_rho } => {
                if x < 0.0 {
                    0.0
                } else {
                    limits::tail_closed_form(*t, x, *alpha_rho).unwrap_or(1.0)
                }
            }
        }
    }
}

fn meander_table(spec: &StableSpec, inputs: &LimitInputs) -> Result<reduced_bpre::stable::MeanderTable, Error> {
    let z_grid: Vec<f64> = (1..=1000).map(|i| i as f64 * 0.02).collect();
    let cfg = MeanderConfig {
        walk_len: inputs.grid,
        n_paths: inputs.paths,
        ..MeanderConfig::default()
    };
    meander_density(spec, &z_grid, &cfg, inputs.seed)
}

/// Limit law for `regime` at `(θ, t)`.
pub fn reference_for(regime: Regime, spec: &StableSpec, theta: f64, t: f64, inputs: &LimitInputs) -> Result<Reference, Error> {
    let ensemble = || PathEnsemble::simulate(spec, inputs.grid, inputs.paths, inputs.seed);
    Ok(match regime {
        Regime::Thm1SmallTail => {
            let ens = if spec.is_gaussian() { None } else { Some(ensemble()?) };
            let grid: Vec<f64> = (0..=250).map(|i| -5.0 + 0.02 * i as f64).collect();
            let est: Vec<Estimate> = grid.iter().map(|&z| limits::q_min(spec, ens.as_ref(), z)).collect::<Result<_, _>>()?;
            let table = LimitLawTable::new(
                LawId::QMin,
                f64::NAN,
                grid,
                est.iter().map(|e| e.value).collect(),
                est.iter().map(|e| e.half_width()).collect(),
                if ens.is_some() { "ensemble frequency" } else { "reflection principle" },
            )?;
            let kind = if spec.is_gaussian() {
                RefKind::GaussianMin(*spec)
            } else {
                RefKind::MinTable
            };
            Reference { table, kind }
        }
        Regime::Thm2ThetaM => Reference {
            table: limits::a_reference_table(spec, &ensemble()?, theta, t, 201)?.monotone_cdf(),
            kind: RefKind::Table,
        },
        Regime::Thm3KGgR => {
            let ch = CstarH::new(spec, &meander_table(spec, inputs)?)?;
            let grid: Vec<f64> = (0..=200).map(|i| 0.05 * i as f64).collect();
            Reference {
                table: ch.table(grid, 1.0 / (inputs.paths as f64).sqrt())?,
                kind: RefKind::CstarH(Box::new(ch)),
            }
        }
        Regime::Thm3ThetaR => {
            let ch = CstarH::new(spec, &meander_table(spec, inputs)?)?;
            Reference {
                table: limits::w_reference_table(spec, &ch, theta, t, 101)?.monotone_cdf(),
                kind: RefKind::Table,
            }
        }
        Regime::Thm3MinGgK | Regime::WalkOnly => {
            let ar = spec.alpha_rho();
            let grid: Vec<f64> = (0..=100).map(|i| t * i as f64 / 100.0).collect();
            let values = grid.iter().map(|&y| limits::tail_closed_form(t, y, ar)).collect::<Result<_, _>>()?;
            Reference {
                table: LimitLawTable::new(LawId::TailClosed, t, grid, values, vec![0.0; 101], "closed form")?,
                kind: RefKind::Tail { t, alpha_rho: ar },
            }
        }
    })
}

/// Observable values of a batch and their KS distance to the reference.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub values: Vec<f64>,
    pub ks: f64,
    /// DKW half-width at the default confidence.
    pub band: f64,
}

pub fn compare(spec: &ScenarioSpec, batch: &TrialBatch, reference: &Reference) -> Result<Comparison, Error> {
    let obs = spec.regime.observable();
    let values: Vec<f64> = batch.samples.iter().map(|s| obs.eval(s, &batch.schedule, |j| spec.norming(j))).collect();
    let ecdf = Ecdf::new(values.clone())?;
    let ks = ks_distance(&ecdf, &FnCdf(|x: f64| reference.cdf(x)))?;
    Ok(Comparison {
        band: dkw_half_width(values.len(), DKW_DELTA),
        values,
        ks,
    })
}

pub fn ks_threshold(regime: Regime) -> f64 {
    match regime {
        Regime::Thm2ThetaM => 0.2,
        _ => 0.15,
    }
}

fn theorem_id(regime: Regime) -> &'static str {
    match regime {
        Regime::Thm1SmallTail => "thm1",
        Regime::Thm2ThetaM => "thm2",
        Regime::Thm3KGgR => "thm3.1",
        Regime::Thm3ThetaR => "thm3.2",
        Regime::Thm3MinGgK => "thm3.3",
        Regime::WalkOnly => "walk",
    }
}

/// Everything a run produced, before it is written out.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub rows: Vec<Row>,
    pub batch: Option<TrialBatch>,
    pub table: Option<LimitLawTable>,
    pub renewal: Option<RenewalTable>,
}

/// Run the configured scenario inside a pool of `cfg.threads` workers.
pub fn run_scenario(cfg: &RunConfig) -> Result<RunResult, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    pool.install(|| match cfg.scenario {
        Regime::WalkOnly => run_walk_only(cfg),
        _ => run_regime(cfg),
    })
}

fn run_regime(cfg: &RunConfig) -> Result<RunResult, RunError> {
    let spec = cfg.scenario_spec()?;
    let stable = cfg.stable()?;
    let batch = bpre::run_trials(&spec)?;
    let sched = batch.schedule;
    let accepted = batch.counts.accepted;
    let base = Row {
        scenario: cfg.scenario.name().to_string(),
        theorem: theorem_id(cfg.scenario).to_string(),
        n: cfg.n,
        k: sched.k,
        r: sched.r,
        t: cfg.t,
        accepted,
        statistic: String::new(),
        value: 0.0,
        ci_low: 0.0,
        ci_high: 0.0,
        reference: String::new(),
        pass: None,
    };
    let row = |statistic: &str, e: Estimate, reference: &str, pass: Option<bool>| Row {
        statistic: statistic.to_string(),
        value: e.value,
        ci_low: e.ci_low,
        ci_high: e.ci_high,
        reference: reference.to_string(),
        pass,
        ..base.clone()
    };
    let mut rows = vec![
        row(
            "accepted",
            Estimate::exact(accepted as f64),
            &format!(">= {}", cfg.target_accepted),
            Some(batch.complete),
        ),
        row("acceptance_probability", batch.counts.acceptance(), "P(R)", None),
    ];
    if let Some(ok) = sched.cond_log {
        rows.push(row("cond_log", Estimate::exact(f64::from(u8::from(ok))), "log(n-r) <= a_{k^r}/10", None));
    }
    let inputs = LimitInputs {
        paths: cfg.paths,
        grid: cfg.grid,
        seed: reduced_bpre::rng::child_seed(cfg.seed, 101),
    };
    let reference = reference_for(cfg.scenario, &stable, cfg.theta, cfg.t, &inputs)?;
    let top = *reference.table.values.last().unwrap_or(&f64::NAN);
    rows.push(row("limit_law_at_top", Estimate::exact(top), "1", None));
    if batch.samples.is_empty() {
        return Ok(RunResult {
            rows,
            batch: Some(batch),
            table: Some(reference.table),
            renewal: None,
        });
    }
    let cmp = compare(&spec, &batch, &reference)?;
    let thr = ks_threshold(cfg.scenario);
    rows.push(row(
        "ks",
        Estimate {
            value: cmp.ks,
            ci_low: (cmp.ks - cmp.band).max(0.0),
            ci_high: cmp.ks + cmp.band,
        },
        &format!("<= {thr}"),
        Some(cmp.ks <= thr && batch.complete),
    ));
    if let Ok(d) = bpre::diagnostics_check(&batch.samples, &sched, stable.alpha()) {
        rows.push(row("delta_over_am_q95", d.delta_q95, "decreasing in n", None));
        rows.push(row("binomial_deviation_q95", d.binomial_dev_q95, "bounded in n", None));
        rows.push(row("log_o_over_am_q95", d.log_o_q95, "decreasing in n", None));
        rows.push(row("delta_recompute_error", Estimate::exact(d.delta_recompute_error), "0", Some(d.delta_recompute_error == 0.0)));
    }
    Ok(RunResult {
        rows,
        batch: Some(batch),
        table: Some(reference.table),
        renewal: None,
    })
}

/// Renewal grid used by the walk-only pipeline.
pub fn walk_grid(top: f64) -> Vec<f64> {
    (0..=(top * 4.0) as usize).map(|i| i as f64 * 0.25).collect()
}

fn run_walk_only(cfg: &RunConfig) -> Result<RunResult, RunError> {
    let stable = cfg.stable()?;
    let law = IncrementLaw::Stable(stable);
    let n = cfg.n;
    let k = cfg.k.unwrap_or(((n as f64).powf(0.65)).ceil() as usize);
    let x = cfg.t * stable.norming(k as u64);
    let top = (4.0 * x).max(100.0);
    let table = RenewalTable::simulate(&law, &walk_grid(top), &RenewalConfig::default(), reduced_bpre::rng::child_seed(cfg.seed, 1))?;
    let base = Row {
        scenario: cfg.scenario.name().to_string(),
        theorem: "walk".to_string(),
        n,
        k,
        r: 0,
        t: cfg.t,
        accepted: 0,
        statistic: String::new(),
        value: 0.0,
        ci_low: 0.0,
        ci_high: 0.0,
        reference: String::new(),
        pass: None,
    };
    let row = |statistic: &str, e: Estimate, reference: String, pass: Option<bool>| Row {
        statistic: statistic.to_string(),
        value: e.value,
        ci_low: e.ci_low,
        ci_high: e.ci_high,
        reference,
        pass,
        ..base.clone()
    };
    let fit_est = |f: reduced_bpre::stats::TailFit| Estimate {
        value: f.exponent,
        ci_low: f.exponent - 2.0 * f.stderr,
        ci_high: f.exponent + 2.0 * f.stderr,
    };
    let mut rows = Vec::new();

    let ladders = walk::sample_first_ladders(&law, LadderKind::StrictAscending, 1_000_000, 100_000, reduced_bpre::rng::child_seed(cfg.seed, 2));
    let tau = walk::ladder_epoch_tail_fit(&ladders, 100, 10_000)?;
    let rho = stable.rho();
    rows.push(row(
        "tau_plus_tail_index",
        fit_est(tau),
        format!("rho = {rho:.4} +- 0.1"),
        Some((tau.exponent - rho).abs() <= 0.1),
    ));

    let lo = top / 10.0;
    let xs: Vec<f64> = table.grid.iter().copied().filter(|&g| g >= lo).collect();
    let vs: Vec<f64> = xs.iter().map(|&g| table.v_plus_at(g)).collect::<Result<_, _>>()?;
    let vfit = reduced_bpre::stats::tail_index_fit(&xs, &vs)?;
    let ar = stable.alpha_rho();
    rows.push(row(
        "v_plus_exponent",
        fit_est(vfit),
        format!("alpha*rho = {ar:.4} +- 0.1"),
        Some((vfit.exponent - ar).abs() <= 0.1),
    ));
    let asym = walk::asympv_ratio(&table, ar, 0.9 * table.max_x())?;
    rows.push(row("asympv_ratio", Estimate::exact(asym), "[0.95, 1.05]".into(), Some((0.95..=1.05).contains(&asym))));

    let walks = cfg.trials.min(20_000_000);
    let b = walk::event_b_probability(&stable, &table, x, n, walks, reduced_bpre::rng::child_seed(cfg.seed, 3))?;
    let ratio = b.estimate.map(|v| v / b.prediction);
    rows.push(row("event_b_ratio", ratio, "[0.85, 1.15]".into(), Some((0.85..=1.15).contains(&ratio.value))));
    rows.push(row("zeta", Estimate::exact(table.zeta), "ladder tie probability".into(), None));

    Ok(RunResult {
        rows,
        batch: None,
        table: None,
        renewal: Some(table),
    })
}

/// Write samples, limit table, renewal table and the report into
/// `cfg.out_dir`. Returns the written paths.
pub fn write_outputs(cfg: &RunConfig, res: &RunResult) -> Result<Vec<PathBuf>, RunError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| ReportError::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;
    let mut paths = Vec::new();
    if let Some(batch) = &res.batch {
        let p = cfg.out_dir.join("samples.csv");
        let mut buf = Vec::new();
        bpre::write_samples_csv(&mut buf, &batch.samples)?;
        report::write_file(&p, |w| w.write_all(&buf))?;
        paths.push(p);
    }
    if let Some(table) = &res.table {
        let p = cfg.out_dir.join("limit_table.csv");
        let mut buf = Vec::new();
        table.write_csv(&mut buf, true)?;
        report::write_file(&p, |w| w.write_all(&buf))?;
        paths.push(p);
    }
    if let Some(table) = &res.renewal {
        let p = cfg.out_dir.join("renewal.csv");
        let mut buf = Vec::new();
        table.write_csv(&mut buf)?;
        report::write_file(&p, |w| w.write_all(&buf))?;
        paths.push(p);
    }
    paths.push(report::emit_report(&res.rows, cfg, cfg.format)?);
    Ok(paths)
}
