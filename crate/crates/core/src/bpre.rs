//! Branching processes in random environment: population chains, the
//! reduced process `Z_{r,n}`, conditioned trials on `{S_n ≤ t a_k, Z_n > 0}`,
//! the constant Θ and the decomposition diagnostics.

use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::envs::{self, EnvRealization, EnvironmentModel, Family, IncrementLaw};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream, SimRng};
use crate::stats::{proportion_estimate, ratio_estimate, Ecdf, Estimate, Z99};
use crate::walk::{self, window_min_stats, PositiveSampler, RenewalTable};

/// Populations up to this size are sampled exactly; larger ones use the
/// normal approximation of the Poisson or binomial step.
pub const EXACT_POPULATION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Thm1SmallTail,
    Thm2ThetaM,
    Thm3KGgR,
    Thm3ThetaR,
    Thm3MinGgK,
    WalkOnly,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Thm1SmallTail,
        Regime::Thm2ThetaM,
        Regime::Thm3KGgR,
        Regime::Thm3ThetaR,
        Regime::Thm3MinGgK,
        Regime::WalkOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Thm1SmallTail => "thm1_small_tail",
            Regime::Thm2ThetaM => "thm2_theta_m",
            Regime::Thm3KGgR => "thm3_k_gg_r",
            Regime::Thm3ThetaR => "thm3_theta_r",
            Regime::Thm3MinGgK => "thm3_min_gg_k",
            Regime::WalkOnly => "walk_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        Self::ALL.into_iter().find(|r| r.name() == s).or(match s {
            "thm1" => Some(Regime::Thm1SmallTail),
            "thm2" => Some(Regime::Thm2ThetaM),
            _ => None,
        })
    }

    fn is_thm3(self) -> bool {
        matches!(self, Regime::Thm3KGgR | Regime::Thm3ThetaR | Regime::Thm3MinGgK)
    }

    /// How the reduced count is normalised for this regime.
    pub fn observable(self) -> Observable {
        match self {
            Regime::Thm1SmallTail => Observable::CenteredOverAm,
            Regime::Thm2ThetaM => Observable::LogOverAm,
            Regime::Thm3KGgR => Observable::LogOverAr,
            Regime::Thm3ThetaR | Regime::Thm3MinGgK | Regime::WalkOnly => Observable::LogOverAk,
        }
    }
}

/// Scalar statistic of an accepted sample compared against a limit law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// `(log Z_{r,n} - S_r) / a_m`
    CenteredOverAm,
    /// `log Z_{r,n} / a_m`
    LogOverAm,
    /// `log Z_{r,n} / a_r`
    LogOverAr,
    /// `log Z_{r,n} / a_k`
    LogOverAk,
}

impl Observable {
    pub fn eval(self, s: &ReducedSample, sched: &Schedule, norming: impl Fn(usize) -> f64) -> f64 {
        let lz = s.z_rn.ln();
        match self {
            Observable::CenteredOverAm => (lz - s.s_r) / norming(sched.m),
            Observable::LogOverAm => lz / norming(sched.m),
            Observable::LogOverAr => lz / norming(sched.r),
            Observable::LogOverAk => lz / norming(sched.k),
        }
    }
}

/// The derived `(k, r, m = n - r)` for one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Schedule {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub m: usize,
    /// `log(n - r) ≤ a_{k∧r} / 10`, recorded for the thm3 regimes.
    pub cond_log: Option<bool>,
}

fn pow_ceil(n: usize, e: f64) -> usize {
    ((n as f64).powf(e) - 1e-9).ceil() as usize
}

/// Build the `(k, r)` schedule for `regime` at horizon `n`. Explicit `k`/`r`
/// override the power-law defaults and are checked against the regime's
/// ordering.
pub fn schedule(
    regime: Regime,
    n: usize,
    theta: f64,
    k_override: Option<usize>,
    r_override: Option<usize>,
    alpha: f64,
) -> Result<Schedule> {
    if n < 4 {
        return Err(Error::InvalidParameter(format!("horizon n={n} too small")));
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter(format!("θ = {theta} must be positive")));
    }
    let half = (n as f64).sqrt().ceil() as usize;
    let (k0, r0) = match regime {
        Regime::Thm1SmallTail => (pow_ceil(n, 0.65), n - pow_ceil(n, 0.35)),
        Regime::Thm2ThetaM => ((theta * half as f64).ceil() as usize, n - half),
        Regime::Thm3KGgR => (pow_ceil(n, 0.6), pow_ceil(n, 0.3)),
        Regime::Thm3ThetaR => ((theta * half as f64).ceil() as usize, half),
        Regime::Thm3MinGgK => (pow_ceil(n, 0.4), n / 2),
        Regime::WalkOnly => (pow_ceil(n, 0.65), n / 2),
    };
    let k = k_override.unwrap_or(k0);
    let r = r_override.unwrap_or(r0);
    if !(1 <= r && r < n && 1 <= k && k < n) {
        return Err(Error::InvalidParameter(format!(
            "need 1 ≤ r < n and 1 ≤ k < n, got n={n}, k={k}, r={r}"
        )));
    }
    let m = n - r;
    let ordered = match regime {
        Regime::Thm1SmallTail => k > m,
        Regime::Thm2ThetaM => m < n,
        Regime::Thm3KGgR => k > r,
        Regime::Thm3ThetaR => true,
        Regime::Thm3MinGgK => r.min(m) > k,
        Regime::WalkOnly => true,
    };
    if !ordered {
        return Err(Error::InvalidParameter(format!(
            "regime {} ordering violated by n={n}, k={k}, r={r}, m={m}",
            regime.name()
        )));
    }
    let cond_log = regime
        .is_thm3()
        .then(|| (m as f64).ln() <= (k.min(r) as f64).powf(1.0 / alpha) / 10.0);
    Ok(Schedule { n, k, r, m, cond_log })
}

/// One accepted conditioned trial. Population sizes are stored as `f64`:
/// conditioned populations routinely exceed `u64` range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReducedSample {
    pub trial_index: u64,
    pub s_r: f64,
    pub s_n: f64,
    pub s_tau: f64,
    pub tau_rn: usize,
    pub z_r: f64,
    pub q_rn: f64,
    /// `log(1 - q_rn)`, kept because `q_rn` rounds to 0 or 1.
    pub log_survival_rn: f64,
    pub z_rn: f64,
    pub o_rn: f64,
    pub delta_rn: f64,
}

impl ReducedSample {
    /// `log(Z_r (1 - q_rn)) - S_τ` recomputed from the stored fields.
    pub fn delta_recomputed(&self) -> f64 {
        self.z_r.ln() + self.log_survival_rn - self.s_tau
    }

    pub const CSV_VERSION: &'static str = "# reduced-bpre samples v1";
    pub const CSV_HEADER: &'static str = "trial_index,S_r,S_n,S_tau,tau_rn,Z_r,q_rn,Z_rn,O_rn,Delta_rn";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e}",
            self.trial_index,
            self.s_r,
            self.s_n,
            self.s_tau,
            self.tau_rn,
            self.z_r,
            self.q_rn,
            self.z_rn,
            self.o_rn,
            self.delta_rn
        )
    }
}

pub fn write_samples_csv<W: Write>(mut w: W, samples: &[ReducedSample]) -> Result<()> {
    writeln!(w, "{}", ReducedSample::CSV_VERSION)?;
    writeln!(w, "{}", ReducedSample::CSV_HEADER)?;
    for s in samples {
        writeln!(w, "{}", s.to_csv())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Population sampling

#[inline]
fn poisson_draw<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    if lambda <= 0.0 {
        0.0
    } else if lambda < EXACT_POPULATION_LIMIT {
        Poisson::new(lambda).expect("positive finite rate").sample(rng)
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (lambda + lambda.sqrt() * z).round().max(0.0)
    }
}

/// Offspring of `z` particles in a generation with log-mean `x`.
pub fn offspring<R: Rng + ?Sized>(family: Family, z: f64, x: f64, rng: &mut R) -> Result<f64> {
    if z == 0.0 {
        return Ok(0.0);
    }
    let mean = x.exp();
    let next = match family {
        Family::Poisson => poisson_draw(z * mean, rng),
        // a sum of z geometric laws with mean μ is Poisson mixed over Gamma(z, μ)
        Family::LinearFractional => {
            let lambda = if z < EXACT_POPULATION_LIMIT {
                Gamma::new(z, mean).expect("positive shape and scale").sample(rng)
            } else {
                let g: f64 = rng.sample(StandardNormal);
                z * mean + z.sqrt() * mean * g
            };
            poisson_draw(lambda, rng)
        }
    };
    if !next.is_finite() {
        return Err(Error::PopulationOverflow(format!("population {next} from {z} parents")));
    }
    Ok(next)
}

/// `Z_0..Z_r` of the population chain given the environment.
pub fn simulate_generation_chain<R: Rng + ?Sized>(env: &EnvRealization, r: usize, rng: &mut R, z0: u64) -> Result<Vec<f64>> {
    if r > env.n() {
        return Err(Error::InvalidParameter(format!("r={r} exceeds horizon {}", env.n())));
    }
    let mut out = Vec::with_capacity(r + 1);
    let mut z = z0 as f64;
    out.push(z);
    for &x in &env.increments()[..r] {
        z = offspring(env.family, z, x, rng)?;
        out.push(z);
    }
    Ok(out)
}

/// `Binomial(z_r, 1 - q)` where the survival probability `1 - q` is given
/// as its logarithm.
pub fn reduced_count_log<R: Rng + ?Sized>(z_r: f64, log_survival: f64, rng: &mut R) -> f64 {
    if z_r == 0.0 || log_survival == f64::NEG_INFINITY {
        return 0.0;
    }
    if log_survival == 0.0 {
        return z_r;
    }
    let p = log_survival.exp();
    if z_r < 9.0e15 {
        Binomial::new(z_r as u64, p).expect("valid binomial").sample(rng) as f64
    } else {
        let q = -log_survival.exp_m1();
        let g: f64 = rng.sample(StandardNormal);
        (z_r * p + (z_r * p * q).sqrt() * g).round().clamp(0.0, z_r)
    }
}

/// `Z_{r,n} ~ Binomial(Z_r, 1 - q_{r,n})`.
pub fn reduced_count<R: Rng + ?Sized>(z_r: f64, q_rn: f64, rng: &mut R) -> Result<f64> {
    if !(0.0..=1.0).contains(&q_rn) || !(z_r >= 0.0) {
        return Err(Error::Domain(format!("reduced_count({z_r}, {q_rn})")));
    }
    Ok(reduced_count_log(z_r, (-q_rn).ln_1p(), rng))
}

/// Failures before the first success, success probability `p`, as `f64`.
#[inline]
fn geometric_failures<R: Rng + ?Sized>(p: f64, rng: &mut R) -> f64 {
    if p >= 1.0 {
        return 0.0;
    }
    let e: f64 = rng.sample(Exp1);
    (e / -(-p).ln_1p()).floor()
}

// ---------------------------------------------------------------------------
// Conditioned trials

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMethod {
    /// Forward simulation of walk and population with the exact chain;
    /// any family.
    Population,
    /// Environment-level rejection on the closed-form survival probability,
    /// then an exact draw of `(Z_r, Z_{r,n})` given survival; linear-fractional
    /// family only.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub model: EnvironmentModel,
    pub n: usize,
    pub regime: Regime,
    pub theta: f64,
    pub t: f64,
    pub k: Option<usize>,
    pub r: Option<usize>,
    pub target_accepted: u64,
    pub max_trials: u64,
    pub seed: u64,
    pub method: TrialMethod,
}

impl ScenarioSpec {
    pub fn new(model: EnvironmentModel, regime: Regime, n: usize, seed: u64) -> Self {
        let method = if model.family == Family::LinearFractional {
            TrialMethod::Exact
        } else {
            TrialMethod::Population
        };
        Self {
            model,
            n,
            regime,
            theta: 1.0,
            t: 1.0,
            k: None,
            r: None,
            target_accepted: 5000,
            max_trials: 2_000_000_000,
            seed,
            method,
        }
    }

    fn alpha(&self) -> f64 {
        self.model.increment.stable().map_or(2.0, |s| s.alpha())
    }

    pub fn norming(&self, j: usize) -> f64 {
        (j as f64).powf(1.0 / self.alpha())
    }

    pub fn schedule(&self) -> Result<Schedule> {
        schedule(self.regime, self.n, self.theta, self.k, self.r, self.alpha())
    }

    /// `t a_k`.
    pub fn threshold(&self) -> Result<f64> {
        Ok(self.t * self.norming(self.schedule()?.k))
    }

    pub fn validate(&self) -> Result<Schedule> {
        if !(self.t > 0.0) {
            return Err(Error::InvalidParameter(format!("t = {} must be positive", self.t)));
        }
        if self.method == TrialMethod::Exact && self.model.family != Family::LinearFractional {
            return Err(Error::FamilyMismatch {
                expected: "linear_fractional",
            });
        }
        self.schedule()
    }
}

/// How a single trial ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrialOutcome {
    Accepted(ReducedSample),
    /// `S_n > t a_k`.
    RejectedWalk,
    /// The population died out before generation `n`.
    RejectedExtinct,
    /// Environment or population overflow.
    Discarded,
}

/// Precomputed per-scenario constants for the trial loop.
#[derive(Debug, Clone, Copy)]
pub struct TrialPlan {
    pub family: Family,
    pub law: IncrementLaw,
    pub eta: f64,
    pub n: usize,
    pub r: usize,
    pub threshold: f64,
    pub method: TrialMethod,
    // sd of one Gaussian increment; 0 when the law is not Gaussian
    gauss_sd: f64,
}

/// Standard deviations of slack before a Gaussian walk is declared unable
/// to come back below the threshold; the skipped mass is below 1e-32.
const GAUSS_CUT_SDS: f64 = 12.0;

impl TrialPlan {
    pub fn new(spec: &ScenarioSpec) -> Result<Self> {
        let sched = spec.validate()?;
        let gauss_sd = match spec.model.increment.stable() {
            Some(s) if s.is_gaussian() => (2.0 * s.c()).sqrt(),
            _ => 0.0,
        };
        Ok(Self {
            family: spec.model.family,
            law: spec.model.increment,
            eta: spec.model.eta(),
            n: spec.n,
            r: sched.r,
            threshold: spec.threshold()?,
            method: spec.method,
            gauss_sd,
        })
    }

    pub fn from_parts(model: &EnvironmentModel, n: usize, r: usize, threshold: f64, method: TrialMethod) -> Result<Self> {
        if r > n || n == 0 {
            return Err(Error::InvalidParameter(format!("need r ≤ n, got r={r}, n={n}")));
        }
        if method == TrialMethod::Exact && model.family != Family::LinearFractional {
            return Err(Error::FamilyMismatch {
                expected: "linear_fractional",
            });
        }
        Ok(Self {
            family: model.family,
            law: model.increment,
            eta: model.eta(),
            n,
            r,
            threshold,
            method,
            gauss_sd: 0.0,
        })
    }

    #[inline]
    fn hopeless(&self, s: f64, j: usize) -> bool {
        self.gauss_sd > 0.0
            && j.is_multiple_of(32)
            && s - self.threshold > GAUSS_CUT_SDS * self.gauss_sd * ((self.n - j) as f64).sqrt()
    }

    /// Run trial `index` with buffer `s` (resized internally).
    pub fn run<R: Rng + ?Sized>(&self, index: u64, s: &mut Vec<f64>, rng: &mut R) -> TrialOutcome {
        match self.method {
            TrialMethod::Exact => self.run_exact(index, s, rng),
            TrialMethod::Population => self.run_population(index, s, rng),
        }
    }

    fn run_exact<R: Rng + ?Sized>(&self, index: u64, s: &mut Vec<f64>, rng: &mut R) -> TrialOutcome {
        let (n, r) = (self.n, self.r);
        s.clear();
        s.push(0.0);
        // survival to generation j is 1 / Σ_{i≤j} e^{-S_i}, nonincreasing in j;
        // with U drawn first the walk stops as soon as survival falls below U
        let u: f64 = 1.0 - rng.random::<f64>();
        let limit = 1.0 / u;
        let mut acc = 1.0;
        let mut acc_r = 1.0;
        let mut x = 0.0;
        for j in 1..=n {
            let dx = self.law.sample(rng);
            if dx.abs() > envs::MAX_ABS_LOG_MEAN {
                return TrialOutcome::Discarded;
            }
            x += dx;
            s.push(x);
            acc += (-x).exp();
            if acc > limit {
                return TrialOutcome::RejectedExtinct;
            }
            if j == r {
                acc_r = acc;
            }
            if self.hopeless(x, j) {
                return TrialOutcome::RejectedWalk;
            }
        }
        if r == 0 {
            acc_r = 1.0;
        }
        if x > self.threshold {
            return TrialOutcome::RejectedWalk;
        }
        let s_r = s[r];
        let log_surv = -envs::log_sum_exp(s[r..=n].iter().map(|&v| s_r - v));
        let pi = log_surv.exp();
        // given Z_r > 0, Z_r is geometric on {1, 2, ..} with success
        // probability β = e^{-S_r} / Σ_{i≤r} e^{-S_i}; the index J of the
        // first surviving line and the count G after it are independent
        let beta = (-s_r - acc_r.ln()).exp().min(1.0);
        let j_fail = geometric_failures(pi + beta - pi * beta, rng);
        let g = geometric_failures(beta, rng);
        let z_r = 1.0 + j_fail + g;
        let z_rn = 1.0 + reduced_count_log(g, log_surv, rng);
        TrialOutcome::Accepted(self.finish(index, s, z_r, log_surv, z_rn))
    }

    fn run_population<R: Rng + ?Sized>(&self, index: u64, s: &mut Vec<f64>, rng: &mut R) -> TrialOutcome {
        let (n, r) = (self.n, self.r);
        s.clear();
        s.push(0.0);
        let mut z = 1.0;
        let mut x = 0.0;
        for j in 1..=n {
            let dx = self.law.sample(rng);
            if dx.abs() > envs::MAX_ABS_LOG_MEAN {
                return TrialOutcome::Discarded;
            }
            x += dx;
            s.push(x);
            if j <= r {
                z = match offspring(self.family, z, dx, rng) {
                    Ok(v) => v,
                    Err(_) => return TrialOutcome::Discarded,
                };
                if z == 0.0 {
                    return TrialOutcome::RejectedExtinct;
                }
            }
            if self.hopeless(x, j) {
                return TrialOutcome::RejectedWalk;
            }
        }
        if x > self.threshold {
            return TrialOutcome::RejectedWalk;
        }
        let incr: Vec<f64> = s.windows(2).skip(r).map(|w| w[1] - w[0]).collect();
        let ext = envs::extinction_from(self.family, &incr, 0.0);
        let z_rn = reduced_count_log(z, ext.log_survival, rng);
        if z_rn == 0.0 {
            return TrialOutcome::RejectedExtinct;
        }
        TrialOutcome::Accepted(self.finish(index, s, z, ext.log_survival, z_rn))
    }

    fn finish(&self, index: u64, s: &[f64], z_r: f64, log_surv: f64, z_rn: f64) -> ReducedSample {
        let (n, r) = (self.n, self.r);
        let ms = window_min_stats(s, r);
        let s_tau = ms.min;
        let o_rn = 1.0 + self.eta * s[r..n].iter().map(|&v| (s_tau - v).exp()).sum::<f64>();
        ReducedSample {
            trial_index: index,
            s_r: s[r],
            s_n: s[n],
            s_tau,
            tau_rn: ms.argmin,
            z_r,
            q_rn: -log_surv.exp_m1(),
            log_survival_rn: log_surv,
            z_rn,
            o_rn,
            delta_rn: z_r.ln() + log_surv - s_tau,
        }
    }
}

/// `run_conditioned_trial`: one trial with the RNG derived from
/// `(seed, trial_index)`.
pub fn run_conditioned_trial(spec: &ScenarioSpec, trial_index: u64) -> Result<TrialOutcome> {
    let plan = TrialPlan::new(spec)?;
    let mut rng = rng_for(spec.seed, stream::TRIAL, trial_index);
    let mut buf = Vec::with_capacity(spec.n + 1);
    Ok(plan.run(trial_index, &mut buf, &mut rng))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrialCounts {
    pub trials: u64,
    pub accepted: u64,
    pub rejected_walk: u64,
    pub rejected_extinct: u64,
    pub discarded: u64,
}

impl TrialCounts {
    fn add(&mut self, o: &TrialCounts) {
        self.trials += o.trials;
        self.accepted += o.accepted;
        self.rejected_walk += o.rejected_walk;
        self.rejected_extinct += o.rejected_extinct;
        self.discarded += o.discarded;
    }

    /// Accepted fraction among non-discarded trials, estimating `P(R)`.
    pub fn acceptance(&self) -> Estimate {
        proportion_estimate(self.accepted, self.trials - self.discarded)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialBatch {
    pub schedule: Schedule,
    pub threshold: f64,
    /// Sorted by trial index.
    pub samples: Vec<ReducedSample>,
    pub counts: TrialCounts,
    /// The stopping target was reached.
    pub complete: bool,
}

/// Trials per block; each block is one unit of parallel work.
const BLOCK: u64 = 1 << 14;
/// Blocks per wave; stopping is checked only between waves so the result
/// does not depend on the thread count.
const WAVE: u64 = 64;

/// Run blocks of trials until `target_accepted` samples or `max_trials`.
pub fn run_trials(spec: &ScenarioSpec) -> Result<TrialBatch> {
    let sched = spec.validate()?;
    let plan = TrialPlan::new(spec)?;
    run_plan(&plan, sched, spec.seed, spec.target_accepted, spec.max_trials)
}

pub fn run_plan(plan: &TrialPlan, sched: Schedule, seed: u64, target: u64, max_trials: u64) -> Result<TrialBatch> {
    let mut samples = Vec::new();
    let mut counts = TrialCounts::default();
    let mut next_block = 0u64;
    let total_blocks = max_trials.div_ceil(BLOCK);
    while counts.accepted < target && next_block < total_blocks {
        let end = (next_block + WAVE).min(total_blocks);
        let results: Vec<(Vec<ReducedSample>, TrialCounts)> = (next_block..end)
            .into_par_iter()
            .map(|b| {
                let mut buf = Vec::with_capacity(plan.n + 1);
                let mut local = Vec::new();
                let mut c = TrialCounts::default();
                let first = b * BLOCK;
                let last = (first + BLOCK).min(max_trials);
                for i in first..last {
                    let mut rng: SimRng = rng_for(seed, stream::TRIAL, i);
                    c.trials += 1;
                    match plan.run(i, &mut buf, &mut rng) {
                        TrialOutcome::Accepted(s) => {
                            c.accepted += 1;
                            local.push(s);
                        }
                        TrialOutcome::RejectedWalk => c.rejected_walk += 1,
                        TrialOutcome::RejectedExtinct => c.rejected_extinct += 1,
                        TrialOutcome::Discarded => c.discarded += 1,
                    }
                }
                (local, c)
            })
            .collect();
        for (s, c) in results {
            samples.extend(s);
            counts.add(&c);
        }
        next_block = end;
    }
    Ok(TrialBatch {
        schedule: sched,
        threshold: plan.threshold,
        complete: counts.accepted >= target,
        samples,
        counts,
    })
}

// ---------------------------------------------------------------------------
// Exact enumeration for tiny instances

/// One cell of the exact joint law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TinyCell {
    pub s_n: f64,
    pub z_r: u64,
    pub z_rn: u64,
    pub survives: bool,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyLaw {
    pub cells: Vec<TinyCell>,
    /// Probability lost to the population cap.
    pub truncated_mass: f64,
}

impl TinyLaw {
    pub fn total_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.prob).sum::<f64>() + self.truncated_mass
    }

    /// Law of `(Z_r, Z_{r,n})` jointly with acceptance `{S_n ≤ x, Z_n > 0}`:
    /// accepted cells keyed by counts, and the total rejection mass.
    pub fn acceptance_law(&self, x: f64) -> (std::collections::BTreeMap<(u64, u64), f64>, f64) {
        let mut acc = std::collections::BTreeMap::new();
        let mut rejected = 0.0;
        for c in &self.cells {
            if c.survives && c.s_n <= x {
                *acc.entry((c.z_r, c.z_rn)).or_insert(0.0) += c.prob;
            } else {
                rejected += c.prob;
            }
        }
        (acc, rejected)
    }
}

fn offspring_pmf(family: Family, x: f64, cap: usize) -> Vec<f64> {
    let mut p = vec![0.0; cap + 1];
    match family {
        Family::LinearFractional => {
            let succ = family.parameter_for_log_mean(x);
            let fail = 1.0 - succ;
            let mut v = fail;
            for slot in p.iter_mut() {
                *slot = v;
                v *= succ;
            }
        }
        Family::Poisson => {
            let lambda = x.exp();
            let mut v = (-lambda).exp();
            for (i, slot) in p.iter_mut().enumerate() {
                *slot = v;
                v *= lambda / (i + 1) as f64;
            }
        }
    }
    p
}

fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; n as usize + 1];
    for (k, slot) in out.iter_mut().enumerate() {
        let k = k as u64;
        let ln_choose = ln_gamma((n + 1) as f64) - ln_gamma((k + 1) as f64) - ln_gamma((n - k + 1) as f64);
        let lp = if p == 0.0 {
            if k == 0 { 0.0 } else { f64::NEG_INFINITY }
        } else if p == 1.0 {
            if k == n { 0.0 } else { f64::NEG_INFINITY }
        } else {
            ln_choose + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()
        };
        *slot = lp.exp();
    }
    out
}

fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Exact joint law of `(S_n, Z_r, Z_{r,n}, Z_n > 0)` for a two-point
/// increment law by enumerating environments and population transitions.
/// Populations are truncated at `z_cap`; the lost mass is reported.
pub fn brute_force_tiny(model: &EnvironmentModel, n: usize, r: usize, z_cap: usize) -> Result<TinyLaw> {
    let atoms = model
        .increment
        .atoms()
        .ok_or_else(|| Error::InvalidParameter("brute force needs a two-point increment law".into()))?;
    if n == 0 || n > 6 || r > n {
        return Err(Error::InvalidParameter(format!("need 0 ≤ r ≤ n ≤ 6 and n ≥ 1, got n={n}, r={r}")));
    }
    let states = (1u64 << n) * (z_cap as u64 + 1) * (z_cap as u64 + 1);
    if states > 10_000_000 {
        return Err(Error::StateSpaceTooLarge(states));
    }
    let mut cells = Vec::new();
    let mut truncated = 0.0;
    for code in 0..(1usize << n) {
        let xs: Vec<f64> = (0..n).map(|i| atoms[(code >> i) & 1].0).collect();
        let p_env: f64 = (0..n).map(|i| atoms[(code >> i) & 1].1).product();
        if p_env == 0.0 {
            continue;
        }
        // distribution of Z_r on {0..z_cap}
        let mut dist = vec![0.0; z_cap + 1];
        dist[1] = 1.0;
        for &x in &xs[..r] {
            let one = offspring_pmf(model.family, x, z_cap);
            let mut next = vec![0.0; z_cap + 1];
            // conv_z = pmf of the sum of z independent offspring counts
            let mut conv = vec![0.0; z_cap + 1];
            conv[0] = 1.0;
            for (z, &pz) in dist.iter().enumerate() {
                if z > 0 {
                    let mut c = vec![0.0; z_cap + 1];
                    for (i, &a) in conv.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        for (j, &b) in one.iter().enumerate().take(z_cap + 1 - i) {
                            c[i + j] += a * b;
                        }
                    }
                    conv = c;
                }
                if pz == 0.0 {
                    continue;
                }
                let kept: f64 = conv.iter().sum();
                truncated += p_env * pz * (1.0 - kept);
                for (z2, &c) in conv.iter().enumerate() {
                    next[z2] += pz * c;
                }
            }
            dist = next;
        }
        let s_n: f64 = xs.iter().sum();
        let ext = envs::extinction_from(model.family, &xs[r..], 0.0);
        let pi = ext.survival();
        for (z, &pz) in dist.iter().enumerate() {
            if pz == 0.0 {
                continue;
            }
            for (k, &pk) in binomial_pmf(z as u64, pi).iter().enumerate() {
                cells.push(TinyCell {
                    s_n,
                    z_r: z as u64,
                    z_rn: k as u64,
                    survives: k > 0,
                    prob: p_env * pz * pk,
                });
            }
        }
    }
    Ok(TinyLaw {
        cells,
        truncated_mass: truncated,
    })
}

/// Total-variation distance between the empirical law of trial outcomes
/// (accepted `(Z_r, Z_{r,n})` cells plus one rejection cell) and the exact law.
pub fn tiny_tv_distance(law: &TinyLaw, x: f64, outcomes: &[TrialOutcome]) -> f64 {
    let (exact, rejected) = law.acceptance_law(x);
    let mut emp = std::collections::BTreeMap::<(u64, u64), f64>::new();
    let mut emp_rej = 0.0;
    let w = 1.0 / outcomes.len() as f64;
    for o in outcomes {
        match o {
            TrialOutcome::Accepted(s) => *emp.entry((s.z_r as u64, s.z_rn as u64)).or_insert(0.0) += w,
            _ => emp_rej += w,
        }
    }
    let mut tv = (rejected - emp_rej).abs();
    let keys: std::collections::BTreeSet<_> = exact.keys().chain(emp.keys()).copied().collect();
    for key in keys {
        tv += (exact.get(&key).copied().unwrap_or(0.0) - emp.get(&key).copied().unwrap_or(0.0)).abs();
    }
    0.5 * tv
}

// ---------------------------------------------------------------------------
// Θ

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaRatioPoint {
    pub n: usize,
    pub k: usize,
    pub threshold: f64,
    pub p_r: Estimate,
    pub p_b: Estimate,
    pub theta: Estimate,
    pub trials_r: u64,
    pub trials_b: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaSeries {
    pub theta: Estimate,
    /// Value of the `j = 0` term, `E_0^+[1 - F_{0,∞}(0)]`.
    pub first_term: Estimate,
    /// Walk horizon `J` of the outer sum.
    pub j_max: usize,
    /// Level below which later terms are dropped (they are `≤ e^{-level}`).
    pub floor_level: f64,
    pub n_walks: u64,
    pub n_pool: usize,
    /// Extrapolated mass of the terms beyond `J`.
    pub tail_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaEstimates {
    pub ratio: Vec<ThetaRatioPoint>,
    pub series: ThetaSeries,
    pub sparr_bound: Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaConfig {
    pub t: f64,
    /// `k = ⌈n^{k_exponent}⌉`.
    pub k_exponent: f64,
    pub trials_r: u64,
    pub trials_b: u64,
    pub series_walks: u64,
    pub series_horizon: usize,
    pub pool_size: usize,
    /// Length of the conditioned walks used for `F_{0,∞}(0)`.
    pub pool_steps: usize,
    pub sparr_paths: u64,
}

impl Default for ThetaConfig {
    fn default() -> Self {
        Self {
            t: 1.0,
            k_exponent: 0.65,
            trials_r: 20_000_000,
            trials_b: 20_000_000,
            series_walks: 200_000,
            series_horizon: 100_000,
            pool_size: 20_000,
            pool_steps: 2000,
            sparr_paths: 2_000_000,
        }
    }
}

/// `P(R)/P(B)` at each horizon. `P(R)` uses the conditioned-trial harness
/// with `r = n` and `P(B)` the early-stopping walk counter.
pub fn theta_ratio(model: &EnvironmentModel, n_grid: &[usize], cfg: &ThetaConfig, seed: u64) -> Result<Vec<ThetaRatioPoint>> {
    let spec = model
        .increment
        .stable()
        .ok_or_else(|| Error::InvalidParameter("Θ needs a stable increment law".into()))?;
    if n_grid.is_empty() {
        return Err(Error::InvalidParameter("empty horizon grid".into()));
    }
    let method = if model.family == Family::LinearFractional {
        TrialMethod::Exact
    } else {
        TrialMethod::Population
    };
    n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let k = pow_ceil(n, cfg.k_exponent);
            let threshold = cfg.t * spec.norming(k as u64);
            let mut plan = TrialPlan::from_parts(model, n, n, threshold, method)?;
            if spec.is_gaussian() {
                plan.gauss_sd = (2.0 * spec.c()).sqrt();
            }
            let sched = Schedule { n, k, r: n, m: 0, cond_log: None };
            let s_r = crate::rng::child_seed(seed, 2 * i as u64);
            let batch = run_plan(&plan, sched, s_r, u64::MAX, cfg.trials_r)?;
            let p_r = batch.counts.acceptance();
            let s_b = crate::rng::child_seed(seed, 2 * i as u64 + 1);
            let hits = walk::count_event_b(&model.increment, threshold, n, cfg.trials_b, s_b);
            let p_b = proportion_estimate(hits, cfg.trials_b);
            Ok(ThetaRatioPoint {
                n,
                k,
                threshold,
                theta: ratio_estimate(&p_r, &p_b),
                p_r,
                p_b,
                trials_r: batch.counts.trials,
                trials_b: cfg.trials_b,
            })
        })
        .collect()
}

/// Pool of `1 - F_{0,∞}(0) = 1 / Σ_{i≥0} e^{-S_i}` under `P_0^+`, with the
/// infinite sum cut after `steps` conditioned steps.
pub fn survival_pool(law: &IncrementLaw, table: &RenewalTable, size: usize, steps: usize, seed: u64) -> Result<Vec<f64>> {
    let sampler = PositiveSampler::new(law, table)?;
    (0..size as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, stream::CONDITIONED, i);
            let w = sampler.sample(steps, 0.0, walk::ConditionMethod::HTransform, &mut rng)?;
            let total: f64 = w.positions().map(|x| (-x).exp()).sum();
            Ok(1.0 / total)
        })
        .collect()
}

/// Truncated series for Θ. For linear-fractional laws the inner sum over
/// `i` is summed in closed form: with `1 - a = P(Z_j > 0)` and `β` the
/// success probability of the geometric `Z_j | Z_j > 0`,
/// `Σ_i P(Z_j = i) (1 - (1-π)^i) = (1 - a) π / (1 - (1-β)(1-π))`.
pub fn theta_series(
    law: &IncrementLaw,
    pool: &[f64],
    n_walks: u64,
    horizon: usize,
    floor_level: f64,
    seed: u64,
) -> Result<ThetaSeries> {
    if pool.is_empty() || n_walks == 0 {
        return Err(Error::EmptySample);
    }
    const DRAWS: usize = 8;
    let pool_mean = pool.iter().sum::<f64>() / pool.len() as f64;
    let chunks = n_walks.div_ceil(1024);
    // per walk: sum of terms j ≥ 1, and the terms beyond horizon / 2
    let parts: Vec<(f64, f64, f64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, stream::THETA, c);
            let todo = 1024.min(n_walks - c * 1024);
            let (mut s1, mut s2, mut late) = (0.0, 0.0, 0.0);
            for _ in 0..todo {
                let mut x = 0.0;
                let mut acc = 1.0; // Σ_{i≤j} e^{-S_i}
                let mut low = 0.0;
                let mut total = 0.0;
                for j in 1..=horizon {
                    x += law.sample(&mut rng);
                    acc += (-x).exp();
                    if x < low {
                        low = x;
                        if low < -floor_level {
                            break;
                        }
                        let one_minus_a = 1.0 / acc;
                        let beta = (-x).exp() / acc;
                        let mut term = 0.0;
                        for _ in 0..DRAWS {
                            let pi = pool[rng.random_range(0..pool.len())];
                            term += pi / (1.0 - (1.0 - beta) * (1.0 - pi));
                        }
                        let term = one_minus_a * term / DRAWS as f64;
                        total += term;
                        if 2 * j > horizon {
                            late += term;
                        }
                    }
                }
                s1 += total;
                s2 += total * total;
            }
            (s1, s2, late, todo)
        })
        .collect();
    let (s1, s2, late, cnt) = parts
        .iter()
        .fold((0.0, 0.0, 0.0, 0u64), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2, a.3 + p.3));
    let nf = cnt as f64;
    let mean = s1 / nf;
    let var = (s2 / nf - mean * mean).max(0.0);
    let pool_var = pool.iter().map(|p| (p - pool_mean).powi(2)).sum::<f64>() / pool.len() as f64;
    // terms decay like j^{-1-1/α}; mass in (J/2, J] extrapolates to the tail
    // beyond J by the factor 1/(2^{1/α} - 1) with α = 2
    let late_mean = late / nf;
    let tail = late_mean / (std::f64::consts::SQRT_2 - 1.0);
    let value = pool_mean + mean + tail;
    let half = Z99 * (var / nf + pool_var / pool.len() as f64).sqrt();
    Ok(ThetaSeries {
        theta: Estimate {
            value,
            ci_low: value - half,
            ci_high: value + half,
        },
        first_term: Estimate {
            value: pool_mean,
            ci_low: pool_mean - Z99 * (pool_var / pool.len() as f64).sqrt(),
            ci_high: pool_mean + Z99 * (pool_var / pool.len() as f64).sqrt(),
        },
        j_max: horizon,
        floor_level,
        n_walks: cnt,
        n_pool: pool.len(),
        tail_estimate: tail,
    })
}

/// `Σ_{j≥0} E[e^{S_j}; M_j < 0]`, each walk stopped at its first
/// nonnegative value or after `horizon` steps.
pub fn sparr_bound(law: &IncrementLaw, horizon: usize, n_paths: u64, seed: u64) -> Estimate {
    let chunks = n_paths.div_ceil(4096);
    let (s1, s2): (f64, f64) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, stream::AUX, (1 << 40) | c);
            let todo = 4096.min(n_paths - c * 4096);
            let (mut a, mut b) = (0.0, 0.0);
            for _ in 0..todo {
                let mut x = 0.0;
                let mut tot = 0.0;
                for _ in 0..horizon {
                    x += law.sample(&mut rng);
                    if x >= 0.0 {
                        break;
                    }
                    tot += x.exp();
                }
                a += tot;
                b += tot * tot;
            }
            (a, b)
        })
        .reduce(|| (0.0, 0.0), |p, q| (p.0 + q.0, p.1 + q.1));
    let nf = n_paths as f64;
    let mean = s1 / nf;
    let h = Z99 * ((s2 / nf - mean * mean).max(0.0) / nf).sqrt();
    Estimate {
        value: 1.0 + mean,
        ci_low: 1.0 + mean - h,
        ci_high: 1.0 + mean + h,
    }
}

/// `estimate_theta`: ratio method over `n_grid`, series method and the
/// Sparr bound. The series needs a renewal table covering the conditioned
/// walks used for `F_{0,∞}(0)`.
pub fn estimate_theta(
    model: &EnvironmentModel,
    n_grid: &[usize],
    table: &RenewalTable,
    cfg: &ThetaConfig,
    seed: u64,
) -> Result<ThetaEstimates> {
    if model.family != Family::LinearFractional {
        return Err(Error::FamilyMismatch {
            expected: "linear_fractional",
        });
    }
    let ratio = theta_ratio(model, n_grid, cfg, crate::rng::child_seed(seed, 1))?;
    let pool = survival_pool(&model.increment, table, cfg.pool_size, cfg.pool_steps, crate::rng::child_seed(seed, 2))?;
    let series = theta_series(
        &model.increment,
        &pool,
        cfg.series_walks,
        cfg.series_horizon,
        40.0,
        crate::rng::child_seed(seed, 3),
    )?;
    let sparr = sparr_bound(&model.increment, cfg.series_horizon, cfg.sparr_paths, crate::rng::child_seed(seed, 4));
    Ok(ThetaEstimates {
        ratio,
        series,
        sparr_bound: sparr,
    })
}

// ---------------------------------------------------------------------------
// Diagnostics

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub samples: usize,
    /// 95th percentile of `|Δ_{r,n}| / a_m`.
    pub delta_q95: Estimate,
    /// 95th percentile of `log O_{r,n} / a_m`.
    pub log_o_q95: Estimate,
    /// 95th percentile of `|Z_{r,n} - Z_r(1-q)| / sqrt(Z_r(1-q))`.
    pub binomial_dev_q95: Estimate,
    /// Fraction of standardised binomial deviations below 2.
    pub binomial_below_2: f64,
    /// Median and interquartile range of `log(Z_r / e^{S_r})`.
    pub martingale_median: f64,
    pub martingale_iqr: f64,
    /// Largest `|Δ - recomputed Δ|` over the batch.
    pub delta_recompute_error: f64,
}

fn quantile_estimate(values: Vec<f64>, p: f64) -> Result<Estimate> {
    let e = Ecdf::new(values)?;
    let (lo, hi) = e.quantile_ci(p);
    Ok(Estimate {
        value: e.quantile(p),
        ci_low: lo,
        ci_high: hi,
    })
}

pub fn diagnostics_check(samples: &[ReducedSample], sched: &Schedule, alpha: f64) -> Result<DiagnosticsReport> {
    if samples.len() < 1000 {
        return Err(Error::InsufficientSamples {
            needed: 1000,
            got: samples.len(),
        });
    }
    let a_m = (sched.m as f64).powf(1.0 / alpha);
    let delta: Vec<f64> = samples.iter().map(|s| s.delta_rn.abs() / a_m).collect();
    let log_o: Vec<f64> = samples.iter().map(|s| s.o_rn.ln() / a_m).collect();
    let dev: Vec<f64> = samples
        .iter()
        .map(|s| {
            let mean = (s.z_r.ln() + s.log_survival_rn).exp();
            (s.z_rn - mean).abs() / mean.sqrt()
        })
        .collect();
    let below = dev.iter().filter(|&&d| d < 2.0).count() as f64 / dev.len() as f64;
    let mart = Ecdf::new(samples.iter().map(|s| s.z_r.ln() - s.s_r).collect())?;
    let err = samples
        .iter()
        .map(|s| (s.delta_rn - s.delta_recomputed()).abs())
        .fold(0.0, f64::max);
    Ok(DiagnosticsReport {
        n: sched.n,
        samples: samples.len(),
        delta_q95: quantile_estimate(delta, 0.95)?,
        log_o_q95: quantile_estimate(log_o, 0.95)?,
        binomial_dev_q95: quantile_estimate(dev, 0.95)?,
        binomial_below_2: below,
        martingale_median: mart.quantile(0.5),
        martingale_iqr: mart.quantile(0.75) - mart.quantile(0.25),
        delta_recompute_error: err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stable::StableSpec;
    use rand::SeedableRng;

    fn lf_normal() -> EnvironmentModel {
        EnvironmentModel::new(Family::LinearFractional, StableSpec::standard_normal())
    }

    #[test]
    fn schedules_follow_power_laws() {
        let s = schedule(Regime::Thm1SmallTail, 4000, 1.0, None, None, 2.0).unwrap();
        assert_eq!((s.k, s.m, s.r), (220, 19, 3981));
        let s = schedule(Regime::Thm2ThetaM, 4000, 1.0, None, None, 2.0).unwrap();
        assert_eq!((s.k, s.m), (64, 64));
        let s = schedule(Regime::Thm3MinGgK, 4000, 1.0, None, None, 2.0).unwrap();
        assert_eq!((s.k, s.r), (28, 2000));
        assert!(s.cond_log.is_some());
        let s = schedule(Regime::Thm3KGgR, 4000, 1.0, None, None, 2.0).unwrap();
        assert_eq!((s.k, s.r), (145, 13));
        assert!(matches!(
            schedule(Regime::Thm1SmallTail, 2000, 1.0, Some(10), Some(1900), 2.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(schedule(Regime::Thm1SmallTail, 2000, 1.0, Some(0), None, 2.0).is_err());
    }

    #[test]
    fn reduced_count_edges() {
        let mut rng = SimRng::seed_from_u64(1);
        assert_eq!(reduced_count(17.0, 1.0, &mut rng).unwrap(), 0.0);
        assert_eq!(reduced_count(17.0, 0.0, &mut rng).unwrap(), 17.0);
        assert_eq!(reduced_count(0.0, 0.3, &mut rng).unwrap(), 0.0);
        assert!(reduced_count(3.0, 1.5, &mut rng).is_err());
        for _ in 0..1000 {
            assert!(reduced_count(1e20, 0.5, &mut rng).unwrap() <= 1e20);
        }
    }

    #[test]
    fn reduced_count_binomial_pmf() {
        let mut rng = SimRng::seed_from_u64(2);
        let n = 1_000_000;
        let mut counts = [0u64; 6];
        for _ in 0..n {
            counts[reduced_count(5.0, 0.5, &mut rng).unwrap() as usize] += 1;
        }
        let pmf = binomial_pmf(5, 0.5);
        let chi2: f64 = counts
            .iter()
            .zip(&pmf)
            .map(|(&c, &p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        // 5 degrees of freedom, 0.999 quantile ≈ 20.5
        assert!(chi2 < 20.5, "chi2 = {chi2}");
        let mean = counts.iter().enumerate().map(|(k, &c)| k as f64 * c as f64).sum::<f64>() / n as f64;
        assert!((mean - 2.5).abs() < 4.0 * (1.25f64 / n as f64).sqrt());
    }

    #[test]
    fn chain_absorbs_and_is_critical() {
        let mut rng = SimRng::seed_from_u64(3);
        assert_eq!(offspring(Family::Poisson, 0.0, 1.0, &mut rng).unwrap(), 0.0);
        let env = EnvRealization::from_increments(Family::Poisson, vec![0.0; 10]).unwrap();
        let reps = 1_000_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..reps {
            let z = *simulate_generation_chain(&env, 10, &mut rng, 1).unwrap().last().unwrap();
            sum += z;
            sq += z * z;
        }
        let mean = sum / reps as f64;
        let sd = ((sq / reps as f64 - mean * mean) / reps as f64).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * sd, "mean {mean} ± {sd}");
    }

    #[test]
    fn geometric_step_pmf() {
        let mut rng = SimRng::seed_from_u64(4);
        let n = 1_000_000;
        let mut counts = [0u64; 12];
        for _ in 0..n {
            let z = offspring(Family::LinearFractional, 1.0, 0.0, &mut rng).unwrap() as usize;
            counts[z.min(11)] += 1;
        }
        let mut chi2 = 0.0;
        for (k, &c) in counts.iter().enumerate() {
            let p = if k < 11 { 0.5f64.powi(k as i32 + 1) } else { 0.5f64.powi(11) };
            chi2 += (c as f64 - n as f64 * p).powi(2) / (n as f64 * p);
        }
        // 11 degrees of freedom, 0.999 quantile ≈ 31.3
        assert!(chi2 < 31.3, "chi2 = {chi2}");
    }

    #[test]
    fn brute_force_small_identities() {
        let law = IncrementLaw::two_point(-1.0, 1.0, 0.5).unwrap();
        let model = EnvironmentModel::new(Family::LinearFractional, law);
        let tiny = brute_force_tiny(&model, 4, 2, 320).unwrap();
        assert!((tiny.total_mass() - 1.0).abs() < 1e-12);
        assert!(tiny.truncated_mass < 1e-12);
        // n = 1, r = 0: Z_{0,1} = 1{Z_1 > 0}
        let tiny = brute_force_tiny(&model, 1, 0, 50).unwrap();
        let surv: f64 = tiny.cells.iter().filter(|c| c.survives).map(|c| c.prob).sum();
        let exact = 0.5 * (1.0 - gf(-1.0)) + 0.5 * (1.0 - gf(1.0));
        assert!((surv - exact).abs() < 1e-14);
        assert!(tiny.cells.iter().filter(|c| c.survives).all(|c| c.z_r == 1 && c.z_rn == 1));
        // single-atom environment: critical geometric GW survives 4 steps w.p. 1/5
        let law = IncrementLaw::two_point(0.0, 1.0, 1.0).unwrap();
        let model = EnvironmentModel::new(Family::LinearFractional, law);
        let tiny = brute_force_tiny(&model, 4, 4, 200).unwrap();
        let surv: f64 = tiny.cells.iter().filter(|c| c.survives).map(|c| c.prob).sum();
        assert!((surv - 0.2).abs() < 1e-12, "{surv}");
        assert!(matches!(
            brute_force_tiny(&model, 6, 2, 5000),
            Err(Error::StateSpaceTooLarge(_))
        ));
    }

    fn gf(x: f64) -> f64 {
        envs::gf_eval(Family::LinearFractional, Family::LinearFractional.parameter_for_log_mean(x), 0.0).unwrap()
    }

    #[test]
    fn boundary_identities_from_enumeration() {
        // with r = n the reduced count is the population itself
        let law = IncrementLaw::two_point(-0.5, 0.5, 0.5).unwrap();
        let model = EnvironmentModel::new(Family::Poisson, law);
        let tiny = brute_force_tiny(&model, 3, 3, 80).unwrap();
        assert!(tiny.cells.iter().all(|c| c.prob == 0.0 || c.z_rn == c.z_r));
    }

    #[test]
    fn accepted_samples_satisfy_predicate() {
        let mut spec = ScenarioSpec::new(lf_normal(), Regime::Thm1SmallTail, 200, 11);
        spec.target_accepted = 300;
        let batch = run_trials(&spec).unwrap();
        assert!(batch.complete);
        for s in &batch.samples {
            assert!(s.s_n <= batch.threshold);
            assert!(s.z_rn >= 1.0 && s.z_rn <= s.z_r);
            assert!(s.s_tau <= s.s_r && s.s_tau <= s.s_n);
            assert!(s.q_rn >= 0.0 && s.q_rn < 1.0);
            assert_eq!(s.delta_rn, s.delta_recomputed());
        }
        assert!(batch.samples.windows(2).all(|w| w[0].trial_index < w[1].trial_index));
    }

    #[test]
    fn trials_are_reproducible_by_index() {
        let spec = ScenarioSpec::new(lf_normal(), Regime::Thm1SmallTail, 100, 5);
        let mut batch_spec = spec.clone();
        batch_spec.target_accepted = 20;
        let batch = run_trials(&batch_spec).unwrap();
        for s in batch.samples.iter().take(5) {
            match run_conditioned_trial(&spec, s.trial_index).unwrap() {
                TrialOutcome::Accepted(t) => assert_eq!(&t, s),
                other => panic!("trial {} gave {other:?}", s.trial_index),
            }
        }
    }

    #[test]
    fn exact_and_population_methods_agree_with_enumeration() {
        let law = IncrementLaw::two_point(-1.0, 1.0, 0.5).unwrap();
        let model = EnvironmentModel::new(Family::LinearFractional, law);
        let tiny = brute_force_tiny(&model, 4, 2, 320).unwrap();
        for method in [TrialMethod::Exact, TrialMethod::Population] {
            let plan = TrialPlan::from_parts(&model, 4, 2, 0.0, method).unwrap();
            let mut buf = Vec::new();
            let outcomes: Vec<TrialOutcome> = (0..200_000u64)
                .map(|i| plan.run(i, &mut buf, &mut rng_for(77, stream::TRIAL, i)))
                .collect();
            let tv = tiny_tv_distance(&tiny, 0.0, &outcomes);
            assert!(tv < 0.01, "{method:?}: tv = {tv}");
        }
    }

    #[test]
    fn conditional_mean_identity() {
        // E[Z_rn | env, Z_r] = Z_r (1 - q) for fixed environments
        let mut rng = SimRng::seed_from_u64(21);
        let model = lf_normal();
        for _ in 0..20 {
            let env = model.draw(30, &mut rng).unwrap();
            let ext = envs::extinction_backward(&env, 10, 30).unwrap();
            let z_r = 50.0;
            let reps = 20_000;
            let draws: Vec<f64> = (0..reps).map(|_| reduced_count_log(z_r, ext.log_survival, &mut rng)).collect();
            let mean = draws.iter().sum::<f64>() / reps as f64;
            let p = ext.survival();
            let sd = (z_r * p * (1.0 - p) / reps as f64).sqrt();
            assert!((mean - z_r * p).abs() <= 5.0 * sd + 1e-12, "{mean} vs {}", z_r * p);
        }
    }

    #[test]
    fn samples_csv_has_versioned_header() {
        let s = ReducedSample {
            trial_index: 3,
            s_r: 1.0,
            s_n: 0.5,
            s_tau: 0.25,
            tau_rn: 7,
            z_r: 4.0,
            q_rn: 0.5,
            log_survival_rn: 0.5f64.ln(),
            z_rn: 2.0,
            o_rn: 1.5,
            delta_rn: 0.1,
        };
        let mut out = Vec::new();
        write_samples_csv(&mut out, &[s]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# reduced-bpre samples v"));
        assert_eq!(lines[1], ReducedSample::CSV_HEADER);
        assert_eq!(lines[2].split(',').count(), 10);
    }

    #[test]
    fn theta_series_first_term_and_bound() {
        let law = IncrementLaw::Stable(StableSpec::standard_normal());
        let grid: Vec<f64> = (0..=600).map(|i| i as f64 * 0.5).collect();
        let table = RenewalTable::simulate(&law, &grid, &walk::RenewalConfig::default(), 1).unwrap();
        let pool = survival_pool(&law, &table, 2000, 2000, 2).unwrap();
        assert!(pool.iter().all(|&p| p > 0.0 && p <= 1.0));
        let series = theta_series(&law, &pool, 20_000, 20_000, 40.0, 3).unwrap();
        let bound = sparr_bound(&law, 20_000, 200_000, 4);
        assert!(series.first_term.value <= series.theta.value);
        assert!(series.theta.ci_low <= bound.ci_high, "{:?} vs {:?}", series.theta, bound);
    }
}
