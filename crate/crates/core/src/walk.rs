//! Random walks: simulation, minima, ladder variables, renewal functions,
//! walks conditioned to stay nonnegative and the local asymptotics of
//! `P(S_n ≤ x, L_n ≥ 0)`.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::envs::IncrementLaw;
use crate::error::{Error, Result};
use crate::quad;
use crate::rng::{rng_for, stream};
use crate::stable::{stable_density, StableSpec};
use crate::stats::{proportion_estimate, ratio_estimate, tail_index_fit, Estimate, TailFit, Z99};

/// Trials per parallel work unit; fixed so results do not depend on the
/// number of threads.
const CHUNK: u64 = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    increments: Vec<f64>,
    prefix: Vec<f64>,
}

impl WalkPath {
    pub fn from_increments(increments: Vec<f64>) -> Self {
        let mut prefix = Vec::with_capacity(increments.len() + 1);
        let mut s = 0.0;
        prefix.push(s);
        for &x in &increments {
            s += x;
            prefix.push(s);
        }
        Self { increments, prefix }
    }

    pub fn n(&self) -> usize {
        self.increments.len()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    pub fn endpoint(&self) -> f64 {
        self.prefix[self.n()]
    }
}

pub fn simulate_walk<R: Rng + ?Sized>(law: &IncrementLaw, n: usize, rng: &mut R) -> WalkPath {
    WalkPath::from_increments((0..n).map(|_| law.sample(rng)).collect())
}

/// `L_{r,n}`, the first index `τ_{r,n}` attaining it, and `M_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinStats {
    pub min: f64,
    pub argmin: usize,
    /// `max_{1≤i≤n} S_i`; `-∞` for the empty walk.
    pub max: f64,
}

pub fn min_stats(path: &WalkPath, r: usize) -> Result<MinStats> {
    let s = path.prefix();
    if r > path.n() {
        return Err(Error::InvalidParameter(format!("r={r} exceeds n={}", path.n())));
    }
    Ok(window_min_stats(s, r))
}

pub(crate) fn window_min_stats(s: &[f64], r: usize) -> MinStats {
    let mut min = s[r];
    let mut argmin = r;
    for (i, &v) in s.iter().enumerate().skip(r + 1) {
        if v < min {
            min = v;
            argmin = i;
        }
    }
    let max = s[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    MinStats { min, argmin, max }
}

/// Weak ladder epochs and heights of one path. The zeroth ladder point
/// `(τ_0, H_0) = (0, 0)` is implicit and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderStats {
    pub weak_desc_epochs: Vec<usize>,
    pub weak_desc_heights: Vec<f64>,
    pub weak_asc_epochs: Vec<usize>,
    pub weak_asc_heights: Vec<f64>,
    /// Fraction of ladder steps (both directions) with zero height gain.
    pub zeta_estimate: f64,
}

fn strict_filter(epochs: &[usize], heights: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut last = 0.0;
    let mut out = (Vec::new(), Vec::new());
    for (&e, &h) in epochs.iter().zip(heights) {
        if h > last {
            out.0.push(e);
            out.1.push(h);
            last = h;
        }
    }
    out
}

impl LadderStats {
    pub fn strict_desc(&self) -> (Vec<usize>, Vec<f64>) {
        strict_filter(&self.weak_desc_epochs, &self.weak_desc_heights)
    }

    pub fn strict_asc(&self) -> (Vec<usize>, Vec<f64>) {
        strict_filter(&self.weak_asc_epochs, &self.weak_asc_heights)
    }
}

pub fn ladder_decompose(path: &WalkPath) -> Result<LadderStats> {
    if path.n() == 0 {
        return Err(Error::InvalidParameter("ladder decomposition needs n ≥ 1".into()));
    }
    let s = path.prefix();
    let mut out = LadderStats {
        weak_desc_epochs: Vec::new(),
        weak_desc_heights: Vec::new(),
        weak_asc_epochs: Vec::new(),
        weak_asc_heights: Vec::new(),
        zeta_estimate: 0.0,
    };
    let (mut lo, mut hi) = (0.0, 0.0);
    let (mut steps, mut ties) = (0usize, 0usize);
    for (i, &v) in s.iter().enumerate().skip(1) {
        if v <= lo {
            steps += 1;
            ties += usize::from(v == lo);
            lo = v;
            out.weak_desc_epochs.push(i);
            out.weak_desc_heights.push(-v);
        }
        if v >= hi {
            steps += 1;
            ties += usize::from(v == hi);
            hi = v;
            out.weak_asc_epochs.push(i);
            out.weak_asc_heights.push(v);
        }
    }
    if steps > 0 {
        out.zeta_estimate = ties as f64 / steps as f64;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderKind {
    WeakAscending,
    StrictAscending,
    WeakDescending,
    StrictDescending,
}

impl LadderKind {
    fn tag(self) -> u64 {
        match self {
            LadderKind::WeakAscending => 1,
            LadderKind::StrictAscending => 2,
            LadderKind::WeakDescending => 3,
            LadderKind::StrictDescending => 4,
        }
    }

    #[inline]
    fn reached(self, s: f64) -> bool {
        match self {
            LadderKind::WeakAscending => s >= 0.0,
            LadderKind::StrictAscending => s > 0.0,
            LadderKind::WeakDescending => s <= 0.0,
            LadderKind::StrictDescending => s < 0.0,
        }
    }

    fn sign(self) -> f64 {
        match self {
            LadderKind::WeakAscending | LadderKind::StrictAscending => 1.0,
            _ => -1.0,
        }
    }
}

/// First ladder epoch and height, or `None` if not reached within `cap` steps.
pub fn first_ladder<R: Rng + ?Sized>(law: &IncrementLaw, kind: LadderKind, cap: u64, rng: &mut R) -> Option<(u64, f64)> {
    let mut s = 0.0;
    for step in 1..=cap {
        s += law.sample(rng);
        if kind.reached(s) {
            return Some((step, kind.sign() * s));
        }
    }
    None
}

/// I.i.d. first-ladder samples. Walks that do not reach the ladder within
/// the cap are excluded from `epochs`/`heights` and counted in `truncated`.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderSample {
    pub kind: LadderKind,
    pub epochs: Vec<u64>,
    pub heights: Vec<f64>,
    pub truncated: u64,
    pub cap: u64,
}

impl LadderSample {
    pub fn total(&self) -> u64 {
        self.epochs.len() as u64 + self.truncated
    }

    /// `P(τ_1 > m)` for `m < cap`; truncated walks count as exceeding.
    pub fn epoch_tail(&self, m: u64) -> f64 {
        let above = self.epochs.iter().filter(|&&e| e > m).count() as u64 + self.truncated;
        above as f64 / self.total() as f64
    }

    /// Fraction of zero heights, an estimate of `ζ`.
    pub fn zeta(&self) -> f64 {
        if self.heights.is_empty() {
            return 0.0;
        }
        self.heights.iter().filter(|&&h| h == 0.0).count() as f64 / self.heights.len() as f64
    }
}

pub fn sample_first_ladders(law: &IncrementLaw, kind: LadderKind, count: u64, cap: u64, seed: u64) -> LadderSample {
    let chunks = count.div_ceil(CHUNK);
    let parts: Vec<(Vec<u64>, Vec<f64>, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, stream::LADDER, (kind.tag() << 48) | c);
            let todo = CHUNK.min(count - c * CHUNK);
            let mut part = (Vec::with_capacity(todo as usize), Vec::with_capacity(todo as usize), 0);
            for _ in 0..todo {
                match first_ladder(law, kind, cap, &mut rng) {
                    Some((e, h)) => {
                        part.0.push(e);
                        part.1.push(h);
                    }
                    None => part.2 += 1,
                }
            }
            part
        })
        .collect();
    let mut out = LadderSample {
        kind,
        epochs: Vec::with_capacity(count as usize),
        heights: Vec::with_capacity(count as usize),
        truncated: 0,
        cap,
    };
    for (e, h, t) in parts {
        out.epochs.extend(e);
        out.heights.extend(h);
        out.truncated += t;
    }
    out
}

/// Log-log fit of `P(τ_1 > m)` over 20 geometric abscissae in `[m_lo, m_hi]`.
/// The returned exponent is the decay rate (positive for a decaying tail).
pub fn ladder_epoch_tail_fit(sample: &LadderSample, m_lo: u64, m_hi: u64) -> Result<TailFit> {
    if m_hi >= sample.cap {
        return Err(Error::InvalidParameter(format!(
            "tail abscissa {m_hi} must stay below the cap {}",
            sample.cap
        )));
    }
    let xs = crate::stats::geometric_grid(m_lo as f64, m_hi as f64, 20);
    let ys: Vec<f64> = xs.iter().map(|&m| sample.epoch_tail(m as u64)).collect();
    let fit = tail_index_fit(&xs, &ys)?;
    Ok(TailFit {
        exponent: -fit.exponent,
        ..fit
    })
}

/// Renewal functions `V±(x) = Σ_{k≥0} P(H_k^± ≤ x)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalTable {
    pub grid: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    pub zeta: f64,
    /// Ladder heights consumed (both directions).
    pub n_ladder_samples: u64,
    /// Ladder walks dropped at the epoch cap.
    pub n_truncated: u64,
}

/// Minimum number of complete renewal sequences per direction.
pub const MIN_RENEWAL_SEQUENCES: usize = 1000;

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid[0] != 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("renewal grid must start at 0 and increase".into()));
    }
    Ok(())
}

// mean number of partial sums (H_0 = 0 included) at or below each grid point
fn renewal_counts<'a>(sequences: impl Iterator<Item = &'a [f64]>, grid: &[f64]) -> (Vec<f64>, usize) {
    let top = *grid.last().expect("nonempty grid");
    let mut hits = vec![0u64; grid.len()];
    let mut n_seq = 0usize;
    for seq in sequences {
        n_seq += 1;
        let mut h = 0.0;
        hits[0] += 1;
        for &step in seq {
            h += step;
            if h > top {
                break;
            }
            hits[grid.partition_point(|&g| g < h)] += 1;
        }
    }
    let mut acc = 0u64;
    let v = hits
        .iter()
        .map(|&c| {
            acc += c;
            acc as f64 / n_seq.max(1) as f64
        })
        .collect();
    (v, n_seq)
}

// split a pool of i.i.d. heights into consecutive renewal sequences, each
// ending with the first step that overshoots `top`; the incomplete tail is
// dropped
fn chain_pool(pool: &[f64], top: f64) -> Vec<&[f64]> {
    let mut out = Vec::new();
    let (mut start, mut h) = (0usize, 0.0);
    for (i, &step) in pool.iter().enumerate() {
        h += step;
        if h > top {
            out.push(&pool[start..=i]);
            start = i + 1;
            h = 0.0;
        }
    }
    out
}

/// Renewal table from pools of i.i.d. first weak ladder heights, chained
/// into renewal sequences that stop once they overshoot the grid.
pub fn estimate_renewal(plus_heights: &[f64], minus_heights: &[f64], grid: &[f64]) -> Result<RenewalTable> {
    check_grid(grid)?;
    let top = *grid.last().unwrap();
    let plus = chain_pool(plus_heights, top);
    let minus = chain_pool(minus_heights, top);
    let got = plus.len().min(minus.len());
    if got < MIN_RENEWAL_SEQUENCES {
        return Err(Error::InsufficientSamples {
            needed: MIN_RENEWAL_SEQUENCES,
            got,
        });
    }
    let (v_plus, _) = renewal_counts(plus.into_iter(), grid);
    let (v_minus, _) = renewal_counts(minus.into_iter(), grid);
    let zeros = plus_heights.iter().chain(minus_heights).filter(|&&h| h == 0.0).count();
    let total = plus_heights.len() + minus_heights.len();
    Ok(RenewalTable {
        grid: grid.to_vec(),
        v_plus,
        v_minus,
        zeta: zeros as f64 / total as f64,
        n_ladder_samples: total as u64,
        n_truncated: 0,
    })
}

/// Settings for simulating a renewal table directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenewalConfig {
    pub sequences: usize,
    /// Step cap for a single ladder epoch.
    pub epoch_cap: u64,
    /// Build from strict instead of weak ladder heights.
    pub strict: bool,
}

impl Default for RenewalConfig {
    fn default() -> Self {
        Self {
            sequences: 4000,
            epoch_cap: 100_000,
            strict: false,
        }
    }
}

fn simulate_sequences(
    law: &IncrementLaw,
    kind: LadderKind,
    top: f64,
    cfg: &RenewalConfig,
    seed: u64,
) -> Vec<(Vec<f64>, u64)> {
    (0..cfg.sequences as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, stream::LADDER, (kind.tag() << 48) | (1 << 40) | i);
            let mut seq = Vec::new();
            let mut truncated = 0;
            let mut h = 0.0;
            while h <= top {
                match first_ladder(law, kind, cfg.epoch_cap, &mut rng) {
                    Some((_, step)) => {
                        h += step;
                        seq.push(step);
                    }
                    None => truncated += 1,
                }
            }
            (seq, truncated)
        })
        .collect()
}

impl RenewalTable {
    /// Simulate `cfg.sequences` independent renewal sequences per direction.
    pub fn simulate(law: &IncrementLaw, grid: &[f64], cfg: &RenewalConfig, seed: u64) -> Result<Self> {
        check_grid(grid)?;
        if cfg.sequences < MIN_RENEWAL_SEQUENCES {
            return Err(Error::InsufficientSamples {
                needed: MIN_RENEWAL_SEQUENCES,
                got: cfg.sequences,
            });
        }
        let top = *grid.last().unwrap();
        let (up, down) = if cfg.strict {
            (LadderKind::StrictAscending, LadderKind::StrictDescending)
        } else {
            (LadderKind::WeakAscending, LadderKind::WeakDescending)
        };
        let plus = simulate_sequences(law, up, top, cfg, seed);
        let minus = simulate_sequences(law, down, top, cfg, seed);
        let (v_plus, _) = renewal_counts(plus.iter().map(|(s, _)| s.as_slice()), grid);
        let (v_minus, _) = renewal_counts(minus.iter().map(|(s, _)| s.as_slice()), grid);
        let all = plus.iter().chain(&minus);
        let (mut total, mut zeros, mut truncated) = (0u64, 0u64, 0u64);
        for (seq, t) in all {
            total += seq.len() as u64;
            zeros += seq.iter().filter(|&&h| h == 0.0).count() as u64;
            truncated += t;
        }
        Ok(Self {
            grid: grid.to_vec(),
            v_plus,
            v_minus,
            zeta: zeros as f64 / total.max(1) as f64,
            n_ladder_samples: total,
            n_truncated: truncated,
        })
    }

    pub fn max_x(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    fn lookup(&self, column: &[f64], x: f64) -> Result<f64> {
        if x < 0.0 {
            return Ok(0.0);
        }
        if !(x <= self.max_x()) {
            return Err(Error::TableRange {
                value: x,
                lo: 0.0,
                hi: self.max_x(),
            });
        }
        Ok(quad::interpolate(&self.grid, column, x).expect("inside grid"))
    }

    pub fn v_plus_at(&self, x: f64) -> Result<f64> {
        self.lookup(&self.v_plus, x)
    }

    pub fn v_minus_at(&self, x: f64) -> Result<f64> {
        self.lookup(&self.v_minus, x)
    }

    /// `∫_0^x V⁺(u) du` by the trapezoid rule on the table.
    pub fn integral_v_plus(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        let end = self.v_plus_at(x)?;
        let k = self.grid.partition_point(|&g| g < x);
        let mut xs = self.grid[..k].to_vec();
        let mut ys = self.v_plus[..k].to_vec();
        xs.push(x);
        ys.push(end);
        Ok(quad::trapezoid(&xs, &ys))
    }

    pub const CSV_HEADER: &'static str = "grid,v_plus,v_minus,zeta,n_samples";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for i in 0..self.grid.len() {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{}",
                self.grid[i], self.v_plus[i], self.v_minus[i], self.zeta, self.n_ladder_samples
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, source: Option<&Path>) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: source.map(Path::to_path_buf),
            line,
            msg,
        };
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != Self::CSV_HEADER {
            return Err(perr(1, format!("expected header `{}`", Self::CSV_HEADER)));
        }
        let mut t = RenewalTable {
            grid: Vec::new(),
            v_plus: Vec::new(),
            v_minus: Vec::new(),
            zeta: 0.0,
            n_ladder_samples: 0,
            n_truncated: 0,
        };
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(perr(i + 2, format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| perr(i + 2, format!("{s}: {e}")));
            t.grid.push(num(f[0])?);
            t.v_plus.push(num(f[1])?);
            t.v_minus.push(num(f[2])?);
            t.zeta = num(f[3])?;
            t.n_ladder_samples = f[4]
                .trim()
                .parse()
                .map_err(|e| perr(i + 2, format!("{}: {e}", f[4])))?;
        }
        check_grid(&t.grid).map_err(|e| perr(0, e.to_string()))?;
        Ok(t)
    }
}

/// `(αρ+1) ∫_0^x V⁺ / (x V⁺(x))`.
pub fn asympv_ratio(table: &RenewalTable, alpha_rho: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!("x = {x} must be positive")));
    }
    let v = table.v_plus_at(x)?;
    Ok((alpha_rho + 1.0) * table.integral_v_plus(x)? / (x * v))
}

/// A path started at `start`; positions are `start + prefix`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedWalk {
    pub start: f64,
    pub path: WalkPath,
}

impl ConditionedWalk {
    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.path.prefix().iter().map(move |s| self.start + s)
    }

    pub fn end(&self) -> f64 {
        self.start + self.path.endpoint()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionMethod {
    /// Whole-path rejection: keep walks with `L_n ≥ 0`, then accept with
    /// probability `V⁻(S_n) / V⁻(grid max)`.
    Rejection { max_trials: u64 },
    /// Step-by-step Doob transform with per-step exact rejection.
    HTransform,
}

/// Sampler for `P_x^+` restricted to `n` steps, driven by a renewal table.
#[derive(Debug, Clone)]
pub struct PositiveSampler<'a> {
    law: IncrementLaw,
    table: &'a RenewalTable,
    cut: f64,
    p_above_cut: f64,
    v_max: f64,
}

/// Proposals per step before the h-transform gives up.
const MAX_STEP_PROPOSALS: u64 = 10_000_000;

impl<'a> PositiveSampler<'a> {
    pub fn new(law: &IncrementLaw, table: &'a RenewalTable) -> Result<Self> {
        // the envelope splits the increment law at `cut`; only the small
        // mass above it pays the full-table bound
        let cut = match law {
            IncrementLaw::Stable(spec) => bisect_tail(spec, 1e-4)?,
            IncrementLaw::TwoPoint { high, .. } => *high,
        };
        Ok(Self {
            law: *law,
            table,
            cut,
            p_above_cut: law.upper_tail(cut)?,
            v_max: *table.v_minus.last().unwrap(),
        })
    }

    fn step<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        let top = self.table.max_x();
        let v_lo = self.table.v_minus_at((x + self.cut).min(top))?;
        let w_lo = (1.0 - self.p_above_cut) * v_lo;
        let w_hi = self.p_above_cut * self.v_max;
        for _ in 0..MAX_STEP_PROPOSALS {
            let upper = rng.random::<f64>() * (w_lo + w_hi) >= w_lo;
            let (bound, dx) = loop {
                let dx = self.law.sample(rng);
                if (dx > self.cut) == upper {
                    break (if upper { self.v_max } else { v_lo }, dx);
                }
            };
            let y = x + dx;
            if y < 0.0 {
                continue;
            }
            let v = self.table.v_minus_at(y)?;
            if rng.random::<f64>() * bound < v {
                return Ok(dx);
            }
        }
        Err(Error::InsufficientAcceptance {
            accepted: 0,
            trials: MAX_STEP_PROPOSALS,
            needed: 1,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, x0: f64, method: ConditionMethod, rng: &mut R) -> Result<ConditionedWalk> {
        if n == 0 {
            return Err(Error::InvalidParameter("conditioned walk needs n ≥ 1".into()));
        }
        if !(x0 >= 0.0) {
            return Err(Error::InvalidParameter(format!("start {x0} must be nonnegative")));
        }
        match method {
            ConditionMethod::HTransform => {
                let mut inc = Vec::with_capacity(n);
                let mut x = x0;
                for _ in 0..n {
                    let dx = self.step(x, rng)?;
                    x += dx;
                    inc.push(dx);
                }
                Ok(ConditionedWalk {
                    start: x0,
                    path: WalkPath::from_increments(inc),
                })
            }
            ConditionMethod::Rejection { max_trials } => {
                let mut inc = Vec::with_capacity(n);
                'trial: for _ in 0..max_trials {
                    inc.clear();
                    let mut x = x0;
                    for _ in 0..n {
                        let dx = self.law.sample(rng);
                        x += dx;
                        if x < 0.0 {
                            continue 'trial;
                        }
                        inc.push(dx);
                    }
                    let v = self.table.v_minus_at(x)?;
                    if rng.random::<f64>() * self.v_max < v {
                        return Ok(ConditionedWalk {
                            start: x0,
                            path: WalkPath::from_increments(inc),
                        });
                    }
                }
                Err(Error::InsufficientAcceptance {
                    accepted: 0,
                    trials: max_trials,
                    needed: 1,
                })
            }
        }
    }
}

// smallest x with P(X > x) ≤ level, to bisection accuracy
fn bisect_tail(spec: &StableSpec, level: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, 1.0);
    while crate::stable::stable_upper_tail(spec, hi)? > level {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Quadrature("tail quantile search diverged".into()));
        }
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if crate::stable::stable_upper_tail(spec, mid)? > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `conditioned_sample_positive`.
pub fn conditioned_sample_positive<R: Rng + ?Sized>(
    law: &IncrementLaw,
    n: usize,
    x0: f64,
    table: &RenewalTable,
    method: ConditionMethod,
    rng: &mut R,
) -> Result<ConditionedWalk> {
    PositiveSampler::new(law, table)?.sample(n, x0, method, rng)
}

/// Monte Carlo estimate of `P(S_n ≤ x, L_n ≥ 0)` next to its asymptotic
/// form `g(0) V⁻(0) b_n ∫_0^x V⁺`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventB {
    pub estimate: Estimate,
    pub prediction: f64,
    pub hits: u64,
    pub trials: u64,
}

impl EventB {
    pub fn ratio(&self) -> Estimate {
        ratio_estimate(&self.estimate, &Estimate::exact(self.prediction))
    }
}

/// Count of walks with `L_n ≥ 0` and `S_n ≤ x`, stopping each walk at its
/// first negative value.
pub fn count_event_b(law: &IncrementLaw, x: f64, n: usize, n_trials: u64, seed: u64) -> u64 {
    if x < 0.0 {
        return 0;
    }
    let chunks = n_trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, stream::WALK, c);
            let todo = CHUNK.min(n_trials - c * CHUNK);
            let mut hits = 0u64;
            'trial: for _ in 0..todo {
                let mut s = 0.0;
                for _ in 0..n {
                    s += law.sample(&mut rng);
                    if s < 0.0 {
                        continue 'trial;
                    }
                }
                hits += u64::from(s <= x);
            }
            hits
        })
        .sum()
}

pub fn event_b_probability(
    spec: &StableSpec,
    table: &RenewalTable,
    x: f64,
    n: usize,
    n_trials: u64,
    seed: u64,
) -> Result<EventB> {
    if n == 0 || n_trials == 0 {
        return Err(Error::InvalidParameter("n and n_trials must be positive".into()));
    }
    if x < 0.0 {
        return Ok(EventB {
            estimate: Estimate::exact(0.0),
            prediction: 0.0,
            hits: 0,
            trials: n_trials,
        });
    }
    let prediction = stable_density(spec, 0.0)? * table.v_minus_at(0.0)? * b_n(spec, n) * table.integral_v_plus(x)?;
    let hits = count_event_b(&IncrementLaw::Stable(*spec), x, n, n_trials, seed);
    Ok(EventB {
        estimate: proportion_estimate(hits, n_trials),
        prediction,
        hits,
        trials: n_trials,
    })
}

/// `b_n = 1 / (n a_n)`.
pub fn b_n(spec: &StableSpec, n: usize) -> f64 {
    1.0 / (n as f64 * spec.norming(n as u64))
}

/// `E[e^{S_j}; M_j < 0]` for each `j` in `js`, from walks stopped at their
/// first nonnegative value (they contribute nothing afterwards).
pub fn exp_funct_profile(law: &IncrementLaw, js: &[usize], n_paths: u64, seed: u64) -> Result<Vec<Estimate>> {
    if js.is_empty() || js.windows(2).any(|w| w[1] <= w[0]) || js[0] == 0 {
        return Err(Error::InvalidParameter("abscissae must be positive and increasing".into()));
    }
    let horizon = *js.last().unwrap();
    let chunks = n_paths.div_ceil(CHUNK);
    let sums: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, stream::AUX, c);
            let todo = CHUNK.min(n_paths - c * CHUNK);
            let mut s1 = vec![0.0; js.len()];
            let mut s2 = vec![0.0; js.len()];
            for _ in 0..todo {
                let mut s = 0.0;
                let mut next = 0;
                for step in 1..=horizon {
                    s += law.sample(&mut rng);
                    if s >= 0.0 {
                        break;
                    }
                    if step == js[next] {
                        let v = s.exp();
                        s1[next] += v;
                        s2[next] += v * v;
                        next += 1;
                    }
                }
            }
            (s1, s2)
        })
        .collect();
    let nf = n_paths as f64;
    Ok((0..js.len())
        .map(|i| {
            let (a, b) = sums.iter().fold((0.0, 0.0), |acc, (s1, s2)| (acc.0 + s1[i], acc.1 + s2[i]));
            let mean = a / nf;
            let var = (b / nf - mean * mean).max(0.0);
            let h = Z99 * (var / nf).sqrt();
            Estimate {
                value: mean,
                ci_low: (mean - h).max(0.0),
                ci_high: mean + h,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn path(prefix: &[f64]) -> WalkPath {
        WalkPath::from_increments(prefix.windows(2).map(|w| w[1] - w[0]).collect())
    }

    fn normal() -> IncrementLaw {
        IncrementLaw::Stable(StableSpec::standard_normal())
    }

    #[test]
    fn empty_walk() {
        let mut rng = SimRng::seed_from_u64(1);
        let w = simulate_walk(&normal(), 0, &mut rng);
        assert_eq!(w.prefix(), &[0.0]);
        let m = min_stats(&w, 0).unwrap();
        assert_eq!((m.min, m.argmin), (0.0, 0));
        assert_eq!(m.max, f64::NEG_INFINITY);
    }

    #[test]
    fn min_stats_examples() {
        let w = path(&[0.0, 1.0, -0.5, 2.0]);
        let m = min_stats(&w, 0).unwrap();
        assert_eq!((m.min, m.argmin, m.max), (-0.5, 2, 2.0));
        let m = min_stats(&w, 3).unwrap();
        assert_eq!((m.min, m.argmin), (2.0, 3));
        let w = path(&[0.0, 1.0, 2.0, 3.5]);
        let m = min_stats(&w, 0).unwrap();
        assert_eq!((m.min, m.argmin), (0.0, 0));
        assert!(min_stats(&w, 4).is_err());
        // ties resolve to the first index
        let w = path(&[0.0, -1.0, 0.0, -1.0]);
        assert_eq!(min_stats(&w, 0).unwrap().argmin, 1);
    }

    #[test]
    fn ladder_examples() {
        let l = ladder_decompose(&path(&[0.0, -1.0, -0.5, -2.0])).unwrap();
        assert_eq!(l.weak_desc_epochs, vec![1, 3]);
        assert_eq!(l.weak_desc_heights, vec![1.0, 2.0]);
        assert!(l.weak_asc_epochs.is_empty());
        let l = ladder_decompose(&path(&[0.0, 1.0, 2.0, 3.0])).unwrap();
        assert!(l.weak_desc_epochs.is_empty());
        assert_eq!(l.weak_asc_epochs, vec![1, 2, 3]);
        let l = ladder_decompose(&path(&[0.0, 1.0, 0.0, 1.0, 2.0])).unwrap();
        assert_eq!(l.weak_asc_epochs, vec![1, 3, 4]);
        assert_eq!(l.strict_asc().0, vec![1, 4]);
        assert_eq!(l.weak_desc_epochs, vec![2]);
        assert!(l.strict_desc().0.is_empty());
        assert!(l.zeta_estimate > 0.0);
        assert!(ladder_decompose(&path(&[0.0])).is_err());
    }

    #[test]
    fn continuous_law_has_no_ties() {
        let s = sample_first_ladders(&normal(), LadderKind::WeakAscending, 100_000, 10_000, 3);
        assert_eq!(s.zeta(), 0.0);
        assert_eq!(s.total(), 100_000);
    }

    #[test]
    fn simple_walk_renewal_is_exact() {
        // ±1 steps: ζ = 1/2, weak V(x) = 2(⌊x⌋+1), strict V̂(x) = ⌊x⌋+1
        let law = IncrementLaw::two_point(-1.0, 1.0, 0.5).unwrap();
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let cfg = RenewalConfig {
            sequences: 4000,
            epoch_cap: 1 << 20,
            strict: false,
        };
        let weak = RenewalTable::simulate(&law, &grid, &cfg, 5).unwrap();
        let strict = RenewalTable::simulate(&law, &grid, &RenewalConfig { strict: true, ..cfg }, 5).unwrap();
        assert!((weak.zeta - 0.5).abs() < 0.01, "zeta {}", weak.zeta);
        for (i, &x) in grid.iter().enumerate() {
            let exact = x.floor() + 1.0;
            assert_eq!(strict.v_plus[i], exact);
            assert!((weak.v_plus[i] / (2.0 * exact) - 1.0).abs() < 0.03, "x={x}");
            assert!((weak.v_plus[i] * (1.0 - weak.zeta) / strict.v_plus[i] - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn renewal_from_pool() {
        let pool = vec![1.0; 5000];
        let grid = [0.0, 0.5, 1.0, 2.0, 3.0];
        let t = estimate_renewal(&pool, &pool, &grid).unwrap();
        assert_eq!(t.v_plus, vec![1.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            estimate_renewal(&pool[..100], &pool, &grid),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(estimate_renewal(&pool, &pool, &[0.5, 1.0]).is_err());
    }

    #[test]
    fn renewal_csv_round_trip() {
        let pool: Vec<f64> = (0..30_000).map(|i| 0.3 + (i % 7) as f64 * 0.1).collect();
        let grid: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        let t = estimate_renewal(&pool, &pool, &grid).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = RenewalTable::read_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back.grid, t.grid);
        assert_eq!(back.v_plus, t.v_plus);
        assert_eq!(back.v_minus, t.v_minus);
        assert_eq!(back.n_ladder_samples, t.n_ladder_samples);
        let bad = "grid,v_plus\n0,1\n";
        assert!(matches!(RenewalTable::read_csv(bad.as_bytes(), None), Err(Error::Parse { .. })));
    }

    #[test]
    fn asympv_ratio_linear_renewal() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let t = RenewalTable {
            v_plus: grid.clone(),
            v_minus: grid.clone(),
            grid: grid.clone(),
            zeta: 0.0,
            n_ladder_samples: 0,
            n_truncated: 0,
        };
        for &x in &[0.35, 1.0, 7.77, 10.0] {
            assert!((asympv_ratio(&t, 1.0, x).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(asympv_ratio(&t, 1.0, 10.5), Err(Error::TableRange { .. })));
        assert!(asympv_ratio(&t, 1.0, 1e-3).unwrap().is_finite());
    }

    #[test]
    fn event_b_trivial_cases() {
        let spec = StableSpec::standard_normal();
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
        let t = RenewalTable::simulate(&IncrementLaw::Stable(spec), &grid, &RenewalConfig::default(), 8).unwrap();
        let e = event_b_probability(&spec, &t, -0.1, 10, 1000, 1).unwrap();
        assert_eq!(e.estimate.value, 0.0);
        let e = event_b_probability(&spec, &t, 2.0, 1, 200_000, 2).unwrap();
        let exact = crate::stats::normal_cdf(2.0) - 0.5;
        assert!(e.estimate.ci_low <= exact && exact <= e.estimate.ci_high);
    }

    #[test]
    fn conditioned_paths_stay_nonnegative() {
        let law = normal();
        let grid: Vec<f64> = (0..=400).map(|i| i as f64 * 0.25).collect();
        let t = RenewalTable::simulate(&law, &grid, &RenewalConfig::default(), 9).unwrap();
        let mut rng = SimRng::seed_from_u64(4);
        for method in [ConditionMethod::HTransform, ConditionMethod::Rejection { max_trials: 1 << 24 }] {
            for _ in 0..50 {
                let w = conditioned_sample_positive(&law, 100, 0.0, &t, method, &mut rng).unwrap();
                assert!(w.positions().all(|x| x >= 0.0));
                assert_eq!(w.path.n(), 100);
            }
        }
        assert!(matches!(
            conditioned_sample_positive(&law, 100, 0.0, &t, ConditionMethod::Rejection { max_trials: 1 }, &mut rng),
            Err(Error::InsufficientAcceptance { .. }) | Ok(_)
        ));
    }

    #[test]
    fn one_step_law_is_tilted_increment() {
        // n = 1: density ∝ φ(x) V⁻(x) on x ≥ 0; compare means against quadrature
        let law = normal();
        let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.1).collect();
        let t = RenewalTable::simulate(&law, &grid, &RenewalConfig::default(), 10).unwrap();
        let phi = |x: f64| (-0.5 * x * x).exp();
        let cfg = quad::QuadConfig::with_tol(1e-10, 1e-10);
        let num = quad::integrate(|x| x * phi(x) * t.v_minus_at(x).unwrap(), 0.0, 12.0, cfg).unwrap().value;
        let den = quad::integrate(|x| phi(x) * t.v_minus_at(x).unwrap(), 0.0, 12.0, cfg).unwrap().value;
        let exact = num / den;
        let sampler = PositiveSampler::new(&law, &t).unwrap();
        let mut rng = SimRng::seed_from_u64(12);
        for method in [ConditionMethod::HTransform, ConditionMethod::Rejection { max_trials: 1 << 20 }] {
            let m = 100_000;
            let xs: Vec<f64> = (0..m).map(|_| sampler.sample(1, 0.0, method, &mut rng).unwrap().end()).collect();
            let e = crate::stats::mean_estimate(&xs).unwrap();
            assert!(e.ci_low - 0.002 <= exact && exact <= e.ci_high + 0.002, "{method:?}: {e:?} vs {exact}");
        }
    }

    #[test]
    fn exp_funct_first_step() {
        // j = 1: E[e^X; X < 0] = e^{1/2} Φ(-1) for a standard normal X
        let est = exp_funct_profile(&normal(), &[1, 2], 400_000, 3).unwrap();
        let exact = 0.5f64.exp() * crate::stats::normal_cdf(-1.0);
        assert!(est[0].ci_low <= exact && exact <= est[0].ci_high, "{:?} vs {exact}", est[0]);
        assert!(est[1].value < est[0].value);
        assert!(exp_funct_profile(&normal(), &[3, 2], 10, 1).is_err());
    }

    proptest! {
        #[test]
        fn prefix_matches_increments(xs in prop::collection::vec(-5.0f64..5.0, 0..60)) {
            let w = WalkPath::from_increments(xs.clone());
            prop_assert_eq!(w.prefix()[0], 0.0);
            let mut s = 0.0;
            for i in 1..=xs.len() {
                prop_assert!((w.prefix()[i] - w.prefix()[i - 1] - xs[i - 1]).abs() <= 1e-12);
                s += xs[i - 1];
            }
            prop_assert_eq!(w.endpoint(), s);
        }

        #[test]
        fn ladder_heights_monotone(xs in prop::collection::vec(-3.0f64..3.0, 1..80)) {
            let l = ladder_decompose(&WalkPath::from_increments(xs)).unwrap();
            for v in [&l.weak_asc_heights, &l.weak_desc_heights] {
                prop_assert!(v.windows(2).all(|w| w[1] >= w[0]));
                prop_assert!(v.iter().all(|&h| h >= 0.0));
            }
            for e in [&l.weak_asc_epochs, &l.weak_desc_epochs] {
                prop_assert!(e.windows(2).all(|w| w[1] > w[0]));
            }
        }
    }
}
