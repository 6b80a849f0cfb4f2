//! Strictly stable laws: sampling, density inversion, positivity, norming,
//! path ensembles for running-minimum functionals, and meander estimation.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quad::{self, QuadConfig};
use crate::rng::{rng_for, stream};

/// Law of the increments: characteristic function
/// `exp{-c|w|^α (1 - iβ sign(w) tan(πα/2))}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableSpec {
    alpha: f64,
    beta: f64,
    c: f64,
    rho: f64,
    // β·tan(πα/2), zero for the symmetric cases
    skew: f64,
    // Chambers-Mallows-Stuck constants
    cms_shift: f64,
    cms_factor: f64,
    scale: f64,
}

impl StableSpec {
    pub fn new(alpha: f64, beta: f64, c: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite stable parameter".into()));
        }
        let admissible = (alpha > 0.0 && alpha < 2.0 && alpha != 1.0 && beta.abs() < 1.0)
            || (alpha == 1.0 && beta == 0.0)
            || (alpha == 2.0 && beta == 0.0);
        if !admissible {
            return Err(Error::InvalidParameter(format!(
                "(alpha, beta) = ({alpha}, {beta}) outside the admissible set"
            )));
        }
        if c <= 0.0 {
            return Err(Error::InvalidParameter(format!("scale c = {c} must be positive")));
        }
        let skew = if beta == 0.0 { 0.0 } else { beta * (FRAC_PI_2 * alpha).tan() };
        let cms_shift = skew.atan() / alpha;
        let cms_factor = (1.0 + skew * skew).powf(0.5 / alpha);
        let mut spec = Self {
            alpha,
            beta,
            c,
            rho: 0.5,
            skew,
            cms_shift,
            cms_factor,
            scale: c.powf(1.0 / alpha),
        };
        spec.rho = positivity_rho(&spec)?;
        Ok(spec)
    }

    /// Scale convention: `c = 1/2` for α = 2 (standard normal), `c = 1` otherwise.
    pub fn preset(alpha: f64, beta: f64) -> Result<Self> {
        let c = if alpha == 2.0 { 0.5 } else { 1.0 };
        Self::new(alpha, beta, c)
    }

    pub fn standard_normal() -> Self {
        Self::new(2.0, 0.0, 0.5).expect("gaussian preset is admissible")
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn alpha_rho(&self) -> f64 {
        self.alpha * self.rho
    }
    /// `α(1 - ρ)`, the regular-variation index of `V⁻`.
    pub fn alpha_one_minus_rho(&self) -> f64 {
        self.alpha * (1.0 - self.rho)
    }
    pub fn is_gaussian(&self) -> bool {
        self.alpha == 2.0
    }

    /// `G(w)` as `(re, im)`.
    pub fn char_fn(&self, w: f64) -> (f64, f64) {
        if w == 0.0 {
            return (1.0, 0.0);
        }
        let a = self.c * w.abs().powf(self.alpha);
        let modulus = (-a).exp();
        let phase = a * self.skew * w.signum();
        (modulus * phase.cos(), modulus * phase.sin())
    }

    /// One draw from the law (`sample_increment`).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.alpha == 2.0 {
            let z: f64 = rng.sample(StandardNormal);
            return (2.0 * self.c).sqrt() * z;
        }
        let v = PI * (rng.random::<f64>() - 0.5);
        if self.alpha == 1.0 {
            return self.c * v.tan();
        }
        let w: f64 = rng.sample(Exp1);
        let a = self.alpha;
        let t = a * (v + self.cms_shift);
        let x = self.cms_factor * t.sin() / v.cos().powf(1.0 / a)
            * ((v - t).cos() / w).powf((1.0 - a) / a);
        self.scale * x
    }

    pub fn norming(&self, n: u64) -> f64 {
        norming(self, n)
    }
}

/// `a_n = n^{1/α}` (slowly varying factor fixed to 1).
pub fn norming(spec: &StableSpec, n: u64) -> f64 {
    (n as f64).powf(1.0 / spec.alpha)
}

fn density_cutoff(spec: &StableSpec) -> f64 {
    // e^{-c W^α} < 1e-10 beyond the cutoff
    ((10.0 * std::f64::consts::LN_10) / spec.c).powf(1.0 / spec.alpha)
}

/// `g_{α,β}(x)` by Fourier inversion of the characteristic function.
pub fn stable_density(spec: &StableSpec, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Ok(0.0);
    }
    let w_max = density_cutoff(spec);
    // one panel per half period of the carrier keeps the oscillation resolved
    let pieces = ((w_max * x.abs().max(1.0)) / PI).ceil().clamp(4.0, 4096.0) as usize;
    let breaks: Vec<f64> = (0..=pieces).map(|i| w_max * i as f64 / pieces as f64).collect();
    let (alpha, c, skew) = (spec.alpha, spec.c, spec.skew);
    let integrand = |w: f64| {
        let a = c * w.powf(alpha);
        (-a).exp() * (w * x - a * skew).cos()
    };
    let cfg = QuadConfig {
        abs_tol: 1e-13,
        rel_tol: 1e-11,
        max_intervals: 512,
    };
    let r = quad::integrate_pieces(integrand, &breaks, cfg)?;
    Ok((r.value / PI).max(0.0))
}

/// `ρ = P(Y_1 > 0)`.
///
/// Integrates the density over the half-line on the Fourier side
/// (Gil-Pelaez), after substituting `u = c w^α` so the integrand is smooth.
pub fn positivity_rho(spec: &StableSpec) -> Result<f64> {
    if spec.skew == 0.0 {
        return Ok(0.5);
    }
    let s = spec.skew;
    let integrand = |u: f64| {
        if u == 0.0 {
            s
        } else {
            (-u).exp() * (s * u).sin() / u
        }
    };
    let r = quad::integrate(integrand, 0.0, 60.0, QuadConfig::with_tol(1e-13, 1e-12))?;
    let rho = 0.5 + r.value / (PI * spec.alpha);
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Quadrature(format!("positivity parameter {rho} outside (0,1)")));
    }
    Ok(rho)
}

/// `P(Y_1 > x)` by Gil-Pelaez inversion; the normal case uses `erfc`.
pub fn stable_upper_tail(spec: &StableSpec, x: f64) -> Result<f64> {
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    if x == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    if spec.is_gaussian() {
        return Ok(0.5 * libm::erfc(x / (2.0 * (spec.c).sqrt())));
    }
    if x == 0.0 {
        return Ok(spec.rho);
    }
    let w_max = density_cutoff(spec);
    let pieces = ((w_max * x.abs().max(1.0)) / PI).ceil().clamp(4.0, 4096.0) as usize;
    let breaks: Vec<f64> = (0..=pieces).map(|i| w_max * i as f64 / pieces as f64).collect();
    let (alpha, c, skew) = (spec.alpha, spec.c, spec.skew);
    let integrand = |w: f64| {
        let a = c * w.powf(alpha);
        (-a).exp() * (a * skew - w * x).sin() / w
    };
    let cfg = QuadConfig {
        abs_tol: 1e-12,
        rel_tol: 1e-10,
        max_intervals: 1024,
    };
    let r = quad::integrate_pieces(integrand, &breaks, cfg)?;
    Ok((0.5 + r.value / PI).clamp(0.0, 1.0))
}

/// Values `Y(j / grid_size)`, `j = 0..=grid_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct StablePath {
    pub grid_size: usize,
    pub values: Vec<f64>,
}

impl StablePath {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
    pub fn endpoint(&self) -> f64 {
        *self.values.last().expect("path has at least one value")
    }
}

pub fn sample_path<R: Rng + ?Sized>(spec: &StableSpec, grid_size: usize, rng: &mut R) -> Result<StablePath> {
    if grid_size == 0 {
        return Err(Error::InvalidParameter("grid_size must be positive".into()));
    }
    let h = (grid_size as f64).powf(-1.0 / spec.alpha);
    let mut values = Vec::with_capacity(grid_size + 1);
    let mut y = 0.0;
    values.push(0.0);
    for _ in 0..grid_size {
        y += h * spec.sample(rng);
        values.push(y);
    }
    Ok(StablePath { grid_size, values })
}

/// Running minimum over `[0, 1]` and endpoint of one path.
///
/// For α = 2 the minimum between grid points is drawn from the exact
/// Brownian-bridge minimum law, so the result carries no discretisation
/// bias. Otherwise the grid minimum is returned; its upward bias is of
/// order `grid_size^{-1/α}`.
pub fn sample_min_and_endpoint<R: Rng + ?Sized>(spec: &StableSpec, grid_size: usize, rng: &mut R) -> (f64, f64) {
    let h = (grid_size as f64).powf(-1.0 / spec.alpha);
    let mut y = 0.0_f64;
    let mut min = 0.0_f64;
    if spec.is_gaussian() {
        let var = 2.0 * spec.c / grid_size as f64;
        let sd = var.sqrt();
        // beyond five standard deviations the bridge cannot beat the running
        // minimum except with probability below e^{-50}
        let reach = 5.0 * sd;
        for _ in 0..grid_size {
            let z: f64 = rng.sample(StandardNormal);
            let next = y + sd * z;
            if y.min(next) - min < reach {
                let u: f64 = rng.random();
                let d = next - y;
                let bridge_min = 0.5 * (y + next - (d * d - 2.0 * var * (1.0 - u).ln()).sqrt());
                min = min.min(bridge_min);
            }
            y = next;
        }
    } else {
        for _ in 0..grid_size {
            y += h * spec.sample(rng);
            min = min.min(y);
        }
    }
    (min, y)
}

/// Empirical joint law of `(min_{[0,1]} Y, Y(1))` from independent paths,
/// sorted by the minimum for range queries.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub grid_size: usize,
    pub exact_minimum: bool,
    mins: Vec<f64>,
    ends: Vec<f64>,
}

impl PathEnsemble {
    /// `min_and_endpoint_sampler`.
    pub fn simulate(spec: &StableSpec, grid_size: usize, n_paths: usize, seed: u64) -> Result<Self> {
        if n_paths == 0 || grid_size == 0 {
            return Err(Error::InvalidParameter("n_paths and grid_size must be positive".into()));
        }
        let mut pairs: Vec<(f64, f64)> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_for(seed, stream::PATH, i as u64);
                sample_min_and_endpoint(spec, grid_size, &mut rng)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let (mins, ends) = pairs.into_iter().unzip();
        Ok(Self {
            grid_size,
            exact_minimum: spec.is_gaussian(),
            mins,
            ends,
        })
    }

    pub fn from_pairs(grid_size: usize, mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let (mins, ends) = pairs.into_iter().unzip();
        Self {
            grid_size,
            exact_minimum: false,
            mins,
            ends,
        }
    }

    pub fn len(&self) -> usize {
        self.mins.len()
    }
    pub fn is_empty(&self) -> bool {
        self.mins.is_empty()
    }
    pub fn mins(&self) -> &[f64] {
        &self.mins
    }
    pub fn ends(&self) -> &[f64] {
        &self.ends
    }

    /// `P(min ≤ z)`.
    pub fn prob_min_le(&self, z: f64) -> f64 {
        self.mins.partition_point(|&m| m <= z) as f64 / self.len() as f64
    }

    /// `P(lo ≤ min ≤ hi, Y(1) ≤ end_hi)`.
    pub fn joint_prob(&self, lo: f64, hi: f64, end_hi: f64) -> f64 {
        if hi < lo {
            return 0.0;
        }
        let start = self.mins.partition_point(|&m| m < lo);
        let stop = self.mins.partition_point(|&m| m <= hi);
        let count = self.ends[start..stop].iter().filter(|&&e| e <= end_hi).count();
        count as f64 / self.len() as f64
    }

    /// Smallest `w ≥ 0` on a coarse ladder with `P(min ≤ -w) < level`.
    pub fn min_tail_cut(&self, level: f64) -> f64 {
        let mut w: f64 = 0.0;
        let deepest = -self.mins.first().copied().unwrap_or(0.0);
        while w <= deepest && self.prob_min_le(-w) >= level {
            w += 0.05_f64.max(w * 0.05);
        }
        w
    }

    /// DKW half-width at confidence `1 - delta`.
    pub fn dkw_half_width(&self, delta: f64) -> f64 {
        crate::stats::dkw_half_width(self.len(), delta)
    }
}

/// Estimated time-1 density of the stable meander on a grid.
#[derive(Debug, Clone)]
pub struct MeanderTable {
    pub z: Vec<f64>,
    pub density: Vec<f64>,
    pub walk_len: usize,
    pub n_accepted: u64,
    pub n_trials: u64,
    /// fraction of accepted endpoints outside the grid cells
    pub outside_mass: f64,
    /// accepted normalised endpoints `S_L / a_L`, ascending
    pub samples: Vec<f64>,
}

impl MeanderTable {
    pub fn integral(&self) -> f64 {
        quad::trapezoid(&self.z, &self.density)
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.n_accepted as f64 / self.n_trials.max(1) as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeanderConfig {
    pub walk_len: usize,
    pub n_paths: usize,
    pub max_trials: u64,
    pub chunks: usize,
}

impl Default for MeanderConfig {
    fn default() -> Self {
        Self {
            walk_len: 10_000,
            n_paths: 100_000,
            max_trials: 2_000_000_000,
            chunks: 64,
        }
    }
}

/// Walks of length `walk_len` conditioned on `min_{j ≤ L} S_j ≥ 0` by
/// rejection with abort at the first negative value. Returns the accepted
/// `S_L / a_L` values (unsorted) and the number of trials used.
pub fn sample_meander_endpoints(spec: &StableSpec, cfg: &MeanderConfig, seed: u64) -> Result<(Vec<f64>, u64)> {
    if cfg.walk_len == 0 || cfg.n_paths == 0 {
        return Err(Error::InvalidParameter("walk_len and n_paths must be positive".into()));
    }
    let chunks = cfg.chunks.max(1).min(cfg.n_paths);
    let norm = norming(spec, cfg.walk_len as u64);
    let per_chunk_budget = cfg.max_trials / chunks as u64 + 1;
    let results: Vec<(Vec<f64>, u64)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let quota = cfg.n_paths / chunks + usize::from(chunk < cfg.n_paths % chunks);
            let mut rng = rng_for(seed, stream::MEANDER, chunk as u64);
            let mut out = Vec::with_capacity(quota);
            let mut trials = 0u64;
            while out.len() < quota && trials < per_chunk_budget {
                trials += 1;
                let mut s = 0.0;
                let mut alive = true;
                for _ in 0..cfg.walk_len {
                    s += spec.sample(&mut rng);
                    if s < 0.0 {
                        alive = false;
                        break;
                    }
                }
                if alive {
                    out.push(s / norm);
                }
            }
            (out, trials)
        })
        .collect();
    let trials: u64 = results.iter().map(|r| r.1).sum();
    let samples: Vec<f64> = results.into_iter().flat_map(|r| r.0).collect();
    if samples.len() < cfg.n_paths {
        return Err(Error::InsufficientAcceptance {
            accepted: samples.len() as u64,
            trials,
            needed: cfg.n_paths as u64,
        });
    }
    Ok((samples, trials))
}

/// `meander_density`: histogram of conditioned endpoints on the cells
/// around each grid node.
pub fn meander_density(spec: &StableSpec, z_grid: &[f64], cfg: &MeanderConfig, seed: u64) -> Result<MeanderTable> {
    if z_grid.len() < 2 {
        return Err(Error::InvalidParameter("z_grid needs at least two nodes".into()));
    }
    if z_grid[0] <= 0.0 || z_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("z_grid must be positive and increasing".into()));
    }
    let (mut samples, trials) = sample_meander_endpoints(spec, cfg, seed)?;
    samples.sort_by(f64::total_cmp);
    Ok(histogram_table(z_grid, samples, cfg.walk_len, trials))
}

pub(crate) fn histogram_table(z_grid: &[f64], samples: Vec<f64>, walk_len: usize, trials: u64) -> MeanderTable {
    let n = z_grid.len();
    let total = samples.len() as f64;
    // cell edges: midpoints, first cell reaching down to 0
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(0.0);
    for w in z_grid.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push(z_grid[n - 1] + 0.5 * (z_grid[n - 1] - z_grid[n - 2]));
    let mut density = Vec::with_capacity(n);
    let mut inside = 0usize;
    for i in 0..n {
        let lo = samples.partition_point(|&v| v < edges[i]);
        let hi = samples.partition_point(|&v| v < edges[i + 1]);
        inside += hi - lo;
        density.push((hi - lo) as f64 / (total * (edges[i + 1] - edges[i])));
    }
    MeanderTable {
        z: z_grid.to_vec(),
        density,
        walk_len,
        n_accepted: samples.len() as u64,
        n_trials: trials,
        outside_mass: 1.0 - inside as f64 / total,
        samples,
    }
}
