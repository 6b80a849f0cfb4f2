//! Limit distributions of the rescaled reduced process.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::{self, QuadConfig};
use crate::rng::{rng_for, stream};
use crate::stable::{MeanderTable, PathEnsemble, StableSpec};
use crate::stats::{normal_cdf, proportion_estimate, Estimate, Z99};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LawId {
    QMin,
    A,
    W,
    HCstar,
    TailClosed,
    A2,
    MeanderMinAfter,
}

impl LawId {
    pub fn name(self) -> &'static str {
        match self {
            LawId::QMin => "Q_min",
            LawId::A => "A",
            LawId::W => "W",
            LawId::HCstar => "H_Cstar",
            LawId::TailClosed => "tail_closed",
            LawId::A2 => "A2",
            LawId::MeanderMinAfter => "meander_min_after",
        }
    }
}

/// Values of one limit law along a grid of its distribution argument, with
/// a fixed first argument (`T`, `t` or `θ`; NaN when unused).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitLawTable {
    pub law_id: LawId,
    pub arg1: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub method: String,
}

impl LimitLawTable {
    pub const CSV_HEADER: &'static str = "law_id,arg1,arg2,value,error";

    pub fn new(law_id: LawId, arg1: f64, grid: Vec<f64>, values: Vec<f64>, errors: Vec<f64>, method: impl Into<String>) -> Result<Self> {
        if grid.len() != values.len() || grid.len() != errors.len() || grid.is_empty() {
            return Err(Error::InvalidParameter("grid, values and errors must have equal nonzero length".into()));
        }
        Ok(Self {
            law_id,
            arg1,
            grid,
            values,
            errors,
            method: method.into(),
        })
    }

    /// Linear interpolation, flat outside the grid.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x <= self.grid[0] {
            return self.values[0];
        }
        if x >= self.grid[n - 1] {
            return self.values[n - 1];
        }
        quad::interpolate(&self.grid, &self.values, x).unwrap_or(self.values[n - 1])
    }

    /// Values clamped to `[0, 1]` and made nondecreasing, for use as a CDF.
    pub fn monotone_cdf(&self) -> Self {
        let mut out = self.clone();
        let mut run: f64 = 0.0;
        for v in &mut out.values {
            run = run.max(v.clamp(0.0, 1.0));
            *v = run;
        }
        out
    }

    /// Largest decrease between neighbouring values.
    pub fn max_decrease(&self) -> f64 {
        self.values.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "{}", Self::CSV_HEADER)?;
        }
        for ((x, v), e) in self.grid.iter().zip(&self.values).zip(&self.errors) {
            writeln!(w, "{},{},{},{},{}", self.law_id.name(), self.arg1, x, v, e)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------

/// `P(min_{[0,1]} Y ≤ z)` for `z ≤ 0`. Closed form by reflection for the
/// Gaussian case, otherwise the ensemble frequency with a binomial CI.
pub fn q_min(spec: &StableSpec, ensemble: Option<&PathEnsemble>, z: f64) -> Result<Estimate> {
    if z > 0.0 {
        return Err(Error::Domain(format!("q_min needs z ≤ 0, got {z}")));
    }
    if z == 0.0 {
        return Ok(Estimate::exact(1.0));
    }
    if spec.is_gaussian() {
        return Ok(Estimate::exact(2.0 * normal_cdf(z / (2.0 * spec.c()).sqrt())));
    }
    let ens = ensemble.ok_or_else(|| Error::InvalidParameter("q_min needs a path ensemble for α < 2".into()))?;
    let hits = ens.mins().partition_point(|&m| m <= z) as u64;
    Ok(proportion_estimate(hits, ens.len() as u64))
}

/// Reference CDF of the first regime, `z ↦ P(min Y ≤ z ∧ 0)`.
pub fn q_min_cdf(spec: &StableSpec, ensemble: Option<&PathEnsemble>, z: f64) -> Result<f64> {
    q_min(spec, ensemble, z.min(0.0)).map(|e| e.value)
}

fn mean_with_ci(values: impl Iterator<Item = f64>, n: usize) -> Estimate {
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in values {
        s1 += v;
        s2 += v * v;
    }
    let nf = n as f64;
    let mean = s1 / nf;
    let half = Z99 * ((s2 / nf - mean * mean).max(0.0) / nf).sqrt();
    Estimate {
        value: mean,
        ci_low: mean - half,
        ci_high: mean + half,
    }
}

#[inline]
fn pow_gap(hi: f64, lo: f64, p: f64) -> f64 {
    if hi > lo {
        hi.powf(p) - lo.powf(p)
    } else {
        0.0
    }
}

/// `A(T, y)` as the ensemble average of the `w`-integral done per path:
/// for a path with minimum `m ≤ 0` and endpoint `e` the integrand is
/// `w^{αρ}` on `[-m, min(y - m, T - e)]`.
pub fn a_limit(spec: &StableSpec, ens: &PathEnsemble, big_t: f64, y: f64) -> Result<Estimate> {
    if !(big_t > 0.0) || !(0.0..=big_t).contains(&y) {
        return Err(Error::Domain(format!("A(T, y) needs T > 0 and 0 ≤ y ≤ T, got ({big_t}, {y})")));
    }
    let p = spec.alpha_rho() + 1.0;
    let norm = big_t.powf(p);
    Ok(mean_with_ci(
        ens.mins().iter().zip(ens.ends()).map(|(&m, &e)| {
            let lo = -m.min(0.0);
            pow_gap((y + lo).min(big_t - e), lo, p) / norm
        }),
        ens.len(),
    ))
}

/// `A(T, y)` by adaptive quadrature of `w^{αρ} P(-w ≤ min ≤ y - w, Y_1 ≤ T - w)`
/// over `[0, T + W]`, `W` twice the `10^{-4}` tail point of `-min`. Returns
/// the value and the quadrature error plus a DKW term.
pub fn a_limit_quadrature(spec: &StableSpec, ens: &PathEnsemble, big_t: f64, y: f64) -> Result<(f64, f64)> {
    if !(big_t > 0.0) || !(0.0..=big_t).contains(&y) {
        return Err(Error::Domain(format!("A(T, y) needs T > 0 and 0 ≤ y ≤ T, got ({big_t}, {y})")));
    }
    let ar = spec.alpha_rho();
    let p = ar + 1.0;
    let w_cut = big_t + 2.0 * ens.min_tail_cut(1e-4);
    let breaks: Vec<f64> = (0..=64).map(|i| w_cut * i as f64 / 64.0).collect();
    let cfg = QuadConfig {
        abs_tol: 1e-5,
        rel_tol: 1e-5,
        max_intervals: 64,
    };
    let r = quad::integrate_pieces(|w| w.powf(ar) * ens.joint_prob(-w, y - w, big_t - w), &breaks, cfg)?;
    let scale = p / big_t.powf(p);
    let dkw = ens.dkw_half_width(0.01) * w_cut.powf(p) / big_t.powf(p);
    Ok((r.value * scale, r.abs_error * scale + dkw))
}

/// Reference CDF for the intermediate regime: `y ↦ A(θ^{1/α} t, θ^{1/α}(t ∧ y))`
/// tabulated on `points` nodes over `y ∈ [0, t]`.
pub fn a_reference_table(spec: &StableSpec, ens: &PathEnsemble, theta: f64, t: f64, points: usize) -> Result<LimitLawTable> {
    let s = theta.powf(1.0 / spec.alpha());
    let big_t = s * t;
    let grid: Vec<f64> = (0..points).map(|i| t * i as f64 / (points - 1) as f64).collect();
    let est: Vec<Estimate> = grid
        .iter()
        .map(|&y| a_limit(spec, ens, big_t, (s * y.min(t)).min(big_t)))
        .collect::<Result<_>>()?;
    LimitLawTable::new(
        LawId::A,
        big_t,
        grid,
        est.iter().map(|e| e.value).collect(),
        est.iter().map(|e| e.half_width()).collect(),
        format!("per-path w-integral over {} paths, grid {}", ens.len(), ens.grid_size),
    )
}

/// `A₂(t, θ, z)`, integrated per path like [`a_limit`].
pub fn a2_limit(spec: &StableSpec, ens: &PathEnsemble, t: f64, theta: f64, z: f64) -> Result<Estimate> {
    if !(t > 0.0) || !(theta > 0.0) || !(z >= -t) {
        return Err(Error::Domain(format!("A₂ needs t, θ > 0 and z ≥ -t, got ({t}, {theta}, {z})")));
    }
    let s = theta.powf(1.0 / spec.alpha());
    let p = spec.alpha_rho() + 1.0;
    let norm = t.powf(p);
    Ok(mean_with_ci(
        ens.mins().iter().zip(ens.ends()).map(|(&m, &e)| {
            if e < -z * s {
                return 0.0;
            }
            let lo = -m.min(0.0) / s;
            pow_gap((t + z).min(t - e / s), lo, p) / norm
        }),
        ens.len(),
    ))
}

/// `1 - (1 - (t ∧ y)/t)^{αρ+1}`.
pub fn tail_closed_form(t: f64, y: f64, alpha_rho: f64) -> Result<f64> {
    if !(t > 0.0) || !(alpha_rho > 0.0) {
        return Err(Error::Domain(format!("tail form needs t > 0 and αρ > 0, got ({t}, {alpha_rho})")));
    }
    let y = y.max(0.0);
    Ok(1.0 - (1.0 - t.min(y) / t).powf(alpha_rho + 1.0))
}

// ---------------------------------------------------------------------------
// Meander functionals

/// `C**` and `y ↦ C** H(y)` from a meander density table.
#[derive(Debug, Clone)]
pub struct CstarH {
    pub cstar: f64,
    exponent: f64,
    z: Vec<f64>,
    g: Vec<f64>,
    norm: f64,
}

impl CstarH {
    pub fn new(spec: &StableSpec, table: &MeanderTable) -> Result<Self> {
        if table.z.len() < 2 {
            return Err(Error::InvalidParameter("meander table is empty".into()));
        }
        let exponent = spec.alpha_one_minus_rho();
        // include z = 0 where the density vanishes
        let mut z = vec![0.0];
        z.extend_from_slice(&table.z);
        let mut g = vec![0.0];
        g.extend_from_slice(&table.density);
        let moment: Vec<f64> = z.iter().zip(&g).map(|(&z, &g)| g * z.powf(exponent)).collect();
        let norm = quad::trapezoid(&z, &moment);
        if !(norm > 0.0) {
            return Err(Error::Quadrature("meander moment is not positive".into()));
        }
        Ok(Self {
            cstar: 1.0 / norm,
            exponent,
            z,
            g,
            norm,
        })
    }

    /// `C** H(y)` on the same nodes as `C**`, so it equals 1 once `y` exceeds the grid.
    pub fn cstar_h(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let p = self.exponent;
        let f: Vec<f64> = self
            .z
            .iter()
            .zip(&self.g)
            .map(|(&z, &g)| g * (z.powf(p) - (z - y.min(z)).powf(p)))
            .collect();
        quad::trapezoid(&self.z, &f) / self.norm
    }

    pub fn table(&self, grid: Vec<f64>, sampling_rel_error: f64) -> Result<LimitLawTable> {
        let values: Vec<f64> = grid.iter().map(|&y| self.cstar_h(y)).collect();
        let errors = values.iter().map(|v| v * sampling_rel_error).collect();
        LimitLawTable::new(LawId::HCstar, f64::NAN, grid, values, errors, "trapezoid on meander histogram nodes")
    }

    pub fn nodes(&self) -> (&[f64], &[f64]) {
        (&self.z, &self.g)
    }
}

/// `C**` and `C** H(y)` together.
pub fn cstar_and_h(spec: &StableSpec, table: &MeanderTable, y: f64) -> Result<(f64, f64)> {
    let c = CstarH::new(spec, table)?;
    Ok((c.cstar, c.cstar_h(y)))
}

/// Standard Rayleigh density, the time-1 law of the Brownian meander.
pub fn rayleigh_meander_table(z_grid: &[f64]) -> MeanderTable {
    MeanderTable {
        z: z_grid.to_vec(),
        density: z_grid.iter().map(|&z| z * (-0.5 * z * z).exp()).collect(),
        walk_len: 0,
        n_accepted: 0,
        n_trials: 0,
        outside_mass: (-0.5 * z_grid.last().copied().unwrap_or(0.0).powi(2)).exp(),
        samples: Vec::new(),
    }
}

/// `W(t, y)` as printed, by quadrature: the outer `z`-integral uses the
/// meander table nodes and each inner `q`-integral is adaptive. When
/// `α(1-ρ) < 1` the second inner integral is taken in `u = q^{α(1-ρ)}`,
/// which removes the endpoint singularity. Returns value and error bound.
pub fn w_limit(spec: &StableSpec, ch: &CstarH, t: f64, y: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) || !(0.0..=t).contains(&y) {
        return Err(Error::Domain(format!("W(t, y) needs t > 0 and 0 ≤ y ≤ t, got ({t}, {y})")));
    }
    if y == 0.0 {
        return Ok((0.0, 0.0));
    }
    let ar = spec.alpha_rho();
    let am = spec.alpha_one_minus_rho();
    let cfg = QuadConfig::with_tol(1e-11, 1e-9);
    let (z, g) = ch.nodes();
    let mut inner = Vec::with_capacity(z.len());
    let mut err = 0.0;
    for (&z, &g) in z.iter().zip(g) {
        if g == 0.0 || z == 0.0 {
            inner.push(0.0);
            continue;
        }
        let lo = (z - y).max(0.0);
        let first = quad::integrate(|q| q.powf(ar) * (t - z + q).max(0.0).powf(am), lo, z, cfg)?;
        let second = if am < 1.0 {
            // q = u^{1/am}: q^{am-1} dq = du / am
            quad::integrate(
                |u| (t - z + u.powf(1.0 / am)).max(0.0).powf(ar + 1.0) / am,
                lo.powf(am),
                z.powf(am),
                cfg,
            )?
        } else {
            quad::integrate(|q| (t - z + q).max(0.0).powf(ar + 1.0) * q.powf(am - 1.0), lo, z, cfg)?
        };
        err += g * (first.abs_error * (ar + 1.0) + second.abs_error * am);
        inner.push(g * ((ar + 1.0) * first.value + am * second.value));
    }
    let scale = ch.cstar / t.powf(ar + 1.0);
    let value = scale * quad::trapezoid(z, &inner);
    Ok((value, scale * err * z.last().copied().unwrap_or(0.0) / z.len() as f64))
}

/// `y ↦ W(θ^{1/α} t, θ^{1/α} t ∧ y)` on `points` nodes over `[0, θ^{1/α} t]`.
pub fn w_reference_table(spec: &StableSpec, ch: &CstarH, theta: f64, t: f64, points: usize) -> Result<LimitLawTable> {
    let tt = theta.powf(1.0 / spec.alpha()) * t;
    let grid: Vec<f64> = (0..points).map(|i| tt * i as f64 / (points - 1) as f64).collect();
    let vals: Vec<(f64, f64)> = grid.iter().map(|&y| w_limit(spec, ch, tt, y.min(tt))).collect::<Result<_>>()?;
    LimitLawTable::new(
        LawId::W,
        tt,
        grid,
        vals.iter().map(|v| v.0).collect(),
        vals.iter().map(|v| v.1).collect(),
        "nested quadrature on meander nodes",
    )
}

/// `P(inf_{s ≤ q ≤ 1} B⁺_q ≤ x)` for the Brownian meander, estimated from
/// Gaussian walks of `steps` steps kept nonnegative by rejection.
pub fn meander_min_after(spec: &StableSpec, s: f64, x: f64, steps: usize, n_paths: usize, seed: u64) -> Result<Estimate> {
    if !spec.is_gaussian() {
        return Err(Error::InvalidParameter("meander_min_after is defined for α = 2".into()));
    }
    if !(0.0..=1.0).contains(&s) || !(x >= 0.0) || steps == 0 || n_paths == 0 {
        return Err(Error::Domain(format!("need s ∈ [0,1], x ≥ 0, got ({s}, {x})")));
    }
    if s == 0.0 {
        return Ok(Estimate::exact(1.0));
    }
    let norm = (2.0 * spec.c() * steps as f64).sqrt();
    let start = (s * steps as f64).ceil() as usize;
    let per = 1024usize;
    let chunks = n_paths.div_ceil(per);
    let max_trials = 1000 * per as u64 * (steps as f64).sqrt() as u64;
    let res: Vec<(u64, u64, u64)> = (0..chunks as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, stream::MEANDER, (1 << 32) | c);
            let quota = per.min(n_paths - c as usize * per) as u64;
            let (mut got, mut hits, mut trials) = (0u64, 0u64, 0u64);
            while got < quota && trials < max_trials {
                trials += 1;
                let mut v = 0.0;
                let mut low = f64::INFINITY;
                let mut ok = true;
                for j in 1..=steps {
                    v += spec.sample(&mut rng);
                    if v < 0.0 {
                        ok = false;
                        break;
                    }
                    if j >= start {
                        low = low.min(v);
                    }
                }
                if ok {
                    got += 1;
                    hits += u64::from(low / norm <= x);
                }
            }
            (got, hits, trials)
        })
        .collect();
    let got: u64 = res.iter().map(|r| r.0).sum();
    let hits: u64 = res.iter().map(|r| r.1).sum();
    if got < n_paths as u64 {
        return Err(Error::InsufficientAcceptance {
            accepted: got,
            trials: res.iter().map(|r| r.2).sum(),
            needed: n_paths as u64,
        });
    }
    Ok(proportion_estimate(hits, got))
}
