//! Random environments: offspring-law families whose log-means follow a
//! stable law, generating-function algebra and extinction recursions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::stable::StableSpec;

/// Largest admissible `|X_i|` (natural-log scale).
pub const MAX_ABS_LOG_MEAN: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `f(s) = q / (1 - p s)`, geometric on `{0, 1, ...}`.
    LinearFractional,
    /// `f(s) = exp(λ (s - 1))`.
    Poisson,
}

impl Family {
    /// Second factorial moment over squared mean, `f''(1) / f'(1)²`.
    pub fn eta(self) -> f64 {
        match self {
            Family::LinearFractional => 2.0,
            Family::Poisson => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::LinearFractional => "linear_fractional",
            Family::Poisson => "poisson",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear_fractional" | "geometric" | "lf" => Some(Family::LinearFractional),
            "poisson" => Some(Family::Poisson),
            _ => None,
        }
    }

    /// The per-generation parameter (p for geometric, λ for Poisson) giving
    /// mean offspring `e^x`.
    pub fn parameter_for_log_mean(self, x: f64) -> f64 {
        match self {
            Family::LinearFractional => 1.0 / (1.0 + (-x).exp()),
            Family::Poisson => x.exp(),
        }
    }
}

/// Law of the log-mean increments `X_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IncrementLaw {
    Stable(StableSpec),
    /// `X = low` with probability `p_low`, else `X = high`. Lattice and
    /// outside the stable domain; used only for exact small-instance checks.
    TwoPoint { low: f64, high: f64, p_low: f64 },
}

impl IncrementLaw {
    pub fn two_point(low: f64, high: f64, p_low: f64) -> Result<Self> {
        if !(low < high) || !(0.0..=1.0).contains(&p_low) || low.abs() > MAX_ABS_LOG_MEAN || high.abs() > MAX_ABS_LOG_MEAN {
            return Err(Error::InvalidParameter(format!(
                "two-point law needs low < high and p_low in [0,1], got ({low}, {high}, {p_low})"
            )));
        }
        Ok(IncrementLaw::TwoPoint { low, high, p_low })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            IncrementLaw::Stable(spec) => spec.sample(rng),
            IncrementLaw::TwoPoint { low, high, p_low } => {
                if rng.random::<f64>() < *p_low {
                    *low
                } else {
                    *high
                }
            }
        }
    }

    /// `P(X > x)`.
    pub fn upper_tail(&self, x: f64) -> Result<f64> {
        match *self {
            IncrementLaw::Stable(ref spec) => crate::stable::stable_upper_tail(spec, x),
            IncrementLaw::TwoPoint { low, high, p_low } => Ok(if x < low {
                1.0
            } else if x < high {
                1.0 - p_low
            } else {
                0.0
            }),
        }
    }

    pub fn stable(&self) -> Option<&StableSpec> {
        match self {
            IncrementLaw::Stable(spec) => Some(spec),
            IncrementLaw::TwoPoint { .. } => None,
        }
    }

    /// Atoms and weights for the discrete law.
    pub fn atoms(&self) -> Option<[(f64, f64); 2]> {
        match *self {
            IncrementLaw::TwoPoint { low, high, p_low } => Some([(low, p_low), (high, 1.0 - p_low)]),
            IncrementLaw::Stable(_) => None,
        }
    }
}

impl From<StableSpec> for IncrementLaw {
    fn from(spec: StableSpec) -> Self {
        IncrementLaw::Stable(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentModel {
    pub family: Family,
    pub increment: IncrementLaw,
    /// ϰ in the moment condition on `log⁺η`; η is constant here so any
    /// positive margin holds.
    pub b2_margin: f64,
}

impl EnvironmentModel {
    pub fn new(family: Family, increment: impl Into<IncrementLaw>) -> Self {
        Self {
            family,
            increment: increment.into(),
            b2_margin: 1.0,
        }
    }

    pub fn eta(&self) -> f64 {
        self.family.eta()
    }

    /// `draw_environment`.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<EnvRealization> {
        if n == 0 {
            return Err(Error::InvalidParameter("environment horizon must be positive".into()));
        }
        let increments: Vec<f64> = (0..n).map(|_| self.increment.sample(rng)).collect();
        EnvRealization::from_increments(self.family, increments)
    }
}

/// One realised environment `F_1..F_n`, parameterised by the log-means.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvRealization {
    pub family: Family,
    increments: Vec<f64>,
    prefix: Vec<f64>,
}

impl EnvRealization {
    pub fn from_increments(family: Family, increments: Vec<f64>) -> Result<Self> {
        if let Some(x) = increments.iter().find(|x| !(x.abs() <= MAX_ABS_LOG_MEAN)) {
            return Err(Error::ParameterOverflow(x.abs()));
        }
        let mut prefix = Vec::with_capacity(increments.len() + 1);
        let mut s = 0.0;
        prefix.push(0.0);
        for &x in &increments {
            s += x;
            prefix.push(s);
        }
        Ok(Self {
            family,
            increments,
            prefix,
        })
    }

    pub fn n(&self) -> usize {
        self.increments.len()
    }

    /// `X_1..X_n`.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `S_0 = 0, S_1, .., S_n`.
    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    /// Parameter of `F_i` (1-based generation index).
    pub fn parameter(&self, i: usize) -> f64 {
        self.family.parameter_for_log_mean(self.increments[i - 1])
    }

    pub fn parameters(&self) -> Vec<f64> {
        (1..=self.n()).map(|i| self.parameter(i)).collect()
    }

    /// `F_i'(1) = e^{X_i}`.
    pub fn mean(&self, i: usize) -> f64 {
        self.increments[i - 1].exp()
    }

    fn check_window(&self, r: usize, n: usize) -> Result<()> {
        if r > n || n > self.n() {
            return Err(Error::InvalidParameter(format!(
                "window 0 ≤ r={r} ≤ n={n} ≤ {} violated",
                self.n()
            )));
        }
        Ok(())
    }
}

/// Probability generating function of one offspring law.
pub fn gf_eval(family: Family, parameter: f64, s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("pgf argument {s} outside [0,1]")));
    }
    match family {
        Family::LinearFractional => {
            if !(parameter > 0.0 && parameter < 1.0) {
                return Err(Error::Domain(format!("geometric p = {parameter} outside (0,1)")));
            }
            if s == 1.0 {
                return Ok(1.0);
            }
            let q = 1.0 - parameter;
            Ok(q / (1.0 - parameter * s))
        }
        Family::Poisson => {
            if !(parameter > 0.0) {
                return Err(Error::Domain(format!("Poisson λ = {parameter} must be positive")));
            }
            Ok((parameter * (s - 1.0)).exp())
        }
    }
}

/// `F_{r,n}(0)` together with `log(1 - F_{r,n}(0))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extinction {
    pub q: f64,
    pub log_survival: f64,
}

impl Extinction {
    pub fn survival(&self) -> f64 {
        self.log_survival.exp()
    }

    /// `log F_{r,n}(0)`, accurate when survival is close to one.
    pub fn log_q(&self) -> f64 {
        let q = -self.log_survival.exp_m1();
        if q < 0.5 {
            q.ln()
        } else {
            (-self.log_survival.exp()).ln_1p()
        }
    }

    /// `1 - F_{r,n}(0)^i`, the survival chance of `i` independent lines.
    pub fn survival_of(&self, i: u64) -> f64 {
        if i == 0 {
            return 0.0;
        }
        -(i as f64 * self.log_q()).exp_m1()
    }
}

// log(1 - f(s)) for one generation with log-mean x, given u = -log(1 - s)
#[inline]
fn step_log_survival(family: Family, x: f64, u: f64) -> f64 {
    match family {
        // 1/(1-f(s)) = 1 + e^{-x}/(1-s)
        Family::LinearFractional => -softplus(u - x),
        // 1 - f(s) = 1 - exp(-λ(1-s)), λ(1-s) = e^{x-u}
        Family::Poisson => {
            let log_a = x - u;
            if log_a < -20.0 {
                let a = log_a.exp();
                log_a + (-0.5 * a).ln_1p()
            } else {
                (-(-log_a.exp()).exp_m1()).ln()
            }
        }
    }
}

#[inline]
fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// Backward composition `F_{r+1}(F_{r+2}(..F_n(0)))` with the survival
/// tracked as `u_j = -log(1 - F_{j,n}(0))`.
pub fn extinction_backward(env: &EnvRealization, r: usize, n: usize) -> Result<Extinction> {
    env.check_window(r, n)?;
    Ok(extinction_from(env.family, &env.increments()[r..n], 0.0))
}

/// Same recursion started from `F_{n,n}(s)` with `s = 1 - e^{-u_end}`.
pub fn extinction_from(family: Family, increments: &[f64], u_end: f64) -> Extinction {
    let mut u = u_end;
    for &x in increments.iter().rev() {
        u = -step_log_survival(family, x, u);
    }
    let log_survival = -u;
    Extinction {
        q: -log_survival.exp_m1(),
        log_survival,
    }
}

/// Survival `1 - F_{r,n}(0)` for a linear-fractional environment from the
/// resolvent `(Σ_{j=r}^{n} e^{S_r - S_j})^{-1}`, returned in log form.
pub fn log_survival_closed_form_lf(env: &EnvRealization, r: usize, n: usize) -> Result<f64> {
    if env.family != Family::LinearFractional {
        return Err(Error::FamilyMismatch {
            expected: "linear_fractional",
        });
    }
    env.check_window(r, n)?;
    let s = env.prefix();
    Ok(-log_sum_exp((r..=n).map(|j| s[r] - s[j])))
}

pub fn survival_closed_form_lf(env: &EnvRealization, r: usize, n: usize) -> Result<f64> {
    log_survival_closed_form_lf(env, r, n).map(f64::exp)
}

/// `(e^{-(S_n - S_r)} + Σ_{q=r}^{n-1} η e^{-(S_q - S_r)})^{-1}` in log form.
pub fn log_survival_lower_bound(env: &EnvRealization, r: usize, n: usize, eta: f64) -> Result<f64> {
    env.check_window(r, n)?;
    let s = env.prefix();
    let log_eta = eta.ln();
    let terms = (r..n)
        .map(|q| log_eta + s[r] - s[q])
        .chain(std::iter::once(s[r] - s[n]));
    Ok(-log_sum_exp(terms))
}

pub fn survival_lower_bound(env: &EnvRealization, r: usize, n: usize, eta: f64) -> Result<f64> {
    log_survival_lower_bound(env, r, n, eta).map(f64::exp)
}

pub(crate) fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
}
