//! Empirical distributions, goodness of fit, tail-index regression and
//! convergence-trend checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 99% standard-normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

/// Default confidence level for DKW bands (`1 - δ` with δ = 0.01).
pub const DKW_DELTA: f64 = 0.01;

/// `√(ln(2/δ) / (2N))`.
pub fn dkw_half_width(n: usize, delta: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// A distribution function that can also report its left limits.
pub trait Cdf {
    fn cdf(&self, x: f64) -> f64;

    fn cdf_left(&self, x: f64) -> f64 {
        self.cdf(x)
    }

    /// Jump locations, for step references.
    fn atoms(&self) -> &[f64] {
        &[]
    }
}

/// Wraps a continuous reference CDF given as a closure.
pub struct FnCdf<F>(pub F);

impl<F: Fn(f64) -> f64> Cdf for FnCdf<F> {
    fn cdf(&self, x: f64) -> f64 {
        (self.0)(x)
    }
}

/// Point mass, mostly useful in tests.
pub struct PointMass(pub [f64; 1]);

impl Cdf for PointMass {
    fn cdf(&self, x: f64) -> f64 {
        if x >= self.0[0] {
            1.0
        } else {
            0.0
        }
    }
    fn cdf_left(&self, x: f64) -> f64 {
        if x > self.0[0] {
            1.0
        } else {
            0.0
        }
    }
    fn atoms(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    values: Vec<f64>,
    band_delta: Option<f64>,
}

impl Ecdf {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidParameter("NaN in sample".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self {
            values,
            band_delta: None,
        })
    }

    pub fn with_band(mut self, delta: f64) -> Self {
        self.band_delta = Some(delta);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Half-width of the configured DKW band, if any.
    pub fn band(&self) -> Option<f64> {
        self.band_delta.map(|d| dkw_half_width(self.len(), d))
    }

    /// Empirical quantile (lower, type-1).
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.values.len();
        let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.values[idx]
    }

    /// Distribution-free 99% interval for the `p`-quantile from binomial
    /// order statistics (normal approximation to the ranks).
    pub fn quantile_ci(&self, p: f64) -> (f64, f64) {
        let n = self.values.len() as f64;
        let half = Z99 * (n * p * (1.0 - p)).sqrt();
        let lo = ((n * p - half).floor().max(1.0) as usize).min(self.values.len()) - 1;
        let hi = ((n * p + half).ceil().max(1.0) as usize).min(self.values.len()) - 1;
        (self.values[lo], self.values[hi])
    }
}

impl Cdf for Ecdf {
    fn cdf(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 1.0;
        }
        self.values.partition_point(|&v| v <= x) as f64 / self.values.len() as f64
    }

    fn cdf_left(&self, x: f64) -> f64 {
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        self.values.partition_point(|&v| v < x) as f64 / self.values.len() as f64
    }

    fn atoms(&self) -> &[f64] {
        &self.values
    }
}

/// Sup-distance between an empirical law and a reference, checked at both
/// one-sided limits of every jump of either function.
pub fn ks_distance<R: Cdf + ?Sized>(ecdf: &Ecdf, reference: &R) -> Result<f64> {
    if ecdf.is_empty() {
        return Err(Error::EmptySample);
    }
    let gap = |x: f64| {
        let right = (ecdf.cdf(x) - reference.cdf(x)).abs();
        let left = (ecdf.cdf_left(x) - reference.cdf_left(x)).abs();
        right.max(left)
    };
    let d = ecdf
        .values()
        .iter()
        .chain(reference.atoms())
        .map(|&x| gap(x))
        .fold(0.0, f64::max);
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub exponent: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// OLS slope of `log y` on `log x`.
pub fn tail_index_fit(abscissae: &[f64], values: &[f64]) -> Result<TailFit> {
    let pts: Vec<(f64, f64)> = abscissae
        .iter()
        .zip(values)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(Error::InsufficientSamples {
            needed: 5,
            got: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return Err(Error::DegenerateAbscissae);
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = if pts.len() > 2 {
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(TailFit {
        exponent: slope,
        stderr,
        intercept,
    })
}

/// `count` geometrically spaced abscissae on `[lo, hi]`.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| lo * (r * i as f64).exp()).collect()
}

/// A point estimate with a confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            ci_low: value,
            ci_high: value,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    pub fn overlaps(&self, other: &Estimate) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let (a, b) = (f(self.ci_low), f(self.ci_high));
        Self {
            value: f(self.value),
            ci_low: a.min(b),
            ci_high: a.max(b),
        }
    }
}

/// Normal-approximation 99% interval for a mean.
pub fn mean_estimate(values: &[f64]) -> Result<Estimate> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let half = Z99 * (var / n).sqrt();
    Ok(Estimate {
        value: mean,
        ci_low: mean - half,
        ci_high: mean + half,
    })
}

/// Normal-approximation 99% interval for a proportion (floored at one
/// event so zero counts still get a nontrivial upper bound).
pub fn proportion_estimate(successes: u64, trials: u64) -> Estimate {
    if trials == 0 {
        return Estimate {
            value: 0.0,
            ci_low: 0.0,
            ci_high: 1.0,
        };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let p_var = p.max(1.0 / n);
    let half = Z99 * (p_var * (1.0 - p).max(1.0 / n) / n).sqrt();
    Estimate {
        value: p,
        ci_low: (p - half).max(0.0),
        ci_high: (p + half).min(1.0),
    }
}

/// Relative-error propagation for a ratio of independent estimates.
pub fn ratio_estimate(num: &Estimate, den: &Estimate) -> Estimate {
    let value = num.value / den.value;
    let rn = num.half_width() / num.value.abs();
    let rd = den.half_width() / den.value.abs();
    let half = value.abs() * (rn * rn + rd * rd).sqrt();
    Estimate {
        value,
        ci_low: value - half,
        ci_high: value + half,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendResult {
    pub pass: bool,
    /// indices `i` where step `i → i+1` increased without CI overlap
    pub violations: Vec<usize>,
}

/// Passes iff every consecutive step is nonincreasing or has overlapping
/// confidence intervals.
pub fn trend_monotone(points: &[Estimate]) -> Result<TrendResult> {
    if points.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: points.len(),
        });
    }
    let violations: Vec<usize> = points
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].value > w[0].value && !w[0].overlaps(&w[1]))
        .map(|(i, _)| i)
        .collect();
    Ok(TrendResult {
        pass: violations.is_empty(),
        violations,
    })
}

/// One row of a comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub statistic: String,
    pub n: u64,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub reference: String,
    pub pass: bool,
}

impl ReportRow {
    pub const CSV_HEADER: &'static str = "statistic,n,value,ci_low,ci_high,reference,pass";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            csv_field(&self.statistic),
            self.n,
            self.value,
            self.ci_low,
            self.ci_high,
            csv_field(&self.reference),
            self.pass
        )
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ks_trivial_cases() {
        let e = Ecdf::new(vec![0.0]).unwrap();
        assert_eq!(ks_distance(&e, &PointMass([0.0])).unwrap(), 0.0);
        let e = Ecdf::new(vec![0.3, -1.0, 2.0, 2.0]).unwrap();
        assert_eq!(ks_distance(&e, &e.clone()).unwrap(), 0.0);
    }

    #[test]
    fn ks_uses_left_limits() {
        // sample {0, 1} against uniform(0,1): gap 1/2 just left of 1
        let e = Ecdf::new(vec![0.0, 1.0]).unwrap();
        let d = ks_distance(&e, &FnCdf(|x: f64| x.clamp(0.0, 1.0))).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ecdf_limits() {
        let e = Ecdf::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(e.cdf(f64::NEG_INFINITY), 0.0);
        assert_eq!(e.cdf(f64::INFINITY), 1.0);
        assert_eq!(e.cdf(1.0), 0.5);
        assert_eq!(e.cdf_left(1.0), 0.0);
        assert!(Ecdf::new(vec![]).is_err());
    }

    #[test]
    fn dkw_width_formula() {
        let w = dkw_half_width(10_000, 0.01);
        assert!((w - ((200.0f64).ln() / 20_000.0).sqrt()).abs() < 1e-15);
        let e = Ecdf::new(vec![0.0; 100]).unwrap().with_band(0.05);
        assert_eq!(e.band(), Some(dkw_half_width(100, 0.05)));
    }

    #[test]
    fn tail_fit_exact_power_laws() {
        let xs = geometric_grid(100.0, 10_000.0, 20);
        let ys: Vec<f64> = xs.iter().map(|x| x.powf(-0.5)).collect();
        let f = tail_index_fit(&xs, &ys).unwrap();
        assert!((f.exponent + 0.5).abs() < 1e-12);
        let ys: Vec<f64> = xs.iter().map(|x| 7.3 / x).collect();
        let f = tail_index_fit(&xs, &ys).unwrap();
        assert!((f.exponent + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tail_fit_errors() {
        assert!(matches!(
            tail_index_fit(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            tail_index_fit(&[2.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            Err(Error::DegenerateAbscissae)
        ));
    }

    fn tight(v: f64) -> Estimate {
        Estimate {
            value: v,
            ci_low: v - 1e-6,
            ci_high: v + 1e-6,
        }
    }

    fn wide(v: f64, h: f64) -> Estimate {
        Estimate {
            value: v,
            ci_low: v - h,
            ci_high: v + h,
        }
    }

    #[test]
    fn trend_rule() {
        assert!(trend_monotone(&[tight(0.3), tight(0.2), tight(0.1)]).unwrap().pass);
        let r = trend_monotone(&[tight(0.1), tight(0.3), tight(0.2)]).unwrap();
        assert!(!r.pass);
        assert_eq!(r.violations, vec![0]);
        assert!(trend_monotone(&[wide(0.2, 0.05), wide(0.22, 0.05), wide(0.15, 0.05)]).unwrap().pass);
        assert!(trend_monotone(&[tight(0.1), tight(0.2)]).is_err());
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_780_1).abs() < 1e-15);
        assert!((normal_cdf(-6.0) - 9.865_876_450_376_98e-10).abs() < 1e-22);
        assert!((normal_cdf(0.3) - 0.617_911_422_188_952_7).abs() < 1e-15);
    }

    #[test]
    fn quantile_and_ci_bracket() {
        let e = Ecdf::new((1..=1000).map(f64::from).collect()).unwrap();
        assert_eq!(e.quantile(0.95), 950.0);
        let (lo, hi) = e.quantile_ci(0.95);
        assert!(lo < 950.0 && hi > 950.0);
    }

    proptest! {
        #[test]
        fn ks_symmetric_and_triangle(
            a in prop::collection::vec(-5.0f64..5.0, 1..40),
            b in prop::collection::vec(-5.0f64..5.0, 1..40),
            c in prop::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            let (ea, eb, ec) = (Ecdf::new(a).unwrap(), Ecdf::new(b).unwrap(), Ecdf::new(c).unwrap());
            let ab = ks_distance(&ea, &eb).unwrap();
            let ba = ks_distance(&eb, &ea).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            let ac = ks_distance(&ea, &ec).unwrap();
            let cb = ks_distance(&ec, &eb).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn ecdf_is_monotone_in_unit_interval(
            v in prop::collection::vec(-100.0f64..100.0, 1..50),
            x in -200.0f64..200.0,
            dx in 0.0f64..10.0,
        ) {
            let e = Ecdf::new(v).unwrap();
            let (f0, f1) = (e.cdf(x), e.cdf(x + dx));
            prop_assert!((0.0..=1.0).contains(&f0));
            prop_assert!(f0 <= f1);
            prop_assert!(e.cdf_left(x) <= f0);
        }
    }
}
