//! Acceptance suite: one line per criterion with its verdict. The process
//! fails when a criterion outside `KNOWN_RED` fails.

use std::time::Instant;

use rayon::prelude::*;
use reduced_bpre::bpre::{self, Regime, ScenarioSpec, ThetaConfig, TrialMethod, TrialOutcome, TrialPlan};
use reduced_bpre::envs::{EnvironmentModel, Family, IncrementLaw};
use reduced_bpre::limits::{self, CstarH};
use reduced_bpre::rng::{rng_for, stream};
use reduced_bpre::stable::{meander_density, MeanderConfig, PathEnsemble, StableSpec};
use reduced_bpre::stats::{normal_cdf, trend_monotone, Estimate};
use reduced_bpre::walk::{self, LadderKind, RenewalConfig, RenewalTable};
use reduced_bpre_cli::run::{compare, reference_for, LimitInputs};

/// Criteria whose thresholds are out of reach at desk scale; see the
/// decisions ledger for the analysis.
const KNOWN_RED: &[u32] = &[6];

struct Verdict {
    id: u32,
    pass: bool,
    detail: String,
    secs: f64,
    budget: f64,
}

fn gaussian() -> StableSpec {
    StableSpec::standard_normal()
}

fn lf_model() -> EnvironmentModel {
    EnvironmentModel::new(Family::LinearFractional, gaussian())
}

fn ks_estimate(ks: f64, band: f64) -> Estimate {
    Estimate {
        value: ks,
        ci_low: (ks - band).max(0.0),
        ci_high: ks + band,
    }
}

fn c1_characteristic_function() -> (bool, String) {
    let n = 1_000_000u64;
    let tol = 3.0 / (n as f64).sqrt();
    let mut worst: f64 = 0.0;
    for (a, b) in [(2.0, 0.0), (1.5, 0.0), (1.5, 0.4), (0.8, 0.0)] {
        let spec = StableSpec::preset(a, b).unwrap();
        let ws = [0.5, 1.0, 2.0];
        let sums = (0..n.div_ceil(4096))
            .into_par_iter()
            .map(|c| {
                let mut rng = rng_for(17, stream::AUX, c);
                let mut acc = [(0.0, 0.0); 3];
                for _ in 0..4096.min(n - c * 4096) {
                    let x = spec.sample(&mut rng);
                    for (slot, &w) in acc.iter_mut().zip(&ws) {
                        slot.0 += (w * x).cos();
                        slot.1 += (w * x).sin();
                    }
                }
                acc
            })
            .reduce(
                || [(0.0, 0.0); 3],
                |mut p, q| {
                    for i in 0..3 {
                        p[i].0 += q[i].0;
                        p[i].1 += q[i].1;
                    }
                    p
                },
            );
        for (i, &w) in ws.iter().enumerate() {
            let (re, im) = spec.char_fn(w);
            let d = ((sums[i].0 / n as f64 - re).powi(2) + (sums[i].1 / n as f64 - im).powi(2)).sqrt();
            worst = worst.max(d);
        }
    }
    (worst <= tol, format!("max |ecf - cf| = {worst:.2e} (limit {tol:.2e})"))
}

fn c2_ladder_renewal() -> (bool, String) {
    let spec = gaussian();
    let law = IncrementLaw::Stable(spec);
    let ladders = walk::sample_first_ladders(&law, LadderKind::StrictAscending, 1_000_000, 100_000, 21);
    let tau = walk::ladder_epoch_tail_fit(&ladders, 100, 10_000).unwrap();
    let ok_tau = (tau.exponent - spec.rho()).abs() <= 0.1;

    let grid: Vec<f64> = (0..=400).map(|i| i as f64 * 0.25).collect();
    let weak = RenewalTable::simulate(&law, &grid, &RenewalConfig::default(), 22).unwrap();
    let xs: Vec<f64> = grid.iter().copied().filter(|&x| x >= 10.0).collect();
    let vs: Vec<f64> = xs.iter().map(|&x| weak.v_plus_at(x).unwrap()).collect();
    let vfit = reduced_bpre::stats::tail_index_fit(&xs, &vs).unwrap();
    let ok_v = (vfit.exponent - spec.alpha_rho()).abs() <= 0.1;
    let asym = walk::asympv_ratio(&weak, spec.alpha_rho(), 90.0).unwrap();
    let ok_asym = (0.95..=1.05).contains(&asym);

    // strict against weak tables, for the continuous law and for a lattice
    // law with ties
    let strict_cfg = RenewalConfig {
        strict: true,
        ..RenewalConfig::default()
    };
    let mut worst: f64 = 0.0;
    let lattice = IncrementLaw::two_point(-1.0, 1.0, 0.5).unwrap();
    let lgrid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.25).collect();
    for (law, grid) in [(law, &grid), (lattice, &lgrid)] {
        let w = RenewalTable::simulate(&law, grid, &RenewalConfig::default(), 23).unwrap();
        let s = RenewalTable::simulate(&law, grid, &strict_cfg, 24).unwrap();
        for &x in grid.iter().step_by(8) {
            for (sv, wv) in [
                (s.v_plus_at(x).unwrap(), w.v_plus_at(x).unwrap()),
                (s.v_minus_at(x).unwrap(), w.v_minus_at(x).unwrap()),
            ] {
                worst = worst.max((sv / ((1.0 - w.zeta) * wv) - 1.0).abs());
            }
        }
    }
    let ok_hat = worst <= 0.03;
    (
        ok_tau && ok_v && ok_asym && ok_hat,
        format!(
            "tau+ index {:.3} (rho {:.3}), V+ exponent {:.3}, AsympV(90) {:.4}, max |V^/((1-zeta)V) - 1| {:.4}",
            tau.exponent,
            spec.rho(),
            vfit.exponent,
            asym,
            worst
        ),
    )
}

fn c3_event_b() -> (bool, String) {
    let spec = gaussian();
    let law = IncrementLaw::Stable(spec);
    let grid: Vec<f64> = (0..=400).map(|i| i as f64 * 0.125).collect();
    let table = RenewalTable::simulate(&law, &grid, &RenewalConfig::default(), 31).unwrap();
    let mut devs = Vec::new();
    let mut at_2000 = f64::NAN;
    let mut text = Vec::new();
    for (i, n) in [500usize, 1000, 2000, 4000].into_iter().enumerate() {
        let k = ((n as f64).powf(0.65)).ceil() as u64;
        let b = walk::event_b_probability(&spec, &table, spec.norming(k), n, 20_000_000, 32 + i as u64).unwrap();
        let r = b.estimate.map(|v| v / b.prediction);
        if n == 2000 {
            at_2000 = r.value;
        }
        let (lo, hi) = ((r.ci_low - 1.0).abs(), (r.ci_high - 1.0).abs());
        let straddles = r.ci_low <= 1.0 && 1.0 <= r.ci_high;
        devs.push(Estimate {
            value: (r.value - 1.0).abs(),
            ci_low: if straddles { 0.0 } else { lo.min(hi) },
            ci_high: lo.max(hi),
        });
        text.push(format!("{n}:{:.3}", r.value));
    }
    let trend = trend_monotone(&devs).unwrap();
    (
        (0.85..=1.15).contains(&at_2000) && trend.pass,
        format!("ratios {} , trend {}", text.join(" "), if trend.pass { "ok" } else { "violated" }),
    )
}

fn c4_brute_force() -> (bool, String) {
    let law = IncrementLaw::two_point(-1.0, 1.0, 0.5).unwrap();
    let model = EnvironmentModel::new(Family::LinearFractional, law);
    let tiny = bpre::brute_force_tiny(&model, 4, 2, 320).unwrap();
    let mut tvs = Vec::new();
    for method in [TrialMethod::Exact, TrialMethod::Population] {
        let plan = TrialPlan::from_parts(&model, 4, 2, 0.0, method).unwrap();
        let outcomes: Vec<TrialOutcome> = (0..1_000_000u64)
            .into_par_iter()
            .map_init(Vec::new, |buf, i| plan.run(i, buf, &mut rng_for(41, stream::TRIAL, i)))
            .collect();
        tvs.push(bpre::tiny_tv_distance(&tiny, 0.0, &outcomes));
    }
    (
        tvs.iter().all(|&t| t <= 0.02),
        format!("TV exact sampler {:.4}, population sampler {:.4} (limit 0.02)", tvs[0], tvs[1]),
    )
}

struct LadderRun {
    ks: Vec<Estimate>,
    delta_q95: Vec<Estimate>,
    binom_q95: Vec<Estimate>,
    accepted_last: u64,
}

fn regime_ladder(regime: Regime, ns: &[usize], seed: u64) -> LadderRun {
    let spec = gaussian();
    let inputs = LimitInputs {
        paths: 100_000,
        grid: 1000,
        seed: seed ^ 0x5eed,
    };
    let reference = reference_for(regime, &spec, 1.0, 1.0, &inputs).unwrap();
    let mut out = LadderRun {
        ks: Vec::new(),
        delta_q95: Vec::new(),
        binom_q95: Vec::new(),
        accepted_last: 0,
    };
    for &n in ns {
        let mut s = ScenarioSpec::new(lf_model(), regime, n, seed + n as u64);
        s.target_accepted = 5000;
        let batch = bpre::run_trials(&s).unwrap();
        let cmp = compare(&s, &batch, &reference).unwrap();
        out.ks.push(ks_estimate(cmp.ks, cmp.band));
        let d = bpre::diagnostics_check(&batch.samples, &batch.schedule, 2.0).unwrap();
        out.delta_q95.push(d.delta_q95);
        out.binom_q95.push(d.binomial_dev_q95);
        out.accepted_last = batch.counts.accepted;
    }
    out
}

fn fmt_values(v: &[Estimate]) -> String {
    v.iter().map(|e| format!("{:.4}", e.value)).collect::<Vec<_>>().join(" ")
}

fn ks_criterion(run: &LadderRun, limit: f64) -> (bool, String) {
    let last = run.ks.last().unwrap().value;
    let trend = trend_monotone(&run.ks).unwrap();
    (
        last <= limit && trend.pass && run.accepted_last >= 5000,
        format!(
            "KS over n-ladder {} (limit {limit} at the top, {} accepted), trend {}",
            fmt_values(&run.ks),
            run.accepted_last,
            if trend.pass { "ok" } else { "violated" }
        ),
    )
}

fn c7_theorem2() -> (bool, String) {
    let spec = gaussian();
    let ens = PathEnsemble::simulate(&spec, 1000, 100_000, 71).unwrap();
    let mut worst: f64 = 0.0;
    for t in [0.5, 1.0, 2.0] {
        worst = worst.max((limits::a_limit(&spec, &ens, t, t).unwrap().value - 1.0).abs());
    }
    let run = regime_ladder(Regime::Thm2ThetaM, &[4000], 72);
    let ks = run.ks[0].value;
    (
        ks <= 0.2 && worst <= 0.02 && run.accepted_last >= 5000,
        format!("KS {ks:.4} at n=4000 (limit 0.2), max |A(T,T) - 1| {worst:.4}"),
    )
}

fn c8_properness() -> (bool, String) {
    let spec = gaussian();
    let z_grid: Vec<f64> = (1..=500).map(|i| i as f64 * 0.02).collect();
    let cfg = MeanderConfig {
        walk_len: 2000,
        n_paths: 100_000,
        ..MeanderConfig::default()
    };
    let table = meander_density(&spec, &z_grid, &cfg, 81).unwrap();
    let ch = CstarH::new(&spec, &table).unwrap();
    let h_inf = ch.cstar_h(1e9);
    let (w11, _) = limits::w_limit(&spec, &ch, 1.0, 1.0).unwrap();
    let rayleigh = (2.0 / std::f64::consts::PI).sqrt();
    let ens = PathEnsemble::simulate(&spec, 1000, 100_000, 82).unwrap();
    let sup = (0..=300)
        .map(|i| {
            let z = -0.01 * i as f64;
            (ens.prob_min_le(z) - 2.0 * normal_cdf(z)).abs()
        })
        .fold(0.0, f64::max);
    (
        h_inf == 1.0 && (w11 - 1.0).abs() <= 0.05 && (ch.cstar - rayleigh).abs() <= 0.01 && sup <= 0.02,
        format!(
            "C**H(inf) = {h_inf}, W(1,1) = {w11:.4}, C** = {:.4} (Rayleigh {rayleigh:.4}), sup |q_min - 2Phi| = {sup:.4}",
            ch.cstar
        ),
    )
}

fn c9_theta() -> (bool, String) {
    let spec = gaussian();
    let law = IncrementLaw::Stable(spec);
    let grid: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.5).collect();
    let table = RenewalTable::simulate(&law, &grid, &RenewalConfig::default(), 91).unwrap();
    let est = bpre::estimate_theta(&lf_model(), &[1000, 2000, 4000], &table, &ThetaConfig::default(), 92).unwrap();
    let vals: Vec<f64> = est.ratio.iter().map(|p| p.theta.value).collect();
    let hi = vals.iter().copied().fold(f64::MIN, f64::max);
    let lo = vals.iter().copied().fold(f64::MAX, f64::min);
    let spread = hi / lo - 1.0;
    let bound = est.sparr_bound.ci_high;
    let below = est.ratio.iter().all(|p| p.theta.ci_low <= bound);
    let series = est.series.theta.value;
    let gap = vals.iter().map(|v| (v / series - 1.0).abs()).fold(0.0, f64::max);
    (
        spread <= 0.2 && below && gap <= 0.25,
        format!(
            "ratio {} (spread {:.1}%), series {series:.4}, Sparr bound {:.4}, max gap to series {:.1}%",
            vals.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "),
            100.0 * spread,
            est.sparr_bound.value,
            100.0 * gap
        ),
    )
}

fn main() {
    rayon::ThreadPoolBuilder::new().build_global().ok();
    let mut verdicts = Vec::new();
    let mut record = |id: u32, budget: f64, f: &mut dyn FnMut() -> (bool, String)| {
        let t0 = Instant::now();
        let (pass, detail) = f();
        let v = Verdict {
            id,
            pass,
            detail,
            secs: t0.elapsed().as_secs_f64(),
            budget,
        };
        println!(
            "criterion {:>2}: {}  {}  [{:.0}s, budget {:.0}s]",
            v.id,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            v.secs,
            v.budget
        );
        verdicts.push(v);
    };
    record(1, 60.0, &mut c1_characteristic_function);
    record(2, 300.0, &mut c2_ladder_renewal);
    record(3, 600.0, &mut c3_event_b);
    record(4, 120.0, &mut c4_brute_force);
    let mut thm1 = None;
    record(5, 900.0, &mut || {
        let run = regime_ladder(Regime::Thm1SmallTail, &[1000, 2000, 4000], 51);
        let out = ks_criterion(&run, 0.15);
        thm1 = Some(run);
        out
    });
    record(6, 900.0, &mut || ks_criterion(&regime_ladder(Regime::Thm3MinGgK, &[1000, 2000, 4000], 61), 0.15));
    record(7, 1200.0, &mut c7_theorem2);
    record(8, 300.0, &mut c8_properness);
    record(9, 600.0, &mut c9_theta);
    record(10, 60.0, &mut || {
        let run = thm1.as_ref().expect("criterion 5 ran");
        let a = trend_monotone(&run.delta_q95).unwrap();
        let b = trend_monotone(&run.binom_q95).unwrap();
        (
            a.pass && b.pass,
            format!(
                "q95 |Delta|/a_m {} ({}), q95 binomial deviation {} ({})",
                fmt_values(&run.delta_q95),
                if a.pass { "ok" } else { "violated" },
                fmt_values(&run.binom_q95),
                if b.pass { "ok" } else { "violated" }
            ),
        )
    });
    let unexpected: Vec<u32> = verdicts.iter().filter(|v| !v.pass && !KNOWN_RED.contains(&v.id)).map(|v| v.id).collect();
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("acceptance: {passed}/{} criteria pass; known red: {KNOWN_RED:?}", verdicts.len());
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
