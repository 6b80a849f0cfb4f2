use proptest::prelude::*;
use rand::SeedableRng;
use reduced_bpre::bpre::{self, schedule, Regime, ScenarioSpec, TrialOutcome};
use reduced_bpre::envs::{self, EnvironmentModel, Family, IncrementLaw};
use reduced_bpre::limits;
use reduced_bpre::rng::SimRng;
use reduced_bpre::StableSpec;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tail_form_is_a_cdf_and_scale_free(t in 0.1f64..10.0, y in 0.0f64..12.0, ar in 0.2f64..2.0, c in 0.1f64..10.0) {
        let v = limits::tail_closed_form(t, y, ar).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(limits::tail_closed_form(t, y + 0.1, ar).unwrap() >= v);
        prop_assert!((v - limits::tail_closed_form(c * t, c * y, ar).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn reduced_count_never_exceeds_parents(z in 0u64..1_000_000, q in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = SimRng::seed_from_u64(seed);
        let k = bpre::reduced_count(z as f64, q, &mut rng).unwrap();
        prop_assert!(k >= 0.0 && k <= z as f64 && k.fract() == 0.0);
    }

    #[test]
    fn default_schedules_respect_their_ordering(n in 200usize..200_000) {
        for regime in Regime::ALL {
            let s = schedule(regime, n, 1.0, None, None, 2.0).unwrap();
            prop_assert!(s.r >= 1 && s.r < n && s.k >= 1 && s.k < n);
            prop_assert_eq!(s.m, n - s.r);
        }
    }

    #[test]
    fn lower_bound_never_exceeds_survival(seed in any::<u64>(), r in 0usize..20) {
        let mut rng = SimRng::seed_from_u64(seed);
        let model = EnvironmentModel::new(Family::LinearFractional, StableSpec::standard_normal());
        let env = model.draw(20, &mut rng).unwrap();
        let exact = envs::log_survival_closed_form_lf(&env, r, 20).unwrap();
        let lower = envs::log_survival_lower_bound(&env, r, 20, 2.0).unwrap();
        prop_assert!(lower <= exact + 1e-12);
    }
}

#[test]
fn accepted_trials_are_reproducible_and_well_formed() {
    let model = EnvironmentModel::new(Family::Poisson, StableSpec::standard_normal());
    let mut spec = ScenarioSpec::new(model, Regime::Thm2ThetaM, 120, 8);
    spec.target_accepted = 200;
    let batch = bpre::run_trials(&spec).unwrap();
    assert!(batch.complete);
    for s in batch.samples.iter().take(20) {
        match bpre::run_conditioned_trial(&spec, s.trial_index).unwrap() {
            TrialOutcome::Accepted(again) => assert_eq!(&again, s),
            other => panic!("{other:?}"),
        }
        assert!(s.z_rn >= 1.0 && s.z_rn <= s.z_r && s.s_n <= batch.threshold);
    }
}

#[test]
fn exact_and_population_samplers_agree_on_acceptance_rate() {
    let law = IncrementLaw::two_point(-0.7, 0.7, 0.5).unwrap();
    let model = EnvironmentModel::new(Family::LinearFractional, law);
    let tiny = bpre::brute_force_tiny(&model, 5, 3, 120).unwrap();
    let (_, rejected) = tiny.acceptance_law(0.5);
    for method in [bpre::TrialMethod::Exact, bpre::TrialMethod::Population] {
        let plan = bpre::TrialPlan::from_parts(&model, 5, 3, 0.5, method).unwrap();
        let sched = bpre::Schedule { n: 5, k: 1, r: 3, m: 2, cond_log: None };
        let batch = bpre::run_plan(&plan, sched, 4, u64::MAX, 400_000).unwrap();
        let acc = batch.counts.acceptance();
        let exact = 1.0 - rejected;
        assert!(acc.ci_low <= exact && exact <= acc.ci_high, "{method:?}: {acc:?} vs {exact}");
    }
}
