use biaslab::decision::{apply_rule, DecisionRule, NoiseSpec};
use biaslab::estimation::{exact_prediction, fit, observe, Exercise, FitSpec};
use biaslab::experiments::{run_sweep, top_share_weighted, verify_sweep, SweepConfig};
use biaslab::population::{
    conditional_mean_y, pop_a, random_population, sample, Population, RandomPopulationSpec,
};
use biaslab::sqf::calibrate_thresholds;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(20240611),
        failure_persistence: None,
        ..Config::default()
    }
}

fn population() -> impl Strategy<Value = Population> {
    any::<u64>().prop_map(|s| random_population(RandomPopulationSpec::default(), s))
}

fn noise() -> impl Strategy<Value = Option<NoiseSpec>> {
    prop_oneof![
        Just(None),
        (0.05f64..2.0).prop_map(|s| Some(NoiseSpec::logistic(s))),
        (0.05f64..2.0).prop_map(|s| Some(NoiseSpec::normal(s))),
    ]
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn iterated_expectations(pop in population()) {
        let mut total = 0.0;
        for (x, r) in pop.strata() {
            total += pop.stratum_mass(x, r) * conditional_mean_y(&pop, x, r).unwrap();
        }
        let direct: f64 = pop.cells().iter().map(|c| c.mass * c.mu).sum();
        prop_assert!((total - direct).abs() < 1e-12);
    }

    #[test]
    fn baseline_selected_set_grows_with_tau(
        pop in population(), c in 0.05f64..1.0, t1 in -0.5f64..1.0, dt in 0.0f64..0.5,
    ) {
        let a = apply_rule(&pop, &DecisionRule::baseline(c, t1).unwrap());
        let b = apply_rule(&pop, &DecisionRule::baseline(c, t1 + dt).unwrap());
        for (i, cell) in pop.cells().iter().enumerate() {
            if cell.r == 1 {
                prop_assert!(b.probability[i] >= a.probability[i]);
            } else {
                prop_assert_eq!(b.probability[i], a.probability[i]);
            }
        }
    }

    #[test]
    fn fewer_labels_mirrors_baseline(
        mu in 0.0f64..1.0, c in 0.05f64..1.0, tau in -1.0f64..1.0, r in 0u8..2,
    ) {
        let fewer = DecisionRule::fewer_labels(c, tau).unwrap();
        let mirrored = DecisionRule::baseline(c, -tau).unwrap();
        prop_assert_eq!(fewer.select(mu, r), mirrored.select(mu, r));
        prop_assert_eq!(fewer.threshold(r), mirrored.threshold(r));
    }

    #[test]
    fn selection_probability_increases_in_mu(
        n in noise().prop_filter("noisy", Option::is_some),
        c in 0.05f64..1.0, tau in -0.5f64..0.5, mu in 0.0f64..0.99, dmu in 0.001f64..0.5, r in 0u8..2,
    ) {
        let rule = DecisionRule::baseline(c, tau).unwrap().with_noise(n.unwrap()).unwrap();
        let lo = rule.selection_probability(mu, r).unwrap();
        let hi = rule.selection_probability((mu + dmu).min(1.0), r).unwrap();
        prop_assert!(hi >= lo);
        prop_assert!((0.0..=1.0).contains(&lo));
    }

    #[test]
    fn labeled_share_bounded_by_selection_share(
        pop in population(), c in 0.05f64..1.0, tau in -0.5f64..1.0, n in noise(),
    ) {
        let mut rule = DecisionRule::baseline(c, tau).unwrap();
        if let Some(n) = n {
            rule = rule.with_noise(n).unwrap();
        }
        for (x, r) in pop.strata() {
            let s = exact_prediction(&pop, &rule, Exercise::SFull, x, r).unwrap();
            let ys = exact_prediction(&pop, &rule, Exercise::YsFull, x, r).unwrap();
            prop_assert!(ys <= s + 1e-15);
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn full_bias_recovers_conditional_mean(pop in population(), c in 0.05f64..1.0, extra in 0.0f64..1.0) {
        let rule = DecisionRule::baseline(c, c + extra).unwrap();
        for (x, r) in pop.strata().into_iter().filter(|s| s.1 == 1) {
            let y = exact_prediction(&pop, &rule, Exercise::YGivenSelected, x, r).unwrap();
            prop_assert!((y - conditional_mean_y(&pop, x, r).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_sweeps_satisfy_comparative_statics(
        pop in population(), c in 0.05f64..1.0, n in noise(), fewer in any::<bool>(),
    ) {
        let mut rule = if fewer {
            DecisionRule::fewer_labels(c, 0.0).unwrap()
        } else {
            DecisionRule::baseline(c, 0.0).unwrap()
        };
        if let Some(n) = n {
            rule = rule.with_noise(n).unwrap();
        }
        let grid: Vec<f64> = (0..=10).map(|i| c * f64::from(i) / 10.0).collect();
        let mut cfg = SweepConfig::exact(grid, rule);
        cfg.c_min = c;
        let res = run_sweep(&pop, &cfg).unwrap();
        let violations = verify_sweep(&pop, &cfg, &res);
        prop_assert!(violations.is_empty(), "{:?}", violations);
    }

    #[test]
    fn top_share_covers_target(
        items in prop::collection::vec((0u8..10, 0u8..2, 0.01f64..5.0), 2..60), q in 0.05f64..0.95,
    ) {
        let mut items = items;
        items[0].1 = 0;
        items[1].1 = 1;
        let scores: Vec<f64> = items.iter().map(|i| f64::from(i.0)).collect();
        let groups: Vec<u8> = items.iter().map(|i| i.1).collect();
        let weights: Vec<f64> = items.iter().map(|i| i.2).collect();
        let t = top_share_weighted(&scores, &groups, &weights, q).unwrap();
        prop_assert!(t.top_weight >= t.target_weight * (1.0 - 1e-12));
        // dropping the tied block at the cut would fall short of the target
        let above: f64 = scores.iter().zip(&weights).filter(|(s, _)| **s > t.threshold).map(|p| p.1).sum();
        prop_assert!(above < t.target_weight * (1.0 - 1e-12));
        prop_assert!((t.composition[0] + t.composition[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_is_monotone_in_share(
        g0 in prop::collection::vec(0u8..30, 1..80),
        g1 in prop::collection::vec(0u8..30, 1..80),
        rate in 0.05f64..0.5, s1 in 0.01f64..0.98, ds in 0.0f64..0.5,
    ) {
        let g0: Vec<f64> = g0.into_iter().map(|v| f64::from(v) / 30.0).collect();
        let g1: Vec<f64> = g1.into_iter().map(|v| f64::from(v) / 30.0).collect();
        let s2 = (s1 + ds).min(0.99);
        if let (Ok(a), Ok(b)) = (
            calibrate_thresholds([&g0, &g1], rate, s1),
            calibrate_thresholds([&g0, &g1], rate, s2),
        ) {
            prop_assert!(b.c[1] <= a.c[1]);
            prop_assert!(b.c[0] >= a.c[0]);
            for cal in [&a, &b] {
                for (g, scores) in [(0, &g0), (1, &g1)] {
                    let admitted = scores.iter().filter(|&&s| s > cal.c[g]).count();
                    prop_assert_eq!(admitted, cal.realized[g]);
                    prop_assert_eq!(admitted, cal.target[g] + cal.tie_slack[g]);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn sampled_cell_frequencies_match_masses(pop in population(), seed in any::<u64>()) {
        let n = 20_000;
        let draws = sample(&pop, n, seed);
        for cell in pop.cells() {
            let k = draws.iter().filter(|i| i.x == cell.x && i.u == cell.u && i.r == cell.r).count() as f64;
            let sd = (cell.mass * (1.0 - cell.mass) / n as f64).sqrt();
            prop_assert!((k / n as f64 - cell.mass).abs() <= 5.0 * sd + 1e-12);
        }
    }
}

#[test]
fn monte_carlo_matches_exact_within_three_standard_errors() {
    let pop = pop_a();
    let rule = DecisionRule::baseline(0.45, 0.3).unwrap();
    let ds = observe(&pop, &rule, 1_000_000, 17);
    for ex in Exercise::ALL {
        let p = fit(&ds, ex, false, &FitSpec::saturated()).unwrap();
        for (x, r) in pop.strata() {
            let exact = exact_prediction(&pop, &rule, ex, x, r).unwrap();
            let n = ds
                .records
                .iter()
                .filter(|rec| {
                    rec.x == x && rec.r == r && (ex != Exercise::YGivenSelected || rec.selected())
                })
                .count() as f64;
            let se = (exact * (1.0 - exact) / n).sqrt();
            let got = p.predict(x, Some(r)).unwrap();
            assert!(
                (got - exact).abs() <= 3.0 * se + 1e-12,
                "{ex} at ({x},{r}): {got} vs {exact}, se {se}"
            );
        }
    }
}

#[test]
fn noisy_observation_matches_exact_selection_rate() {
    let pop = pop_a();
    let rule = DecisionRule::baseline(0.45, 0.2)
        .unwrap()
        .with_noise(NoiseSpec::logistic(0.3))
        .unwrap();
    let ds = observe(&pop, &rule, 400_000, 5);
    let exact = apply_rule(&pop, &rule).total_selected();
    let freq = ds.selected_count() as f64 / ds.records.len() as f64;
    let se = (exact * (1.0 - exact) / ds.records.len() as f64).sqrt();
    assert!((freq - exact).abs() < 4.0 * se, "{freq} vs {exact}");
}

#[test]
fn sweep_output_is_independent_of_thread_count() {
    let pop = random_population(RandomPopulationSpec::default(), 12);
    let mut cfg = SweepConfig::exact(
        (0..12).map(|i| f64::from(i) * 0.05).collect(),
        DecisionRule::baseline(0.6, 0.0).unwrap(),
    );
    cfg.mode = biaslab::experiments::Mode::MonteCarlo { n: 20_000, seed: 9 };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_sweep(&pop, &cfg).unwrap())
    };
    assert_eq!(run(1), run(6));
}
