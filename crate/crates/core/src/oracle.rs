//! Worked examples checked against independent brute-force oracles.
//!
//! Each oracle recomputes its value from first principles (direct cell
//! loops, closed-form CDFs, raw counts) rather than through the function it
//! checks.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::decision::{apply_rule, DecisionRule, NoiseSpec};
use crate::error::Result;
use crate::estimation::{exact_prediction, fit, observe, Exercise, FitSpec};
use crate::experiments::{
    automated_rule, mlr_diagnostic, reconstruction_demo, reconstruction_population, run_sweep,
    MarginalX, Mode, SweepConfig, RECONSTRUCTION_C, RECONSTRUCTION_TAUS,
};
use crate::population::{build_population, conditional_mean_y, pop_a, sample, Cell, Population};
use crate::sqf::{
    calibrate_thresholds, fit_risk_model, generate, generate_data, ingest, replicate_figure, split,
    synthesize, trend_holds, ContrabandModel, FigureConfig, GeneratorSpec, SchemaConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            pass,
            detail,
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((pass, detail)) => Self::new(name, pass, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn logistic_sf(t: f64) -> f64 {
    1.0 / (1.0 + t.exp())
}

/// Direct enumeration of `(E[Y|S=1], E[S], E[YS])` in stratum `(x, r)` for
/// the deterministic baseline rule.
fn brute_stratum(pop: &Population, c: f64, tau: f64, x: u32, r: u8) -> (Option<f64>, f64, f64) {
    let (mut m, mut ms, mut mys) = (0.0, 0.0, 0.0);
    for cell in pop.cells().iter().filter(|k| k.x == x && k.r == r) {
        let s = if cell.mu >= c - tau * f64::from(r) {
            1.0
        } else {
            0.0
        };
        m += cell.mass;
        ms += cell.mass * s;
        mys += cell.mass * s * cell.mu;
    }
    ((ms > 0.0).then(|| mys / ms), ms / m, mys / m)
}

fn check_sample_marginal(seed: u64) -> Check {
    let pop = pop_a();
    let exact: f64 = pop
        .cells()
        .iter()
        .filter(|c| c.r == 1)
        .map(|c| c.mass)
        .sum();
    let draws = sample(&pop, 1_000_000, seed);
    let freq = draws.iter().filter(|i| i.r == 1).count() as f64 / draws.len() as f64;
    Check::new(
        "sample: P(R=1) on 10^6 draws within 0.002",
        close(freq, exact, 0.002),
        format!("empirical {freq:.5}, exact {exact:.5}"),
    )
}

fn check_conditional_means() -> Check {
    let pop = pop_a();
    let a = conditional_mean_y(&pop, 0, 1);
    let b = conditional_mean_y(&pop, 1, 0);
    let (ea, eb) = ((0.1 + 0.3 + 0.5) / 3.0, (0.2 + 0.4 + 0.6) / 3.0);
    let pass = matches!((&a, &b), (Ok(a), Ok(b)) if close(*a, ea, 1e-12) && close(*b, eb, 1e-12));
    Check::new(
        "conditional_mean_y: (x=0,r=1) = 0.3, (x=1,r=0) = 0.4",
        pass,
        format!("got {a:?}, {b:?}"),
    )
}

fn check_noisy_frequency(tau: f64, expected: f64, seed: u64) -> Check {
    let name =
        format!("select_noisy: logistic frequency at tau={tau} within 0.002 of {expected:.4}");
    let r = (|| -> Result<(bool, String)> {
        let rule = DecisionRule::baseline(0.5, tau)?.with_noise(NoiseSpec::logistic(1.0))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| {
                let eps = rule
                    .noise
                    .as_ref()
                    .map(|ns| ns.draw(&mut rng, 1))
                    .unwrap_or(0.0);
                rule.select_noisy(0.2, 1, eps)
            })
            .count();
        let freq = hits as f64 / n as f64;
        let closed = logistic_sf(0.5 - tau - 0.2);
        Ok((
            close(freq, closed, 0.002) && close(closed, expected, 5e-5),
            format!("frequency {freq:.5}, closed form {closed:.5}"),
        ))
    })();
    Check::from_result(&name, r)
}

fn check_selection_probability() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let rule = DecisionRule::baseline(0.5, 0.0)?.with_noise(NoiseSpec::logistic(1.0))?;
        let p = rule.selection_probability(0.6, 1)?;
        let closed = 1.0 / (1.0 + (-0.1f64).exp());
        Ok((
            close(p, closed, 1e-12) && close(p, 0.5250, 5e-5),
            format!("{p:.6} vs closed form {closed:.6}"),
        ))
    })();
    Check::from_result("selection_probability: logistic mu=0.6 gives 0.5250", r)
}

fn check_apply_rule() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let pop = pop_a();
        let t0 = apply_rule(&pop, &DecisionRule::baseline(0.45, 0.0)?);
        let selected_u: Vec<u32> = pop
            .cells()
            .iter()
            .enumerate()
            .filter(|(i, c)| c.x == 0 && c.r == 1 && t0.selected_mass[*i] > 0.0)
            .map(|(_, c)| c.u)
            .collect();
        let t45 = apply_rule(&pop, &DecisionRule::baseline(0.45, 0.45)?);
        let all_r1 = pop
            .cells()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.r == 1)
            .all(|(i, c)| t45.selected_mass[i] == c.mass);
        Ok((
            selected_u == vec![2] && all_r1,
            format!("selected u at (x=0,r=1), tau=0: {selected_u:?}; all r=1 selected at tau=0.45: {all_r1}"),
        ))
    })();
    Check::from_result("apply_rule: POP-A selected cells at tau=0 and tau=0.45", r)
}

fn check_observe_all_selected(seed: u64) -> Check {
    let r = (|| -> Result<(bool, String)> {
        let ds = observe(
            &pop_a(),
            &DecisionRule::baseline(0.45, 0.45)?,
            100_000,
            seed,
        );
        let r1: Vec<_> = ds.records.iter().filter(|r| r.r == 1).collect();
        let unselected = r1.iter().filter(|r| !r.selected()).count();
        Ok((
            !r1.is_empty() && unselected == 0,
            format!("{} group-1 records, {unselected} unselected", r1.len()),
        ))
    })();
    Check::from_result("observe: tau=0.45 selects every group-1 record", r)
}

fn check_exact_tables() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let pop = pop_a();
        let mut worst: f64 = 0.0;
        for tau in [0.0, 0.3, 0.45] {
            let rule = DecisionRule::baseline(0.45, tau)?;
            for x in 0..2 {
                for r in 0..2u8 {
                    let (y, s, ys) = brute_stratum(&pop, 0.45, tau, x, r);
                    let y = y.unwrap_or(f64::NAN);
                    worst = worst
                        .max(
                            (exact_prediction(&pop, &rule, Exercise::YGivenSelected, x, r)? - y)
                                .abs(),
                        )
                        .max((exact_prediction(&pop, &rule, Exercise::SFull, x, r)? - s).abs())
                        .max((exact_prediction(&pop, &rule, Exercise::YsFull, x, r)? - ys).abs());
                }
            }
        }
        let hand = [
            (0.0, 0.5, 1.0 / 3.0, 0.5 / 3.0),
            (0.3, 0.4, 2.0 / 3.0, 0.8 / 3.0),
            (0.45, 0.3, 1.0, 0.3),
        ];
        for (tau, y, s, ys) in hand {
            let (by, bs, bys) = brute_stratum(&pop, 0.45, tau, 0, 1);
            worst = worst
                .max((by.unwrap_or(f64::NAN) - y).abs())
                .max((bs - s).abs())
                .max((bys - ys).abs());
        }
        Ok((worst <= 1e-12, format!("max abs difference {worst:.2e}")))
    })();
    Check::from_result(
        "exact_prediction: POP-A tables match enumeration to 1e-12",
        r,
    )
}

fn check_interacted_vs_saturated(seed: u64) -> Check {
    let r = (|| -> Result<(bool, String)> {
        let ds = observe(&pop_a(), &DecisionRule::baseline(0.45, 0.3)?, 100_000, seed);
        let mut worst: f64 = 0.0;
        for ex in Exercise::ALL {
            let logit = fit(&ds, ex, false, &FitSpec::interacted_logistic())?;
            // stratum label means computed directly from the records
            let mut tally: BTreeMap<(u32, u8), (f64, f64)> = BTreeMap::new();
            for rec in &ds.records {
                let label = match ex {
                    Exercise::YGivenSelected => rec.label(),
                    Exercise::SFull => Some(rec.selected()),
                    Exercise::YsFull => Some(rec.label().unwrap_or(false)),
                };
                if let Some(l) = label {
                    let e = tally.entry((rec.x, rec.r)).or_default();
                    e.0 += 1.0;
                    e.1 += f64::from(u8::from(l));
                }
            }
            for ((x, r), (n, pos)) in tally {
                worst = worst.max((logit.predict(x, Some(r))? - pos / n).abs());
            }
        }
        Ok((worst <= 1e-3, format!("max abs difference {worst:.2e}")))
    })();
    Check::from_result(
        "fit: interacted logistic matches stratum means within 1e-3",
        r,
    )
}

fn check_saturated_prediction(seed: u64) -> Check {
    let r = (|| -> Result<(bool, String)> {
        let ds = observe(&pop_a(), &DecisionRule::baseline(0.45, 0.3)?, 100_000, seed);
        let p = fit(&ds, Exercise::YGivenSelected, false, &FitSpec::saturated())?
            .predict(0, Some(1))?;
        let n = ds
            .records
            .iter()
            .filter(|r| r.x == 0 && r.r == 1 && r.selected())
            .count() as f64;
        let se = (0.4 * 0.6 / n).sqrt();
        Ok((
            close(p, 0.4, 4.0 * se),
            format!("prediction {p:.5}, 4 SE = {:.5}", 4.0 * se),
        ))
    })();
    Check::from_result(
        "predict: saturated (x=0,r=1) at tau=0.3 is 0.4 within 4 SE",
        r,
    )
}

fn check_sweep_tables() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let pop = pop_a();
        let cfg = SweepConfig::exact(vec![0.0, 0.3, 0.45], DecisionRule::baseline(0.45, 0.0)?);
        let res = run_sweep(&pop, &cfg)?;
        let y: Vec<f64> = res
            .series(Exercise::YGivenSelected, false, 0, 1)
            .iter()
            .filter_map(|p| p.1)
            .collect();
        let s: Vec<f64> = res
            .series(Exercise::SFull, false, 0, 1)
            .iter()
            .filter_map(|p| p.1)
            .collect();
        let mut ey = Vec::new();
        let mut es = Vec::new();
        for tau in [0.0, 0.3, 0.45] {
            let (by, bs, _) = brute_stratum(&pop, 0.45, tau, 0, 1);
            ey.push(by.unwrap_or(f64::NAN));
            es.push(bs);
        }
        let ok = y.len() == 3
            && s.len() == 3
            && y.iter().zip(&ey).all(|(a, b)| close(*a, *b, 1e-12))
            && s.iter().zip(&es).all(|(a, b)| close(*a, *b, 1e-12));
        Ok((ok, format!("y_given_selected {y:?}, s_full {s:?}")))
    })();
    Check::from_result("run_sweep: POP-A exact grid [0, 0.3, 0.45]", r)
}

fn check_automated_rule() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let pop = pop_a();
        let strata = pop.strata();
        let mut flags = Vec::new();
        for tau in [0.0, 0.3] {
            let preds: BTreeMap<(u32, u8), f64> = strata
                .iter()
                .map(|&(x, r)| {
                    (
                        (x, r),
                        brute_stratum(&pop, 0.45, tau, x, r).0.unwrap_or(0.0),
                    )
                })
                .collect();
            flags.push(automated_rule(&preds, &strata, 0.45)?[&(0, 1)]);
        }
        Ok((
            flags == vec![true, false],
            format!("searched at tau=0, 0.3: {flags:?}"),
        ))
    })();
    Check::from_result(
        "automated_rule: (x=0,r=1) searched at tau=0, not at tau=0.3",
        r,
    )
}

fn check_mc_top_share(seed: u64) -> Check {
    let r = (|| -> Result<(bool, String)> {
        let n = 100_000;
        let mut cfg = SweepConfig::exact(vec![0.0, 0.3, 0.45], DecisionRule::baseline(0.45, 0.0)?);
        cfg.exercises = vec![Exercise::YGivenSelected];
        cfg.fit = FitSpec::saturated();
        cfg.mode = Mode::MonteCarlo { n, seed };
        let res = run_sweep(&pop_a(), &cfg)?;
        let vals: Vec<f64> = res
            .group_series(Exercise::YGivenSelected, false, 1)
            .iter()
            .filter_map(|g| g.top_share)
            .collect();
        // sampling tolerance: four binomial SE of a stratum's share of its group
        let tol = 4.0 * (0.25 / (n as f64 / 2.0)).sqrt();
        let ok = vals.len() == 3 && vals.windows(2).all(|w| w[1] <= w[0] + tol);
        Ok((
            ok,
            format!("group-1 top-share {vals:?}, tolerance {tol:.4}"),
        ))
    })();
    Check::from_result(
        "top_share: Monte Carlo group-1 fraction weakly decreasing",
        r,
    )
}

fn check_mlr() -> Check {
    let r = (|| -> Result<(bool, String)> {
        let pop = build_population(vec![
            Cell {
                x: 0,
                u: 0,
                r: 1,
                mass: 0.5,
                mu: 0.2,
            },
            Cell {
                x: 0,
                u: 1,
                r: 1,
                mass: 0.5,
                mu: 0.6,
            },
        ])?;
        let rule = DecisionRule::baseline(0.5, 0.0)?.with_noise(NoiseSpec::logistic(1.0))?;
        let (a, b) = mlr_diagnostic(&pop, &rule, (0.0, 0.2), (0.2, 0.6), 0, 1)?;
        let oa = logistic_sf(0.3) / logistic_sf(-0.1);
        let ob = logistic_sf(0.1) / logistic_sf(-0.3);
        let ok = close(a, oa, 1e-12)
            && close(b, ob, 1e-12)
            && close(a, 0.8107, 1e-4)
            && close(b, 0.8269, 1e-4);
        Ok((
            ok,
            format!("ratios {a:.6}, {b:.6}; closed form {oa:.6}, {ob:.6}"),
        ))
    })();
    Check::from_result("mlr_diagnostic: logistic ratios 0.8107 and 0.8269", r)
}

/// Group-blind group averages on the reconstruction population, from raw
/// cell loops.
fn brute_blind_movement(eps: f64, marginal: MarginalX) -> Result<[f64; 2]> {
    let pop = reconstruction_population(eps, marginal)?;
    let avg = |tau: f64, g: u8| -> f64 {
        let mut total = 0.0;
        let mut gm = 0.0;
        for x in 0..2u32 {
            let (mut ms, mut mys) = (0.0, 0.0);
            for c in pop.cells().iter().filter(|c| c.x == x) {
                if c.mu >= RECONSTRUCTION_C - tau * f64::from(c.r) {
                    ms += c.mass;
                    mys += c.mass * c.mu;
                }
            }
            let m: f64 = pop
                .cells()
                .iter()
                .filter(|c| c.x == x && c.r == g)
                .map(|c| c.mass)
                .sum();
            if m > 0.0 {
                total += m * mys / ms;
                gm += m;
            }
        }
        total / gm
    };
    let (t0, t1) = (
        RECONSTRUCTION_TAUS[0],
        RECONSTRUCTION_TAUS[RECONSTRUCTION_TAUS.len() - 1],
    );
    Ok([0, 1].map(|g| (avg(t1, g) - avg(t0, g)).abs()))
}

fn check_reconstruction(marginal: MarginalX, expected: u8) -> Check {
    let name = format!("reconstruction_demo: marginal at {marginal:?} moves group {expected} more");
    let r = (|| -> Result<(bool, String)> {
        let report = reconstruction_demo(0.05, marginal)?;
        let brute = brute_blind_movement(0.05, marginal)?;
        let oracle_larger = if brute[0] > brute[1] { 0 } else { 1 };
        let ok = report.larger_movement == Some(expected)
            && oracle_larger == expected
            && close(report.blind_movement[0], brute[0], 1e-12)
            && close(report.blind_movement[1], brute[1], 1e-12);
        Ok((
            ok,
            format!("movement {:?}, oracle {brute:?}", report.blind_movement),
        ))
    })();
    Check::from_result(&name, r)
}

fn check_generator_marginals(seed: u64) -> Check {
    let r = (|| -> Result<(bool, String)> {
        let spec = GeneratorSpec {
            n: 100_000,
            ..Default::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate(&spec, seed, &mut a)?;
        generate(&spec, seed, &mut b)?;
        let data = ingest(a.as_slice(), &SchemaConfig::default())?;
        let n = spec.n as f64;
        let four_sigma = |p: f64, m: f64| 4.0 * (p * (1.0 - p) / m).sqrt();
        let rep = data.report;
        let other = rep.dropped_other_group as f64 / n;
        let kept = data.records.len() as f64;
        let g1 = data.records.iter().filter(|r| r.r == 1).count() as f64 / kept;
        let searched = data.records.iter().filter(|r| r.searched).count() as f64 / kept;
        let mut flags_ok = true;
        for (k, &p) in spec.flag_rates.iter().enumerate() {
            for g in 0..2u8 {
                let grp: Vec<_> = data.records.iter().filter(|r| r.r == g).collect();
                let f = grp.iter().filter(|r| r.u[k]).count() as f64 / grp.len() as f64;
                let p = p + if g == 1 { spec.group1_flag_lift } else { 0.0 };
                flags_ok &= close(f, p, four_sigma(p, grp.len() as f64));
            }
        }
        let ok = a == b
            && close(other, spec.other_share, four_sigma(spec.other_share, n))
            && close(g1, spec.group1_share, four_sigma(spec.group1_share, kept))
            && close(
                searched,
                spec.search_rate,
                four_sigma(spec.search_rate, kept),
            )
            && flags_ok;
        Ok((
            ok,
            format!(
                "deterministic {}, other {other:.4}, group-1 {g1:.4}, searched {searched:.4}, flags {flags_ok}",
                a == b
            ),
        ))
    })();
    Check::from_result(
        "generator: deterministic with documented marginals (4 sigma)",
        r,
    )
}

fn check_single_flag_model(seed: u64) -> Check {
    let r = (|| -> Result<(bool, String)> {
        let flag = 8;
        let spec = GeneratorSpec {
            n: 100_000,
            contraband: ContrabandModel::single_flag(flag, -2.0, 2.5),
            ..Default::default()
        };
        let data = generate_data(&spec, seed)?;
        let (a, _) = split(&data.records, 0.5, seed)?;
        let risk = fit_risk_model(&a, &data.level_codes(), &Default::default())?;
        let coefs = &risk.model.coefficients;
        let names = &risk.model.names;
        let flag_name = format!("u{flag}");
        let dominant = names
            .iter()
            .zip(coefs)
            .skip(1)
            .max_by(|p, q| p.1.abs().total_cmp(&q.1.abs()))
            .map(|p| p.0.clone())
            .unwrap_or_default();
        let mut worst: f64 = 0.0;
        for v in [false, true] {
            let stratum: Vec<_> = a.iter().filter(|r| r.u[flag] == v).collect();
            let mean = stratum
                .iter()
                .filter(|r| r.contraband == Some(true))
                .count() as f64
                / stratum.len() as f64;
            let pred =
                stratum.iter().map(|r| risk.score(r)).sum::<Result<f64>>()? / stratum.len() as f64;
            worst = worst.max((mean - pred).abs());
        }
        Ok((
            dominant == flag_name && worst <= 0.01 && risk.model.meta.converged,
            format!("dominant coefficient {dominant}, max stratum gap {worst:.2e}"),
        ))
    })();
    Check::from_result("fit_risk_model: single-flag contraband is recovered", r)
}

fn check_calibration_monotone(seed: u64) -> Check {
    use rand::Rng;
    let r = (|| -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bad = 0;
        let mut cases = 0;
        for _ in 0..200 {
            let n0 = rng.random_range(5..60);
            let n1 = rng.random_range(40..120);
            let g0: Vec<f64> = (0..n0)
                .map(|_| (rng.random_range(0..20) as f64) / 20.0)
                .collect();
            let g1: Vec<f64> = (0..n1)
                .map(|_| (rng.random_range(0..20) as f64) / 20.0)
                .collect();
            let rate = rng.random_range(0.2..0.6);
            let mut prev: Option<(f64, f64)> = None;
            for k in 0..19 {
                let share = 0.05 + 0.05 * f64::from(k);
                let Ok(cal) = calibrate_thresholds([&g0, &g1], rate, share) else {
                    continue;
                };
                // brute force: the admitted count per group equals the number of
                // scores at or above the target-th largest score
                for (g, scores) in [(0usize, &g0), (1, &g1)] {
                    let mut sorted = scores.clone();
                    sorted.sort_by(|a, b| b.total_cmp(a));
                    let t = cal.target[g];
                    let expected = if t == 0 {
                        0
                    } else {
                        scores.iter().filter(|&&s| s >= sorted[t - 1]).count()
                    };
                    if cal.realized[g] != expected {
                        bad += 1;
                    }
                }
                if let Some((c0, c1)) = prev {
                    if cal.c[1] > c1 || cal.c[0] < c0 {
                        bad += 1;
                    }
                }
                prev = Some((cal.c[0], cal.c[1]));
                cases += 1;
            }
        }
        Ok((
            bad == 0 && cases > 0,
            format!("{cases} calibrations, {bad} violations"),
        ))
    })();
    Check::from_result(
        "calibrate_thresholds: monotone in share, counts match brute force",
        r,
    )
}

fn check_calibrated_rate(seed: u64) -> Check {
    let r = (|| -> Result<(bool, String)> {
        let data = generate_data(
            &GeneratorSpec {
                n: 100_000,
                ..Default::default()
            },
            seed,
        )?;
        let (a, b) = split(&data.records, 0.5, seed)?;
        let risk = fit_risk_model(&a, &data.level_codes(), &Default::default())?;
        let mut by_group = [Vec::new(), Vec::new()];
        for rec in &b {
            by_group[rec.r as usize].push(risk.score(rec)?);
        }
        let cal = calibrate_thresholds([&by_group[0], &by_group[1]], 0.5, 0.9)?;
        let set = synthesize(&b, cal.c, &risk)?;
        let searched = set
            .records
            .iter()
            .filter(|r| matches!(r.outcome, crate::estimation::Outcome::Selected { .. }))
            .count();
        let slack = cal.tie_slack[0] + cal.tie_slack[1];
        let wanted = 0.5 * b.len() as f64;
        let ok = searched == cal.realized[0] + cal.realized[1]
            && ((searched - slack) as f64 - wanted).abs() <= 1.0;
        Ok((
            ok,
            format!(
                "searched {searched} of {} (tie slack {slack}), target {wanted}",
                b.len()
            ),
        ))
    })();
    Check::from_result(
        "synthesize: calibrated search rate 0.5 within one record plus ties",
        r,
    )
}

fn check_figure_trends(seed: u64) -> Check {
    let r = (|| -> Result<(bool, String)> {
        let data = generate_data(
            &GeneratorSpec {
                n: 200_000,
                ..Default::default()
            },
            seed,
        )?;
        let res = replicate_figure(&data, &FigureConfig::default(), seed)?;
        let mut ok = true;
        let mut detail = Vec::new();
        for (ex, increasing) in [
            (Exercise::YGivenSelected, false),
            (Exercise::SFull, true),
            (Exercise::YsFull, true),
        ] {
            let pts: Vec<(f64, f64)> = res.curve(ex, 1).iter().map(|p| (p.2, p.3)).collect();
            let (pass, msg) = trend_holds(&pts, increasing);
            ok &= pass;
            detail.push(format!("{ex}: {msg}"));
        }
        Ok((ok, detail.join("; ")))
    })();
    Check::from_result(
        "replicate_figure: group-1 top-share trends over 7 shares",
        r,
    )
}

/// Runs every check. Monte Carlo checks use `seed`; results are returned
/// in a fixed order.
pub fn run_all(seed: u64) -> Vec<Check> {
    let tasks: Vec<Box<dyn Fn() -> Check + Send + Sync>> = vec![
        Box::new(move || check_sample_marginal(seed)),
        Box::new(check_conditional_means),
        Box::new(move || check_noisy_frequency(0.0, 0.4256, seed)),
        Box::new(move || check_noisy_frequency(0.2, 0.4750, seed)),
        Box::new(check_selection_probability),
        Box::new(check_apply_rule),
        Box::new(move || check_observe_all_selected(seed)),
        Box::new(check_exact_tables),
        Box::new(move || check_interacted_vs_saturated(seed)),
        Box::new(move || check_saturated_prediction(seed)),
        Box::new(check_sweep_tables),
        Box::new(check_automated_rule),
        Box::new(move || check_mc_top_share(seed)),
        Box::new(check_mlr),
        Box::new(|| check_reconstruction(MarginalX::One, 0)),
        Box::new(|| check_reconstruction(MarginalX::Zero, 1)),
        Box::new(move || check_generator_marginals(seed)),
        Box::new(move || check_single_flag_model(seed)),
        Box::new(move || check_calibration_monotone(seed)),
        Box::new(move || check_calibrated_rate(seed)),
        Box::new(move || check_figure_trends(seed)),
    ];
    tasks.par_iter().map(|t| t()).collect()
}
