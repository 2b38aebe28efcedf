//! Bias sweeps: for each value on a tau grid, compute the predictors of
//! every configured exercise, the automated rule they induce, and the
//! top-share statistic, then check the comparative statics.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{line_chart, Series};
use crate::decision::{DecisionRule, Variant};
use crate::error::{Error, Result};
use crate::estimation::{
    exact_prediction, exact_prediction_blind, fit, observe, stratum_counts, Exercise, FitSpec,
    ObservedDataset,
};
use crate::population::{build_population, conditional_mean_y, Cell, Group, Population};

/// Tolerance for weak monotonicity and constancy checks in exact mode.
pub const MONOTONE_TOL: f64 = 1e-12;

pub type Stratum = (u32, Group);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Exact,
    /// Sample `n` individuals per grid point. Every grid point uses the
    /// same seed, so the individuals and their errors are shared across tau.
    MonteCarlo { n: usize, seed: u64 },
}

fn default_exercises() -> Vec<Exercise> {
    Exercise::ALL.to_vec()
}

fn default_blind() -> Vec<bool> {
    vec![false]
}

fn default_c_min() -> f64 {
    0.5
}

fn default_q() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub tau_grid: Vec<f64>,
    /// Rule template; its `tau` is replaced by each grid value.
    pub rule: DecisionRule,
    #[serde(default = "default_exercises")]
    pub exercises: Vec<Exercise>,
    #[serde(default = "default_blind")]
    pub group_blind: Vec<bool>,
    #[serde(default = "default_c_min")]
    pub c_min: f64,
    #[serde(default = "default_q")]
    pub top_share_q: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub fit: FitSpec,
}

impl SweepConfig {
    pub fn exact(tau_grid: Vec<f64>, rule: DecisionRule) -> Self {
        Self {
            tau_grid,
            rule,
            exercises: default_exercises(),
            group_blind: default_blind(),
            c_min: default_c_min(),
            top_share_q: default_q(),
            mode: Mode::Exact,
            fit: FitSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if self.tau_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridNotAscending);
        }
        if !(0.0..=1.0).contains(&self.c_min) {
            return Err(Error::InvalidConfig(format!(
                "c_min = {} outside [0, 1]",
                self.c_min
            )));
        }
        if !(self.top_share_q > 0.0 && self.top_share_q < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "top_share_q = {} outside (0, 1)",
                self.top_share_q
            )));
        }
        if self.exercises.is_empty() || self.group_blind.is_empty() {
            return Err(Error::InvalidConfig("no exercises configured".into()));
        }
        if let Mode::MonteCarlo { n, .. } = self.mode {
            if n == 0 {
                return Err(Error::InvalidConfig(
                    "monte_carlo n must be positive".into(),
                ));
            }
        }
        self.rule.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub exercise: Exercise,
    pub group_blind: bool,
    pub x: u32,
    pub r: Group,
    pub prediction: Option<f64>,
    pub searched: Option<bool>,
    pub group_fraction: Option<f64>,
    pub top_share: Option<f64>,
    /// Set when the stratum fails positivity (no selected mass) for a
    /// selected-sample exercise.
    pub positivity_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetric {
    pub tau: f64,
    pub exercise: Exercise,
    pub group_blind: bool,
    pub r: Group,
    pub group_fraction: Option<f64>,
    pub top_share: Option<f64>,
    /// Share of the top set belonging to this group.
    pub top_share_composition: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrRow {
    pub tau: f64,
    pub x: u32,
    pub mu_low: f64,
    pub mu_high: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub groups: Vec<GroupMetric>,
    pub mlr: Vec<MlrRow>,
}

impl SweepResult {
    /// Predictions at one stratum across the grid, in grid order.
    pub fn series(
        &self,
        exercise: Exercise,
        group_blind: bool,
        x: u32,
        r: Group,
    ) -> Vec<(f64, Option<f64>)> {
        self.rows
            .iter()
            .filter(|row| {
                row.exercise == exercise
                    && row.group_blind == group_blind
                    && row.x == x
                    && row.r == r
            })
            .map(|row| (row.tau, row.prediction))
            .collect()
    }

    pub fn group_series(
        &self,
        exercise: Exercise,
        group_blind: bool,
        r: Group,
    ) -> Vec<&GroupMetric> {
        self.groups
            .iter()
            .filter(|g| g.exercise == exercise && g.group_blind == group_blind && g.r == r)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "tau",
            "exercise",
            "group_blind",
            "x",
            "r",
            "prediction",
            "searched",
            "group_fraction",
            "top_share",
            "positivity_flag",
        ])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for row in &self.rows {
            wr.write_record([
                row.tau.to_string(),
                row.exercise.to_string(),
                u8::from(row.group_blind).to_string(),
                row.x.to_string(),
                row.r.to_string(),
                opt(row.prediction),
                row.searched
                    .map(|s| u8::from(s).to_string())
                    .unwrap_or_default(),
                opt(row.group_fraction),
                opt(row.top_share),
                u8::from(row.positivity_flag).to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_mlr_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["tau", "x", "mu_low", "mu_high", "ratio"])?;
        for m in &self.mlr {
            wr.write_record([
                m.tau.to_string(),
                m.x.to_string(),
                m.mu_low.to_string(),
                m.mu_high.to_string(),
                m.ratio.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// One chart per (exercise, blind, metric) with a series per group.
    pub fn charts(&self) -> Vec<(String, String)> {
        let mut keys: Vec<(Exercise, bool)> = self
            .groups
            .iter()
            .map(|g| (g.exercise, g.group_blind))
            .collect();
        keys.dedup();
        keys.sort();
        keys.dedup();
        let mut out = Vec::new();
        for (exercise, blind) in keys {
            for metric in ["group_fraction", "top_share"] {
                let series: Vec<Series> = (0..2u8)
                    .map(|r| Series {
                        name: format!("r={r}"),
                        points: self
                            .group_series(exercise, blind, r)
                            .iter()
                            .filter_map(|g| {
                                let v = if metric == "group_fraction" {
                                    g.group_fraction
                                } else {
                                    g.top_share
                                };
                                v.map(|v| (g.tau, v))
                            })
                            .collect(),
                    })
                    .filter(|s| !s.points.is_empty())
                    .collect();
                if series.is_empty() {
                    continue;
                }
                let suffix = if blind { "_blind" } else { "" };
                let name = format!("sweep_{exercise}{suffix}_{metric}.svg");
                let title = format!("{exercise}{suffix}: {metric}");
                out.push((name, line_chart(&title, "tau", metric, &series)));
            }
        }
        out
    }
}

/// Indicator per stratum of `prediction >= c_min`.
pub fn automated_rule(
    predictions: &BTreeMap<Stratum, f64>,
    strata: &[Stratum],
    c_min: f64,
) -> Result<BTreeMap<Stratum, bool>> {
    strata
        .iter()
        .map(|&(x, r)| {
            predictions
                .get(&(x, r))
                .map(|&p| ((x, r), p >= c_min))
                .ok_or(Error::MissingStratum { x, r })
        })
        .collect()
}

/// Weighted fraction of each group searched by an automated rule; `None`
/// for a group with no weight.
pub fn group_fractions(
    indicators: &BTreeMap<Stratum, bool>,
    weights: &BTreeMap<Stratum, f64>,
) -> [Option<f64>; 2] {
    let mut num = [0.0; 2];
    let mut den = [0.0; 2];
    for (&(x, r), &w) in weights {
        den[r as usize] += w;
        if indicators.get(&(x, r)).copied().unwrap_or(false) {
            num[r as usize] += w;
        }
    }
    [0, 1].map(|g| (den[g] > 0.0).then(|| num[g] / den[g]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopShare {
    /// Score at the cut; every score `>=` it is in the top set.
    pub threshold: f64,
    /// Within-group fraction in the top set, indexed by group.
    pub fraction: [f64; 2],
    /// Share of the top set belonging to each group.
    pub composition: [f64; 2],
    pub top_weight: f64,
    /// `q` times the total weight; `top_weight` exceeds it under ties.
    pub target_weight: f64,
}

/// Weighted top-`q` share. The cut is the largest score `v` such that the
/// weight of scores `>= v` reaches `q` of the total; all scores tied at the
/// cut are included.
pub fn top_share_weighted(
    scores: &[f64],
    groups: &[Group],
    weights: &[f64],
    q: f64,
) -> Result<TopShare> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("q = {q} outside (0, 1)")));
    }
    if scores.is_empty() || scores.len() != groups.len() || scores.len() != weights.len() {
        return Err(Error::InvalidArgument(
            "scores, groups and weights must be nonempty and aligned".into(),
        ));
    }
    let mut group_weight = [0.0; 2];
    for (&g, &w) in groups.iter().zip(weights) {
        group_weight[g as usize] += w;
    }
    for g in 0..2u8 {
        if group_weight[g as usize] <= 0.0 {
            return Err(Error::EmptyGroup(g));
        }
    }
    let total = group_weight[0] + group_weight[1];
    let target = q * total;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut cum = 0.0;
    let mut threshold = scores[order[order.len() - 1]];
    let mut i = 0;
    while i < order.len() {
        let v = scores[order[i]];
        while i < order.len() && scores[order[i]] == v {
            cum += weights[order[i]];
            i += 1;
        }
        if cum >= target * (1.0 - 1e-12) {
            threshold = v;
            break;
        }
    }

    let mut top = [0.0; 2];
    for ((&s, &g), &w) in scores.iter().zip(groups).zip(weights) {
        if s >= threshold {
            top[g as usize] += w;
        }
    }
    let top_weight = top[0] + top[1];
    Ok(TopShare {
        threshold,
        fraction: [top[0] / group_weight[0], top[1] / group_weight[1]],
        composition: [top[0] / top_weight, top[1] / top_weight],
        top_weight,
        target_weight: target,
    })
}

/// Unweighted [`top_share_weighted`] over individual-level scores.
pub fn top_share(scores: &[f64], groups: &[Group], q: f64) -> Result<TopShare> {
    top_share_weighted(scores, groups, &vec![1.0; scores.len()], q)
}

const MU_EQ_TOL: f64 = 1e-12;

fn mu_mass(pop: &Population, x: u32, r: Group, mu: f64) -> f64 {
    pop.stratum_cells(x, r)
        .iter()
        .map(|&i| &pop.cells()[i])
        .filter(|c| (c.mu - mu).abs() <= MU_EQ_TOL)
        .map(|c| c.mass)
        .sum()
}

/// `P(mu = mu_low | S = 1, x, r) / P(mu = mu_high | S = 1, x, r)` at each
/// of the two tau values, from exact selection probabilities.
pub fn mlr_diagnostic(
    pop: &Population,
    rule: &DecisionRule,
    tau_pair: (f64, f64),
    mu_pair: (f64, f64),
    x: u32,
    r: Group,
) -> Result<(f64, f64)> {
    if rule.noise.is_none() {
        return Err(Error::DeterministicRule);
    }
    if tau_pair.0 > tau_pair.1 {
        return Err(Error::InvalidArgument("tau pair must be ordered".into()));
    }
    if !(mu_pair.0 < mu_pair.1) {
        return Err(Error::InvalidArgument(
            "mu pair must be strictly ordered".into(),
        ));
    }
    let m_low = mu_mass(pop, x, r, mu_pair.0);
    if m_low <= 0.0 {
        return Err(Error::MuOffSupport(mu_pair.0));
    }
    let m_high = mu_mass(pop, x, r, mu_pair.1);
    if m_high <= 0.0 {
        return Err(Error::MuOffSupport(mu_pair.1));
    }
    let ratio = |tau: f64| -> Result<f64> {
        let rl = rule.with_tau(tau);
        Ok(rl.selection_probability(mu_pair.0, r)? * m_low
            / (rl.selection_probability(mu_pair.1, r)? * m_high))
    };
    Ok((ratio(tau_pair.0)?, ratio(tau_pair.1)?))
}

fn distinct_mus(pop: &Population, x: u32, r: Group) -> Vec<f64> {
    let mut mus: Vec<f64> = pop
        .stratum_cells(x, r)
        .iter()
        .map(|&i| pop.cells()[i])
        .filter(|c| c.mass > 0.0)
        .map(|c| c.mu)
        .collect();
    mus.sort_by(f64::total_cmp);
    mus.dedup_by(|a, b| (*a - *b).abs() <= MU_EQ_TOL);
    mus
}

struct PointOutput {
    rows: Vec<SweepRow>,
    groups: Vec<GroupMetric>,
    mlr: Vec<MlrRow>,
}

fn predictions_for(
    pop: &Population,
    rule: &DecisionRule,
    cfg: &SweepConfig,
    dataset: Option<&ObservedDataset>,
    strata: &[Stratum],
    exercise: Exercise,
    blind: bool,
) -> Result<BTreeMap<Stratum, Option<f64>>> {
    let mut out = BTreeMap::new();
    match dataset {
        None => {
            for &(x, r) in strata {
                let p = if blind {
                    exact_prediction_blind(pop, rule, exercise, x)
                } else {
                    exact_prediction(pop, rule, exercise, x, r)
                };
                let p = match p {
                    Ok(v) => Some(v),
                    Err(Error::NoSelectedMass { .. }) => None,
                    Err(e) => return Err(e),
                };
                out.insert((x, r), p);
            }
        }
        Some(ds) => {
            let predictor = match fit(ds, exercise, blind, &cfg.fit) {
                Ok(p) => Some(p),
                Err(Error::NoLabels) => None,
                Err(e) => return Err(e),
            };
            // positivity in the sample: selected records present in the stratum
            let mut selected: BTreeMap<(u32, Option<Group>), usize> = BTreeMap::new();
            for rec in ds.records.iter().filter(|r| r.selected()) {
                *selected
                    .entry((rec.x, if blind { None } else { Some(rec.r) }))
                    .or_default() += 1;
            }
            for &(x, r) in strata {
                let key = (x, if blind { None } else { Some(r) });
                let positive = exercise != Exercise::YGivenSelected || selected.contains_key(&key);
                let p = match (&predictor, positive) {
                    (Some(pr), true) => match pr.predict(x, Some(r)) {
                        Ok(v) => Some(v),
                        Err(Error::OffSupport { .. }) => None,
                        Err(e) => return Err(e),
                    },
                    _ => None,
                };
                out.insert((x, r), p);
            }
        }
    }
    Ok(out)
}

fn run_point(pop: &Population, cfg: &SweepConfig, tau: f64) -> Result<PointOutput> {
    let rule = cfg.rule.with_tau(tau);
    let dataset = match cfg.mode {
        Mode::Exact => None,
        Mode::MonteCarlo { n, seed } => Some(observe(pop, &rule, n, seed)),
    };
    let weights: BTreeMap<Stratum, f64> = match &dataset {
        None => pop
            .strata()
            .into_iter()
            .map(|(x, r)| ((x, r), pop.stratum_mass(x, r)))
            .collect(),
        Some(ds) => stratum_counts(ds),
    };
    let strata: Vec<Stratum> = weights.keys().copied().collect();

    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for &exercise in &cfg.exercises {
        for &blind in &cfg.group_blind {
            let preds =
                predictions_for(pop, &rule, cfg, dataset.as_ref(), &strata, exercise, blind)?;
            let complete: Option<BTreeMap<Stratum, f64>> =
                preds.iter().map(|(&k, &v)| v.map(|v| (k, v))).collect();

            let (indicators, fractions, top) = match &complete {
                Some(full) => {
                    let ind = automated_rule(full, &strata, cfg.c_min)?;
                    let fr = group_fractions(&ind, &weights);
                    let scores: Vec<f64> = strata.iter().map(|s| full[s]).collect();
                    let grp: Vec<Group> = strata.iter().map(|s| s.1).collect();
                    let w: Vec<f64> = strata.iter().map(|s| weights[s]).collect();
                    let top = match top_share_weighted(&scores, &grp, &w, cfg.top_share_q) {
                        Ok(t) => Some(t),
                        Err(Error::EmptyGroup(_)) => None,
                        Err(e) => return Err(e),
                    };
                    (Some(ind), fr, top)
                }
                None => (None, [None, None], None),
            };

            for (&(x, r), &p) in &preds {
                rows.push(SweepRow {
                    tau,
                    exercise,
                    group_blind: blind,
                    x,
                    r,
                    prediction: p,
                    searched: indicators.as_ref().map(|ind| ind[&(x, r)]),
                    group_fraction: fractions[r as usize],
                    top_share: top.as_ref().map(|t| t.fraction[r as usize]),
                    positivity_flag: p.is_none(),
                });
            }
            for r in 0..2u8 {
                groups.push(GroupMetric {
                    tau,
                    exercise,
                    group_blind: blind,
                    r,
                    group_fraction: fractions[r as usize],
                    top_share: top.as_ref().map(|t| t.fraction[r as usize]),
                    top_share_composition: top.as_ref().map(|t| t.composition[r as usize]),
                });
            }
        }
    }

    let mut mlr = Vec::new();
    if rule.noise.is_some() {
        for x in pop.x_domain().iter().copied() {
            let mus = distinct_mus(pop, x, 1);
            for w in mus.windows(2) {
                let (ratio, _) = mlr_diagnostic(pop, &rule, (tau, tau), (w[0], w[1]), x, 1)?;
                mlr.push(MlrRow {
                    tau,
                    x,
                    mu_low: w[0],
                    mu_high: w[1],
                    ratio,
                });
            }
        }
    }
    Ok(PointOutput { rows, groups, mlr })
}

/// Runs the sweep. Grid points are evaluated in parallel and merged in grid
/// order, so the result does not depend on the thread count.
pub fn run_sweep(pop: &Population, cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let points: Vec<PointOutput> = cfg
        .tau_grid
        .par_iter()
        .map(|&tau| run_point(pop, cfg, tau))
        .collect::<Result<_>>()?;
    let mut result = SweepResult::default();
    for p in points {
        result.rows.extend(p.rows);
        result.groups.extend(p.groups);
        result.mlr.extend(p.mlr);
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
    Constant,
}

impl Direction {
    fn flip(self) -> Self {
        match self {
            Direction::Increasing => Direction::Decreasing,
            Direction::Decreasing => Direction::Increasing,
            Direction::Constant => Direction::Constant,
        }
    }
}

/// Checks consecutive defined values against `dir`, returning the first
/// offending pair as `(tau_a, value_a, tau_b, value_b)`.
pub fn monotone_violation(
    values: &[(f64, Option<f64>)],
    dir: Direction,
    tol: f64,
) -> Option<(f64, f64, f64, f64)> {
    let defined: Vec<(f64, f64)> = values
        .iter()
        .filter_map(|&(t, v)| v.map(|v| (t, v)))
        .collect();
    defined.windows(2).find_map(|w| {
        let (a, b) = (w[0].1, w[1].1);
        let bad = match dir {
            Direction::Increasing => b < a - tol,
            Direction::Decreasing => b > a + tol,
            Direction::Constant => (b - a).abs() > tol,
        };
        bad.then_some((w[0].0, a, w[1].0, b))
    })
}

/// Direction of the group-1 prediction in tau implied by the model, for a
/// group-aware predictor.
pub fn expected_direction(exercise: Exercise, variant: Variant) -> Direction {
    let base = match exercise {
        Exercise::YGivenSelected => Direction::Decreasing,
        Exercise::SFull | Exercise::YsFull => Direction::Increasing,
    };
    match variant {
        Variant::Baseline => base,
        Variant::FewerLabels => base.flip(),
    }
}

/// Checks an exact-mode sweep against every comparative static that applies
/// to it and returns one message per violation.
pub fn verify_sweep(pop: &Population, cfg: &SweepConfig, result: &SweepResult) -> Vec<String> {
    let mut violations = Vec::new();
    if cfg.mode != Mode::Exact {
        return violations;
    }
    let variant = cfg.rule.variant;
    for &exercise in &cfg.exercises {
        if !cfg.group_blind.contains(&false) {
            continue;
        }
        let dir1 = expected_direction(exercise, variant);
        for (x, r) in pop.strata() {
            let series = result.series(exercise, false, x, r);
            let dir = if r == 0 { Direction::Constant } else { dir1 };
            if let Some(v) = monotone_violation(&series, dir, MONOTONE_TOL) {
                violations.push(format!(
                    "{exercise} prediction at (x={x}, r={r}) not {dir:?}: {v:?}"
                ));
            }

            // automated-rule membership follows the prediction direction
            let searched: Vec<(f64, Option<f64>)> = result
                .rows
                .iter()
                .filter(|row| {
                    row.exercise == exercise && !row.group_blind && row.x == x && row.r == r
                })
                .map(|row| {
                    (
                        row.tau,
                        row.prediction.map(|p| f64::from(u8::from(p >= cfg.c_min))),
                    )
                })
                .collect();
            if let Some(v) = monotone_violation(&searched, dir, 0.0) {
                violations.push(format!(
                    "{exercise} automated set at (x={x}, r={r}) not {dir:?}: {v:?}"
                ));
            }

            if r == 1 && variant == Variant::FewerLabels && exercise == Exercise::YGivenSelected {
                if let Ok(mean) = conditional_mean_y(pop, x, 1) {
                    let bias: Vec<(f64, Option<f64>)> = series
                        .iter()
                        .map(|&(t, p)| (t, p.map(|p| (p - mean).abs())))
                        .collect();
                    if let Some(v) = monotone_violation(&bias, Direction::Increasing, MONOTONE_TOL)
                    {
                        violations.push(format!(
                            "statistical bias at (x={x}, r=1) not increasing: {v:?}"
                        ));
                    }
                }
            }
        }
        for r in 0..2u8 {
            let fr: Vec<(f64, Option<f64>)> = result
                .group_series(exercise, false, r)
                .iter()
                .map(|g| (g.tau, g.group_fraction))
                .collect();
            let dir = if r == 0 { Direction::Constant } else { dir1 };
            if let Some(v) = monotone_violation(&fr, dir, MONOTONE_TOL) {
                violations.push(format!(
                    "{exercise} group-{r} automated fraction not {dir:?}: {v:?}"
                ));
            }
        }
    }

    let mlr_dir = match variant {
        Variant::Baseline => Direction::Increasing,
        Variant::FewerLabels => Direction::Decreasing,
    };
    let mut keys: Vec<(u32, u64, u64)> = result
        .mlr
        .iter()
        .map(|m| (m.x, m.mu_low.to_bits(), m.mu_high.to_bits()))
        .collect();
    keys.sort();
    keys.dedup();
    for (x, lo, hi) in keys {
        let series: Vec<(f64, Option<f64>)> = result
            .mlr
            .iter()
            .filter(|m| m.x == x && m.mu_low.to_bits() == lo && m.mu_high.to_bits() == hi)
            .map(|m| (m.tau, Some(m.ratio)))
            .collect();
        if let Some(v) = monotone_violation(
            &series,
            mlr_dir,
            MONOTONE_TOL * series[0].1.unwrap_or(1.0).max(1.0),
        ) {
            violations.push(format!("MLR ratio at x={x} not {mlr_dir:?}: {v:?}"));
        }
    }
    violations
}

/// Where the marginally searched group-1 individuals sit in the
/// reconstruction example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalX {
    One,
    Zero,
}

impl MarginalX {
    fn code(self) -> u32 {
        match self {
            MarginalX::One => 1,
            MarginalX::Zero => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub epsilon: f64,
    pub marginal_x: MarginalX,
    pub tau_grid: Vec<f64>,
    /// Group-blind `E[Y | X = x, S = 1]` per x (rows) and tau (columns).
    pub blind_prediction: Vec<Vec<Option<f64>>>,
    /// Average group-blind prediction per group (rows) and tau (columns).
    pub blind_average: [Vec<f64>; 2],
    /// Average group-aware prediction per group and tau.
    pub aware_average: [Vec<f64>; 2],
    pub blind_movement: [f64; 2],
    pub aware_movement: [f64; 2],
    /// Group whose blind average moved more over the grid.
    pub larger_movement: Option<Group>,
    /// Change in (group 1 - group 0) average prediction over the grid.
    pub blind_gap_change: f64,
    pub aware_gap_change: f64,
    /// Largest |blind - aware| over tau and strata with positive mass.
    pub max_blind_aware_difference: f64,
}

/// Search cost in the reconstruction example.
pub const RECONSTRUCTION_C: f64 = 0.5;
pub const RECONSTRUCTION_TAUS: [f64; 4] = [0.0, 0.1, 0.2, 0.3];

/// The binary-X population: group 0 has `X = 1` with probability
/// `1 - epsilon`, group 1 has `X = 0` with probability `1 - epsilon`.
/// Group 1 at the marginal x has a cell with `mu = 0.4` that enters the
/// searched pool once `tau >= 0.1`; no other cell changes status on the grid.
pub fn reconstruction_population(epsilon: f64, marginal: MarginalX) -> Result<Population> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon = {epsilon} outside [0, 0.5)"
        )));
    }
    let xm = marginal.code();
    let mut cells = Vec::new();
    for r in 0..2u8 {
        for x in 0..2u32 {
            let majority = if r == 0 { x == 1 } else { x == 0 };
            let px = if majority { 1.0 - epsilon } else { epsilon };
            if px <= 0.0 {
                continue;
            }
            let mus: [f64; 3] = match (r, x == xm) {
                (0, _) => [0.2, 0.55, 0.7],
                (_, true) => [0.1, 0.4, 0.7],
                (_, false) => [0.05, 0.55, 0.7],
            };
            for (u, &mu) in mus.iter().enumerate() {
                cells.push(Cell {
                    x,
                    u: u as u32,
                    r,
                    mass: 0.5 * px / 3.0,
                    mu,
                });
            }
        }
    }
    build_population(cells)
}

/// Sweeps tau over the reconstruction population and reports how the
/// group-blind and group-aware average predictions move for each group.
pub fn reconstruction_demo(epsilon: f64, marginal: MarginalX) -> Result<ReconstructionReport> {
    let pop = reconstruction_population(epsilon, marginal)?;
    let taus = RECONSTRUCTION_TAUS.to_vec();
    let ex = Exercise::YGivenSelected;
    let mut blind_prediction = vec![Vec::new(); pop.x_domain().len()];
    let mut blind_average = [Vec::new(), Vec::new()];
    let mut aware_average = [Vec::new(), Vec::new()];
    let mut max_diff: f64 = 0.0;

    for &tau in &taus {
        let rule = DecisionRule::baseline(RECONSTRUCTION_C, tau)?;
        for (i, &x) in pop.x_domain().iter().enumerate() {
            blind_prediction[i].push(exact_prediction_blind(&pop, &rule, ex, x).ok());
        }
        for r in 0..2u8 {
            let gm = pop.group_mass(r);
            let (mut b, mut a) = (0.0, 0.0);
            for &x in pop.x_domain() {
                let m = pop.stratum_mass(x, r);
                if m <= 0.0 {
                    continue;
                }
                let blind = exact_prediction_blind(&pop, &rule, ex, x)?;
                let aware = exact_prediction(&pop, &rule, ex, x, r)?;
                b += m / gm * blind;
                a += m / gm * aware;
                let other = pop.stratum_mass(x, 1 - r);
                if other <= 0.0 {
                    max_diff = max_diff.max((blind - aware).abs());
                }
            }
            blind_average[r as usize].push(b);
            aware_average[r as usize].push(a);
        }
    }
    let movement = |v: &Vec<f64>| (v[v.len() - 1] - v[0]).abs();
    let blind_movement = [movement(&blind_average[0]), movement(&blind_average[1])];
    let aware_movement = [movement(&aware_average[0]), movement(&aware_average[1])];
    let larger_movement = if (blind_movement[0] - blind_movement[1]).abs() <= 1e-15 {
        None
    } else if blind_movement[0] > blind_movement[1] {
        Some(0)
    } else {
        Some(1)
    };
    let gap = |avg: &[Vec<f64>; 2], k: usize| avg[1][k] - avg[0][k];
    let last = taus.len() - 1;
    Ok(ReconstructionReport {
        epsilon,
        marginal_x: marginal,
        blind_gap_change: gap(&blind_average, last) - gap(&blind_average, 0),
        aware_gap_change: gap(&aware_average, last) - gap(&aware_average, 0),
        tau_grid: taus,
        blind_prediction,
        blind_average,
        aware_average,
        blind_movement,
        aware_movement,
        larger_movement,
        max_blind_aware_difference: max_diff,
    })
}
