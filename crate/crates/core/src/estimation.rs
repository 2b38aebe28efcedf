//! The data scientist's side: observed datasets under selective labels and
//! the three prediction exercises (Y on the selected sample, S on the full
//! sample, Y·S on the full sample), each optionally group-blind.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decision::DecisionRule;
use crate::error::{Error, Result};
use crate::logistic::{
    add_observation, Encoder, FeatureKey, FitMeta, GroupedData, IrlsOptions, LogisticModel,
};
use crate::population::{derive_seed, sample_cells, Group, Population};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exercise {
    /// `E[Y | X, R, S = 1]`, trained on selected records only.
    YGivenSelected,
    /// `E[S | X, R]` over the full sample.
    SFull,
    /// `E[Y·S | X, R]` over the full sample; unselected labels count as 0.
    YsFull,
}

impl Exercise {
    pub const ALL: [Exercise; 3] = [Exercise::YGivenSelected, Exercise::SFull, Exercise::YsFull];

    pub fn as_str(self) -> &'static str {
        match self {
            Exercise::YGivenSelected => "y_given_selected",
            Exercise::SFull => "s_full",
            Exercise::YsFull => "ys_full",
        }
    }
}

impl std::fmt::Display for Exercise {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Selection outcome for one record. There is no label slot for an
/// unselected record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Unselected,
    Selected { y: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Record {
    pub x: u32,
    pub r: Group,
    pub outcome: Outcome,
}

impl Record {
    pub fn selected(&self) -> bool {
        matches!(self.outcome, Outcome::Selected { .. })
    }

    pub fn label(&self) -> Option<bool> {
        match self.outcome {
            Outcome::Selected { y } => Some(y),
            Outcome::Unselected => None,
        }
    }

    /// Builds a record from raw fields, masking `y` when `s` is false.
    pub fn masked(x: u32, r: Group, s: bool, y: bool) -> Self {
        let outcome = if s {
            Outcome::Selected { y }
        } else {
            Outcome::Unselected
        };
        Self { x, r, outcome }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub rule: DecisionRule,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedDataset {
    pub records: Vec<Record>,
    pub provenance: Option<Provenance>,
}

impl ObservedDataset {
    pub fn from_records(records: Vec<Record>) -> Self {
        Self {
            records,
            provenance: None,
        }
    }

    pub fn selected_count(&self) -> usize {
        self.records.iter().filter(|r| r.selected()).count()
    }
}

/// Samples `n` individuals, applies `rule` (drawing one error per
/// individual when the rule is noisy), and masks unselected labels.
///
/// The individuals are exactly those of `population::sample(pop, n, seed)`;
/// errors come from a separate stream derived from `seed`.
pub fn observe(pop: &Population, rule: &DecisionRule, n: usize, seed: u64) -> ObservedDataset {
    let draws = sample_cells(pop, n, seed);
    let mut eps_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let records = draws
        .into_iter()
        .map(|(i, y)| {
            let c = &pop.cells()[i];
            let s = match &rule.noise {
                Some(noise) => rule.select_noisy(c.mu, c.r, noise.draw(&mut eps_rng, c.r)),
                None => rule.select(c.mu, c.r),
            };
            Record::masked(c.x, c.r, s, y)
        })
        .collect();
    ObservedDataset {
        records,
        provenance: Some(Provenance {
            rule: *rule,
            n,
            seed,
        }),
    }
}

struct StratumSums {
    mass: f64,
    selected: f64,
    selected_mu: f64,
}

fn stratum_sums(pop: &Population, rule: &DecisionRule, x: u32, r: Option<Group>) -> StratumSums {
    let mut sums = StratumSums {
        mass: 0.0,
        selected: 0.0,
        selected_mu: 0.0,
    };
    for c in pop.cells() {
        if c.x != x || r.is_some_and(|r| c.r != r) {
            continue;
        }
        let selected = c.mass * rule.selection_weight(c.mu, c.r);
        sums.mass += c.mass;
        sums.selected += selected;
        sums.selected_mu += selected * c.mu;
    }
    sums
}

fn exact_from_sums(s: StratumSums, exercise: Exercise, x: u32, r: Option<Group>) -> Result<f64> {
    if s.mass <= 0.0 {
        return Err(Error::EmptyStratum { x, r });
    }
    match exercise {
        Exercise::YGivenSelected => {
            if s.selected > 0.0 {
                Ok(s.selected_mu / s.selected)
            } else {
                Err(Error::NoSelectedMass { x, r })
            }
        }
        Exercise::SFull => Ok(s.selected / s.mass),
        Exercise::YsFull => Ok(s.selected_mu / s.mass),
    }
}

/// Exact population value of the exercise's target at stratum `(x, r)`.
///
/// Noisy rules contribute exact per-cell selection probabilities.
pub fn exact_prediction(
    pop: &Population,
    rule: &DecisionRule,
    exercise: Exercise,
    x: u32,
    r: Group,
) -> Result<f64> {
    exact_from_sums(stratum_sums(pop, rule, x, Some(r)), exercise, x, Some(r))
}

/// Group-blind analogue of [`exact_prediction`]: conditions on `x` only.
pub fn exact_prediction_blind(
    pop: &Population,
    rule: &DecisionRule,
    exercise: Exercise,
    x: u32,
) -> Result<f64> {
    exact_from_sums(stratum_sums(pop, rule, x, None), exercise, x, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitForm {
    /// Per-stratum label means.
    Saturated,
    #[default]
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSpec {
    pub form: FitForm,
    /// Include x-by-group interactions (the fully interacted encoding is
    /// saturated over `(x, r)`).
    pub interact_group: bool,
    pub irls: IrlsOptions,
}

impl Default for FitSpec {
    fn default() -> Self {
        Self {
            form: FitForm::Logistic,
            interact_group: false,
            irls: IrlsOptions::default(),
        }
    }
}

impl FitSpec {
    pub fn saturated() -> Self {
        Self {
            form: FitForm::Saturated,
            ..Default::default()
        }
    }

    pub fn interacted_logistic() -> Self {
        Self {
            form: FitForm::Logistic,
            interact_group: true,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumEntry {
    pub x: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Group>,
    pub prediction: f64,
    pub n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorForm {
    Table { strata: Vec<StratumEntry> },
    Logistic { model: LogisticModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub exercise: Exercise,
    pub group_blind: bool,
    pub form: PredictorForm,
    pub fit_meta: FitMeta,
}

/// Training label for `exercise` given an observed outcome; `None` when the
/// record is not part of that exercise's training sample.
pub fn training_label(outcome: Outcome, exercise: Exercise) -> Option<bool> {
    match (exercise, outcome) {
        (Exercise::YGivenSelected, Outcome::Selected { y }) => Some(y),
        (Exercise::YGivenSelected, Outcome::Unselected) => None,
        (Exercise::SFull, o) => Some(matches!(o, Outcome::Selected { .. })),
        (Exercise::YsFull, Outcome::Selected { y }) => Some(y),
        (Exercise::YsFull, Outcome::Unselected) => Some(false),
    }
}

/// Fits a predictor for `exercise`. `y_given_selected` trains on selected
/// records only; the full-sample exercises train on every record.
///
/// Logistic fits that fail to converge are returned as
/// [`Error::NonConvergence`] carrying the fit metadata.
pub fn fit(
    dataset: &ObservedDataset,
    exercise: Exercise,
    group_blind: bool,
    spec: &FitSpec,
) -> Result<Predictor> {
    let mut data = GroupedData::new();
    for rec in &dataset.records {
        if let Some(label) = training_label(rec.outcome, exercise) {
            let key = FeatureKey {
                cats: vec![rec.x],
                r: if group_blind { None } else { Some(rec.r) },
                flags: vec![],
            };
            add_observation(&mut data, key, label);
        }
    }
    if data.is_empty() {
        return Err(Error::NoLabels);
    }

    match spec.form {
        FitForm::Saturated => {
            let strata: Vec<StratumEntry> = data
                .iter()
                .map(|(k, c)| StratumEntry {
                    x: k.cats[0],
                    r: k.r,
                    prediction: c.positives / c.n,
                    n: c.n,
                })
                .collect();
            let n_obs = strata.iter().map(|s| s.n).sum();
            Ok(Predictor {
                exercise,
                group_blind,
                form: PredictorForm::Table { strata },
                fit_meta: FitMeta {
                    iterations: 0,
                    grad_norm: 0.0,
                    converged: true,
                    n_obs,
                    degenerate: false,
                },
            })
        }
        FitForm::Logistic => {
            let levels: BTreeSet<u32> = data.keys().map(|k| k.cats[0]).collect();
            let encoder = Encoder::new(
                vec![levels.into_iter().collect()],
                !group_blind,
                spec.interact_group,
                0,
            );
            let model = LogisticModel::fit(encoder, &data, &spec.irls)?;
            if !model.meta.converged {
                return Err(Error::NonConvergence(model.meta.clone()));
            }
            Ok(Predictor {
                exercise,
                group_blind,
                fit_meta: model.meta.clone(),
                form: PredictorForm::Logistic { model },
            })
        }
    }
}

impl Predictor {
    /// Prediction at `(x, r)`; `r` is required iff the predictor is
    /// group-aware and ignored otherwise.
    pub fn predict(&self, x: u32, r: Option<Group>) -> Result<f64> {
        let r = if self.group_blind {
            None
        } else {
            Some(r.ok_or(Error::MissingGroup)?)
        };
        match &self.form {
            PredictorForm::Table { strata } => strata
                .iter()
                .find(|s| s.x == x && s.r == r)
                .map(|s| s.prediction)
                .ok_or(Error::OffSupport { x, r }),
            PredictorForm::Logistic { model } => model.predict(&[x], r, &[]).map_err(|e| match e {
                Error::UnknownLevel { .. } => Error::OffSupport { x, r },
                other => other,
            }),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Empirical stratum counts of a dataset, used as weights downstream.
pub fn stratum_counts(dataset: &ObservedDataset) -> BTreeMap<(u32, Group), f64> {
    let mut m = BTreeMap::new();
    for rec in &dataset.records {
        *m.entry((rec.x, rec.r)).or_insert(0.0) += 1.0;
    }
    m
}
