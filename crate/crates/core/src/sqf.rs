//! Stop-level search simulation: ingest stop records (or generate synthetic
//! ones in the same CSV layout), fit a risk model on half of the searched
//! stops, impose group-specific search thresholds on the other half, and
//! track how predictors retrained on the synthetic searches rank each group.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{line_chart, Series};
use crate::error::{Error, Result};
use crate::estimation::{training_label, Exercise, Outcome};
use crate::experiments::top_share_weighted;
use crate::logistic::{
    add_observation, sigmoid, Encoder, FeatureKey, FitMeta, GroupedData, IrlsOptions, LogisticModel,
};
use crate::population::{derive_seed, Group};

/// Stop-reason columns of the public stop-level files, used as `U`.
pub const DEFAULT_U_COLUMNS: [&str; 10] = [
    "cs_objcs", "cs_descr", "cs_casng", "cs_lkout", "cs_cloth", "cs_drgtr", "cs_furtv", "cs_vcrim",
    "cs_bulge", "cs_other",
];

const CITIES: [&str; 5] = ["BRONX", "BROOKLYN", "MANHATTAN", "QUEENS", "STATEN IS"];
const BUILDS: [&str; 4] = ["H", "M", "T", "U"];
const OTHER_RACES: [&str; 3] = ["A", "P", "Q"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coding {
    /// Levels are the sorted distinct strings.
    Categorical,
    /// Numeric value binned by ascending edges; level `k` is the number of
    /// edges `<=` the value.
    Bins { edges: Vec<f64> },
    /// `HHMM` or `HH:MM` time, coded as `hour / width`.
    HourBand { width: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XColumn {
    pub name: String,
    pub coding: Coding,
}

impl XColumn {
    fn categorical(name: &str) -> Self {
        Self {
            name: name.into(),
            coding: Coding::Categorical,
        }
    }
}

/// Maps CSV columns to roles. Defaults use the public column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaConfig {
    pub group_column: String,
    pub group1_values: Vec<String>,
    pub group0_values: Vec<String>,
    pub x_columns: Vec<XColumn>,
    pub u_columns: Vec<String>,
    pub searched_column: String,
    pub contraband_column: String,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            group_column: "race".into(),
            group1_values: vec!["B".into()],
            group0_values: vec!["W".into()],
            x_columns: vec![
                XColumn {
                    name: "age".into(),
                    coding: Coding::Bins {
                        edges: vec![18.0, 25.0, 35.0, 45.0, 55.0],
                    },
                },
                XColumn::categorical("sex"),
                XColumn::categorical("build"),
                XColumn::categorical("city"),
                XColumn {
                    name: "timestop".into(),
                    coding: Coding::HourBand { width: 6 },
                },
            ],
            u_columns: DEFAULT_U_COLUMNS.iter().map(|s| s.to_string()).collect(),
            searched_column: "searched".into(),
            contraband_column: "contrabn".into(),
        }
    }
}

/// One stop. `contraband` is `None` whenever `searched` is false.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopRecord {
    pub x: Vec<u32>,
    pub r: Group,
    pub u: Vec<bool>,
    pub searched: bool,
    pub contraband: Option<bool>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub kept: usize,
    pub dropped_missing: usize,
    pub dropped_other_group: usize,
    /// Rows with contraband recorded on an unsearched stop.
    pub rejected_inconsistent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopData {
    pub x_names: Vec<String>,
    /// Level labels per x column; record codes index into these.
    pub x_levels: Vec<Vec<String>>,
    pub u_names: Vec<String>,
    pub records: Vec<StopRecord>,
    pub report: IngestReport,
}

impl StopData {
    /// Encoder levels `0..k` for every x column.
    pub fn level_codes(&self) -> Vec<Vec<u32>> {
        self.x_levels
            .iter()
            .map(|l| (0..l.len() as u32).collect())
            .collect()
    }
}

fn parse_binary(value: &str) -> Option<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "y" | "yes" | "1" | "true" => Some(true),
        "n" | "no" | "0" | "false" => Some(false),
        _ => None,
    }
}

fn parse_hour(value: &str) -> Option<u32> {
    let v = value.trim();
    let hour = match v.split_once(':') {
        Some((h, m)) => {
            m.parse::<u32>().ok().filter(|&m| m < 60)?;
            h.parse::<u32>().ok()?
        }
        // integer HHMM, as in the public files ("21" is 00:21)
        None => v.parse::<u32>().ok().filter(|t| t % 100 < 60)? / 100,
    };
    (hour < 24).then_some(hour)
}

enum RawX {
    Text(String),
    Code(u32),
}

/// x values, group, flags, searched, contraband.
type RawRow = (Vec<RawX>, Group, Vec<bool>, bool, Option<bool>);

fn bin_label(edges: &[f64], k: usize) -> String {
    match (k.checked_sub(1).map(|i| edges[i]), edges.get(k)) {
        (None, Some(hi)) => format!("<{hi}"),
        (Some(lo), Some(hi)) => format!("[{lo},{hi})"),
        (Some(lo), None) => format!(">={lo}"),
        (None, None) => "all".into(),
    }
}

/// Reads stop records from CSV. Rows outside the two configured groups are
/// filtered, rows with an empty required field are dropped, and rows with
/// contraband on an unsearched stop are rejected; all three are counted in
/// the report. A value in a binary column that is neither yes nor no is an
/// error.
pub fn ingest<R: Read>(reader: R, schema: &SchemaConfig) -> Result<StopData> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::UnmappedColumn(name.to_string()))
    };
    let group_idx = col(&schema.group_column)?;
    let x_idx: Vec<usize> = schema
        .x_columns
        .iter()
        .map(|c| col(&c.name))
        .collect::<Result<_>>()?;
    let u_idx: Vec<usize> = schema
        .u_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let searched_idx = col(&schema.searched_column)?;
    let contraband_idx = col(&schema.contraband_column)?;

    let mut report = IngestReport::default();
    let mut raw: Vec<RawRow> = Vec::new();
    let mut row = csv::StringRecord::new();
    while rdr.read_record(&mut row)? {
        report.rows_read += 1;
        let line = report.rows_read;
        let get = |i: usize| row.get(i).unwrap_or("").trim();
        let g = get(group_idx);
        let r = if schema.group1_values.iter().any(|v| v == g) {
            1
        } else if schema.group0_values.iter().any(|v| v == g) {
            0
        } else {
            report.dropped_other_group += 1;
            continue;
        };

        let mut xs = Vec::with_capacity(x_idx.len());
        let mut missing = false;
        for (c, &i) in schema.x_columns.iter().zip(&x_idx) {
            let v = get(i);
            let parsed = match &c.coding {
                Coding::Categorical => (!v.is_empty()).then(|| RawX::Text(v.to_string())),
                Coding::Bins { edges } => v
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .map(|x| RawX::Code(edges.iter().filter(|&&e| e <= x).count() as u32)),
                Coding::HourBand { width } => {
                    parse_hour(v).map(|h| RawX::Code(h / (*width).max(1)))
                }
            };
            match parsed {
                Some(p) => xs.push(p),
                None => {
                    missing = true;
                    break;
                }
            }
        }
        let binary = |i: usize, name: &str| -> Result<Option<bool>> {
            let v = get(i);
            if v.is_empty() {
                return Ok(None);
            }
            parse_binary(v).map(Some).ok_or_else(|| Error::NonBinary {
                row: line,
                column: name.to_string(),
                value: v.to_string(),
            })
        };
        let searched = binary(searched_idx, &schema.searched_column)?;
        let contraband = binary(contraband_idx, &schema.contraband_column)?;
        let mut us = Vec::with_capacity(u_idx.len());
        for (name, &i) in schema.u_columns.iter().zip(&u_idx) {
            match binary(i, name)? {
                Some(b) => us.push(b),
                None => missing = true,
            }
        }
        let Some(searched) = searched else {
            report.dropped_missing += 1;
            continue;
        };
        if !searched && contraband == Some(true) {
            report.rejected_inconsistent += 1;
            continue;
        }
        if missing || (searched && contraband.is_none()) {
            report.dropped_missing += 1;
            continue;
        }
        raw.push((
            xs,
            r,
            us,
            searched,
            if searched { contraband } else { None },
        ));
    }

    let mut x_levels: Vec<Vec<String>> = Vec::with_capacity(schema.x_columns.len());
    let mut lookup: Vec<BTreeMap<String, u32>> = Vec::with_capacity(schema.x_columns.len());
    for (c, col) in schema.x_columns.iter().enumerate() {
        match &col.coding {
            Coding::Categorical => {
                let mut levels: Vec<String> = raw
                    .iter()
                    .filter_map(|r| match &r.0[c] {
                        RawX::Text(s) => Some(s.clone()),
                        RawX::Code(_) => None,
                    })
                    .collect();
                levels.sort();
                levels.dedup();
                lookup.push(
                    levels
                        .iter()
                        .enumerate()
                        .map(|(i, l)| (l.clone(), i as u32))
                        .collect(),
                );
                x_levels.push(levels);
            }
            Coding::Bins { edges } => {
                lookup.push(BTreeMap::new());
                x_levels.push((0..=edges.len()).map(|k| bin_label(edges, k)).collect());
            }
            Coding::HourBand { width } => {
                let w = (*width).max(1);
                lookup.push(BTreeMap::new());
                x_levels.push(
                    (0..24u32.div_ceil(w))
                        .map(|k| format!("{:02}-{:02}", k * w, ((k + 1) * w).min(24)))
                        .collect(),
                );
            }
        }
    }

    let records: Vec<StopRecord> = raw
        .into_iter()
        .map(|(xs, r, u, searched, contraband)| StopRecord {
            x: xs
                .into_iter()
                .enumerate()
                .map(|(c, v)| match v {
                    RawX::Text(s) => lookup[c][&s],
                    RawX::Code(k) => k,
                })
                .collect(),
            r,
            u,
            searched,
            contraband,
        })
        .collect();
    report.kept = records.len();
    Ok(StopData {
        x_names: schema.x_columns.iter().map(|c| c.name.clone()).collect(),
        x_levels,
        u_names: schema.u_columns.clone(),
        records,
        report,
    })
}

pub fn ingest_path(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<StopData> {
    ingest(std::fs::File::open(path)?, schema)
}

/// Log-odds model for contraband among searched stops:
/// `intercept + group_effect * r + context_effect * context + sum_k flag_effects[k] * u_k`,
/// where `context` is `male + (age < 25) + night - (age >= 45)` and night is
/// 20:00 to 03:59.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrabandModel {
    pub intercept: f64,
    pub group_effect: f64,
    pub context_effect: f64,
    pub flag_effects: Vec<f64>,
}

impl Default for ContrabandModel {
    fn default() -> Self {
        Self {
            intercept: -2.5,
            group_effect: -0.4,
            context_effect: 0.9,
            flag_effects: vec![1.8, 0.1, 0.3, 0.2, 0.3, 1.2, 0.1, 0.4, 1.4, 0.2],
        }
    }
}

impl ContrabandModel {
    /// Contraband depends on stop-reason flag `flag` only.
    pub fn single_flag(flag: usize, intercept: f64, effect: f64) -> Self {
        let mut flag_effects = vec![0.0; DEFAULT_U_COLUMNS.len()];
        flag_effects[flag] = effect;
        Self {
            intercept,
            group_effect: 0.0,
            context_effect: 0.0,
            flag_effects,
        }
    }
}

/// Synthetic stop generator. Marginals: a row is from another group with
/// probability `other_share`, otherwise group 1 with probability
/// `group1_share`; stop-reason flag `k` is set with probability
/// `flag_rates[k]` (plus `group1_flag_lift` for group 1); a stop is searched
/// with probability `search_rate`; contraband among searched stops follows
/// `contraband`. The age field is blank with probability `missing_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub n: usize,
    pub group1_share: f64,
    pub other_share: f64,
    pub search_rate: f64,
    pub missing_rate: f64,
    pub flag_rates: Vec<f64>,
    pub group1_flag_lift: f64,
    pub contraband: ContrabandModel,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n: 100_000,
            group1_share: 0.85,
            other_share: 0.05,
            search_rate: 0.6,
            missing_rate: 0.001,
            flag_rates: vec![0.10, 0.25, 0.20, 0.10, 0.10, 0.08, 0.45, 0.15, 0.08, 0.20],
            group1_flag_lift: 0.05,
            contraband: ContrabandModel::default(),
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let p = |v: f64| (0.0..=1.0).contains(&v);
        if !(p(self.group1_share)
            && p(self.other_share)
            && p(self.search_rate)
            && p(self.missing_rate))
        {
            return Err(Error::InvalidConfig(
                "generator probabilities must lie in [0, 1]".into(),
            ));
        }
        let k = DEFAULT_U_COLUMNS.len();
        if self.flag_rates.len() != k || self.contraband.flag_effects.len() != k {
            return Err(Error::InvalidConfig(format!(
                "flag_rates and flag_effects need {k} entries"
            )));
        }
        if self
            .flag_rates
            .iter()
            .any(|&f| !p(f) || !p(f + self.group1_flag_lift))
        {
            return Err(Error::InvalidConfig("flag rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Writes `spec.n` synthetic stops as CSV in the default schema layout.
pub fn generate<W: Write>(spec: &GeneratorSpec, seed: u64, w: W) -> Result<()> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let city_dist = WeightedIndex::new([0.25, 0.30, 0.20, 0.20, 0.05]).expect("static weights");
    let build_dist = WeightedIndex::new([0.10, 0.45, 0.35, 0.10]).expect("static weights");
    let hour_dist =
        WeightedIndex::new((0..24).map(|h| if (12..24).contains(&h) { 2.0 } else { 1.0 }))
            .expect("static weights");

    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["race", "age", "sex", "build", "city", "timestop"];
    header.extend(DEFAULT_U_COLUMNS);
    header.extend(["searched", "contrabn"]);
    wr.write_record(&header)?;

    let yn = |b: bool| if b { "Y" } else { "N" };
    for _ in 0..spec.n {
        let (race, r) = if rng.random::<f64>() < spec.other_share {
            (OTHER_RACES[rng.random_range(0..OTHER_RACES.len())], None)
        } else if rng.random::<f64>() < spec.group1_share {
            ("B", Some(1u8))
        } else {
            ("W", Some(0u8))
        };
        let age = 14 + (rng.random::<f64>().powf(1.6) * 56.0) as u32;
        let age_missing = rng.random::<f64>() < spec.missing_rate;
        let male = rng.random::<f64>() < 0.9;
        let build = BUILDS[build_dist.sample(&mut rng)];
        let city = CITIES[city_dist.sample(&mut rng)];
        let hour = hour_dist.sample(&mut rng) as u32;
        let minute = rng.random_range(0..60u32);
        let lift = if r == Some(1) {
            spec.group1_flag_lift
        } else {
            0.0
        };
        let flags: Vec<bool> = spec
            .flag_rates
            .iter()
            .map(|&p| rng.random::<f64>() < p + lift)
            .collect();
        let searched = rng.random::<f64>() < spec.search_rate;
        let night = !(4..20).contains(&hour);
        let context =
            f64::from(u8::from(male)) + f64::from(u8::from(age < 25)) + f64::from(u8::from(night))
                - f64::from(u8::from(age >= 45));
        let m = &spec.contraband;
        let eta = m.intercept
            + m.group_effect * f64::from(r.unwrap_or(0))
            + m.context_effect * context
            + flags
                .iter()
                .zip(&m.flag_effects)
                .map(|(&f, &b)| if f { b } else { 0.0 })
                .sum::<f64>();
        let draw = rng.random::<f64>();
        let contraband = searched && draw < sigmoid(eta);

        let age_s = if age_missing {
            String::new()
        } else {
            age.to_string()
        };
        let time_s = (hour * 100 + minute).to_string();
        let mut rec: Vec<&str> = vec![
            race,
            &age_s,
            if male { "M" } else { "F" },
            build,
            city,
            &time_s,
        ];
        rec.extend(flags.iter().map(|&f| yn(f)));
        rec.push(yn(searched));
        rec.push(yn(contraband));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Generates and ingests in memory with the default schema.
pub fn generate_data(spec: &GeneratorSpec, seed: u64) -> Result<StopData> {
    let mut buf = Vec::new();
    generate(spec, seed, &mut buf)?;
    ingest(buf.as_slice(), &SchemaConfig::default())
}

/// Shuffles the searched stops with `seed` and returns
/// `(first floor(fraction * n), rest)`.
pub fn split(
    records: &[StopRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<StopRecord>, Vec<StopRecord>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let mut searched: Vec<StopRecord> = records.iter().filter(|r| r.searched).cloned().collect();
    if searched.is_empty() {
        return Err(Error::EmptySearched);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    searched.shuffle(&mut rng);
    let k = (fraction * searched.len() as f64).floor() as usize;
    let b = searched.split_off(k);
    Ok((searched, b))
}

/// Logistic risk model of contraband on `(X, R, U)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub model: LogisticModel,
}

impl RiskModel {
    pub fn score(&self, rec: &StopRecord) -> Result<f64> {
        self.model.predict(&rec.x, Some(rec.r), &rec.u)
    }

    pub fn fit_meta(&self) -> &FitMeta {
        &self.model.meta
    }
}

pub fn fit_risk_model(
    partition: &[StopRecord],
    levels: &[Vec<u32>],
    opts: &IrlsOptions,
) -> Result<RiskModel> {
    let n_flags = partition
        .first()
        .map(|r| r.u.len())
        .ok_or(Error::NoLabels)?;
    let mut data = GroupedData::new();
    for rec in partition {
        let y = rec
            .contraband
            .ok_or_else(|| Error::InvalidArgument("risk model records must be labeled".into()))?;
        let key = FeatureKey {
            cats: rec.x.clone(),
            r: Some(rec.r),
            flags: rec.u.clone(),
        };
        add_observation(&mut data, key, y);
    }
    let model = LogisticModel::fit(
        Encoder::new(levels.to_vec(), true, false, n_flags),
        &data,
        opts,
    )?;
    if !model.meta.converged {
        return Err(Error::NonConvergence(model.meta.clone()));
    }
    Ok(RiskModel { model })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Thresholds by group; a stop is searched iff its score is strictly
    /// above its group's threshold.
    pub c: [f64; 2],
    /// `c[0] - c[1]`.
    pub tau: f64,
    pub target: [usize; 2],
    pub realized: [usize; 2],
    /// Searches beyond target caused by scores tied at the threshold.
    pub tie_slack: [usize; 2],
    pub aa_share: f64,
    pub realized_share: f64,
}

fn threshold_for(scores: &[f64], k: usize) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    match k {
        0 => sorted.first().copied().unwrap_or(1.0).max(1.0),
        // largest value strictly below the k-th largest score, so that
        // `score > c` admits exactly the scores `>=` it
        _ => sorted[k - 1].next_down(),
    }
}

/// Group thresholds that search `floor(aa_share * rate * N)` group-1 stops
/// and `floor(rate * N)` minus that many group-0 stops, `N` being the total
/// number of scores.
pub fn calibrate_thresholds(scores: [&[f64]; 2], rate: f64, aa_share: f64) -> Result<Calibration> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "search rate {rate} outside (0, 1)"
        )));
    }
    if !(aa_share > 0.0 && aa_share < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "share {aa_share} outside (0, 1)"
        )));
    }
    let n = (scores[0].len() + scores[1].len()) as f64;
    let total = (rate * n).floor() as usize;
    let t1 = (aa_share * rate * n).floor() as usize;
    let target = [total - t1, t1];
    let mut c = [0.0; 2];
    let mut realized = [0; 2];
    for g in 0..2 {
        if target[g] > scores[g].len() {
            return Err(Error::Infeasible {
                group: g as Group,
                requested: target[g],
                available: scores[g].len(),
            });
        }
        c[g] = threshold_for(scores[g], target[g]);
        realized[g] = scores[g].iter().filter(|&&s| s > c[g]).count();
    }
    let searched = realized[0] + realized[1];
    Ok(Calibration {
        c,
        tau: c[0] - c[1],
        target,
        realized,
        tie_slack: [realized[0] - target[0], realized[1] - target[1]],
        aa_share,
        realized_share: if searched > 0 {
            realized[1] as f64 / searched as f64
        } else {
            0.0
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticRecord {
    pub x: Vec<u32>,
    pub r: Group,
    /// Carries the contraband label only when synthetically searched.
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSearchSet {
    pub records: Vec<SyntheticRecord>,
    pub c: [f64; 2],
    pub tau: f64,
    pub target_share: Option<f64>,
    pub realized_share: f64,
    pub search_rate: f64,
}

/// Marks each stop searched iff its risk score is strictly above its
/// group's threshold and drops the label of every other stop.
pub fn synthesize(
    partition: &[StopRecord],
    c: [f64; 2],
    model: &RiskModel,
) -> Result<SyntheticSearchSet> {
    let mut records = Vec::with_capacity(partition.len());
    let mut searched = [0usize; 2];
    for rec in partition {
        let s = model.score(rec)? > c[rec.r as usize];
        let outcome = match (s, rec.contraband) {
            (true, Some(y)) => Outcome::Selected { y },
            (true, None) => {
                return Err(Error::InvalidArgument(
                    "synthesized records must be labeled".into(),
                ))
            }
            (false, _) => Outcome::Unselected,
        };
        searched[rec.r as usize] += usize::from(s);
        records.push(SyntheticRecord {
            x: rec.x.clone(),
            r: rec.r,
            outcome,
        });
    }
    let total = searched[0] + searched[1];
    Ok(SyntheticSearchSet {
        records,
        c,
        tau: c[0] - c[1],
        target_share: None,
        realized_share: if total > 0 {
            searched[1] as f64 / total as f64
        } else {
            0.0
        },
        search_rate: if partition.is_empty() {
            0.0
        } else {
            total as f64 / partition.len() as f64
        },
    })
}

fn default_share_grid() -> Vec<f64> {
    (0..7).map(|i| 0.8 + 0.025 * f64::from(i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FigureConfig {
    pub share_grid: Vec<f64>,
    pub search_rate: f64,
    pub split_fraction: f64,
    pub top_share_q: f64,
    pub bootstrap_reps: usize,
    pub irls: IrlsOptions,
}

impl Default for FigureConfig {
    fn default() -> Self {
        Self {
            share_grid: default_share_grid(),
            search_rate: 0.5,
            split_fraction: 0.5,
            top_share_q: 0.5,
            bootstrap_reps: 100,
            irls: IrlsOptions::default(),
        }
    }
}

impl FigureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.share_grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if self.share_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridNotAscending);
        }
        if self.share_grid.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
            return Err(Error::InvalidConfig("shares must lie in (0, 1)".into()));
        }
        for (name, v) in [
            ("search_rate", self.search_rate),
            ("split_fraction", self.split_fraction),
            ("top_share_q", self.top_share_q),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub aa_share: f64,
    pub tau: f64,
    pub exercise: Exercise,
    pub group: Group,
    pub top_share: f64,
    /// Bootstrap standard error; zero when no resamples were requested.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureResult {
    pub rows: Vec<FigureRow>,
    pub calibrations: Vec<Calibration>,
    pub risk_model_meta: FitMeta,
    pub partition_sizes: [usize; 2],
}

impl FigureResult {
    /// `(aa_share, tau, top_share, se)` for one exercise and group.
    pub fn curve(&self, exercise: Exercise, group: Group) -> Vec<(f64, f64, f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.exercise == exercise && r.group == group)
            .map(|r| (r.aa_share, r.tau, r.top_share, r.se))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["aa_share", "tau", "exercise", "group", "top_share"])?;
        for r in &self.rows {
            wr.write_record([
                r.aa_share.to_string(),
                r.tau.to_string(),
                r.exercise.to_string(),
                r.group.to_string(),
                r.top_share.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Group-1 top-share curves against tau, one series per exercise.
    pub fn chart(&self) -> String {
        let series: Vec<Series> = Exercise::ALL
            .iter()
            .map(|&ex| Series {
                name: ex.to_string(),
                points: self.curve(ex, 1).iter().map(|p| (p.1, p.2)).collect(),
            })
            .collect();
        line_chart(
            "Group-1 share in the top half of predicted risk",
            "tau",
            "top share",
            &series,
        )
    }
}

/// Aggregated synthetic set: distinct `(x, r)` keys plus each record's key
/// index and outcome class (0 unsearched, 1 searched without, 2 with
/// contraband).
struct Compact {
    keys: Vec<FeatureKey>,
    items: Vec<(usize, u8)>,
}

impl Compact {
    fn new(set: &SyntheticSearchSet) -> Self {
        let mut index: BTreeMap<FeatureKey, usize> = BTreeMap::new();
        for rec in &set.records {
            let next = index.len();
            index
                .entry(FeatureKey {
                    cats: rec.x.clone(),
                    r: Some(rec.r),
                    flags: Vec::new(),
                })
                .or_insert(next);
        }
        let items = set
            .records
            .iter()
            .map(|rec| {
                let key = FeatureKey {
                    cats: rec.x.clone(),
                    r: Some(rec.r),
                    flags: Vec::new(),
                };
                let class = match rec.outcome {
                    Outcome::Unselected => 0,
                    Outcome::Selected { y: false } => 1,
                    Outcome::Selected { y: true } => 2,
                };
                (index[&key], class)
            })
            .collect();
        let mut keys = vec![
            FeatureKey {
                cats: vec![],
                r: None,
                flags: vec![]
            };
            index.len()
        ];
        for (k, i) in index {
            keys[i] = k;
        }
        Self { keys, items }
    }

    /// Count table `[key][class]` for all items, or for a resample.
    fn tally(&self, pick: impl Iterator<Item = usize>) -> Vec<[f64; 3]> {
        let mut t = vec![[0.0; 3]; self.keys.len()];
        for i in pick {
            let (k, c) = self.items[i];
            t[k][c as usize] += 1.0;
        }
        t
    }
}

fn class_outcome(class: usize) -> Outcome {
    match class {
        0 => Outcome::Unselected,
        1 => Outcome::Selected { y: false },
        _ => Outcome::Selected { y: true },
    }
}

/// Group top-share fractions of each exercise's predictor, fitted on the
/// tallied synthetic set and evaluated on the same records.
fn exercise_top_shares(
    compact: &Compact,
    table: &[[f64; 3]],
    levels: &[Vec<u32>],
    cfg: &FigureConfig,
) -> Result<Vec<[f64; 2]>> {
    let weights: Vec<f64> = table.iter().map(|t| t[0] + t[1] + t[2]).collect();
    let keep: Vec<usize> = (0..table.len()).filter(|&k| weights[k] > 0.0).collect();
    let groups: Vec<Group> = keep
        .iter()
        .map(|&k| compact.keys[k].r.unwrap_or(0))
        .collect();
    let w: Vec<f64> = keep.iter().map(|&k| weights[k]).collect();
    Exercise::ALL
        .iter()
        .map(|&ex| {
            let mut data = GroupedData::new();
            for (k, counts) in table.iter().enumerate() {
                for (class, &n) in counts.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    if let Some(label) = training_label(class_outcome(class), ex) {
                        let e = data.entry(compact.keys[k].clone()).or_default();
                        e.n += n;
                        if label {
                            e.positives += n;
                        }
                    }
                }
            }
            let model = LogisticModel::fit(
                Encoder::new(levels.to_vec(), true, false, 0),
                &data,
                &cfg.irls,
            )?;
            if !model.meta.converged {
                return Err(Error::NonConvergence(model.meta.clone()));
            }
            let scores: Vec<f64> = keep
                .iter()
                .map(|&k| model.predict(&compact.keys[k].cats, compact.keys[k].r, &[]))
                .collect::<Result<_>>()?;
            Ok(top_share_weighted(&scores, &groups, &w, cfg.top_share_q)?.fraction)
        })
        .collect()
}

/// Checks a curve of `(value, standard error)` points, in grid order, for a
/// weak trend. At most one adjacent step may go the wrong way, and only by
/// less than twice the combined standard error of its endpoints.
pub fn trend_holds(points: &[(f64, f64)], increasing: bool) -> (bool, String) {
    let mut inversions = Vec::new();
    for (i, w) in points.windows(2).enumerate() {
        let step = if increasing {
            w[0].0 - w[1].0
        } else {
            w[1].0 - w[0].0
        };
        if step > 0.0 {
            let bound = 2.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
            inversions.push((i, step, bound));
        }
    }
    let pass = inversions.len() <= 1 && inversions.iter().all(|&(_, step, bound)| step < bound);
    let described: Vec<String> = inversions
        .iter()
        .map(|(i, step, bound)| format!("step {i}->{} by {step:.4} (2 SE {bound:.4})", i + 1))
        .collect();
    let msg = if described.is_empty() {
        "no inversions".to_string()
    } else {
        format!("{} inversion(s): {}", described.len(), described.join(", "))
    };
    (pass, msg)
}

/// Runs the full simulation over the share grid: split, fit the risk model,
/// then per share calibrate, synthesize, refit the three exercises on
/// `(X, R)` and record each group's top-share fraction with a bootstrap
/// standard error. Shares run in parallel with seeds derived from `seed`.
pub fn replicate_figure(data: &StopData, cfg: &FigureConfig, seed: u64) -> Result<FigureResult> {
    cfg.validate()?;
    let levels = data.level_codes();
    let (a, b) = split(&data.records, cfg.split_fraction, derive_seed(seed, 0))?;
    let risk = fit_risk_model(&a, &levels, &cfg.irls)?;
    let mut by_group: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for rec in &b {
        by_group[rec.r as usize].push(risk.score(rec)?);
    }

    let per_share: Vec<(Calibration, Vec<FigureRow>)> = cfg
        .share_grid
        .par_iter()
        .enumerate()
        .map(|(i, &share)| -> Result<(Calibration, Vec<FigureRow>)> {
            let cal = calibrate_thresholds([&by_group[0], &by_group[1]], cfg.search_rate, share)?;
            let mut set = synthesize(&b, cal.c, &risk)?;
            set.target_share = Some(share);
            let compact = Compact::new(&set);
            let point = exercise_top_shares(
                &compact,
                &compact.tally(0..compact.items.len()),
                &levels,
                cfg,
            )?;

            let share_seed = derive_seed(seed, 1 + i as u64);
            let n = compact.items.len();
            let mut reps: Vec<Vec<[f64; 2]>> = Vec::with_capacity(cfg.bootstrap_reps);
            for j in 0..cfg.bootstrap_reps {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(share_seed, j as u64));
                let table = compact.tally((0..n).map(|_| rng.random_range(0..n)));
                reps.push(exercise_top_shares(&compact, &table, &levels, cfg)?);
            }

            let mut rows = Vec::new();
            for (e, &ex) in Exercise::ALL.iter().enumerate() {
                for g in 0..2usize {
                    let se = if reps.len() > 1 {
                        let vals: Vec<f64> = reps.iter().map(|r| r[e][g]).collect();
                        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                            / (vals.len() - 1) as f64)
                            .sqrt()
                    } else {
                        0.0
                    };
                    rows.push(FigureRow {
                        aa_share: share,
                        tau: cal.tau,
                        exercise: ex,
                        group: g as Group,
                        top_share: point[e][g],
                        se,
                    });
                }
            }
            Ok((cal, rows))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut calibrations = Vec::new();
    for (cal, r) in per_share {
        calibrations.push(cal);
        rows.extend(r);
    }
    Ok(FigureResult {
        rows,
        calibrations,
        risk_model_meta: risk.model.meta.clone(),
        partition_sizes: [a.len(), b.len()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
race,age,sex,build,city,timestop,cs_objcs,cs_descr,cs_casng,cs_lkout,cs_cloth,cs_drgtr,cs_furtv,cs_vcrim,cs_bulge,cs_other,searched,contrabn
B,22,M,T,BROOKLYN,2130,Y,N,N,N,N,N,Y,N,N,N,Y,Y
W,47,F,M,QUEENS,0915,N,N,N,N,N,N,N,N,N,N,N,N
B,31,M,H,BRONX,14:05,N,Y,N,N,N,N,N,N,Y,N,Y,N
";

    fn rec(r: Group, searched: bool, y: Option<bool>) -> StopRecord {
        StopRecord {
            x: vec![0],
            r,
            u: vec![false],
            searched,
            contraband: y,
        }
    }

    #[test]
    fn ingest_fixture_roles() {
        let d = ingest(FIXTURE.as_bytes(), &SchemaConfig::default()).unwrap();
        assert_eq!(d.records.len(), 3);
        assert_eq!(d.report.kept, 3);
        let first = &d.records[0];
        assert_eq!(first.r, 1);
        assert_eq!(first.x[0], 1); // age 22 in [18, 25)
        assert_eq!(d.x_levels[1][first.x[1] as usize], "M");
        assert_eq!(d.x_levels[3][first.x[3] as usize], "BROOKLYN");
        assert_eq!(first.x[4], 3); // 21:30 in the 18-24 band
        assert!(first.u[0] && first.u[6] && !first.u[1]);
        assert_eq!(first.contraband, Some(true));
        assert_eq!(d.records[1].r, 0);
        assert_eq!(d.records[1].contraband, None);
        assert_eq!(d.records[2].x[4], 2);
    }

    #[test]
    fn ingest_rejects_and_counts() {
        let mut csv = FIXTURE.to_string();
        csv.push_str("W,30,M,M,QUEENS,1200,N,N,N,N,N,N,N,N,N,N,N,Y\n");
        csv.push_str("Q,30,M,M,QUEENS,1200,N,N,N,N,N,N,N,N,N,N,Y,N\n");
        csv.push_str("W,,M,M,QUEENS,1200,N,N,N,N,N,N,N,N,N,N,Y,N\n");
        let d = ingest(csv.as_bytes(), &SchemaConfig::default()).unwrap();
        assert_eq!(d.records.len(), 3);
        assert_eq!(d.report.rejected_inconsistent, 1);
        assert_eq!(d.report.dropped_other_group, 1);
        assert_eq!(d.report.dropped_missing, 1);
        assert_eq!(d.report.rows_read, 6);

        let bad = FIXTURE.replace("Y,Y\n", "Y,maybe\n");
        assert!(matches!(
            ingest(bad.as_bytes(), &SchemaConfig::default()),
            Err(Error::NonBinary { row: 1, .. })
        ));
        let schema = SchemaConfig {
            searched_column: "frisked".into(),
            ..Default::default()
        };
        assert!(matches!(
            ingest(FIXTURE.as_bytes(), &schema),
            Err(Error::UnmappedColumn(c)) if c == "frisked"
        ));
    }

    #[test]
    fn split_arithmetic() {
        let records: Vec<StopRecord> = (0..100)
            .map(|i| rec((i % 2) as u8, true, Some(false)))
            .collect();
        let (a, b) = split(&records, 0.5, 1).unwrap();
        assert_eq!((a.len(), b.len()), (50, 50));
        assert_eq!(split(&records, 0.5, 1).unwrap(), (a, b));
        let odd: Vec<StopRecord> = (0..101).map(|_| rec(0, true, Some(true))).collect();
        let (a, b) = split(&odd, 0.5, 3).unwrap();
        assert_eq!((a.len(), b.len()), (50, 51));
        let unsearched = vec![rec(0, false, None)];
        assert!(matches!(
            split(&unsearched, 0.5, 1),
            Err(Error::EmptySearched)
        ));
        assert!(split(&odd, 1.0, 1).is_err());
    }

    #[test]
    fn calibration_quantile() {
        let g1: Vec<f64> = (1..=10).map(|i| f64::from(i) / 10.0).collect();
        // 20 scores in total, rate 0.5 -> 10 searches; share 0.3 -> 3 from group 1
        let g0: Vec<f64> = (0..10).map(|i| f64::from(i) / 20.0).collect();
        let cal = calibrate_thresholds([&g0, &g1], 0.5, 0.3).unwrap();
        assert_eq!(cal.target, [7, 3]);
        assert!((cal.c[1] - 0.8).abs() < 1e-12);
        assert_eq!(cal.realized, [7, 3]);
        assert_eq!(cal.tie_slack, [0, 0]);
        assert!((cal.tau - (cal.c[0] - cal.c[1])).abs() < 1e-15);

        let small: Vec<f64> = vec![0.5; 10];
        let big: Vec<f64> = vec![0.5; 100];
        assert!(matches!(
            calibrate_thresholds([&big, &small], 0.9, 0.95),
            Err(Error::Infeasible { group: 1, .. })
        ));
    }

    #[test]
    fn calibration_ties_reported() {
        let g1 = vec![0.5; 6];
        let g0 = vec![0.2, 0.4, 0.4, 0.4, 0.9];
        let cal = calibrate_thresholds([&g0, &g1], 0.5, 0.5).unwrap();
        assert_eq!(cal.target, [3, 2]);
        assert_eq!(cal.realized, [4, 6]);
        assert_eq!(cal.tie_slack, [1, 4]);
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = GeneratorSpec {
            n: 500,
            ..Default::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate(&spec, 9, &mut a).unwrap();
        generate(&spec, 9, &mut b).unwrap();
        assert_eq!(a, b);
        let d = ingest(a.as_slice(), &SchemaConfig::default()).unwrap();
        assert!(d
            .records
            .iter()
            .all(|r| r.searched || r.contraband.is_none()));
        assert_eq!(d.report.rows_read, 500);
    }

    #[test]
    fn synthesize_degenerate_thresholds() {
        let spec = GeneratorSpec {
            n: 4000,
            ..Default::default()
        };
        let data = generate_data(&spec, 5).unwrap();
        let (a, b) = split(&data.records, 0.5, 1).unwrap();
        let risk = fit_risk_model(&a, &data.level_codes(), &IrlsOptions::default()).unwrap();
        assert!(risk.fit_meta().converged && risk.fit_meta().grad_norm < 1e-8);
        let all = synthesize(&b, [0.0, 0.0], &risk).unwrap();
        assert!(all
            .records
            .iter()
            .all(|r| matches!(r.outcome, Outcome::Selected { .. })));
        assert_eq!(all.tau, 0.0);
        let none = synthesize(&b, [1.0, 1.0], &risk).unwrap();
        assert!(none
            .records
            .iter()
            .all(|r| r.outcome == Outcome::Unselected));
    }

    #[test]
    fn single_grid_point_emits_chart() {
        let spec = GeneratorSpec {
            n: 4000,
            ..Default::default()
        };
        let data = generate_data(&spec, 2).unwrap();
        let cfg = FigureConfig {
            share_grid: vec![0.85],
            bootstrap_reps: 3,
            ..Default::default()
        };
        let res = replicate_figure(&data, &cfg, 11).unwrap();
        assert_eq!(res.rows.len(), 6);
        assert!(res.chart().contains("<polyline"));
        let again = replicate_figure(&data, &cfg, 11).unwrap();
        assert_eq!(res, again);
    }
}
