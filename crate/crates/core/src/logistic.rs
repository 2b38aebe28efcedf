//! Ridge-penalized logistic regression fitted by iteratively reweighted
//! least squares (Newton's method on the log-likelihood).
//!
//! Data are grouped binomial counts: each distinct encoded row carries a
//! count and a number of positive labels, so large samples over few
//! categorical strata fit in time proportional to the number of strata.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::Group;

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlsOptions {
    /// Penalty on non-intercept weights, applied to the mean log-likelihood.
    pub ridge: f64,
    /// Convergence when the max-abs gradient of the penalized mean
    /// log-likelihood falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            ridge: DEFAULT_RIDGE,
            tol: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Total observation weight the model was fitted on.
    pub n_obs: f64,
    /// Set when every label was identical and only the intercept was fitted.
    #[serde(default)]
    pub degenerate: bool,
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Row-major grouped design: `n_rows x width` features with per-row
/// observation counts and positive-label counts.
#[derive(Debug, Clone, Default)]
pub struct GroupedDesign {
    width: usize,
    features: Vec<f64>,
    counts: Vec<f64>,
    positives: Vec<f64>,
}

impl GroupedDesign {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            ..Default::default()
        }
    }

    pub fn push(&mut self, row: &[f64], count: f64, positives: f64) {
        debug_assert_eq!(row.len(), self.width);
        self.features.extend_from_slice(row);
        self.counts.push(count);
        self.positives.push(positives);
    }

    pub fn rows(&self) -> usize {
        self.counts.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    fn eta(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }
}

fn objective(d: &GroupedDesign, beta: &[f64], penalized: &[bool], ridge: f64, total: f64) -> f64 {
    let ll: f64 = (0..d.rows())
        .map(|i| {
            let eta = d.eta(i, beta);
            d.positives[i] * eta - d.counts[i] * softplus(eta)
        })
        .sum();
    let pen: f64 = beta
        .iter()
        .zip(penalized)
        .filter(|(_, &p)| p)
        .map(|(b, _)| b * b)
        .sum();
    ll / total - 0.5 * ridge * pen
}

fn gradient(
    d: &GroupedDesign,
    beta: &[f64],
    penalized: &[bool],
    ridge: f64,
    total: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; d.width];
    for i in 0..d.rows() {
        let resid = d.positives[i] - d.counts[i] * sigmoid(d.eta(i, beta));
        for (gj, xj) in g.iter_mut().zip(d.row(i)) {
            *gj += resid * xj;
        }
    }
    for j in 0..d.width {
        g[j] /= total;
        if penalized[j] {
            g[j] -= ridge * beta[j];
        }
    }
    g
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fits coefficients by Newton-Raphson with step halving.
///
/// Returns the coefficients and fit metadata; non-convergence is reported
/// in the metadata, not as an error.
pub fn fit_irls(d: &GroupedDesign, penalized: &[bool], opts: &IrlsOptions) -> (Vec<f64>, FitMeta) {
    let p = d.width;
    let total: f64 = d.counts.iter().sum();
    let mut beta = vec![0.0; p];
    let mut grad = gradient(d, &beta, penalized, opts.ridge, total);
    let mut iterations = 0;

    while max_abs(&grad) >= opts.tol && iterations < opts.max_iter {
        let mut h = DMatrix::<f64>::zeros(p, p);
        for i in 0..d.rows() {
            let mu = sigmoid(d.eta(i, &beta));
            let w = d.counts[i] * mu * (1.0 - mu) / total;
            if w == 0.0 {
                continue;
            }
            let row = d.row(i);
            for a in 0..p {
                if row[a] == 0.0 {
                    continue;
                }
                let wa = w * row[a];
                for b in a..p {
                    h[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            if penalized[a] {
                h[(a, a)] += opts.ridge;
            }
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        let g = DVector::from_column_slice(&grad);
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => match h.lu().solve(&g) {
                Some(s) => s,
                None => break,
            },
        };

        let current = objective(d, &beta, penalized, opts.ridge, total);
        let mut scale = 1.0;
        let mut next: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
        for _ in 0..40 {
            if objective(d, &next, penalized, opts.ridge, total) >= current - 1e-15 * current.abs()
            {
                break;
            }
            scale *= 0.5;
            next = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
        }
        beta = next;
        iterations += 1;
        grad = gradient(d, &beta, penalized, opts.ridge, total);
    }

    let grad_norm = max_abs(&grad);
    let meta = FitMeta {
        iterations,
        grad_norm,
        converged: grad_norm < opts.tol,
        n_obs: total,
        degenerate: false,
    };
    (beta, meta)
}

/// One-hot encoding of categorical columns (first level dropped), an
/// optional group dummy, optional column-by-group interactions, and
/// trailing binary flags. Column 0 of the encoded row is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub levels: Vec<Vec<u32>>,
    pub use_group: bool,
    pub interact_group: bool,
    pub n_flags: usize,
}

impl Encoder {
    pub fn new(
        levels: Vec<Vec<u32>>,
        use_group: bool,
        interact_group: bool,
        n_flags: usize,
    ) -> Self {
        let levels = levels
            .into_iter()
            .map(|mut l| {
                l.sort_unstable();
                l.dedup();
                l
            })
            .collect();
        Self {
            levels,
            use_group,
            interact_group: interact_group && use_group,
            n_flags,
        }
    }

    fn dummies(&self) -> usize {
        self.levels.iter().map(|l| l.len().saturating_sub(1)).sum()
    }

    pub fn width(&self) -> usize {
        let d = self.dummies();
        1 + d + usize::from(self.use_group) + if self.interact_group { d } else { 0 } + self.n_flags
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        let mut dummy_names = Vec::new();
        for (c, levels) in self.levels.iter().enumerate() {
            for l in levels.iter().skip(1) {
                dummy_names.push(format!("x{c}={l}"));
            }
        }
        names.extend(dummy_names.iter().cloned());
        if self.use_group {
            names.push("r".into());
        }
        if self.interact_group {
            names.extend(dummy_names.iter().map(|n| format!("{n}:r")));
        }
        names.extend((0..self.n_flags).map(|k| format!("u{k}")));
        names
    }

    /// Everything except the intercept carries the ridge penalty.
    pub fn penalized(&self) -> Vec<bool> {
        let mut p = vec![true; self.width()];
        p[0] = false;
        p
    }

    pub fn encode(&self, cats: &[u32], r: Option<Group>, flags: &[bool]) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.width()];
        row[0] = 1.0;
        let d = self.dummies();
        let g = if self.use_group {
            let r = r.ok_or(Error::MissingGroup)?;
            row[1 + d] = r as f64;
            r as f64
        } else {
            0.0
        };
        let mut offset = 1;
        for (c, levels) in self.levels.iter().enumerate() {
            let value = *cats.get(c).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "expected {} categorical columns",
                    self.levels.len()
                ))
            })?;
            let pos = levels
                .binary_search(&value)
                .map_err(|_| Error::UnknownLevel {
                    column: c,
                    level: value,
                })?;
            if pos > 0 {
                row[offset + pos - 1] = 1.0;
                if self.interact_group {
                    row[1 + d + 1 + offset - 1 + pos - 1] = g;
                }
            }
            offset += levels.len().saturating_sub(1);
        }
        let flag_start = self.width() - self.n_flags;
        for (k, &f) in flags.iter().take(self.n_flags).enumerate() {
            row[flag_start + k] = if f { 1.0 } else { 0.0 };
        }
        Ok(row)
    }
}

/// Key for aggregating observations with identical features.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureKey {
    pub cats: Vec<u32>,
    pub r: Option<Group>,
    pub flags: Vec<bool>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Counts {
    pub n: f64,
    pub positives: f64,
}

/// Aggregated binomial observations, ordered by key.
pub type GroupedData = BTreeMap<FeatureKey, Counts>;

pub fn add_observation(data: &mut GroupedData, key: FeatureKey, label: bool) {
    let e = data.entry(key).or_default();
    e.n += 1.0;
    if label {
        e.positives += 1.0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub encoder: Encoder,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub meta: FitMeta,
}

impl LogisticModel {
    /// Fits the model; if every label is identical only the intercept is
    /// fitted and `meta.degenerate` is set.
    pub fn fit(encoder: Encoder, data: &GroupedData, opts: &IrlsOptions) -> Result<Self> {
        let total: f64 = data.values().map(|c| c.n).sum();
        let positives: f64 = data.values().map(|c| c.positives).sum();
        if total <= 0.0 {
            return Err(Error::NoLabels);
        }
        let names = encoder.names();
        if positives == 0.0 || positives == total {
            let mut design = GroupedDesign::new(1);
            design.push(&[1.0], total, positives);
            let (b, mut meta) = fit_irls(&design, &[false], opts);
            meta.degenerate = true;
            let mut coefficients = vec![0.0; encoder.width()];
            coefficients[0] = b[0];
            return Ok(Self {
                encoder,
                names,
                coefficients,
                meta,
            });
        }
        let mut design = GroupedDesign::new(encoder.width());
        for (k, c) in data {
            let row = encoder.encode(&k.cats, k.r, &k.flags)?;
            design.push(&row, c.n, c.positives);
        }
        let (coefficients, meta) = fit_irls(&design, &encoder.penalized(), opts);
        Ok(Self {
            encoder,
            names,
            coefficients,
            meta,
        })
    }

    pub fn predict(&self, cats: &[u32], r: Option<Group>, flags: &[bool]) -> Result<f64> {
        let row = self.encoder.encode(cats, r, flags)?;
        let eta: f64 = row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum();
        Ok(sigmoid(eta))
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(x: u32, r: Option<u8>) -> FeatureKey {
        FeatureKey {
            cats: vec![x],
            r,
            flags: vec![],
        }
    }

    #[test]
    fn encoder_layout() {
        let enc = Encoder::new(vec![vec![2, 0, 1]], true, true, 2);
        assert_eq!(enc.width(), 1 + 2 + 1 + 2 + 2);
        assert_eq!(
            enc.names(),
            vec![
                "intercept",
                "x0=1",
                "x0=2",
                "r",
                "x0=1:r",
                "x0=2:r",
                "u0",
                "u1"
            ]
        );
        let row = enc.encode(&[2], Some(1), &[true, false]).unwrap();
        assert_eq!(row, vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let row = enc.encode(&[0], Some(0), &[false, true]).unwrap();
        assert_eq!(row, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            enc.encode(&[5], Some(0), &[false, false]),
            Err(Error::UnknownLevel { .. })
        ));
        assert!(matches!(
            enc.encode(&[0], None, &[]),
            Err(Error::MissingGroup)
        ));
    }

    #[test]
    fn intercept_only_half() {
        let enc = Encoder::new(vec![], false, false, 0);
        let mut data = GroupedData::new();
        for i in 0..10 {
            add_observation(&mut data, key_empty(), i % 2 == 0);
        }
        let m = LogisticModel::fit(enc, &data, &IrlsOptions::default()).unwrap();
        assert!(m.meta.converged);
        assert!((m.predict(&[], None, &[]).unwrap() - 0.5).abs() < 1e-12);
    }

    fn key_empty() -> FeatureKey {
        FeatureKey {
            cats: vec![],
            r: None,
            flags: vec![],
        }
    }

    #[test]
    fn saturated_matches_stratum_means() {
        let enc = Encoder::new(vec![vec![0, 1, 2]], true, true, 0);
        let mut data = GroupedData::new();
        let rates = [
            (0, 0, 0.2),
            (1, 0, 0.5),
            (2, 0, 0.7),
            (0, 1, 0.3),
            (1, 1, 0.45),
            (2, 1, 0.9),
        ];
        for &(x, r, p) in &rates {
            data.insert(
                key(x, Some(r)),
                Counts {
                    n: 1000.0,
                    positives: 1000.0 * p,
                },
            );
        }
        let m = LogisticModel::fit(enc, &data, &IrlsOptions::default()).unwrap();
        assert!(m.meta.converged, "{:?}", m.meta);
        for &(x, r, p) in &rates {
            assert!((m.predict(&[x], Some(r), &[]).unwrap() - p).abs() < 1e-4);
        }
    }

    #[test]
    fn separated_data_stays_finite() {
        let enc = Encoder::new(vec![vec![0, 1]], false, false, 0);
        let mut data = GroupedData::new();
        data.insert(
            key(0, None),
            Counts {
                n: 50.0,
                positives: 0.0,
            },
        );
        data.insert(
            key(1, None),
            Counts {
                n: 50.0,
                positives: 50.0,
            },
        );
        let m = LogisticModel::fit(enc, &data, &IrlsOptions::default()).unwrap();
        assert!(m.meta.converged, "{:?}", m.meta);
        assert!(m.coefficients.iter().all(|b| b.is_finite()));
        for x in 0..2 {
            let p = m.predict(&[x], None, &[]).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn constant_labels_flagged() {
        let enc = Encoder::new(vec![vec![0, 1]], false, false, 0);
        let mut data = GroupedData::new();
        data.insert(
            key(0, None),
            Counts {
                n: 5.0,
                positives: 5.0,
            },
        );
        data.insert(
            key(1, None),
            Counts {
                n: 7.0,
                positives: 7.0,
            },
        );
        let m = LogisticModel::fit(enc, &data, &IrlsOptions::default()).unwrap();
        assert!(m.meta.degenerate);
        assert!(m.meta.converged);
        assert_eq!(m.coefficients[1], 0.0);
        assert!(m.predict(&[1], None, &[]).unwrap() > 0.999_999);
    }

    #[test]
    fn matches_finite_difference_gradient() {
        // the analytic gradient should agree with central differences of the objective
        let mut d = GroupedDesign::new(3);
        d.push(&[1.0, 0.0, 1.0], 10.0, 3.0);
        d.push(&[1.0, 1.0, 0.0], 20.0, 15.0);
        d.push(&[1.0, 1.0, 1.0], 5.0, 1.0);
        let pen = [false, true, true];
        let beta = [0.3, -0.2, 0.7];
        let g = gradient(&d, &beta, &pen, 0.01, 35.0);
        for j in 0..3 {
            let h = 1e-6;
            let mut bp = beta;
            let mut bm = beta;
            bp[j] += h;
            bm[j] -= h;
            let fd = (objective(&d, &bp, &pen, 0.01, 35.0) - objective(&d, &bm, &pen, 0.01, 35.0))
                / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let mut d = GroupedDesign::new(2);
        d.push(&[1.0, 0.0], 10.0, 3.0);
        d.push(&[1.0, 1.0], 10.0, 8.0);
        let opts = IrlsOptions {
            max_iter: 1,
            tol: 1e-14,
            ..Default::default()
        };
        let (_, meta) = fit_irls(&d, &[false, true], &opts);
        assert!(!meta.converged);
        assert_eq!(meta.iterations, 1);
    }
}
