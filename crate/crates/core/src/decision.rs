//! The decision-maker's search rules.
//!
//! A baseline rule searches when `mu >= c - tau * r`; the fewer-labels
//! variant searches when `mu >= c + tau * r`. A noisy rule adds an
//! independent error `eps` to `mu` before comparing.

use libm::erfc;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{Group, Population};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Baseline,
    FewerLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Logistic,
    Normal,
}

/// Distribution of the decision-maker's prediction error.
///
/// `scale` is the logistic scale or the normal standard deviation.
/// `group_scales`, when present, overrides `scale` per group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_scales: Option<[f64; 2]>,
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl NoiseSpec {
    pub fn new(family: NoiseFamily, scale: f64) -> Self {
        Self {
            family,
            scale,
            group_scales: None,
        }
    }

    pub fn logistic(scale: f64) -> Self {
        Self::new(NoiseFamily::Logistic, scale)
    }

    pub fn normal(scale: f64) -> Self {
        Self::new(NoiseFamily::Normal, scale)
    }

    pub fn scale_for(&self, r: Group) -> f64 {
        match self.group_scales {
            Some(s) => s[r as usize],
            None => self.scale,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |s: f64| s > 0.0 && s.is_finite();
        if !ok(self.scale) || self.group_scales.is_some_and(|g| !ok(g[0]) || !ok(g[1])) {
            return Err(Error::InvalidRule("noise scale must be positive".into()));
        }
        Ok(())
    }

    pub fn cdf(&self, r: Group, t: f64) -> f64 {
        let z = t / self.scale_for(r);
        match self.family {
            NoiseFamily::Logistic => 1.0 / (1.0 + (-z).exp()),
            NoiseFamily::Normal => 0.5 * erfc(-z / std::f64::consts::SQRT_2),
        }
    }

    /// `1 - F(t)`, computed without cancellation in the upper tail.
    pub fn survival(&self, r: Group, t: f64) -> f64 {
        let z = t / self.scale_for(r);
        match self.family {
            NoiseFamily::Logistic => 1.0 / (1.0 + z.exp()),
            NoiseFamily::Normal => 0.5 * erfc(z / std::f64::consts::SQRT_2),
        }
    }

    pub fn pdf(&self, r: Group, t: f64) -> f64 {
        let s = self.scale_for(r);
        let z = t / s;
        match self.family {
            NoiseFamily::Logistic => {
                let e = (-z.abs()).exp();
                e / (s * (1.0 + e) * (1.0 + e))
            }
            NoiseFamily::Normal => FRAC_1_SQRT_2PI * (-0.5 * z * z).exp() / s,
        }
    }

    /// Hazard rate `f(t) / (1 - F(t))`.
    pub fn hazard(&self, r: Group, t: f64) -> f64 {
        match self.family {
            // f / (1 - F) = F / s for the logistic.
            NoiseFamily::Logistic => self.cdf(r, t) / self.scale_for(r),
            NoiseFamily::Normal => self.pdf(r, t) / self.survival(r, t),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, r: Group) -> f64 {
        let s = self.scale_for(r);
        match self.family {
            NoiseFamily::Logistic => {
                // inverse CDF on (0, 1)
                let p: f64 = rng.random_range(f64::EPSILON..1.0);
                s * (p / (1.0 - p)).ln()
            }
            NoiseFamily::Normal => s * rng.sample::<f64, _>(StandardNormal),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub c: f64,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

impl DecisionRule {
    pub fn new(c: f64, tau: f64, variant: Variant, noise: Option<NoiseSpec>) -> Result<Self> {
        let rule = Self {
            c,
            tau,
            variant,
            noise,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn baseline(c: f64, tau: f64) -> Result<Self> {
        Self::new(c, tau, Variant::Baseline, None)
    }

    pub fn fewer_labels(c: f64, tau: f64) -> Result<Self> {
        Self::new(c, tau, Variant::FewerLabels, None)
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Result<Self> {
        self.noise = Some(noise);
        self.validate()?;
        Ok(self)
    }

    pub fn with_tau(self, tau: f64) -> Self {
        Self { tau, ..self }
    }

    /// `c` must lie in `(0, 1]`; `c = 1` is admitted as the "search no one
    /// short of certainty" boundary case.
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(Error::InvalidRule(format!("c = {} outside (0, 1]", self.c)));
        }
        if !self.tau.is_finite() {
            return Err(Error::InvalidRule("tau must be finite".into()));
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        Ok(())
    }

    /// Effective threshold on `mu` for group `r`.
    pub fn threshold(&self, r: Group) -> f64 {
        let shift = self.tau * r as f64;
        match self.variant {
            Variant::Baseline => self.c - shift,
            Variant::FewerLabels => self.c + shift,
        }
    }

    /// Deterministic threshold decision, ignoring any noise spec.
    pub fn select(&self, mu: f64, r: Group) -> bool {
        mu >= self.threshold(r)
    }

    /// Decision with a realized prediction error `eps`.
    pub fn select_noisy(&self, mu: f64, r: Group, eps: f64) -> bool {
        mu + eps >= self.threshold(r)
    }

    /// `P(S = 1 | mu, r) = 1 - F(threshold(r) - mu)` for a noisy rule.
    pub fn selection_probability(&self, mu: f64, r: Group) -> Result<f64> {
        let noise = self.noise.as_ref().ok_or(Error::DeterministicRule)?;
        Ok(noise.survival(r, self.threshold(r) - mu))
    }

    /// Selection probability for either kind of rule: 0/1 when deterministic.
    pub fn selection_weight(&self, mu: f64, r: Group) -> f64 {
        match &self.noise {
            Some(n) => n.survival(r, self.threshold(r) - mu),
            None => {
                if self.select(mu, r) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per-cell selection probabilities and selected masses for one rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTable {
    pub probability: Vec<f64>,
    pub selected_mass: Vec<f64>,
}

impl SelectionTable {
    pub fn total_selected(&self) -> f64 {
        self.selected_mass.iter().sum()
    }
}

/// Applies `rule` to every cell. Noisy rules yield exact probabilities, not
/// sampled flags.
pub fn apply_rule(pop: &Population, rule: &DecisionRule) -> SelectionTable {
    let probability: Vec<f64> = pop
        .cells()
        .iter()
        .map(|c| rule.selection_weight(c.mu, c.r))
        .collect();
    let selected_mass = pop
        .cells()
        .iter()
        .zip(&probability)
        .map(|(c, p)| c.mass * p)
        .collect();
    SelectionTable {
        probability,
        selected_mass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::pop_a;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn threshold_arithmetic() {
        let r = DecisionRule::baseline(0.3, 0.0).unwrap();
        assert!(r.select(0.5, 1));
        let r = DecisionRule::baseline(0.3, 0.15).unwrap();
        assert!(r.select(0.2, 1));
        assert!(!r.select(0.2, 0));
        let f = DecisionRule::fewer_labels(0.3, 0.15).unwrap();
        assert!(!f.select(0.4, 1));
        assert!(f.select(0.4, 0));
    }

    #[test]
    fn weak_inequality_at_threshold() {
        let r = DecisionRule::baseline(0.5, 0.0).unwrap();
        assert!(r.select(0.5, 0));
    }

    #[test]
    fn rejects_invalid_rules() {
        assert!(DecisionRule::baseline(0.0, 0.1).is_err());
        assert!(DecisionRule::baseline(1.2, 0.1).is_err());
        assert!(DecisionRule::baseline(0.5, f64::NAN).is_err());
        assert!(DecisionRule::baseline(0.5, 0.0)
            .unwrap()
            .with_noise(NoiseSpec::logistic(0.0))
            .is_err());
    }

    #[test]
    fn zero_noise_matches_deterministic() {
        let rule = DecisionRule::baseline(0.45, 0.2)
            .unwrap()
            .with_noise(NoiseSpec::logistic(1.0))
            .unwrap();
        for &mu in &[0.0, 0.1, 0.25, 0.4, 0.6, 1.0] {
            for r in 0..2 {
                assert_eq!(rule.select_noisy(mu, r, 0.0), rule.select(mu, r));
            }
        }
    }

    #[test]
    fn closed_form_selection_probability() {
        let rule = DecisionRule::baseline(0.5, 0.0)
            .unwrap()
            .with_noise(NoiseSpec::logistic(1.0))
            .unwrap();
        let p = rule.selection_probability(0.6, 1).unwrap();
        assert!((p - 1.0 / (1.0 + (-0.1f64).exp())).abs() < 1e-15);
        assert!((p - 0.5250).abs() < 5e-5);
        for fam in [NoiseFamily::Logistic, NoiseFamily::Normal] {
            let r = DecisionRule::baseline(0.5, 0.0)
                .unwrap()
                .with_noise(NoiseSpec::new(fam, 1.0))
                .unwrap();
            assert!(r.selection_probability(10.0, 1).unwrap() >= 0.9999);
        }
        let det = DecisionRule::baseline(0.5, 0.0).unwrap();
        assert!(matches!(
            det.selection_probability(0.6, 1),
            Err(Error::DeterministicRule)
        ));
    }

    #[test]
    fn normal_survival_matches_reference() {
        let n = NoiseSpec::normal(1.0);
        // Phi(1.0) = 0.841344746068543
        assert!((n.cdf(0, 1.0) - 0.841_344_746_068_543).abs() < 1e-12);
        assert!((n.survival(0, 0.0) - 0.5).abs() < 1e-15);
        let n2 = NoiseSpec::normal(2.0);
        assert!((n2.cdf(0, 2.0) - 0.841_344_746_068_543).abs() < 1e-12);
    }

    #[test]
    fn pdf_integrates_to_cdf_difference() {
        // trapezoid check of the density against the CDF for both families
        for spec in [NoiseSpec::logistic(0.7), NoiseSpec::normal(1.3)] {
            let (a, b, m) = (-1.5, 2.0, 20_000);
            let h = (b - a) / m as f64;
            let mut s = 0.5 * (spec.pdf(0, a) + spec.pdf(0, b));
            for i in 1..m {
                s += spec.pdf(0, a + i as f64 * h);
            }
            let integral = s * h;
            assert!((integral - (spec.cdf(0, b) - spec.cdf(0, a))).abs() < 1e-8);
        }
    }

    #[test]
    fn hazard_strictly_increasing() {
        for spec in [NoiseSpec::logistic(1.0), NoiseSpec::normal(1.0)] {
            let grid: Vec<f64> = (0..1000).map(|i| -10.0 + 20.0 * i as f64 / 999.0).collect();
            let h: Vec<f64> = grid.iter().map(|&t| spec.hazard(0, t)).collect();
            assert!(h.windows(2).all(|w| w[1] > w[0]), "{spec:?}");
        }
    }

    #[test]
    fn noisy_draw_frequency() {
        let rule = DecisionRule::baseline(0.5, 0.2)
            .unwrap()
            .with_noise(NoiseSpec::logistic(1.0))
            .unwrap();
        let noise = rule.noise.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| rule.select_noisy(0.2, 1, noise.draw(&mut rng, 1)))
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 1.0 / (1.0 + 0.1f64.exp())).abs() < 0.005, "{freq}");
    }

    #[test]
    fn apply_rule_pop_a() {
        let pop = pop_a();
        let table = apply_rule(&pop, &DecisionRule::baseline(0.45, 0.0).unwrap());
        for (i, c) in pop.cells().iter().enumerate() {
            if c.r == 1 && c.x == 0 {
                assert_eq!(table.probability[i] == 1.0, c.u == 2);
            }
        }
        let table = apply_rule(&pop, &DecisionRule::baseline(0.45, 0.45).unwrap());
        for (i, c) in pop.cells().iter().enumerate() {
            if c.r == 1 {
                assert_eq!(table.selected_mass[i], c.mass);
            }
        }
        let noisy = DecisionRule::baseline(0.45, 0.0)
            .unwrap()
            .with_noise(NoiseSpec::logistic(1.0))
            .unwrap();
        let table = apply_rule(&pop, &noisy);
        for (i, c) in pop.cells().iter().enumerate() {
            assert!(table.selected_mass[i] > 0.0 && table.selected_mass[i] < c.mass);
        }
    }

    #[test]
    fn per_group_scales() {
        let mut spec = NoiseSpec::normal(1.0);
        spec.group_scales = Some([1.0, 2.0]);
        assert_eq!(spec.scale_for(1), 2.0);
        assert!((spec.cdf(1, 2.0) - spec.cdf(0, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn rule_json_block() {
        let json = r#"{"c":0.45,"tau":0.3,"variant":"baseline","noise":{"family":"logistic","scale":1.0}}"#;
        let rule: DecisionRule = serde_json::from_str(json).unwrap();
        assert_eq!(rule.noise.unwrap().family, NoiseFamily::Logistic);
        assert_eq!(rule.variant, Variant::Baseline);
        let back: DecisionRule =
            serde_json::from_str(&serde_json::to_string(&rule).unwrap()).unwrap();
        assert_eq!(back, rule);
    }
}
