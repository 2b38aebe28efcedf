//! Finite categorical populations over `(x, u, r)` cells.
//!
//! Each cell carries its probability mass and `mu = P(Y = 1 | x, u, r)`.
//! Every conditional expectation the rest of the crate needs can be
//! computed exactly by enumerating cells, which is what the oracle suites
//! rely on.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Group indicator, 0 or 1. Group 1 is the group the decision-maker is
/// biased against.
pub type Group = u8;

/// Tolerance on the total mass before a population is renormalized.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub x: u32,
    pub u: u32,
    pub r: Group,
    pub mass: f64,
    pub mu: f64,
}

/// A realized draw from a population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Individual {
    pub x: u32,
    pub u: u32,
    pub r: Group,
    pub y: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PopulationDoc {
    cells: Vec<Cell>,
}

#[derive(Debug, Clone)]
pub struct Population {
    cells: Vec<Cell>,
    x_domain: Vec<u32>,
    u_domain: Vec<u32>,
    strata: BTreeMap<(u32, Group), Vec<usize>>,
    index: HashMap<(u32, u32, Group), usize>,
    /// Total input mass when it was off by more than [`MASS_TOLERANCE`].
    renormalized_from: Option<f64>,
}

/// Validates a cell list and returns a population whose masses sum to one.
///
/// Masses that do not sum to one are rescaled; the original total is kept
/// in [`Population::renormalized_from`].
pub fn build_population(cells: Vec<Cell>) -> Result<Population> {
    if cells.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let mut index = HashMap::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        if c.r > 1 {
            return Err(Error::InvalidGroup(c.r));
        }
        if !(c.mass >= 0.0) || !c.mass.is_finite() {
            return Err(Error::NegativeMass {
                x: c.x,
                u: c.u,
                r: c.r,
                mass: c.mass,
            });
        }
        if !(0.0..=1.0).contains(&c.mu) {
            return Err(Error::MuOutOfRange {
                x: c.x,
                u: c.u,
                r: c.r,
                mu: c.mu,
            });
        }
        if index.insert((c.x, c.u, c.r), i).is_some() {
            return Err(Error::DuplicateCell {
                x: c.x,
                u: c.u,
                r: c.r,
            });
        }
    }

    let total: f64 = cells.iter().map(|c| c.mass).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroTotalMass(total));
    }
    let mut cells = cells;
    let renormalized_from = if (total - 1.0).abs() > MASS_TOLERANCE {
        for c in &mut cells {
            c.mass /= total;
        }
        Some(total)
    } else {
        None
    };

    let x_domain: BTreeSet<u32> = cells.iter().map(|c| c.x).collect();
    let u_domain: BTreeSet<u32> = cells.iter().map(|c| c.u).collect();
    let mut strata: BTreeMap<(u32, Group), Vec<usize>> = BTreeMap::new();
    for (i, c) in cells.iter().enumerate() {
        strata.entry((c.x, c.r)).or_default().push(i);
    }

    Ok(Population {
        cells,
        x_domain: x_domain.into_iter().collect(),
        u_domain: u_domain.into_iter().collect(),
        strata,
        index,
        renormalized_from,
    })
}

impl Population {
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn x_domain(&self) -> &[u32] {
        &self.x_domain
    }

    pub fn u_domain(&self) -> &[u32] {
        &self.u_domain
    }

    pub fn renormalized_from(&self) -> Option<f64> {
        self.renormalized_from
    }

    pub fn total_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.mass).sum()
    }

    pub fn cell_index(&self, x: u32, u: u32, r: Group) -> Option<usize> {
        self.index.get(&(x, u, r)).copied()
    }

    /// Indices of the cells in stratum `(x, r)`; empty when absent.
    pub fn stratum_cells(&self, x: u32, r: Group) -> &[usize] {
        self.strata.get(&(x, r)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `(x, r)` strata with positive mass, in ascending order.
    pub fn strata(&self) -> Vec<(u32, Group)> {
        self.strata
            .iter()
            .filter(|(_, idx)| idx.iter().any(|&i| self.cells[i].mass > 0.0))
            .map(|(&k, _)| k)
            .collect()
    }

    pub fn stratum_mass(&self, x: u32, r: Group) -> f64 {
        self.stratum_cells(x, r)
            .iter()
            .map(|&i| self.cells[i].mass)
            .sum()
    }

    pub fn group_mass(&self, r: Group) -> f64 {
        self.cells.iter().filter(|c| c.r == r).map(|c| c.mass).sum()
    }

    /// `E[Y]` over the whole population.
    pub fn mean_y(&self) -> f64 {
        self.cells.iter().map(|c| c.mass * c.mu).sum::<f64>() / self.total_mass()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: PopulationDoc = serde_json::from_str(s)?;
        build_population(doc.cells)
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json_str(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PopulationDoc {
            cells: self.cells.clone(),
        })?)
    }
}

/// `E[Y | X = x, R = r]` by cell enumeration.
pub fn conditional_mean_y(pop: &Population, x: u32, r: Group) -> Result<f64> {
    let (mut mass, mut ym) = (0.0, 0.0);
    for &i in pop.stratum_cells(x, r) {
        let c = &pop.cells[i];
        mass += c.mass;
        ym += c.mass * c.mu;
    }
    if mass > 0.0 {
        Ok(ym / mass)
    } else {
        Err(Error::EmptyStratum { x, r: Some(r) })
    }
}

/// Draws `n` cell indices i.i.d. from the cell masses, each paired with a
/// Bernoulli(mu) label.
pub(crate) fn sample_cells(pop: &Population, n: usize, seed: u64) -> Vec<(usize, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = WeightedIndex::new(pop.cells.iter().map(|c| c.mass))
        .expect("population masses are validated");
    (0..n)
        .map(|_| {
            let i = dist.sample(&mut rng);
            let y = rng.random::<f64>() < pop.cells[i].mu;
            (i, y)
        })
        .collect()
}

/// Draws `n` individuals. Identical `(pop, n, seed)` give identical output.
pub fn sample(pop: &Population, n: usize, seed: u64) -> Vec<Individual> {
    sample_cells(pop, n, seed)
        .into_iter()
        .map(|(i, y)| {
            let c = &pop.cells[i];
            Individual {
                x: c.x,
                u: c.u,
                r: c.r,
                y,
            }
        })
        .collect()
}

/// Splitmix64 finalizer applied to `base + (index + 1) * golden gamma`.
///
/// Used wherever independent streams are needed for parallel tasks, so the
/// seed of task `i` depends only on the base seed and `i`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The shared test population: `x ∈ {0,1}`, `u ∈ {0,1,2}`, `r ∈ {0,1}`,
/// twelve equal-mass cells with `mu = 0.1 + 0.2u + 0.1x`.
pub fn pop_a() -> Population {
    let mut cells = Vec::with_capacity(12);
    for x in 0..2u32 {
        for r in 0..2u8 {
            for u in 0..3u32 {
                cells.push(Cell {
                    x,
                    u,
                    r,
                    mass: 1.0 / 12.0,
                    mu: 0.1 + 0.2 * u as f64 + 0.1 * x as f64,
                });
            }
        }
    }
    build_population(cells).expect("POP-A is valid")
}

/// Shape of randomly generated populations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomPopulationSpec {
    pub max_x: u32,
    pub max_u: u32,
}

impl Default for RandomPopulationSpec {
    fn default() -> Self {
        Self { max_x: 4, max_u: 8 }
    }
}

/// A random population with `1..=max_x` feature levels, `1..=max_u`
/// unobservable levels, both groups present, masses drawn uniformly and
/// normalized, and `mu` uniform on `[0, 1]` per cell.
pub fn random_population(spec: RandomPopulationSpec, seed: u64) -> Population {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = rng.random_range(1..=spec.max_x.max(1));
    let nu = rng.random_range(1..=spec.max_u.max(1));
    let mut cells = Vec::with_capacity((nx * nu * 2) as usize);
    for x in 0..nx {
        for r in 0..2u8 {
            for u in 0..nu {
                cells.push(Cell {
                    x,
                    u,
                    r,
                    mass: 0.05 + rng.random::<f64>(),
                    mu: rng.random::<f64>(),
                });
            }
        }
    }
    let total: f64 = cells.iter().map(|c| c.mass).sum();
    for c in &mut cells {
        c.mass /= total;
    }
    build_population(cells).expect("generated population is valid")
}
