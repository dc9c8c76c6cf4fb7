//! Shapley attribution of a plan's inequality reduction to its edited blocks.
//!
//! The characteristic function is `v(S) = ε(∅) − ε(S)`, where `ε(S)` is the
//! soft inequality with only the blocks in `S` edited.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recommend::{DeltaGrid, SoftModel};

/// Largest coalition size for exact enumeration.
pub const EXACT_LIMIT: usize = 12;
pub const DEFAULT_PERMUTATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub per_block: BTreeMap<String, f64>,
    pub method: Method,
    pub permutations_used: usize,
    pub seed: Option<u64>,
    /// `|Σ raw attributions − total reduction|` before renormalization.
    pub residual: f64,
    pub total_reduction: f64,
}

impl AttributionReport {
    /// Blocks ordered by decreasing attribution, ties by id.
    pub fn ranking(&self) -> Vec<(&str, f64)> {
        let mut out: Vec<_> = self.per_block.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        out
    }
}

/// Players: blocks with at least one non-zero delta.
pub fn players(plan: &DeltaGrid) -> Vec<usize> {
    (0..plan.blocks.len())
        .filter(|&k| plan.block_row(k).iter().any(|&d| d != 0.0))
        .collect()
}

/// Soft inequality with only the named blocks edited.
pub fn coalition_inequality(model: &SoftModel, plan: &DeltaGrid, coalition: &[&str]) -> Result<f64> {
    for id in coalition {
        if !plan.blocks.iter().any(|b| b == id) {
            return Err(Error::UnknownId {
                kind: "block",
                id: id.to_string(),
            });
        }
    }
    let grid = plan.restricted(|k| coalition.contains(&plan.blocks[k].as_str()));
    model.inequality(&grid)
}

struct Game<'a> {
    model: &'a SoftModel,
    plan: &'a DeltaGrid,
    players: Vec<usize>,
    base: f64,
    cache: HashMap<Vec<bool>, f64>,
}

impl<'a> Game<'a> {
    fn new(model: &'a SoftModel, plan: &'a DeltaGrid) -> Result<Self> {
        let base = model.inequality(&model.zero())?;
        Ok(Game {
            model,
            plan,
            players: players(plan),
            base,
            cache: HashMap::new(),
        })
    }

    fn value(&mut self, members: &[bool]) -> Result<f64> {
        if let Some(&v) = self.cache.get(members) {
            return Ok(v);
        }
        let blocks: Vec<usize> = self
            .players
            .iter()
            .zip(members)
            .filter(|(_, &m)| m)
            .map(|(&k, _)| k)
            .collect();
        let grid = self.plan.restricted(|k| blocks.contains(&k));
        let v = self.base - self.model.inequality(&grid)?;
        self.cache.insert(members.to_vec(), v);
        Ok(v)
    }

    fn total(&mut self) -> Result<f64> {
        self.value(&vec![true; self.players.len()])
    }

    fn names(&self) -> Vec<String> {
        self.players.iter().map(|&k| self.plan.blocks[k].clone()).collect()
    }
}

/// Shapley values of an `n`-player game given its characteristic function
/// over membership vectors.
fn exact_game(n: usize, mut value: impl FnMut(&[bool]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut values = vec![0.0; 1 << n];
    for (mask, slot) in values.iter_mut().enumerate() {
        let members: Vec<bool> = (0..n).map(|j| mask >> j & 1 == 1).collect();
        *slot = value(&members)?;
    }
    // |S|! (n-|S|-1)! / n!
    let weight: Vec<f64> = (0..n)
        .map(|s| factorial(s) * factorial(n - s - 1) / factorial(n))
        .collect();
    let mut phi = vec![0.0; n];
    for mask in 0..values.len() {
        let size = mask.count_ones() as usize;
        for (j, p) in phi.iter_mut().enumerate() {
            if mask >> j & 1 == 0 {
                *p += weight[size] * (values[mask | 1 << j] - values[mask]);
            }
        }
    }
    Ok(phi)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Raw Monte Carlo permutation estimate (not renormalized).
fn sampled_game(
    n: usize,
    permutations: usize,
    seed: u64,
    mut value: impl FnMut(&[bool]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let empty = value(&vec![false; n])?;
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        let mut members = vec![false; n];
        let mut previous = empty;
        for &j in &order {
            members[j] = true;
            let v = value(&members)?;
            phi[j] += v - previous;
            previous = v;
        }
    }
    for p in &mut phi {
        *p /= permutations as f64;
    }
    Ok(phi)
}

/// Shifts `phi` uniformly so it sums to `total`; returns the raw residual.
fn renormalize(phi: &mut [f64], total: f64) -> f64 {
    let raw: f64 = phi.iter().sum();
    if !phi.is_empty() {
        let shift = (total - raw) / phi.len() as f64;
        for p in phi.iter_mut() {
            *p += shift;
        }
    }
    (raw - total).abs()
}

pub fn shapley_exact(model: &SoftModel, plan: &DeltaGrid) -> Result<AttributionReport> {
    let mut game = Game::new(model, plan)?;
    let n = game.players.len();
    if n > EXACT_LIMIT {
        return Err(Error::TooManyPlayers {
            players: n,
            limit: EXACT_LIMIT,
        });
    }
    let phi = exact_game(n, |m| game.value(m))?;
    let total = game.total()?;
    let residual = (phi.iter().sum::<f64>() - total).abs();
    Ok(AttributionReport {
        per_block: game.names().into_iter().zip(phi).collect(),
        method: Method::Exact,
        permutations_used: 0,
        seed: None,
        residual,
        total_reduction: total,
    })
}

/// Monte Carlo permutation estimate, shifted uniformly so the attributions
/// sum to the total reduction.
pub fn shapley_sampled(
    model: &SoftModel,
    plan: &DeltaGrid,
    permutations: usize,
    seed: u64,
) -> Result<AttributionReport> {
    if permutations == 0 {
        return Err(Error::InvalidInput("n_permutations must be >= 1".into()));
    }
    let mut game = Game::new(model, plan)?;
    let n = game.players.len();
    let total = game.total()?;
    let mut phi = sampled_game(n, permutations, seed, |m| game.value(m))?;
    let residual = renormalize(&mut phi, total);
    Ok(AttributionReport {
        per_block: game.names().into_iter().zip(phi).collect(),
        method: Method::Sampled,
        permutations_used: permutations,
        seed: Some(seed),
        residual,
        total_reduction: total,
    })
}

/// Exact when the plan edits at most [`EXACT_LIMIT`] blocks, sampled otherwise.
pub fn shapley(model: &SoftModel, plan: &DeltaGrid, permutations: usize, seed: u64) -> Result<AttributionReport> {
    if players(plan).len() <= EXACT_LIMIT {
        shapley_exact(model, plan)
    } else {
        shapley_sampled(model, plan, permutations, seed)
    }
}
