//! What-If simulation: move-in marginals, IPF and seeded random assignment.
//!
//! 1. Each resident's mean benefit over all residences is squashed into a
//!    move-in probability `p_i = max(tanh(γ b̄_i), 0)`, with `γ` calibrated by
//!    bisection so that `Σ p_i` equals the total capacity.
//! 2. IPF fits the resident × residence matrix to the row marginals `p_i`
//!    and the column capacities, starting from a uniform seed over permitted
//!    cells (rows scaled first).
//! 3. Residents are visited in seeded random order. Each moves in with
//!    probability `p_i` and picks a residence in proportion to its row,
//!    restricted to residences that still have room.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::benefit::{benefit_matrix, group_stats, BenefitMatrix, GroupStats, Population};
use crate::error::{Error, Result};
use crate::geo::{accessibility, compute_distances, AccessibilityMatrix, DistanceMatrix};
use crate::inequality::{decompose, InequalityReport};
use crate::model::{CityDesign, PlanningConfig};

pub const IPF_TOLERANCE: f64 = 1e-8;
pub const IPF_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Marginals {
    pub p: Vec<f64>,
    pub gamma: f64,
}

fn calibrated_sum(mean_benefits: &[f64], gamma: f64) -> f64 {
    mean_benefits
        .iter()
        .filter(|&&b| b > 0.0)
        .map(|&b| (gamma * b).tanh())
        .sum()
}

pub fn move_in_marginals(mean_benefits: &[f64], total_capacity: f64) -> Result<Marginals> {
    if !(total_capacity > 0.0) {
        return Ok(Marginals {
            p: vec![0.0; mean_benefits.len()],
            gamma: 0.0,
        });
    }
    let positive: Vec<f64> = mean_benefits.iter().copied().filter(|&b| b > 0.0).collect();
    if total_capacity >= positive.len() as f64 {
        return Err(Error::InfeasibleCalibration {
            capacity: total_capacity,
            positive: positive.len(),
            gap: total_capacity - positive.len() as f64,
        });
    }
    let max_b = positive.iter().copied().fold(0.0, f64::max);
    let mut hi = 1.0 / max_b;
    while calibrated_sum(&positive, hi) < total_capacity {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::InfeasibleCalibration {
                capacity: total_capacity,
                positive: positive.len(),
                gap: total_capacity - calibrated_sum(&positive, f64::MAX),
            });
        }
    }
    let mut lo = 0.0;
    let mut gamma = hi;
    for _ in 0..2000 {
        gamma = 0.5 * (lo + hi);
        let s = calibrated_sum(&positive, gamma);
        // run to interval collapse; the soft objective differentiates through γ
        if s == total_capacity {
            break;
        }
        if s < total_capacity {
            lo = gamma;
        } else {
            hi = gamma;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let p = mean_benefits
        .iter()
        .map(|&b| if b > 0.0 { (gamma * b).tanh() } else { 0.0 })
        .collect();
    Ok(Marginals { p, gamma })
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        DenseMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(r)) {
                *s += v;
            }
        }
        sums
    }
}

/// One over every (positive row, positive column) cell, zero elsewhere.
pub fn uniform_seed(rows: &[f64], cols: &[f64]) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(rows.len(), cols.len());
    for (r, &pr) in rows.iter().enumerate() {
        for (c, &oc) in cols.iter().enumerate() {
            if pr > 0.0 && oc > 0.0 {
                m.set(r, c, 1.0);
            }
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IpfFit {
    pub matrix: DenseMatrix,
    pub iterations: usize,
}

pub fn ipf(rows: &[f64], cols: &[f64], seed: &DenseMatrix) -> Result<IpfFit> {
    if seed.rows != rows.len() || seed.cols != cols.len() {
        return Err(Error::InvalidInput(format!(
            "seed is {}x{}, marginals are {}x{}",
            seed.rows,
            seed.cols,
            rows.len(),
            cols.len()
        )));
    }
    if seed.data.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput("seed matrix must be non-negative".into()));
    }
    let (row_total, col_total): (f64, f64) = (rows.iter().sum(), cols.iter().sum());
    if (row_total - col_total).abs() > 1e-6 * row_total.abs().max(1.0) {
        return Err(Error::InvalidInput(format!(
            "marginal totals differ: rows {row_total}, columns {col_total}"
        )));
    }
    let mut m = seed.clone();
    let seed_rows = m.row_sums();
    if let Some(r) = (0..rows.len()).find(|&r| rows[r] > 0.0 && seed_rows[r] <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "row {r} has positive target but no permitted cells"
        )));
    }
    let seed_cols = m.col_sums();
    if let Some(c) = (0..cols.len()).find(|&c| cols[c] > 0.0 && seed_cols[c] <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "column {c} has positive target but no permitted cells"
        )));
    }

    let mut previous = m.data.clone();
    let mut change = f64::INFINITY;
    for iteration in 1..=IPF_MAX_ITERATIONS {
        for (r, &target) in rows.iter().enumerate() {
            let sum: f64 = m.row(r).iter().sum();
            let scale = if sum > 0.0 { target / sum } else { 0.0 };
            for v in &mut m.data[r * m.cols..(r + 1) * m.cols] {
                *v *= scale;
            }
        }
        let col_sums = m.col_sums();
        for r in 0..m.rows {
            for (c, &target) in cols.iter().enumerate() {
                let scale = if col_sums[c] > 0.0 { target / col_sums[c] } else { 0.0 };
                m.data[r * m.cols + c] *= scale;
            }
        }
        change = m
            .data
            .iter()
            .zip(&previous)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change < IPF_TOLERANCE {
            return Ok(IpfFit {
                matrix: m,
                iterations: iteration,
            });
        }
        previous.copy_from_slice(&m.data);
    }
    Err(Error::NonConvergence {
        iterations: IPF_MAX_ITERATIONS,
        residual: change,
    })
}

/// Per-resident assignment to a column index, or `None` when not allocated.
pub fn assign(matrix: &DenseMatrix, capacities: &[u32], seed: u64) -> Vec<Option<usize>> {
    assert_eq!(matrix.cols, capacities.len(), "capacity per column");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..matrix.rows).collect();
    order.shuffle(&mut rng);
    let mut remaining = capacities.to_vec();
    let mut open = remaining.iter().filter(|&&c| c > 0).count();
    let mut out = vec![None; matrix.rows];
    for i in order {
        if open == 0 {
            break;
        }
        let row = matrix.row(i);
        let p_i: f64 = row.iter().sum();
        if p_i <= 0.0 {
            continue;
        }
        let admit: f64 = rng.random();
        if admit >= p_i.min(1.0) {
            continue;
        }
        let mass: f64 = row.iter().zip(&remaining).filter(|(_, &c)| c > 0).map(|(p, _)| p).sum();
        if mass <= 0.0 {
            continue;
        }
        let target = rng.random::<f64>() * mass;
        let mut acc = 0.0;
        let mut chosen = None;
        for (c, (&p, &cap)) in row.iter().zip(&remaining).enumerate() {
            if cap == 0 || p <= 0.0 {
                continue;
            }
            acc += p;
            chosen = Some(c);
            if target < acc {
                break;
            }
        }
        if let Some(c) = chosen {
            remaining[c] -= 1;
            if remaining[c] == 0 {
                open -= 1;
            }
            out[i] = Some(c);
        }
    }
    out
}

/// Distances, accessibility and benefits for one design/population pair.
#[derive(Debug, Clone)]
pub struct BenefitContext {
    pub distances: DistanceMatrix,
    pub access: AccessibilityMatrix,
    pub benefits: BenefitMatrix,
    /// Occupancy capacity per residential building (column order).
    pub capacities: Vec<u32>,
}

impl BenefitContext {
    pub fn build(design: &CityDesign, population: &Population, config: &PlanningConfig) -> Result<Self> {
        config.validate()?;
        population.validate()?;
        let distances = compute_distances(design)?;
        let access = accessibility(design, &distances, config);
        let benefits = benefit_matrix(population, &access, config);
        let capacities = distances
            .residential
            .iter()
            .map(|id| design.buildings[id].occupancy_capacity(config.area_per_resident))
            .collect();
        Ok(BenefitContext {
            distances,
            access,
            benefits,
            capacities,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationResult {
    /// Resident id to residential building id; `None` when not allocated.
    pub assignments: BTreeMap<String, Option<String>>,
    pub residents: Vec<String>,
    pub buildings: Vec<String>,
    pub probability_matrix: DenseMatrix,
    pub marginals: Vec<f64>,
    pub capacities: Vec<u32>,
    pub gamma: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl AllocationResult {
    pub fn occupancy(&self) -> BTreeMap<String, u32> {
        let mut occ: BTreeMap<String, u32> = self.buildings.iter().map(|b| (b.clone(), 0)).collect();
        for b in self.assignments.values().flatten() {
            *occ.get_mut(b).expect("assigned building is a column") += 1;
        }
        occ
    }

    pub fn allocated_count(&self) -> usize {
        self.assignments.values().filter(|a| a.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizedBenefit {
    pub resident_id: String,
    pub type_id: String,
    pub building_id: String,
    pub benefit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Simulation {
    pub allocation: AllocationResult,
    pub realized: Vec<RealizedBenefit>,
    pub stats: GroupStats,
    /// Absent when nobody is allocated.
    pub inequality: Option<InequalityReport>,
}

pub fn simulate(
    design: &CityDesign,
    population: &Population,
    config: &PlanningConfig,
    seed: u64,
) -> Result<Simulation> {
    let ctx = BenefitContext::build(design, population, config)?;
    simulate_with(&ctx, population, config, seed)
}

pub fn simulate_with(
    ctx: &BenefitContext,
    population: &Population,
    config: &PlanningConfig,
    seed: u64,
) -> Result<Simulation> {
    let residents = ctx.benefits.residents.clone();
    let buildings = ctx.benefits.residential.clone();
    let cols: Vec<f64> = ctx.capacities.iter().map(|&c| f64::from(c)).collect();
    let total_capacity: f64 = cols.iter().sum();

    let marginals = move_in_marginals(&ctx.benefits.mean_benefits(), total_capacity)?;
    let fit = if total_capacity > 0.0 && !residents.is_empty() {
        ipf(&marginals.p, &cols, &uniform_seed(&marginals.p, &cols))?
    } else {
        IpfFit {
            matrix: DenseMatrix::zeros(residents.len(), buildings.len()),
            iterations: 0,
        }
    };
    let placed = assign(&fit.matrix, &ctx.capacities, seed);

    let mut realized = Vec::new();
    for (i, slot) in placed.iter().enumerate() {
        if let Some(l) = *slot {
            let r = &population.residents[i];
            realized.push(RealizedBenefit {
                resident_id: r.id.clone(),
                type_id: r.type_id.clone(),
                building_id: buildings[l].clone(),
                benefit: ctx.benefits.get(i, l),
            });
        }
    }
    let type_ids = population.type_ids();
    let stats = group_stats(realized.iter().map(|r| (r.type_id.as_str(), r.benefit)), &type_ids);
    let inequality = if realized.is_empty() {
        None
    } else {
        Some(decompose(
            realized.iter().map(|r| (r.type_id.as_str(), r.benefit)),
            config.alpha,
        )?)
    };
    let assignments = residents
        .iter()
        .zip(&placed)
        .map(|(id, slot)| (id.clone(), slot.map(|l| buildings[l].clone())))
        .collect();
    Ok(Simulation {
        allocation: AllocationResult {
            assignments,
            residents,
            buildings,
            probability_matrix: fit.matrix,
            marginals: marginals.p,
            capacities: ctx.capacities.clone(),
            gamma: marginals.gamma,
            iterations: fit.iterations,
            seed,
        },
        realized,
        stats,
        inequality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// γ for b̄ = {1, 2} and capacity 1, from an independent bisection on
    /// tanh(γ) + tanh(2γ) = 1 (scipy brentq agrees: 0.3781538063079824).
    const GAMMA_ONE_TWO: f64 = 0.378_153_806_307_982_4;

    #[test]
    fn negative_mean_benefit_never_moves_in() {
        let m = move_in_marginals(&[-90.0, 5.0, 7.0], 1.0).unwrap();
        assert_eq!(m.p[0], 0.0);
        assert!((m.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gamma_for_one_and_two() {
        let m = move_in_marginals(&[1.0, 2.0], 1.0).unwrap();
        assert!((m.gamma - GAMMA_ONE_TWO).abs() < 1e-8, "{}", m.gamma);
    }

    #[test]
    fn zero_capacity() {
        let m = move_in_marginals(&[1.0, 2.0], 0.0).unwrap();
        assert_eq!(m.gamma, 0.0);
        assert!(m.p.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn infeasible_calibration_names_gap() {
        match move_in_marginals(&[1.0, 2.0, -1.0], 2.5) {
            Err(Error::InfeasibleCalibration { positive, gap, .. }) => {
                assert_eq!(positive, 2);
                assert!((gap - 0.5).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ipf_independence_table() {
        let rows = [0.6, 0.4];
        let cols = [0.5, 0.5];
        let fit = ipf(&rows, &cols, &uniform_seed(&rows, &cols)).unwrap();
        let want = [0.3, 0.3, 0.2, 0.2];
        for (a, b) in fit.matrix.data.iter().zip(want) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ipf_one_by_one() {
        let fit = ipf(&[1.0], &[1.0], &DenseMatrix::from_rows(&[vec![1.0]])).unwrap();
        assert_eq!(fit.matrix.data, vec![1.0]);
    }

    #[test]
    fn ipf_rejects_mismatched_totals() {
        assert!(ipf(&[1.0], &[2.0], &DenseMatrix::from_rows(&[vec![1.0]])).is_err());
    }

    #[test]
    fn ipf_keeps_structural_zeros() {
        let seed = DenseMatrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![1.0, 1.0, 1.0]]);
        let fit = ipf(&[1.0, 2.0], &[1.0, 1.0, 1.0], &seed).unwrap();
        assert_eq!(fit.matrix.get(0, 1), 0.0);
    }

    #[test]
    fn forced_assignment() {
        let m = DenseMatrix::from_rows(&[vec![1.0]]);
        assert_eq!(assign(&m, &[1], 7), vec![Some(0)]);
    }

    #[test]
    fn assignment_is_deterministic() {
        let m = DenseMatrix::from_rows(&vec![vec![0.3, 0.3, 0.2]; 50]);
        assert_eq!(assign(&m, &[10, 10, 10], 42), assign(&m, &[10, 10, 10], 42));
    }

    #[test]
    fn zero_rows_stay_unallocated() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![0.5, 0.5]]);
        for seed in 0..20 {
            assert_eq!(assign(&m, &[5, 5], seed)[0], None);
        }
    }
}
