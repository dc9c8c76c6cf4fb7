//! User constraints on recommended edits and the polytope of admissible
//! block × function-type floor-area changes they define.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CityDesign, FunctionType, PlanningConfig};

/// Desired movement of a resident type's mean benefit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
    Fixed,
    #[default]
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecommendConstraints {
    /// Allowed rise of a block's floor-area ratio over its current mean height, in floors.
    pub max_height_increase: f64,
    /// Total `Σ|δ|` in m². Ignored when `budget_fraction` is set.
    pub budget: f64,
    /// Budget as a fraction of the design's total floor area.
    pub budget_fraction: Option<f64>,
    /// Bound on `|Σ_k δ_{k,Residential}|` in m².
    pub residential_change_cap: f64,
    pub group_directions: BTreeMap<String, Direction>,
    /// Slack `τ` on mean-benefit changes, in benefit units.
    pub tau: f64,
    /// Penalty weight `λ`.
    pub lambda: f64,
}

impl Default for RecommendConstraints {
    fn default() -> Self {
        RecommendConstraints {
            max_height_increase: 2.0,
            budget: 0.0,
            budget_fraction: None,
            residential_change_cap: 0.0,
            group_directions: BTreeMap::new(),
            tau: 1.0,
            lambda: 1e3,
        }
    }
}

impl RecommendConstraints {
    pub fn effective_budget(&self, design: &CityDesign) -> f64 {
        match self.budget_fraction {
            Some(frac) => frac * design.total_floor_area(),
            None => self.budget,
        }
    }

    pub fn direction_of(&self, type_id: &str) -> Direction {
        self.group_directions.get(type_id).copied().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.budget >= 0.0) || self.budget_fraction.is_some_and(|f| !(f >= 0.0)) {
            return bad("budget must be >= 0");
        }
        if !(self.tau >= 0.0) {
            return bad("tau must be >= 0");
        }
        if !(self.lambda >= 1.0) {
            return bad("lambda must be >= 1");
        }
        if !(self.max_height_increase >= 0.0) {
            return bad("max_height_increase must be >= 0");
        }
        if !(self.residential_change_cap >= 0.0) {
            return bad("residential_change_cap must be >= 0");
        }
        Ok(())
    }
}

/// Row-major grid of floor-area changes over blocks × function types.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeltaGrid {
    pub blocks: Vec<String>,
    pub types: Vec<FunctionType>,
    pub values: Vec<f64>,
}

impl DeltaGrid {
    pub fn zeros(blocks: Vec<String>, types: Vec<FunctionType>) -> Self {
        let values = vec![0.0; blocks.len() * types.len()];
        DeltaGrid { blocks, types, values }
    }

    pub fn get(&self, block: usize, ty: usize) -> f64 {
        self.values[block * self.types.len() + ty]
    }

    pub fn block_row(&self, block: usize) -> &[f64] {
        let t = self.types.len();
        &self.values[block * t..(block + 1) * t]
    }

    /// Copy with every block outside `keep` zeroed.
    pub fn restricted(&self, keep: impl Fn(usize) -> bool) -> DeltaGrid {
        let t = self.types.len();
        let mut out = self.clone();
        for (k, chunk) in out.values.chunks_mut(t).enumerate() {
            if !keep(k) {
                chunk.fill(0.0);
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Non-zero cells as block → type → Δ.
    pub fn to_map(&self) -> BTreeMap<String, BTreeMap<FunctionType, f64>> {
        let mut out: BTreeMap<String, BTreeMap<FunctionType, f64>> = BTreeMap::new();
        for (k, block) in self.blocks.iter().enumerate() {
            for (f, ty) in self.types.iter().enumerate() {
                let v = self.get(k, f);
                if v != 0.0 {
                    out.entry(block.clone()).or_default().insert(ty.clone(), v);
                }
            }
        }
        out
    }
}

/// Blocks that own at least one building with a footprint, in id order.
pub fn editable_blocks(design: &CityDesign) -> Vec<String> {
    design
        .blocks
        .values()
        .filter(|b| b.footprint_total > 0.0)
        .map(|b| b.id.clone())
        .collect()
}

/// How a block-level change of type `f` is spread over member buildings:
/// in proportion to each building's existing `f` area, or by footprint
/// share when the block has none. Weights sum to one.
pub fn share_weights(design: &CityDesign, block_id: &str, f: &FunctionType) -> Vec<(String, f64)> {
    let members: Vec<_> = design.block_members(block_id).collect();
    let existing: f64 = members.iter().map(|b| b.floor_area(f)).sum();
    if existing > 0.0 {
        members
            .iter()
            .map(|b| (b.id.clone(), b.floor_area(f) / existing))
            .collect()
    } else {
        let fp: f64 = members.iter().map(|b| b.footprint_area()).sum();
        members
            .iter()
            .map(|b| (b.id.clone(), b.footprint_area() / fp))
            .collect()
    }
}

/// Admissible changes:
///
/// ```text
/// δ_{k,f} + v_{k,f} >= 0
/// Σ_f (δ_{k,f} + v_{k,f}) / s_k - h̄_k <= h_max
/// Σ_{k,f} |δ_{k,f}| <= budget
/// |Σ_k δ_{k,Residential}| <= residential cap
/// ```
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polytope {
    pub blocks: Vec<String>,
    pub types: Vec<FunctionType>,
    /// Current `v_{k,f}`, row-major.
    pub current: Vec<f64>,
    /// Upper bound on `Σ_f δ_{k,f}` per block.
    pub height_room: Vec<f64>,
    pub budget: f64,
    pub residential: Option<usize>,
    pub residential_cap: f64,
}

impl Polytope {
    /// Blocks without buildings are left out: there is nothing to spread a change over.
    pub fn new(design: &CityDesign, config: &PlanningConfig, constraints: &RecommendConstraints) -> Result<Self> {
        constraints.validate()?;
        let types = config.function_types.clone();
        let blocks = editable_blocks(design);
        let mut current = Vec::with_capacity(blocks.len() * types.len());
        let mut height_room = Vec::with_capacity(blocks.len());
        for id in &blocks {
            let block = &design.blocks[id];
            let row: Vec<f64> = types.iter().map(|f| design.block_floor_area(id, f)).collect();
            let total: f64 = row.iter().sum();
            height_room.push(block.footprint_total * (constraints.max_height_increase + block.mean_height) - total);
            current.extend(row);
        }
        Ok(Polytope {
            residential: types.iter().position(FunctionType::is_residential),
            blocks,
            types,
            current,
            height_room,
            budget: constraints.effective_budget(design),
            residential_cap: constraints.residential_change_cap,
        })
    }

    pub fn dim(&self) -> usize {
        self.current.len()
    }

    pub fn zero(&self) -> DeltaGrid {
        DeltaGrid::zeros(self.blocks.clone(), self.types.clone())
    }

    fn block_sums(&self, delta: &[f64]) -> Vec<f64> {
        delta.chunks(self.types.len()).map(|c| c.iter().sum()).collect()
    }

    fn residential_sum(&self, delta: &[f64]) -> f64 {
        let t = self.types.len();
        self.residential.map_or(0.0, |r| delta.chunks(t).map(|c| c[r]).sum())
    }

    /// Human-readable list of violated rows at tolerance `tol`.
    pub fn violations(&self, delta: &[f64], tol: f64) -> Vec<String> {
        let t = self.types.len();
        let mut out = Vec::new();
        for (c, (&d, &v)) in delta.iter().zip(&self.current).enumerate() {
            if d + v < -tol {
                out.push(format!(
                    "{} {}: final floor area {} < 0",
                    self.blocks[c / t],
                    self.types[c % t],
                    d + v
                ));
            }
        }
        for (k, s) in self.block_sums(delta).into_iter().enumerate() {
            if s > self.height_room[k] + tol {
                out.push(format!(
                    "{}: height room {} exceeded by {}",
                    self.blocks[k],
                    self.height_room[k],
                    s - self.height_room[k]
                ));
            }
        }
        let spent: f64 = delta.iter().map(|d| d.abs()).sum();
        if spent > self.budget + tol {
            out.push(format!("budget {} exceeded: {}", self.budget, spent));
        }
        let res = self.residential_sum(delta);
        if res.abs() > self.residential_cap + tol {
            out.push(format!(
                "residential change {} exceeds cap {}",
                res, self.residential_cap
            ));
        }
        out
    }

    pub fn contains(&self, delta: &[f64], tol: f64) -> bool {
        self.violations(delta, tol).is_empty()
    }

    /// Largest `t >= 0` with `t · direction` admissible (the origin must be).
    pub fn max_step(&self, direction: &[f64]) -> f64 {
        let mut t = f64::INFINITY;
        let mut limit = |room: f64, rate: f64| {
            if rate > 0.0 {
                t = t.min((room / rate).max(0.0));
            }
        };
        for (&d, &v) in direction.iter().zip(&self.current) {
            limit(v, -d);
        }
        for (k, s) in self.block_sums(direction).into_iter().enumerate() {
            limit(self.height_room[k], s);
        }
        limit(self.budget, direction.iter().map(|d| d.abs()).sum());
        limit(self.residential_cap, self.residential_sum(direction).abs());
        t
    }

    /// Random admissible point: a Gaussian direction scaled uniformly
    /// along the segment from the origin to the boundary. Cells with no
    /// current area only grow. With a zero residential cap the residential
    /// components are drawn to sum to exactly zero.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut direction: Vec<f64> = self
            .current
            .iter()
            .map(|&v| {
                let d: f64 = StandardNormal.sample(rng);
                if v > 0.0 {
                    d
                } else {
                    d.abs()
                }
            })
            .collect();
        if let (Some(r), true) = (self.residential, self.residential_cap == 0.0) {
            let t = self.types.len();
            let cells: Vec<usize> = (0..self.blocks.len())
                .map(|k| k * t + r)
                .filter(|&c| self.current[c] > 0.0)
                .collect();
            for k in 0..self.blocks.len() {
                direction[k * t + r] = 0.0;
            }
            if let Some((&last, rest)) = cells.split_last() {
                let mut sum = 0.0;
                for &c in rest {
                    direction[c] = StandardNormal.sample(rng);
                    sum += direction[c];
                }
                direction[last] = -sum;
            }
        }
        let t_max = self.max_step(&direction);
        let t = if t_max.is_finite() {
            rng.random::<f64>() * t_max
        } else {
            0.0
        };
        direction.iter().map(|d| d * t).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{rectangle, Building};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn design() -> CityDesign {
        let b = |id: &str, block: &str, x: f64, areas: &[(FunctionType, f64)]| Building {
            id: id.into(),
            block_id: block.into(),
            footprint: rectangle(x, 0.0, 20.0, 20.0),
            floors: 4,
            floor_areas: areas.iter().cloned().collect(),
        };
        CityDesign::new(
            ["a", "b", "empty"],
            vec![
                b("r1", "a", 0.0, &[(FunctionType::RESIDENTIAL, 1200.0)]),
                b("o1", "b", 100.0, &[(FunctionType::OFFICE, 1000.0)]),
            ],
            "",
        )
    }

    #[test]
    fn origin_is_feasible_and_empty_blocks_dropped() {
        let c = RecommendConstraints {
            budget: 500.0,
            ..Default::default()
        };
        let p = Polytope::new(&design(), &PlanningConfig::default(), &c).unwrap();
        assert_eq!(p.blocks, vec!["a".to_string(), "b".to_string()]);
        assert!(p.contains(&vec![0.0; p.dim()], 0.0));
    }

    #[test]
    fn samples_stay_inside() {
        let c = RecommendConstraints {
            budget: 800.0,
            residential_change_cap: 100.0,
            max_height_increase: 0.5,
            ..Default::default()
        };
        let p = Polytope::new(&design(), &PlanningConfig::default(), &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut nonzero = 0;
        for _ in 0..500 {
            let x = p.sample(&mut rng);
            assert!(p.contains(&x, 1e-9), "{:?}", p.violations(&x, 1e-9));
            nonzero += usize::from(x.iter().any(|&d| d != 0.0));
        }
        assert!(nonzero > 450);
    }

    #[test]
    fn zero_residential_cap_still_samples() {
        let mut d = design();
        let mut r2 = d.buildings["r1"].clone();
        r2.id = "r2".into();
        r2.block_id = "b".into();
        r2.footprint = rectangle(200.0, 0.0, 20.0, 20.0);
        d = CityDesign::new(["a", "b"], d.buildings.values().cloned().chain([r2]).collect(), "");
        let c = RecommendConstraints {
            budget: 800.0,
            ..Default::default()
        };
        let p = Polytope::new(&d, &PlanningConfig::default(), &c).unwrap();
        let r = p.residential.unwrap();
        let t = p.types.len();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x = p.sample(&mut rng);
            assert!(p.contains(&x, 1e-9), "{:?}", p.violations(&x, 1e-9));
            assert!(x[r] != 0.0 && x[t + r] != 0.0);
        }
    }

    #[test]
    fn budget_zero_is_a_point() {
        let p = Polytope::new(&design(), &PlanningConfig::default(), &RecommendConstraints::default()).unwrap();
        let mut dir = vec![0.0; p.dim()];
        dir[1] = 1.0;
        assert_eq!(p.max_step(&dir), 0.0);
    }

    #[test]
    fn rejects_small_lambda() {
        let c = RecommendConstraints {
            lambda: 0.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
