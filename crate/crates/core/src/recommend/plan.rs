use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::constraints::{share_weights, Polytope, RecommendConstraints};
use super::frank_wolfe::{optimize, EditPlan};
use super::soft::SoftModel;
use crate::allocator::simulate;
use crate::attribution::{shapley, AttributionReport, DEFAULT_PERMUTATIONS};
use crate::benefit::Population;
use crate::error::{Error, Result};
use crate::model::{apply_edits, CityDesign, Edit, FunctionType, PlanningConfig};

/// Cells whose change is below this many m² are dropped from a plan.
pub const PRUNE_THRESHOLD: f64 = 1.0;
/// Tolerance for constraint rows of a returned plan.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-6;

pub type BlockDeltas = BTreeMap<String, BTreeMap<FunctionType, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedBlock {
    pub block_id: String,
    pub attribution: f64,
    pub deltas: BTreeMap<FunctionType, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationPlan {
    pub plan: EditPlan,
    /// Edited blocks, highest attribution first.
    pub blocks: Vec<RankedBlock>,
    pub attribution: AttributionReport,
    pub constraints: RecommendConstraints,
    pub budget: f64,
    pub seed: u64,
    pub simulated_before: Option<f64>,
    pub simulated_after: Option<f64>,
}

/// Zero small cells, smallest first, as long as the plan stays admissible.
fn prune(plan: &[f64], polytope: &Polytope) -> Vec<f64> {
    let mut out = plan.to_vec();
    let mut small: Vec<usize> = (0..out.len())
        .filter(|&c| out[c] != 0.0 && out[c].abs() < PRUNE_THRESHOLD)
        .collect();
    small.sort_by(|&a, &b| out[a].abs().total_cmp(&out[b].abs()).then(a.cmp(&b)));
    for c in small {
        let kept = out[c];
        out[c] = 0.0;
        if !polytope.contains(&out, FEASIBILITY_TOLERANCE) {
            out[c] = kept;
        }
    }
    out
}

pub fn recommend(
    design: &CityDesign,
    population: &Population,
    constraints: &RecommendConstraints,
    config: &PlanningConfig,
    seed: u64,
) -> Result<RecommendationPlan> {
    let model = SoftModel::new(design, population, config, constraints)?;
    let polytope = Polytope::new(design, config, constraints)?;
    let raw = optimize(&model, &polytope)?;
    let mut grid = raw.grid.clone();
    grid.values = prune(&raw.grid.values, &polytope);
    let plan = raw.with_grid(&model, grid)?;
    let violations = polytope.violations(&plan.grid.values, FEASIBILITY_TOLERANCE);
    if !violations.is_empty() {
        return Err(Error::InfeasibleConstraints(violations.join("; ")));
    }

    let attribution = shapley(&model, &plan.grid, DEFAULT_PERMUTATIONS, seed)?;
    let blocks = attribution
        .ranking()
        .into_iter()
        .map(|(id, value)| RankedBlock {
            block_id: id.to_string(),
            attribution: value,
            deltas: plan.deltas.get(id).cloned().unwrap_or_default(),
        })
        .collect();

    let before = simulate(design, population, config, seed)?;
    let after = simulate(&apply_plan(design, &plan.deltas)?, population, config, seed)?;
    Ok(RecommendationPlan {
        blocks,
        attribution,
        constraints: constraints.clone(),
        budget: polytope.budget,
        seed,
        simulated_before: before.inequality.map(|r| r.total),
        simulated_after: after.inequality.map(|r| r.total),
        plan,
    })
}

/// Building edits realizing block-level changes: each change is spread over
/// the block's buildings by the same share weights the optimizer uses, and
/// floors are raised where the new total no longer fits.
pub fn materialize(design: &CityDesign, deltas: &BlockDeltas) -> Result<Vec<Edit>> {
    let mut edited = BTreeMap::new();
    for (block_id, row) in deltas {
        let block = design.block(block_id)?;
        if block.buildings.is_empty() || !(block.footprint_total > 0.0) {
            return Err(Error::InvalidInput(format!(
                "block `{block_id}` has no footprint to edit"
            )));
        }
        for (f, &delta) in row {
            if delta == 0.0 {
                continue;
            }
            for (building_id, share) in share_weights(design, block_id, f) {
                let b = edited
                    .entry(building_id.clone())
                    .or_insert_with(|| design.buildings[&building_id].clone());
                let area = b.floor_areas.entry(f.clone()).or_insert(0.0);
                *area += share * delta;
                if *area < 0.0 {
                    if *area < -FEASIBILITY_TOLERANCE {
                        return Err(Error::InvalidInput(format!(
                            "plan removes more {f} than block `{block_id}` has"
                        )));
                    }
                    *area = 0.0;
                }
            }
        }
    }
    Ok(edited
        .into_values()
        .map(|mut building| {
            building.floor_areas.retain(|_, a| *a > 0.0);
            let footprint = building.footprint_area();
            let needed = (building.total_floor_area() / footprint - 1e-9).ceil();
            if needed > f64::from(building.floors) {
                building.floors = needed as u32;
            }
            Edit::Modify { building }
        })
        .collect())
}

pub fn apply_plan(design: &CityDesign, deltas: &BlockDeltas) -> Result<CityDesign> {
    let edits = materialize(design, deltas)?;
    if edits.is_empty() {
        return Ok(design.clone());
    }
    apply_edits(design, &edits)
}
