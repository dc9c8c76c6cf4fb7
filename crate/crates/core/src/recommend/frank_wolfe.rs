use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::constraints::{DeltaGrid, Polytope, RecommendConstraints};
use super::lmo::linear_minimization_oracle;
use super::soft::{SoftEval, SoftModel};
use crate::benefit::Population;
use crate::error::{Error, Result};
use crate::model::{CityDesign, FunctionType, PlanningConfig};

pub const MAX_ITERATIONS: usize = 200;
/// Stop once `|Δm|` falls below this fraction of the starting objective.
pub const STOP_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPlan {
    pub deltas: BTreeMap<String, BTreeMap<FunctionType, f64>>,
    #[serde(skip)]
    pub grid: DeltaGrid,
    pub current_inequality: f64,
    pub predicted_inequality: f64,
    pub predicted_objective: f64,
    pub predicted_mean_benefit: f64,
    pub current_group_benefits: BTreeMap<String, Option<f64>>,
    pub predicted_group_benefits: BTreeMap<String, Option<f64>>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub no_improvement: bool,
}

impl EditPlan {
    /// Rebuild the plan's predictions for a different grid (e.g. after pruning).
    pub(crate) fn with_grid(&self, model: &SoftModel, grid: DeltaGrid) -> Result<EditPlan> {
        let eval = model.evaluate(&grid)?;
        Ok(EditPlan {
            deltas: grid.to_map(),
            predicted_inequality: eval.inequality,
            predicted_objective: eval.objective,
            predicted_mean_benefit: eval.mean_benefit,
            predicted_group_benefits: by_group(model, &eval),
            grid,
            ..self.clone()
        })
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

fn by_group(model: &SoftModel, eval: &SoftEval) -> BTreeMap<String, Option<f64>> {
    model
        .group_ids
        .iter()
        .cloned()
        .zip(eval.group_means.iter().copied())
        .collect()
}

/// Frank–Wolfe from the current design: `δ ← δ + ζ(δ* − δ)`, `ζ = 2/(c+2)`.
pub fn optimize(model: &SoftModel, polytope: &Polytope) -> Result<EditPlan> {
    if model.blocks != polytope.blocks || model.types != polytope.types {
        return Err(Error::InvalidInput("soft model and polytope disagree on cells".into()));
    }
    let mut delta = model.zero();
    let start = model.evaluate(&delta)?;
    let stop = STOP_FRACTION * start.objective.abs();
    let mut trace = vec![start.objective];
    let (mut best, mut best_eval) = (delta.clone(), start.clone());
    let mut current = start.objective;
    let mut iterations = 0;

    for c in 0..MAX_ITERATIONS {
        let gradient = model.gradient(&delta)?;
        let vertex = linear_minimization_oracle(&gradient, polytope)?;
        let step = 2.0 / (c as f64 + 2.0);
        for (d, v) in delta.values.iter_mut().zip(&vertex) {
            *d += step * (v - *d);
        }
        let eval = model.evaluate(&delta)?;
        trace.push(eval.objective);
        iterations = c + 1;
        if eval.objective < best_eval.objective {
            best = delta.clone();
            best_eval = eval.clone();
        }
        let change = (eval.objective - current).abs();
        current = eval.objective;
        if change < stop {
            break;
        }
    }

    let no_improvement = !(best_eval.objective < start.objective);
    if no_improvement {
        best = model.zero();
        best_eval = start.clone();
    }
    Ok(EditPlan {
        deltas: best.to_map(),
        grid: best,
        current_inequality: start.inequality,
        predicted_inequality: best_eval.inequality,
        predicted_objective: best_eval.objective,
        predicted_mean_benefit: best_eval.mean_benefit,
        current_group_benefits: by_group(model, &start),
        predicted_group_benefits: by_group(model, &best_eval),
        objective_trace: trace,
        iterations,
        no_improvement,
    })
}

pub fn frank_wolfe(
    design: &CityDesign,
    population: &Population,
    constraints: &RecommendConstraints,
    config: &PlanningConfig,
) -> Result<EditPlan> {
    let model = SoftModel::new(design, population, config, constraints)?;
    let polytope = Polytope::new(design, config, constraints)?;
    optimize(&model, &polytope)
}
