//! Inequality-reducing floor-area recommendations.

mod constraints;
mod frank_wolfe;
mod lmo;
mod plan;
mod soft;

pub use constraints::{editable_blocks, share_weights, DeltaGrid, Direction, Polytope, RecommendConstraints};
pub use frank_wolfe::{frank_wolfe, optimize, EditPlan, MAX_ITERATIONS, STOP_FRACTION};
pub use lmo::linear_minimization_oracle;
pub use plan::{
    apply_plan, materialize, recommend, BlockDeltas, RankedBlock, RecommendationPlan, FEASIBILITY_TOLERANCE,
    PRUNE_THRESHOLD,
};
pub use soft::{SoftEval, SoftModel};


/// Soft objective `m` of `delta` on a fresh model.
pub fn soft_objective(
    design: &crate::model::CityDesign,
    delta: &DeltaGrid,
    population: &crate::benefit::Population,
    constraints: &RecommendConstraints,
    config: &crate::model::PlanningConfig,
) -> crate::Result<SoftEval> {
    SoftModel::new(design, population, config, constraints)?.evaluate(delta)
}
