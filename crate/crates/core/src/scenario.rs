//! The bundled synthetic mini-city and the evaluate → recommend → apply →
//! evaluate loop run on it.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::benefit::Population;
use crate::error::{Error, Result};
use crate::explain::{indicators, Indicators};
use crate::model::{rectangle, Building, CityDesign, FunctionType, PlanningConfig};
use crate::recommend::{apply_plan, recommend, Direction, RecommendConstraints, RecommendationPlan};
use crate::synth::{generate_population, PopulationSpec, PriorUtility, TypeSpec};

pub const BUNDLED: &str = "bundled-bronx-mini";
pub const POPULATION_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub design: CityDesign,
    pub population: Population,
    pub config: PlanningConfig,
    pub constraints: RecommendConstraints,
}

pub fn names() -> &'static [&'static str] {
    &[BUNDLED]
}

pub fn load(name: &str) -> Result<Scenario> {
    match name {
        BUNDLED => Ok(bundled()),
        other => Err(Error::NotFound(format!(
            "scenario `{other}`; available: {}",
            names().join(", ")
        ))),
    }
}

use FunctionType as F;

const BLOCK_PITCH: f64 = 260.0;
const SLOT_PITCH: f64 = 60.0;

struct Lot {
    w: f64,
    d: f64,
    floors: u32,
    uses: &'static [(F, f64)],
}

const fn lot(w: f64, d: f64, floors: u32, uses: &'static [(F, f64)]) -> Lot {
    Lot { w, d, floors, uses }
}

const HOME: &[(F, f64)] = &[(F::RESIDENTIAL, 1.0)];
const HOME_SHOP: &[(F, f64)] = &[(F::RESIDENTIAL, 0.75), (F::COMMERCIAL, 0.25)];
const HOME_OFFICE: &[(F, f64)] = &[(F::RESIDENTIAL, 0.7), (F::OFFICE, 0.3)];
const SHOP: &[(F, f64)] = &[(F::COMMERCIAL, 1.0)];
const OFFICE: &[(F, f64)] = &[(F::OFFICE, 1.0)];
const OFFICE_SHOP: &[(F, f64)] = &[(F::OFFICE, 0.6), (F::COMMERCIAL, 0.4)];
const CULTURE: &[(F, f64)] = &[(F::CULTURAL, 1.0)];
const SCHOOL: &[(F, f64)] = &[(F::EDUCATIONAL, 1.0)];
const PARK: &[(F, f64)] = &[(F::PARK, 1.0)];

/// Six blocks on a 3 × 2 grid; lots fill a 3 × 3 slot grid inside each block.
fn blocks() -> Vec<(&'static str, Vec<Lot>)> {
    vec![
        (
            "B001",
            vec![
                lot(50.0, 50.0, 1, PARK),
                lot(50.0, 50.0, 1, PARK),
                lot(20.0, 15.0, 3, HOME),
                lot(50.0, 50.0, 1, PARK),
                lot(20.0, 15.0, 3, HOME),
                lot(20.0, 15.0, 3, HOME),
                lot(25.0, 20.0, 2, SHOP),
            ],
        ),
        (
            "B002",
            vec![
                lot(20.0, 15.0, 3, HOME),
                lot(20.0, 15.0, 4, HOME_SHOP),
                lot(20.0, 15.0, 3, HOME),
                lot(50.0, 50.0, 1, PARK),
                lot(30.0, 20.0, 2, SHOP),
                lot(20.0, 15.0, 3, HOME),
                lot(20.0, 20.0, 2, SCHOOL),
            ],
        ),
        (
            "B003",
            vec![
                lot(30.0, 25.0, 3, SHOP),
                lot(20.0, 15.0, 3, HOME),
                lot(25.0, 20.0, 3, OFFICE_SHOP),
                lot(20.0, 15.0, 4, HOME_OFFICE),
                lot(30.0, 25.0, 2, SHOP),
                lot(15.0, 15.0, 2, CULTURE),
                lot(20.0, 15.0, 3, HOME),
            ],
        ),
        (
            "B004",
            vec![
                lot(50.0, 50.0, 1, PARK),
                lot(20.0, 15.0, 3, HOME),
                lot(20.0, 15.0, 3, HOME),
                lot(50.0, 50.0, 1, PARK),
                lot(25.0, 25.0, 3, SCHOOL),
                lot(20.0, 15.0, 3, HOME),
            ],
        ),
        (
            "B005",
            vec![
                lot(25.0, 20.0, 2, SHOP),
                lot(20.0, 15.0, 4, HOME_SHOP),
                lot(50.0, 40.0, 1, PARK),
                lot(20.0, 20.0, 2, OFFICE),
                lot(25.0, 25.0, 2, SHOP),
                lot(40.0, 40.0, 1, PARK),
            ],
        ),
        (
            "B006",
            vec![
                lot(25.0, 25.0, 4, OFFICE),
                lot(20.0, 15.0, 3, HOME),
                lot(30.0, 25.0, 2, SHOP),
                lot(20.0, 15.0, 4, HOME_OFFICE),
                lot(20.0, 20.0, 2, SCHOOL),
                lot(20.0, 15.0, 3, HOME),
                lot(25.0, 20.0, 2, SHOP),
            ],
        ),
    ]
}

fn bundled_design() -> CityDesign {
    let mut buildings = Vec::new();
    let plan = blocks();
    for (b, (block_id, lots)) in plan.iter().enumerate() {
        let (bx, by) = ((b % 3) as f64 * BLOCK_PITCH, (b / 3) as f64 * BLOCK_PITCH);
        for (s, lot) in lots.iter().enumerate() {
            let x = bx + (s % 3) as f64 * SLOT_PITCH + (SLOT_PITCH - lot.w) / 2.0;
            let y = by + (s / 3) as f64 * SLOT_PITCH + (SLOT_PITCH - lot.d) / 2.0;
            let volume = lot.w * lot.d * f64::from(lot.floors);
            buildings.push(Building {
                id: format!("{block_id}-{:02}", s + 1),
                block_id: block_id.to_string(),
                footprint: rectangle(x, y, lot.w, lot.d),
                floors: lot.floors,
                floor_areas: lot.uses.iter().map(|(f, share)| (f.clone(), share * volume)).collect(),
            });
        }
    }
    CityDesign::new(plan.iter().map(|(id, _)| *id), buildings, "local planar frame, meters")
}

fn template(pairs: &[(F, f64)]) -> BTreeMap<F, f64> {
    pairs.iter().cloned().collect()
}

pub fn bundled_population_spec() -> PopulationSpec {
    let ty = |id: &str, name: &str, count: usize, pairs: &[(F, f64)]| TypeSpec {
        id: id.into(),
        name: name.into(),
        count,
        template: template(pairs),
        prior_utility: PriorUtility { mean: 300.0, sd: 60.0 },
    };
    PopulationSpec {
        types: vec![
            ty(
                "outdoor",
                "Outdoor Recreationalists",
                130,
                &[
                    (F::PARK, 0.6),
                    (F::COMMERCIAL, 0.2),
                    (F::CULTURAL, 0.1),
                    (F::OFFICE, 0.05),
                    (F::EDUCATIONAL, 0.05),
                ],
            ),
            ty(
                "general",
                "General Consumers",
                110,
                &[
                    (F::COMMERCIAL, 0.3),
                    (F::CULTURAL, 0.25),
                    (F::OFFICE, 0.25),
                    (F::PARK, 0.1),
                    (F::EDUCATIONAL, 0.1),
                ],
            ),
            ty(
                "culture",
                "Culture Consumers",
                90,
                &[
                    (F::CULTURAL, 0.65),
                    (F::COMMERCIAL, 0.15),
                    (F::PARK, 0.1),
                    (F::EDUCATIONAL, 0.1),
                ],
            ),
            ty(
                "commercial",
                "Commercial Consumers",
                100,
                &[
                    (F::COMMERCIAL, 0.65),
                    (F::OFFICE, 0.15),
                    (F::PARK, 0.1),
                    (F::CULTURAL, 0.1),
                ],
            ),
            ty(
                "office",
                "Office Workers",
                95,
                &[
                    (F::OFFICE, 0.65),
                    (F::COMMERCIAL, 0.2),
                    (F::PARK, 0.1),
                    (F::CULTURAL, 0.05),
                ],
            ),
            ty(
                "education",
                "Educators & Students",
                75,
                &[
                    (F::EDUCATIONAL, 0.6),
                    (F::CULTURAL, 0.15),
                    (F::PARK, 0.15),
                    (F::COMMERCIAL, 0.1),
                ],
            ),
        ],
        concentration: Some(crate::synth::DEFAULT_CONCENTRATION),
    }
}

/// Constraints mirroring the case study: keep Outdoor Recreationalists from
/// gaining, keep General, Culture and Office groups from losing, and cap
/// changes at 10% of floor area.
pub fn bundled_constraints() -> RecommendConstraints {
    RecommendConstraints {
        budget_fraction: Some(0.10),
        group_directions: [
            ("outdoor", Direction::Decrease),
            ("general", Direction::Increase),
            ("culture", Direction::Increase),
            ("office", Direction::Increase),
        ]
        .into_iter()
        .map(|(g, d)| (g.to_string(), d))
        .collect(),
        ..RecommendConstraints::default()
    }
}

fn bundled() -> Scenario {
    Scenario {
        name: BUNDLED.into(),
        design: bundled_design(),
        population: generate_population(&bundled_population_spec(), POPULATION_SEED)
            .expect("bundled population spec is valid"),
        config: PlanningConfig::default(),
        constraints: bundled_constraints(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub before: Indicators,
    pub after: Indicators,
    pub recommendation: RecommendationPlan,
    /// `(before − after) / before` of simulated total inequality.
    pub relative_reduction: Option<f64>,
}

pub fn run(scenario: &Scenario, seed: u64) -> Result<ScenarioReport> {
    let before = indicators(&scenario.design, &scenario.population, &scenario.config, seed)?;
    let recommendation = recommend(
        &scenario.design,
        &scenario.population,
        &scenario.constraints,
        &scenario.config,
        seed,
    )?;
    let edited = apply_plan(&scenario.design, &recommendation.plan.deltas)?;
    let after = indicators(&edited, &scenario.population, &scenario.config, seed)?;
    let relative_reduction = match (before.total_inequality, after.total_inequality) {
        (Some(b), Some(a)) if b > 0.0 => Some((b - a) / b),
        _ => None,
    };
    Ok(ScenarioReport {
        name: scenario.name.clone(),
        seed,
        before,
        after,
        recommendation,
        relative_reduction,
    })
}
