//! Indicator summaries and per-building explanations for dashboards.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::allocator::{simulate, Simulation};
use crate::benefit::{group_stats, GroupStats, Population};
use crate::error::Result;
use crate::geo::decay;
use crate::inequality::GroupTerms;
use crate::model::{CityDesign, FunctionType, PlanningConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSummary {
    pub name: String,
    pub count: usize,
    pub mean_preferences: BTreeMap<FunctionType, f64>,
}

/// Inputs side of the dashboard: what is built and who lives here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningIndicators {
    pub revision: u64,
    pub floor_area_totals: BTreeMap<FunctionType, f64>,
    pub residential_capacity: u64,
    pub population: BTreeMap<String, TypeSummary>,
}

pub fn planning_indicators(
    design: &CityDesign,
    population: &Population,
    config: &PlanningConfig,
) -> PlanningIndicators {
    let counts = population.counts_by_type();
    PlanningIndicators {
        revision: design.revision,
        floor_area_totals: design.floor_area_totals(),
        residential_capacity: design
            .residential_buildings()
            .map(|b| u64::from(b.occupancy_capacity(config.area_per_resident)))
            .sum(),
        population: population
            .types
            .iter()
            .map(|t| {
                (
                    t.id.clone(),
                    TypeSummary {
                        name: t.name.clone(),
                        count: counts.get(&t.id).copied().unwrap_or(0),
                        mean_preferences: t.mean_preferences.clone(),
                    },
                )
            })
            .collect(),
    }
}

/// Outcome side: realized benefits and inequality of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indicators {
    pub seed: u64,
    pub total_inequality: Option<f64>,
    pub between: Option<f64>,
    pub within: Option<f64>,
    pub per_group_inequality: BTreeMap<String, (f64, f64)>,
    pub mean_benefit: Option<f64>,
    pub group_means: BTreeMap<String, Option<f64>>,
    pub group_sd: BTreeMap<String, Option<f64>>,
    pub group_counts: BTreeMap<String, usize>,
    pub floor_area_totals: BTreeMap<FunctionType, f64>,
    pub allocated: usize,
    pub capacity: u64,
}

pub fn summarize(design: &CityDesign, sim: &Simulation) -> Indicators {
    let stats = &sim.stats;
    let ineq = sim.inequality.as_ref();
    Indicators {
        seed: sim.allocation.seed,
        total_inequality: ineq.map(|r| r.total),
        between: ineq.map(|r| r.between),
        within: ineq.map(|r| r.within),
        per_group_inequality: ineq
            .map(|r| {
                r.per_group
                    .iter()
                    .map(|(g, GroupTerms { between, within })| (g.clone(), (*between, *within)))
                    .collect()
            })
            .unwrap_or_default(),
        mean_benefit: stats.mean,
        group_means: stats.groups.iter().map(|(g, s)| (g.clone(), s.mean)).collect(),
        group_sd: stats.groups.iter().map(|(g, s)| (g.clone(), s.sd)).collect(),
        group_counts: stats.groups.iter().map(|(g, s)| (g.clone(), s.count)).collect(),
        floor_area_totals: design.floor_area_totals(),
        allocated: sim.allocation.allocated_count(),
        capacity: sim.allocation.capacities.iter().map(|&c| u64::from(c)).sum(),
    }
}

pub fn indicators(
    design: &CityDesign,
    population: &Population,
    config: &PlanningConfig,
    seed: u64,
) -> Result<Indicators> {
    Ok(summarize(design, &simulate(design, population, config, seed)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildingHeat {
    pub id: String,
    pub block_id: String,
    pub occupancy: u32,
    pub capacity: u32,
    pub mean_benefit: Option<f64>,
    /// `mean / global mean − 1`; zero is white on the heatmap.
    pub relative_benefit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockHeat {
    pub id: String,
    pub occupancy: u32,
    pub mean_benefit: Option<f64>,
    pub relative_benefit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub global_mean: Option<f64>,
    pub buildings: Vec<BuildingHeat>,
    pub blocks: Vec<BlockHeat>,
}

fn relative(mean: Option<f64>, global: Option<f64>) -> Option<f64> {
    match (mean, global) {
        (Some(m), Some(g)) if g != 0.0 => Some(m / g - 1.0),
        _ => None,
    }
}

pub fn heatmap(design: &CityDesign, sim: &Simulation) -> Heatmap {
    let mut sums: BTreeMap<&str, (u32, f64)> = BTreeMap::new();
    for r in &sim.realized {
        let e = sums.entry(r.building_id.as_str()).or_default();
        e.0 += 1;
        e.1 += r.benefit;
    }
    let global = sim.stats.mean;
    let capacity: BTreeMap<&str, u32> = sim
        .allocation
        .buildings
        .iter()
        .map(String::as_str)
        .zip(sim.allocation.capacities.iter().copied())
        .collect();
    let buildings: Vec<BuildingHeat> = sim
        .allocation
        .buildings
        .iter()
        .map(|id| {
            let (occupancy, sum) = sums.get(id.as_str()).copied().unwrap_or_default();
            let mean = (occupancy > 0).then(|| sum / f64::from(occupancy));
            BuildingHeat {
                id: id.clone(),
                block_id: design.buildings[id].block_id.clone(),
                occupancy,
                capacity: capacity[id.as_str()],
                mean_benefit: mean,
                relative_benefit: relative(mean, global),
            }
        })
        .collect();
    let blocks = design
        .blocks
        .keys()
        .map(|block| {
            let (occupancy, sum) = buildings
                .iter()
                .filter(|b| b.block_id == *block)
                .filter_map(|b| b.mean_benefit.map(|m| (b.occupancy, m * f64::from(b.occupancy))))
                .fold((0, 0.0), |(n, s), (o, m)| (n + o, s + m));
            let mean = (occupancy > 0).then(|| sum / f64::from(occupancy));
            BlockHeat {
                id: block.clone(),
                occupancy,
                mean_benefit: mean,
                relative_benefit: relative(mean, global),
            }
        })
        .collect();
    Heatmap {
        global_mean: global,
        buildings,
        blocks,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildingDetail {
    pub id: String,
    pub block_id: String,
    pub accessibility_radius: f64,
    /// Buildings inside the accessibility radius, nearest first.
    pub nearby: Vec<String>,
    pub accessibility: BTreeMap<FunctionType, f64>,
    /// Resident type to preference-weighted accessibility per function type.
    pub utility_by_type: BTreeMap<String, BTreeMap<FunctionType, f64>>,
    pub occupants: GroupStats,
    /// Occupant benefits, ascending.
    pub benefits: Vec<f64>,
}

/// "Why" trace for one building: what it can reach, how each resident type
/// values that, and how its occupants fared in `sim`.
pub fn building_detail(
    design: &CityDesign,
    population: &Population,
    config: &PlanningConfig,
    sim: &Simulation,
    id: &str,
) -> Result<BuildingDetail> {
    let building = design.building(id)?;
    let here = building.centroid()?;
    let mut nearby = Vec::new();
    let mut accessibility: BTreeMap<FunctionType, f64> = config.amenity_types().into_iter().map(|f| (f, 0.0)).collect();
    for other in design.buildings.values() {
        let [x, y] = other.centroid()?;
        let d = (x - here[0]).hypot(y - here[1]);
        if d > config.accessibility_cutoff_radius {
            continue;
        }
        if other.id != building.id {
            nearby.push((d, other.id.clone()));
        }
        for (f, a) in accessibility.iter_mut() {
            let v = other.floor_area(f);
            if v > 0.0 {
                *a += v * decay(config, f, d);
            }
        }
    }
    nearby.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let utility_by_type = population
        .types
        .iter()
        .map(|t| {
            let row = accessibility
                .iter()
                .map(|(f, a)| (f.clone(), a * t.mean_preferences.get(f).copied().unwrap_or(0.0)))
                .collect();
            (t.id.clone(), row)
        })
        .collect();
    let occupants: Vec<_> = sim.realized.iter().filter(|r| r.building_id == id).collect();
    let mut benefits: Vec<f64> = occupants.iter().map(|r| r.benefit).collect();
    benefits.sort_by(f64::total_cmp);
    Ok(BuildingDetail {
        id: building.id.clone(),
        block_id: building.block_id.clone(),
        accessibility_radius: config.accessibility_cutoff_radius,
        nearby: nearby.into_iter().map(|(_, id)| id).collect(),
        accessibility,
        utility_by_type,
        occupants: group_stats(
            occupants.iter().map(|r| (r.type_id.as_str(), r.benefit)),
            &population.type_ids(),
        ),
        benefits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub total_inequality: Option<f64>,
    pub mean_benefit: Option<f64>,
    pub group_means: BTreeMap<String, Option<f64>>,
    pub floor_area: BTreeMap<FunctionType, f64>,
}

/// Side-by-side differences `b − a` ("Why Not" view).
pub fn compare(a: &Indicators, b: &Indicators) -> Comparison {
    let diff = |x: Option<f64>, y: Option<f64>| x.zip(y).map(|(x, y)| y - x);
    let mut floor_area: BTreeMap<FunctionType, f64> = BTreeMap::new();
    for (f, v) in &a.floor_area_totals {
        *floor_area.entry(f.clone()).or_default() -= v;
    }
    for (f, v) in &b.floor_area_totals {
        *floor_area.entry(f.clone()).or_default() += v;
    }
    Comparison {
        total_inequality: diff(a.total_inequality, b.total_inequality),
        mean_benefit: diff(a.mean_benefit, b.mean_benefit),
        group_means: a
            .group_means
            .keys()
            .chain(b.group_means.keys())
            .map(|g| {
                let get = |i: &Indicators| i.group_means.get(g).copied().flatten();
                (g.clone(), diff(get(a), get(b)))
            })
            .collect(),
        floor_area,
    }
}
