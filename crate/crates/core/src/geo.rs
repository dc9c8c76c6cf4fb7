//! Straight-line distances and gravity-model accessibility.
//!
//! The accessibility of amenity type `f` at residence `l` sums, over every
//! building within the cutoff radius, its `f` floor area divided by the
//! priority weight and decayed by `exp(-κ_f · d)`. With the default
//! `κ = 0.001/m` and a 1500 m cutoff, each truncated term is at most
//! `e^{-1.5} ≈ 0.22` of its undecayed value.

use serde::Serialize;

use crate::error::Result;
use crate::model::{CityDesign, FunctionType, PlanningConfig, Point};

/// Centroid distances from every residential building (rows) to every
/// building (columns), both in id order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceMatrix {
    pub residential: Vec<String>,
    pub buildings: Vec<String>,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.buildings.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let n = self.buildings.len();
        &self.data[row * n..(row + 1) * n]
    }

    pub fn by_id(&self, residential: &str, building: &str) -> Option<f64> {
        let r = self.residential.iter().position(|id| id == residential)?;
        let c = self.buildings.iter().position(|id| id == building)?;
        Some(self.get(r, c))
    }
}

fn euclid(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn compute_distances(design: &CityDesign) -> Result<DistanceMatrix> {
    let centroids = design
        .buildings
        .values()
        .map(|b| b.centroid())
        .collect::<Result<Vec<_>>>()?;
    let buildings: Vec<String> = design.buildings.keys().cloned().collect();
    let residential_idx: Vec<usize> = design
        .buildings
        .values()
        .enumerate()
        .filter(|(_, b)| b.is_residential())
        .map(|(i, _)| i)
        .collect();
    let mut data = Vec::with_capacity(residential_idx.len() * buildings.len());
    for &r in &residential_idx {
        data.extend(centroids.iter().map(|&c| euclid(centroids[r], c)));
    }
    Ok(DistanceMatrix {
        residential: residential_idx.iter().map(|&i| buildings[i].clone()).collect(),
        buildings,
        data,
    })
}

/// `a_{l,f}` for residential rows × amenity-type columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccessibilityMatrix {
    pub residential: Vec<String>,
    pub types: Vec<FunctionType>,
    data: Vec<f64>,
}

impl AccessibilityMatrix {
    pub fn row(&self, row: usize) -> &[f64] {
        let n = self.types.len();
        &self.data[row * n..(row + 1) * n]
    }

    pub fn get(&self, residential: &str, f: &FunctionType) -> Option<f64> {
        let r = self.residential.iter().position(|id| id == residential)?;
        let c = self.types.iter().position(|t| t == f)?;
        Some(self.row(r)[c])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.residential
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), self.row(i)))
    }
}

/// Contribution weight of one unit of `f` floor area at distance `d`, or zero
/// beyond the cutoff radius.
pub fn decay(config: &PlanningConfig, f: &FunctionType, d: f64) -> f64 {
    if d > config.accessibility_cutoff_radius {
        0.0
    } else {
        (-config.impedance_of(f) * d).exp() / config.priority_of(f)
    }
}

pub fn accessibility(design: &CityDesign, distances: &DistanceMatrix, config: &PlanningConfig) -> AccessibilityMatrix {
    let types = config.amenity_types();
    let buildings: Vec<_> = distances.buildings.iter().map(|id| &design.buildings[id]).collect();
    let mut data = Vec::with_capacity(distances.residential.len() * types.len());
    for r in 0..distances.residential.len() {
        let row = distances.row(r);
        for f in &types {
            let a: f64 = buildings
                .iter()
                .zip(row)
                .map(|(b, &d)| {
                    let v = b.floor_area(f);
                    if v == 0.0 {
                        0.0
                    } else {
                        v * decay(config, f, d)
                    }
                })
                .sum();
            data.push(a);
        }
    }
    AccessibilityMatrix {
        residential: distances.residential.clone(),
        types,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{rectangle, Building};

    fn square_at(id: &str, cx: f64, cy: f64, areas: &[(FunctionType, f64)]) -> Building {
        Building {
            id: id.into(),
            block_id: "k".into(),
            footprint: rectangle(cx - 5.0, cy - 5.0, 10.0, 10.0),
            floors: 10,
            floor_areas: areas.iter().cloned().collect(),
        }
    }

    #[test]
    fn three_four_five() {
        let d = CityDesign::new(
            ["k"],
            vec![
                square_at("home", 0.0, 0.0, &[(FunctionType::RESIDENTIAL, 100.0)]),
                square_at("park", 300.0, 400.0, &[(FunctionType::PARK, 1000.0)]),
            ],
            "",
        );
        let m = compute_distances(&d).unwrap();
        assert!((m.by_id("home", "park").unwrap() - 500.0).abs() < 1e-9);
        assert_eq!(m.by_id("home", "home").unwrap(), 0.0);
    }

    #[test]
    fn single_building_hand_value() {
        let d = CityDesign::new(
            ["k"],
            vec![
                square_at("home", 0.0, 0.0, &[(FunctionType::RESIDENTIAL, 100.0)]),
                square_at("park", 300.0, 400.0, &[(FunctionType::PARK, 1000.0)]),
            ],
            "",
        );
        let cfg = PlanningConfig::default();
        let m = compute_distances(&d).unwrap();
        let a = accessibility(&d, &m, &cfg);
        // 1000 · e^{-0.5}
        assert!((a.get("home", &FunctionType::PARK).unwrap() - 606.530_659_712_633_4).abs() < 1e-9);
        assert_eq!(a.get("home", &FunctionType::OFFICE).unwrap(), 0.0);
    }

    #[test]
    fn doubling_priority_halves_access() {
        let d = CityDesign::new(
            ["k"],
            vec![
                square_at("home", 0.0, 0.0, &[(FunctionType::RESIDENTIAL, 100.0)]),
                square_at("o", 100.0, 0.0, &[(FunctionType::OFFICE, 800.0)]),
            ],
            "",
        );
        let m = compute_distances(&d).unwrap();
        let base = accessibility(&d, &m, &PlanningConfig::default());
        let mut cfg = PlanningConfig::default();
        cfg.priority_weight.insert(FunctionType::OFFICE, 2.0);
        let halved = accessibility(&d, &m, &cfg);
        let f = FunctionType::OFFICE;
        assert!((halved.get("home", &f).unwrap() * 2.0 - base.get("home", &f).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn outside_radius_is_ignored() {
        let d = CityDesign::new(
            ["k"],
            vec![
                square_at("home", 0.0, 0.0, &[(FunctionType::RESIDENTIAL, 100.0)]),
                square_at("far", 2000.0, 0.0, &[(FunctionType::PARK, 1e6)]),
            ],
            "",
        );
        let m = compute_distances(&d).unwrap();
        let a = accessibility(&d, &m, &PlanningConfig::default());
        assert_eq!(a.get("home", &FunctionType::PARK).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_footprint_is_an_error() {
        let mut b = square_at("flat", 0.0, 0.0, &[(FunctionType::RESIDENTIAL, 1.0)]);
        b.footprint = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        let d = CityDesign::new(["k"], vec![b], "");
        assert!(compute_distances(&d).is_err());
    }
}
