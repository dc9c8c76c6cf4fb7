//! Residents, utilities and benefits.
//!
//! Utility is the preference-weighted sum of accessibility over amenity
//! types; benefit is utility minus the resident's prior utility, optionally
//! scaled by the resident type's equity weight.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::AccessibilityMatrix;
use crate::model::{FunctionType, PlanningConfig};

pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidentProfile {
    pub id: String,
    pub type_id: String,
    /// `π_{i,f}` over amenity types; sums to 1.
    pub preferences: BTreeMap<FunctionType, f64>,
    pub prior_utility: f64,
}

impl ResidentProfile {
    pub fn preference(&self, f: &FunctionType) -> f64 {
        self.preferences.get(f).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidentType {
    pub id: String,
    pub name: String,
    pub mean_preferences: BTreeMap<FunctionType, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub types: Vec<ResidentType>,
    pub residents: Vec<ResidentProfile>,
}

fn check_normalized(what: &str, prefs: &BTreeMap<FunctionType, f64>) -> Result<()> {
    if prefs.iter().any(|(f, &w)| f.is_residential() || !(w >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "{what}: preferences must be non-negative weights over non-residential types"
        )));
    }
    let sum: f64 = prefs.values().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "{what}: preferences sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Scales non-negative weights to sum to one. Returns `None` for an all-zero vector.
pub fn normalize(weights: &BTreeMap<FunctionType, f64>) -> Option<BTreeMap<FunctionType, f64>> {
    let sum: f64 = weights.values().sum();
    (sum > 0.0).then(|| weights.iter().map(|(f, w)| (f.clone(), w / sum)).collect())
}

impl Population {
    pub fn validate(&self) -> Result<()> {
        let mut type_ids = BTreeSet::new();
        for t in &self.types {
            if !type_ids.insert(t.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate resident type `{}`", t.id)));
            }
            check_normalized(&format!("resident type `{}`", t.id), &t.mean_preferences)?;
        }
        let mut ids = BTreeSet::new();
        for r in &self.residents {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate resident `{}`", r.id)));
            }
            if !type_ids.contains(r.type_id.as_str()) {
                return Err(Error::UnknownId {
                    kind: "resident type",
                    id: r.type_id.clone(),
                });
            }
            if !r.prior_utility.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "resident `{}`: prior utility not finite",
                    r.id
                )));
            }
            check_normalized(&format!("resident `{}`", r.id), &r.preferences)?;
        }
        Ok(())
    }

    pub fn type_ids(&self) -> Vec<&str> {
        self.types.iter().map(|t| t.id.as_str()).collect()
    }

    pub fn counts_by_type(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.types.iter().map(|t| (t.id.clone(), 0)).collect();
        for r in &self.residents {
            *counts.entry(r.type_id.clone()).or_default() += 1;
        }
        counts
    }
}

/// `u_{i,l} = Σ_f π_{i,f} a_{l,f}` over the amenity types of `access_row`.
pub fn utility(profile: &ResidentProfile, types: &[FunctionType], access_row: &[f64]) -> f64 {
    types
        .iter()
        .zip(access_row)
        .map(|(f, a)| profile.preference(f) * a)
        .sum()
}

pub fn benefit(profile: &ResidentProfile, utility: f64) -> f64 {
    utility - profile.prior_utility
}

/// Resident rows × residential-building columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenefitMatrix {
    pub residents: Vec<String>,
    pub residential: Vec<String>,
    data: Vec<f64>,
}

impl BenefitMatrix {
    pub fn get(&self, resident: usize, building: usize) -> f64 {
        self.data[resident * self.residential.len() + building]
    }

    pub fn row(&self, resident: usize) -> &[f64] {
        let n = self.residential.len();
        &self.data[resident * n..(resident + 1) * n]
    }

    /// `b̄_i`: mean benefit over all residential buildings.
    pub fn mean_benefits(&self) -> Vec<f64> {
        let n = self.residential.len();
        (0..self.residents.len())
            .map(|i| {
                if n == 0 {
                    0.0
                } else {
                    self.row(i).iter().sum::<f64>() / n as f64
                }
            })
            .collect()
    }
}

pub fn benefit_matrix(population: &Population, access: &AccessibilityMatrix, config: &PlanningConfig) -> BenefitMatrix {
    let mut data = Vec::with_capacity(population.residents.len() * access.residential.len());
    for r in &population.residents {
        let weight = config.equity_weight_of(&r.type_id);
        for (_, row) in access.rows() {
            data.push(weight * benefit(r, utility(r, &access.types, row)));
        }
    }
    BenefitMatrix {
        residents: population.residents.iter().map(|r| r.id.clone()).collect(),
        residential: access.residential.clone(),
        data,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStat {
    pub count: usize,
    /// Absent for an empty group.
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub groups: BTreeMap<String, GroupStat>,
    pub n: usize,
    pub mean: Option<f64>,
}

/// Statistics of labeled benefits. Every type in `type_ids` gets an entry,
/// even when empty.
pub fn group_stats<'a>(benefits: impl IntoIterator<Item = (&'a str, f64)>, type_ids: &[&str]) -> GroupStats {
    weighted_group_stats(benefits.into_iter().map(|(g, b)| (g, b, 1.0)), type_ids)
}

/// Weighted variant: each benefit carries a probability mass. `count`
/// reports the number of entries with positive weight.
pub fn weighted_group_stats<'a>(
    benefits: impl IntoIterator<Item = (&'a str, f64, f64)>,
    type_ids: &[&str],
) -> GroupStats {
    #[derive(Default)]
    struct Acc {
        count: usize,
        w: f64,
        wb: f64,
        wbb: f64,
    }
    let mut acc: BTreeMap<String, Acc> = type_ids.iter().map(|g| (g.to_string(), Acc::default())).collect();
    for (g, b, w) in benefits {
        let a = acc.entry(g.to_string()).or_default();
        if w > 0.0 {
            a.count += 1;
        }
        a.w += w;
        a.wb += w * b;
        a.wbb += w * b * b;
    }
    let (mut n, mut total_w, mut total_wb) = (0, 0.0, 0.0);
    let groups = acc
        .into_iter()
        .map(|(g, a)| {
            n += a.count;
            total_w += a.w;
            total_wb += a.wb;
            let stat = if a.w > 0.0 {
                let mean = a.wb / a.w;
                let var = (a.wbb / a.w - mean * mean).max(0.0);
                GroupStat {
                    count: a.count,
                    mean: Some(mean),
                    sd: Some(var.sqrt()),
                }
            } else {
                GroupStat {
                    count: 0,
                    mean: None,
                    sd: None,
                }
            };
            (g, stat)
        })
        .collect();
    GroupStats {
        groups,
        n,
        mean: (total_w > 0.0).then(|| total_wb / total_w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(prefs: &[(FunctionType, f64)], prior: f64) -> ResidentProfile {
        ResidentProfile {
            id: "r".into(),
            type_id: "g".into(),
            preferences: prefs.iter().cloned().collect(),
            prior_utility: prior,
        }
    }

    #[test]
    fn utility_examples() {
        let types = [FunctionType::OFFICE, FunctionType::COMMERCIAL, FunctionType::PARK];
        let p = profile(&[(FunctionType::PARK, 1.0)], 0.0);
        assert_eq!(utility(&p, &types, &[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(utility(&p, &types, &[5.0, 7.0, 606.531]), 606.531);
        let p = profile(&[(FunctionType::OFFICE, 0.5), (FunctionType::COMMERCIAL, 0.5)], 0.0);
        assert_eq!(utility(&p, &types, &[100.0, 300.0, 0.0]), 200.0);
    }

    #[test]
    fn benefit_examples() {
        let p = profile(&[(FunctionType::PARK, 1.0)], 190.0);
        assert_eq!(benefit(&p, 190.0), 0.0);
        assert_eq!(benefit(&p, 250.0), 60.0);
        assert_eq!(benefit(&p, 100.0), -90.0);
    }

    #[test]
    fn group_stats_examples() {
        let s = group_stats([("a", 2.0), ("a", 2.0)], &["a"]);
        assert_eq!(s.groups["a"].mean, Some(2.0));
        assert_eq!(s.groups["a"].sd, Some(0.0));

        let s = group_stats([("a", 1.0), ("a", 3.0), ("b", 2.0), ("b", 2.0)], &["a", "b", "c"]);
        assert_eq!(s.groups["a"].mean, Some(2.0));
        assert_eq!(s.groups["a"].sd, Some(1.0));
        assert_eq!(s.groups["b"].mean, Some(2.0));
        assert_eq!(s.mean, Some(2.0));
        assert_eq!(s.n, 4);
        assert_eq!(s.groups["c"].count, 0);
        assert_eq!(s.groups["c"].mean, None);
    }

    #[test]
    fn unnormalized_preferences_rejected() {
        let pop = Population {
            types: vec![ResidentType {
                id: "g".into(),
                name: "G".into(),
                mean_preferences: [(FunctionType::PARK, 1.0)].into_iter().collect(),
            }],
            residents: vec![profile(&[(FunctionType::PARK, 0.8)], 0.0)],
        };
        assert!(pop.validate().is_err());
    }
}
