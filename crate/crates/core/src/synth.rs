//! Synthetic populations and resident-type clustering.
//!
//! Residents of each type draw preferences from a Dirichlet centred on the
//! type's template; types can also be recovered from visit-frequency
//! profiles with k-means.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::benefit::{normalize, Population, ResidentProfile, ResidentType};
use crate::error::{Error, Result};
use crate::model::FunctionType;
use crate::store::round_significant;

pub const DEFAULT_CONCENTRATION: f64 = 50.0;
pub const KMEANS_MAX_ITERATIONS: usize = 300;

fn default_concentration() -> Option<f64> {
    Some(DEFAULT_CONCENTRATION)
}

/// Normal prior utility, clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PriorUtility {
    pub mean: f64,
    #[serde(default)]
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub id: String,
    pub name: String,
    pub count: usize,
    /// Preference template over amenity types; normalized on use.
    pub template: BTreeMap<FunctionType, f64>,
    #[serde(default)]
    pub prior_utility: PriorUtility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub types: Vec<TypeSpec>,
    /// Dirichlet concentration; `null` gives every resident the template exactly.
    #[serde(default = "default_concentration")]
    pub concentration: Option<f64>,
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for t in &self.types {
            if !ids.insert(t.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate type `{}`", t.id)));
            }
            if t.template.keys().any(FunctionType::is_residential) || t.template.values().any(|w| !(*w >= 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "type `{}`: template must hold non-negative weights over amenity types",
                    t.id
                )));
            }
            if normalize(&t.template).is_none() {
                return Err(Error::InvalidInput(format!("type `{}`: template is all zero", t.id)));
            }
            if !(t.prior_utility.sd >= 0.0) || !t.prior_utility.mean.is_finite() {
                return Err(Error::InvalidInput(format!("type `{}`: invalid prior utility", t.id)));
            }
        }
        if let Some(c) = self.concentration {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidInput("concentration must be positive".into()));
            }
        }
        Ok(())
    }
}

fn dirichlet<R: Rng>(
    template: &BTreeMap<FunctionType, f64>,
    concentration: f64,
    rng: &mut R,
) -> BTreeMap<FunctionType, f64> {
    loop {
        let draws: BTreeMap<FunctionType, f64> = template
            .iter()
            .filter(|(_, &w)| w > 0.0)
            .map(|(f, &w)| {
                let gamma = Gamma::new(concentration * w, 1.0).expect("positive shape");
                (f.clone(), gamma.sample(rng))
            })
            .collect();
        // all-zero draws are possible in floating point for tiny shapes
        if let Some(p) = normalize(&draws) {
            return p;
        }
    }
}

/// Preferences rounded to the storage precision, with the largest weight
/// absorbing the rounding so the vector stays normalized.
fn storable(prefs: BTreeMap<FunctionType, f64>) -> BTreeMap<FunctionType, f64> {
    let Some(largest) = prefs.iter().max_by(|a, b| a.1.total_cmp(b.1)).map(|(f, _)| f.clone()) else {
        return prefs;
    };
    let mut out: BTreeMap<FunctionType, f64> = prefs
        .into_iter()
        .filter(|(f, _)| *f != largest)
        .map(|(f, w)| (f, round_significant(w)))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let rest: f64 = out.values().sum();
    out.insert(largest, round_significant(1.0 - rest));
    out
}

/// Residents are numbered `r0001`, `r0002`, … in type order.
pub fn generate_population(spec: &PopulationSpec, seed: u64) -> Result<Population> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut types = Vec::with_capacity(spec.types.len());
    let mut residents = Vec::new();
    for t in &spec.types {
        let template = normalize(&t.template).expect("validated template");
        let prior = Normal::new(t.prior_utility.mean, t.prior_utility.sd).expect("validated prior");
        for _ in 0..t.count {
            let preferences = storable(match spec.concentration {
                Some(c) => dirichlet(&template, c, &mut rng),
                None => template.clone(),
            });
            residents.push(ResidentProfile {
                id: format!("r{:04}", residents.len() + 1),
                type_id: t.id.clone(),
                preferences,
                prior_utility: round_significant(prior.sample(&mut rng).max(0.0)),
            });
        }
        types.push(ResidentType {
            id: t.id.clone(),
            name: t.name.clone(),
            mean_preferences: storable(template),
        });
    }
    Ok(Population { types, residents })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitProfile {
    pub resident_id: String,
    pub visit_frequency: BTreeMap<FunctionType, f64>,
}

/// Visit counts drawn from each type's template, `visits` check-ins per resident.
pub fn synthetic_visit_profiles(spec: &PopulationSpec, visits: usize, seed: u64) -> Result<Vec<VisitProfile>> {
    spec.validate()?;
    if visits == 0 {
        return Err(Error::InvalidInput("visits must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for t in &spec.types {
        let template = normalize(&t.template).expect("validated template");
        let (types, weights): (Vec<_>, Vec<_>) = template.into_iter().unzip();
        let pick = WeightedIndex::new(&weights).expect("validated template");
        for _ in 0..t.count {
            let mut freq: BTreeMap<FunctionType, f64> = BTreeMap::new();
            for _ in 0..visits {
                *freq.entry(types[pick.sample(&mut rng)].clone()).or_default() += 1.0;
            }
            out.push(VisitProfile {
                resident_id: format!("r{:04}", out.len() + 1),
                visit_frequency: freq,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    pub types: Vec<ResidentType>,
    /// Resident id to type id.
    pub assignment: BTreeMap<String, String>,
    /// Within-cluster sum of squares after each assignment step.
    pub objective_trace: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, centre)| (c, squared_distance(point, centre)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// k-means with k-means++ seeding over L1-normalized visit frequencies.
pub fn cluster_types(profiles: &[VisitProfile], k: usize, seed: u64) -> Result<Clustering> {
    if profiles.is_empty() {
        return Err(Error::InvalidInput("no visit profiles".into()));
    }
    let dims: Vec<FunctionType> = profiles
        .iter()
        .flat_map(|p| p.visit_frequency.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut points = Vec::with_capacity(profiles.len());
    for p in profiles {
        if p.visit_frequency.keys().any(FunctionType::is_residential)
            || p.visit_frequency.values().any(|v| !(*v >= 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "profile `{}`: counts must be non-negative over amenity types",
                p.resident_id
            )));
        }
        let norm = normalize(&p.visit_frequency)
            .ok_or_else(|| Error::InvalidInput(format!("profile `{}` has no positive count", p.resident_id)))?;
        points.push(
            dims.iter()
                .map(|f| norm.get(f).copied().unwrap_or(0.0))
                .collect::<Vec<f64>>(),
        );
    }
    let distinct = points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .len();
    if k == 0 || k > distinct {
        return Err(Error::InvalidInput(format!(
            "k = {k} must be between 1 and the number of distinct profiles ({distinct})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let next = WeightedIndex::new(&d2)
            .map(|w| w.sample(&mut rng))
            .expect("k does not exceed the distinct points");
        centroids.push(points[next].clone());
    }

    let mut labels = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut changed = false;
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            objective += d;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        trace.push(objective);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dims.len()]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }

    let types = centroids
        .iter()
        .enumerate()
        .map(|(c, centre)| {
            let weights: BTreeMap<FunctionType, f64> = dims
                .iter()
                .cloned()
                .zip(centre.iter().copied())
                .filter(|(_, w)| *w > 0.0)
                .collect();
            ResidentType {
                id: format!("type-{}", c + 1),
                name: format!("Type {}", c + 1),
                mean_preferences: normalize(&weights).unwrap_or(weights),
            }
        })
        .collect::<Vec<_>>();
    let assignment = profiles
        .iter()
        .zip(&labels)
        .map(|(p, &c)| (p.resident_id.clone(), types[c].id.clone()))
        .collect();
    Ok(Clustering {
        types,
        assignment,
        objective_trace: trace,
    })
}

/// Residents whose preferences are their own normalized visit frequencies,
/// typed by `clustering`.
pub fn population_from_profiles(
    profiles: &[VisitProfile],
    clustering: &Clustering,
    prior_utility: f64,
) -> Result<Population> {
    let residents = profiles
        .iter()
        .map(|p| {
            let type_id = clustering
                .assignment
                .get(&p.resident_id)
                .cloned()
                .ok_or_else(|| Error::UnknownId {
                    kind: "resident",
                    id: p.resident_id.clone(),
                })?;
            let preferences = storable(
                normalize(&p.visit_frequency)
                    .ok_or_else(|| Error::InvalidInput(format!("profile `{}` has no positive count", p.resident_id)))?
                    .into_iter()
                    .filter(|(_, w)| *w > 0.0)
                    .collect(),
            );
            Ok(ResidentProfile {
                id: p.resident_id.clone(),
                type_id,
                preferences,
                prior_utility,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Population {
        types: clustering.types.clone(),
        residents,
    })
}
