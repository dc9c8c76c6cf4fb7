//! Design state: function types, buildings, census blocks and the planning
//! configuration shared by every engine stage.
//!
//! A [`CityDesign`] is an immutable snapshot. Edits go through
//! [`apply_edit`]/[`apply_edits`], which return a new snapshot with the
//! revision bumped and block aggregates recomputed from member buildings.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on `sum(floor_areas) <= footprint * floors`.
pub const VOLUME_SLACK: f64 = 0.01;

/// Building use category. The six well-known types are associated consts;
/// further types can be introduced through [`PlanningConfig::function_types`].
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctionType(Cow<'static, str>);

impl FunctionType {
    pub const RESIDENTIAL: FunctionType = FunctionType(Cow::Borrowed("Residential"));
    pub const OFFICE: FunctionType = FunctionType(Cow::Borrowed("Office"));
    pub const COMMERCIAL: FunctionType = FunctionType(Cow::Borrowed("Commercial"));
    pub const CULTURAL: FunctionType = FunctionType(Cow::Borrowed("Cultural"));
    pub const EDUCATIONAL: FunctionType = FunctionType(Cow::Borrowed("Educational"));
    pub const PARK: FunctionType = FunctionType(Cow::Borrowed("Park"));

    pub fn new(name: impl Into<String>) -> Self {
        FunctionType(Cow::Owned(name.into()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_residential(&self) -> bool {
        self.as_str() == Self::RESIDENTIAL.as_str()
    }

    /// The six built-in types, Residential first.
    pub fn defaults() -> Vec<FunctionType> {
        vec![
            Self::RESIDENTIAL,
            Self::OFFICE,
            Self::COMMERCIAL,
            Self::CULTURAL,
            Self::EDUCATIONAL,
            Self::PARK,
        ]
    }
}

impl fmt::Debug for FunctionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for FunctionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: String,
    pub block_id: String,
    /// Exterior ring in projected meters; closing vertex optional.
    pub footprint: Vec<Point>,
    pub floors: u32,
    pub floor_areas: BTreeMap<FunctionType, f64>,
}

impl Building {
    /// Shoelace area of the footprint ring, in m².
    pub fn footprint_area(&self) -> f64 {
        polygon_area(&self.footprint).abs()
    }

    pub fn centroid(&self) -> Result<Point> {
        polygon_centroid(&self.footprint).ok_or_else(|| Error::DegenerateFootprint(self.id.clone()))
    }

    pub fn total_floor_area(&self) -> f64 {
        self.floor_areas.values().sum()
    }

    pub fn floor_area(&self, f: &FunctionType) -> f64 {
        self.floor_areas.get(f).copied().unwrap_or(0.0)
    }

    pub fn residential_area(&self) -> f64 {
        self.floor_area(&FunctionType::RESIDENTIAL)
    }

    pub fn is_residential(&self) -> bool {
        self.residential_area() > 0.0
    }

    /// Persons housed: `floor(residential area / area_per_resident)`.
    pub fn occupancy_capacity(&self, area_per_resident: f64) -> u32 {
        (self.residential_area() / area_per_resident).floor().max(0.0) as u32
    }

    /// Function with the largest floor area; ties go to the first in key order.
    pub fn dominant_function(&self) -> Option<&FunctionType> {
        self.floor_areas
            .iter()
            .filter(|(_, &a)| a > 0.0)
            .fold(None::<(&FunctionType, f64)>, |best, (f, &a)| match best {
                Some((_, b)) if b >= a => best,
                _ => Some((f, a)),
            })
            .map(|(f, _)| f)
    }
}

fn polygon_area(ring: &[Point]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..ring.len() {
        let [x0, y0] = ring[i];
        let [x1, y1] = ring[(i + 1) % ring.len()];
        twice += x0 * y1 - x1 * y0;
    }
    twice / 2.0
}

fn polygon_centroid(ring: &[Point]) -> Option<Point> {
    let signed = polygon_area(ring);
    if signed.abs() < 1e-12 {
        return None;
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..ring.len() {
        let [x0, y0] = ring[i];
        let [x1, y1] = ring[(i + 1) % ring.len()];
        let cross = x0 * y1 - x1 * y0;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    Some([cx / (6.0 * signed), cy / (6.0 * signed)])
}

/// Axis-aligned rectangle footprint, counter-clockwise.
pub fn rectangle(x: f64, y: f64, width: f64, depth: f64) -> Vec<Point> {
    vec![[x, y], [x + width, y], [x + width, y + depth], [x, y + depth]]
}

/// Census block with aggregates derived from its member buildings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Block {
    pub id: String,
    pub buildings: Vec<String>,
    /// Total footprint `s_k` in m².
    pub footprint_total: f64,
    /// Floor-area-weighted mean number of floors `h̄_k`.
    pub mean_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityDesign {
    pub blocks: BTreeMap<String, Block>,
    pub buildings: BTreeMap<String, Building>,
    pub crs_note: String,
    pub revision: u64,
}

impl CityDesign {
    /// Builds a design from declared block ids and buildings. Aggregates are
    /// computed here; buildings naming an undeclared block are kept but
    /// reported by [`validate_design`].
    pub fn new<I, S>(block_ids: I, buildings: Vec<Building>, crs_note: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let blocks = block_ids
            .into_iter()
            .map(|id| {
                let id = id.into();
                let block = Block {
                    id: id.clone(),
                    buildings: Vec::new(),
                    footprint_total: 0.0,
                    mean_height: 0.0,
                };
                (id, block)
            })
            .collect();
        let mut design = CityDesign {
            blocks,
            buildings: buildings.into_iter().map(|b| (b.id.clone(), b)).collect(),
            crs_note: crs_note.into(),
            revision: 0,
        };
        design.refresh_blocks();
        design
    }

    pub fn empty() -> Self {
        CityDesign::new(Vec::<String>::new(), Vec::new(), "")
    }

    pub fn building(&self, id: &str) -> Result<&Building> {
        self.buildings.get(id).ok_or_else(|| Error::UnknownId {
            kind: "building",
            id: id.to_string(),
        })
    }

    pub fn block(&self, id: &str) -> Result<&Block> {
        self.blocks.get(id).ok_or_else(|| Error::UnknownId {
            kind: "block",
            id: id.to_string(),
        })
    }

    /// Buildings with positive residential floor area, in id order.
    pub fn residential_buildings(&self) -> impl Iterator<Item = &Building> {
        self.buildings.values().filter(|b| b.is_residential())
    }

    pub fn block_members<'a>(&'a self, block_id: &'a str) -> impl Iterator<Item = &'a Building> + 'a {
        self.buildings.values().filter(move |b| b.block_id == block_id)
    }

    /// Block-level floor area `v_{k,f}`.
    pub fn block_floor_area(&self, block_id: &str, f: &FunctionType) -> f64 {
        self.block_members(block_id).map(|b| b.floor_area(f)).sum()
    }

    pub fn floor_area_totals(&self) -> BTreeMap<FunctionType, f64> {
        let mut totals = BTreeMap::new();
        for b in self.buildings.values() {
            for (f, a) in &b.floor_areas {
                *totals.entry(f.clone()).or_insert(0.0) += a;
            }
        }
        totals
    }

    pub fn total_floor_area(&self) -> f64 {
        self.buildings.values().map(Building::total_floor_area).sum()
    }

    fn refresh_blocks(&mut self) {
        for block in self.blocks.values_mut() {
            block.buildings.clear();
            block.footprint_total = 0.0;
            block.mean_height = 0.0;
        }
        let mut weighted_floors: BTreeMap<String, (f64, f64, f64)> = BTreeMap::new();
        for b in self.buildings.values() {
            let Some(block) = self.blocks.get_mut(&b.block_id) else {
                continue;
            };
            block.buildings.push(b.id.clone());
            let fp = b.footprint_area();
            block.footprint_total += fp;
            let area = b.total_floor_area();
            let acc = weighted_floors.entry(block.id.clone()).or_default();
            acc.0 += area * f64::from(b.floors);
            acc.1 += area;
            acc.2 += fp * f64::from(b.floors);
        }
        for (id, (num, den, fp_floors)) in weighted_floors {
            let block = self.blocks.get_mut(&id).expect("block present");
            block.mean_height = if den > 0.0 {
                num / den
            } else if block.footprint_total > 0.0 {
                fp_floors / block.footprint_total
            } else {
                0.0
            };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    NegativeFloorArea,
    VolumeExceeded,
    NonPositiveFloors,
    DegenerateFootprint,
    DanglingBlock,
    BlockMembership,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    /// Building or block id the violation is about.
    pub subject: String,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:?}): {}", self.subject, self.rule, self.message)
    }
}

pub fn validate_design(design: &CityDesign) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |subject: &str, rule: Rule, message: String| {
        out.push(Violation {
            subject: subject.to_string(),
            rule,
            message,
        })
    };
    for b in design.buildings.values() {
        if !design.blocks.contains_key(&b.block_id) {
            push(
                &b.id,
                Rule::DanglingBlock,
                format!("block `{}` does not exist", b.block_id),
            );
        }
        if b.floors == 0 {
            push(&b.id, Rule::NonPositiveFloors, "floors must be at least 1".into());
        }
        let fp = b.footprint_area();
        if !(fp > 1e-9) {
            push(&b.id, Rule::DegenerateFootprint, "footprint has zero area".into());
        }
        for (f, &a) in &b.floor_areas {
            if !(a >= 0.0) || !a.is_finite() {
                push(&b.id, Rule::NegativeFloorArea, format!("{f} floor area is {a}"));
            }
        }
        let volume = fp * f64::from(b.floors);
        let total = b.total_floor_area();
        if total > volume * (1.0 + VOLUME_SLACK) {
            push(
                &b.id,
                Rule::VolumeExceeded,
                format!("floor area {total:.1} m² exceeds footprint × floors = {volume:.1} m²"),
            );
        }
    }
    for block in design.blocks.values() {
        for id in &block.buildings {
            match design.buildings.get(id) {
                Some(b) if b.block_id == block.id => {}
                _ => push(
                    &block.id,
                    Rule::BlockMembership,
                    format!("member `{id}` not resolvable"),
                ),
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    Add {
        building: Building,
    },
    /// Replaces the building with the same id.
    Modify {
        building: Building,
    },
    Delete {
        id: String,
    },
}

impl Edit {
    fn subject(&self) -> &str {
        match self {
            Edit::Add { building } | Edit::Modify { building } => &building.id,
            Edit::Delete { id } => id,
        }
    }
}

pub fn apply_edit(design: &CityDesign, edit: &Edit) -> Result<CityDesign> {
    apply_edits(design, std::slice::from_ref(edit))
}

/// Applies all edits atomically; the result carries `revision + 1`.
/// Rejected if any edit references an unknown id or introduces a violation
/// that the input design did not already have.
pub fn apply_edits(design: &CityDesign, edits: &[Edit]) -> Result<CityDesign> {
    let mut next = design.clone();
    for edit in edits {
        match edit {
            Edit::Add { building } => {
                if next.buildings.contains_key(&building.id) {
                    return Err(Error::InvalidInput(format!(
                        "building `{}` already exists",
                        building.id
                    )));
                }
                next.buildings.insert(building.id.clone(), building.clone());
            }
            Edit::Modify { building } => {
                let slot = next.buildings.get_mut(&building.id).ok_or_else(|| Error::UnknownId {
                    kind: "building",
                    id: building.id.clone(),
                })?;
                *slot = building.clone();
            }
            Edit::Delete { id } => {
                next.buildings.remove(id).ok_or_else(|| Error::UnknownId {
                    kind: "building",
                    id: id.clone(),
                })?;
            }
        }
    }
    next.refresh_blocks();
    next.revision = design.revision + 1;

    let before: BTreeSet<Violation> = validate_design(design).into_iter().collect();
    let subjects: BTreeSet<&str> = edits.iter().map(Edit::subject).collect();
    let introduced: Vec<Violation> = validate_design(&next)
        .into_iter()
        .filter(|v| !before.contains(v) || subjects.contains(v.subject.as_str()))
        .filter(|v| {
            // deleting a building cannot make it violate anything
            !edits
                .iter()
                .any(|e| matches!(e, Edit::Delete { id } if *id == v.subject))
        })
        .collect();
    if !introduced.is_empty() {
        return Err(Error::Validation(introduced));
    }
    Ok(next)
}

/// Engine parameters. Missing per-type entries fall back to the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanningConfig {
    /// Every known function type, Residential included.
    pub function_types: Vec<FunctionType>,
    /// `κ_f` in 1/m.
    pub impedance: BTreeMap<FunctionType, f64>,
    /// `ρ_f`, dimensionless.
    pub priority_weight: BTreeMap<FunctionType, f64>,
    pub alpha: f64,
    pub area_per_resident: f64,
    pub accessibility_cutoff_radius: f64,
    /// Optional `ρ_g` per resident type id; absent types weigh 1.
    pub equity_weight: BTreeMap<String, f64>,
}

pub const DEFAULT_IMPEDANCE: f64 = 0.001;
pub const DEFAULT_CUTOFF_RADIUS: f64 = 1500.0;
pub const DEFAULT_AREA_PER_RESIDENT: f64 = 30.0;

impl Default for PlanningConfig {
    fn default() -> Self {
        PlanningConfig {
            function_types: FunctionType::defaults(),
            impedance: BTreeMap::new(),
            priority_weight: BTreeMap::new(),
            alpha: 2.0,
            area_per_resident: DEFAULT_AREA_PER_RESIDENT,
            accessibility_cutoff_radius: DEFAULT_CUTOFF_RADIUS,
            equity_weight: BTreeMap::new(),
        }
    }
}

impl PlanningConfig {
    pub fn impedance_of(&self, f: &FunctionType) -> f64 {
        self.impedance.get(f).copied().unwrap_or(DEFAULT_IMPEDANCE)
    }

    pub fn priority_of(&self, f: &FunctionType) -> f64 {
        self.priority_weight.get(f).copied().unwrap_or(1.0)
    }

    pub fn equity_weight_of(&self, type_id: &str) -> f64 {
        self.equity_weight.get(type_id).copied().unwrap_or(1.0)
    }

    /// The non-residential set `F`, in configured order.
    pub fn amenity_types(&self) -> Vec<FunctionType> {
        self.function_types
            .iter()
            .filter(|f| !f.is_residential())
            .cloned()
            .collect()
    }

    pub fn is_known(&self, f: &FunctionType) -> bool {
        self.function_types.contains(f)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !self.function_types.iter().any(FunctionType::is_residential) {
            return bad("function_types must include Residential".into());
        }
        let unique: BTreeSet<_> = self.function_types.iter().collect();
        if unique.len() != self.function_types.len() {
            return bad("function_types contains duplicates".into());
        }
        for f in &self.function_types {
            let k = self.impedance_of(f);
            if !(k > 0.0) {
                return bad(format!("impedance for {f} must be > 0, got {k}"));
            }
            let r = self.priority_of(f);
            if !(r > 0.0) {
                return bad(format!("priority weight for {f} must be > 0, got {r}"));
            }
        }
        if !self.alpha.is_finite() || self.alpha == 0.0 || self.alpha == 1.0 {
            return bad(format!("alpha must be finite and not 0 or 1, got {}", self.alpha));
        }
        if !(self.area_per_resident > 0.0) {
            return bad("area_per_resident must be > 0".into());
        }
        if !(self.accessibility_cutoff_radius > 0.0) {
            return bad("accessibility_cutoff_radius must be > 0".into());
        }
        if let Some((g, w)) = self.equity_weight.iter().find(|(_, w)| !(**w > 0.0)) {
            return bad(format!("equity weight for `{g}` must be > 0, got {w}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn building(id: &str, block: &str, x: f64, floors: u32, areas: &[(FunctionType, f64)]) -> Building {
        Building {
            id: id.into(),
            block_id: block.into(),
            footprint: rectangle(x, 0.0, 10.0, 10.0),
            floors,
            floor_areas: areas.iter().cloned().collect(),
        }
    }

    fn two_buildings() -> CityDesign {
        CityDesign::new(
            ["k1"],
            vec![
                building("a", "k1", 0.0, 3, &[(FunctionType::RESIDENTIAL, 300.0)]),
                building("b", "k1", 50.0, 5, &[(FunctionType::CULTURAL, 400.0)]),
            ],
            "local meters",
        )
    }

    #[test]
    fn well_formed_design_has_no_violations() {
        assert!(validate_design(&two_buildings()).is_empty());
    }

    #[test]
    fn doubled_volume_is_one_violation() {
        let mut d = two_buildings();
        d.buildings
            .get_mut("a")
            .unwrap()
            .floor_areas
            .insert(FunctionType::RESIDENTIAL, 600.0);
        let v = validate_design(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::VolumeExceeded);
        assert_eq!(v[0].subject, "a");
    }

    #[test]
    fn dangling_block_is_reported() {
        let d = CityDesign::new(
            ["k1"],
            vec![building("a", "nowhere", 0.0, 1, &[(FunctionType::OFFICE, 50.0)])],
            "",
        );
        let v = validate_design(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::DanglingBlock);
    }

    #[test]
    fn aggregates_follow_members() {
        let d = two_buildings();
        let k = d.block("k1").unwrap();
        assert_eq!(k.footprint_total, 200.0);
        assert!((k.mean_height - (300.0 * 3.0 + 400.0 * 5.0) / 700.0).abs() < 1e-12);
        assert_eq!(k.buildings, vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn delete_then_readd_round_trips() {
        let d = two_buildings();
        let b = d.building("b").unwrap().clone();
        let d1 = apply_edit(&d, &Edit::Delete { id: "b".into() }).unwrap();
        let d2 = apply_edit(&d1, &Edit::Add { building: b }).unwrap();
        assert_eq!(d2.revision, 2);
        assert_eq!(d2.blocks, d.blocks);
        assert_eq!(d2.buildings, d.buildings);
        // original untouched
        assert_eq!(d.revision, 0);
        assert!(d.buildings.contains_key("b"));
    }

    #[test]
    fn raising_floors_raises_block_height() {
        let d = two_buildings();
        let mut b = d.building("b").unwrap().clone();
        b.floors = 15;
        let d1 = apply_edit(&d, &Edit::Modify { building: b }).unwrap();
        assert!(d1.block("k1").unwrap().mean_height > d.block("k1").unwrap().mean_height);
    }

    #[test]
    fn negative_floor_area_rejected() {
        let d = two_buildings();
        let b = building("c", "k1", 100.0, 2, &[(FunctionType::OFFICE, -5.0)]);
        match apply_edit(&d, &Edit::Add { building: b }) {
            Err(Error::Validation(v)) => assert_eq!(v[0].rule, Rule::NegativeFloorArea),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_id_rejected() {
        let d = two_buildings();
        assert!(matches!(
            apply_edit(&d, &Edit::Delete { id: "zzz".into() }),
            Err(Error::UnknownId { .. })
        ));
    }

    #[test]
    fn centroid_of_rectangle() {
        let b = building("a", "k1", 10.0, 1, &[]);
        let c = b.centroid().unwrap();
        assert!((c[0] - 15.0).abs() < 1e-12 && (c[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_is_floored() {
        let b = building("a", "k1", 0.0, 3, &[(FunctionType::RESIDENTIAL, 299.0)]);
        assert_eq!(b.occupancy_capacity(30.0), 9);
    }

    #[test]
    fn config_rejects_alpha_one() {
        let cfg = PlanningConfig {
            alpha: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(PlanningConfig::default().validate().is_ok());
    }
}
