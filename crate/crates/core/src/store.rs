//! File formats and the design timeline.
//!
//! Every file is canonical JSON: object keys sorted, two-space indentation,
//! floats written with nine significant digits, and a `schema_version`
//! field. Nine digits is the determinism boundary: values that already fit
//! in nine digits survive a save/load cycle unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::benefit::Population;
use crate::error::{Error, Result};
use crate::explain::Indicators;
use crate::model::{Building, CityDesign, FunctionType, PlanningConfig, Point};

pub const SCHEMA_VERSION: u64 = 1;
pub const SIGNIFICANT_DIGITS: usize = 9;

/// `x` rounded to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_significant(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

fn write_number(out: &mut String, n: &serde_json::Number) {
    if n.is_u64() || n.is_i64() {
        out.push_str(&n.to_string());
    } else {
        let x = round_significant(n.as_f64().expect("finite json number"));
        if x == 0.0 {
            out.push('0');
        } else {
            out.push_str(&x.to_string());
        }
    }
}

fn write_value(out: &mut String, value: &Value, depth: usize) {
    let pad = |out: &mut String, d: usize| out.extend(std::iter::repeat_n("  ", d));
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&value.to_string()),
        Value::Number(n) => write_number(out, n),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, depth + 1);
                write_value(out, item, depth + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                pad(out, depth + 1);
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push_str(": ");
                write_value(out, &map[*key], depth + 1);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push('}');
        }
    }
}

pub fn canonical_value(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out.push('\n');
    out
}

/// Canonical JSON text of any serializable value.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let value = serde_json::to_value(value).map_err(|e| Error::parse("serialization", e))?;
    Ok(canonical_value(&value))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_json(context: &str, text: &str) -> Result<Value> {
    serde_json::from_str(text)
        .map_err(|e| Error::parse(context, format!("line {} column {}: {e}", e.line(), e.column())))
}

fn check_version(context: &str, root: &Map<String, Value>) -> Result<()> {
    match root.get("schema_version") {
        None => Ok(()),
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => Ok(()),
        Some(v) => Err(Error::parse(context, format!("unsupported schema_version {v}"))),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => Error::Io(e),
    })
}

pub fn city_to_value(design: &CityDesign) -> Value {
    let features: Vec<Value> = design
        .buildings
        .values()
        .map(|b| {
            let mut ring: Vec<Point> = b.footprint.clone();
            if let Some(&first) = ring.first() {
                ring.push(first);
            }
            json!({
                "type": "Feature",
                "id": b.id,
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": {
                    "block_id": b.block_id,
                    "floors": b.floors,
                    "floor_areas": b.floor_areas,
                },
            })
        })
        .collect();
    json!({
        "type": "FeatureCollection",
        "schema_version": SCHEMA_VERSION,
        "crs_note": design.crs_note,
        "revision": design.revision,
        "blocks": design.blocks.keys().collect::<Vec<_>>(),
        "features": features,
    })
}

pub fn city_to_string(design: &CityDesign) -> String {
    canonical_value(&city_to_value(design))
}

fn parse_ring(ctx: &str, geometry: Option<&Value>) -> Result<Vec<Point>> {
    let geometry = geometry.ok_or_else(|| Error::parse(ctx, "missing `geometry`"))?;
    if geometry.get("type").and_then(Value::as_str) != Some("Polygon") {
        return Err(Error::parse(ctx, "geometry must be a Polygon"));
    }
    let outer = geometry
        .get("coordinates")
        .and_then(Value::as_array)
        .and_then(|rings| rings.first())
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(ctx, "geometry needs an outer ring"))?;
    let mut ring = Vec::with_capacity(outer.len());
    for vertex in outer {
        let xy = vertex.as_array().filter(|v| v.len() >= 2);
        match xy.map(|v| (v[0].as_f64(), v[1].as_f64())) {
            Some((Some(x), Some(y))) if x.is_finite() && y.is_finite() => ring.push([x, y]),
            _ => return Err(Error::parse(ctx, format!("invalid vertex {vertex}"))),
        }
    }
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(Error::parse(ctx, "polygon needs at least three distinct vertices"));
    }
    Ok(ring)
}

fn parse_feature(index: usize, feature: &Value, known: &[FunctionType]) -> Result<Building> {
    let id = feature.get("id").and_then(|v| {
        v.as_str()
            .map(str::to_string)
            .or_else(|| v.as_u64().map(|n| n.to_string()))
    });
    let ctx = match &id {
        Some(id) => format!("feature {index} (`{id}`)"),
        None => format!("feature {index}"),
    };
    let id = id.ok_or_else(|| Error::parse(&ctx, "missing `id`"))?;
    let footprint = parse_ring(&ctx, feature.get("geometry"))?;
    let props = feature
        .get("properties")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::parse(&ctx, "missing `properties`"))?;
    let block_id = props
        .get("block_id")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::parse(&ctx, "missing `block_id`"))?;
    let floors = props
        .get("floors")
        .ok_or_else(|| Error::parse(&ctx, "missing `floors`"))?
        .as_u64()
        .and_then(|f| u32::try_from(f).ok())
        .ok_or_else(|| Error::parse(&ctx, "`floors` must be a non-negative integer"))?;
    let mut floor_areas = BTreeMap::new();
    if let Some(areas) = props.get("floor_areas") {
        let areas = areas
            .as_object()
            .ok_or_else(|| Error::parse(&ctx, "`floor_areas` must be an object"))?;
        for (name, area) in areas {
            let f = known.iter().find(|k| k.as_str() == name).cloned().ok_or_else(|| {
                let names: Vec<&str> = known.iter().map(FunctionType::as_str).collect();
                Error::parse(
                    &ctx,
                    format!("unknown function type `{name}`; known types: {}", names.join(", ")),
                )
            })?;
            let area = area
                .as_f64()
                .ok_or_else(|| Error::parse(&ctx, format!("floor area of `{name}` is not a number")))?;
            floor_areas.insert(f, area);
        }
    }
    Ok(Building {
        id,
        block_id: block_id.to_string(),
        footprint,
        floors,
        floor_areas,
    })
}

/// Parses a city feature collection; function types must be among `known`.
pub fn city_from_str(text: &str, known: &[FunctionType]) -> Result<CityDesign> {
    const CTX: &str = "city file";
    let root = parse_json(CTX, text)?;
    let root = root
        .as_object()
        .ok_or_else(|| Error::parse(CTX, "expected a JSON object"))?;
    check_version(CTX, root)?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::parse(CTX, "`type` must be \"FeatureCollection\""));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(CTX, "missing `features` array"))?;
    let buildings = features
        .iter()
        .enumerate()
        .map(|(i, f)| parse_feature(i, f, known))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for b in &buildings {
        if !seen.insert(b.id.as_str()) {
            return Err(Error::parse(CTX, format!("duplicate feature id `{}`", b.id)));
        }
    }
    let mut block_ids: Vec<String> = match root.get("blocks") {
        Some(v) => v
            .as_array()
            .and_then(|a| a.iter().map(|b| b.as_str().map(str::to_string)).collect())
            .ok_or_else(|| Error::parse(CTX, "`blocks` must be an array of strings"))?,
        None => Vec::new(),
    };
    block_ids.extend(buildings.iter().map(|b| b.block_id.clone()));
    block_ids.sort();
    block_ids.dedup();
    let crs = root.get("crs_note").and_then(Value::as_str).unwrap_or_default();
    let mut design = CityDesign::new(block_ids, buildings, crs);
    design.revision = root.get("revision").and_then(Value::as_u64).unwrap_or(0);
    Ok(design)
}

pub fn save_city(design: &CityDesign, path: &Path) -> Result<()> {
    write_atomic(path, &city_to_string(design))
}

pub fn load_city(path: &Path) -> Result<CityDesign> {
    load_city_with(path, &PlanningConfig::default())
}

pub fn load_city_with(path: &Path, config: &PlanningConfig) -> Result<CityDesign> {
    city_from_str(&read(path)?, &config.function_types)
}

#[derive(Serialize, Deserialize)]
struct PopulationFile {
    #[serde(default = "schema_version")]
    schema_version: u64,
    #[serde(flatten)]
    population: Population,
}

fn schema_version() -> u64 {
    SCHEMA_VERSION
}

pub fn population_to_string(population: &Population) -> Result<String> {
    to_canonical_json(&PopulationFile {
        schema_version: SCHEMA_VERSION,
        population: population.clone(),
    })
}

/// Parses and validates a population file.
pub fn population_from_str(text: &str) -> Result<Population> {
    const CTX: &str = "population file";
    let file: PopulationFile = serde_json::from_str(text)
        .map_err(|e| Error::parse(CTX, format!("line {} column {}: {e}", e.line(), e.column())))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::parse(
            CTX,
            format!("unsupported schema_version {}", file.schema_version),
        ));
    }
    file.population.validate()?;
    Ok(file.population)
}

pub fn save_population(population: &Population, path: &Path) -> Result<()> {
    write_atomic(path, &population_to_string(population)?)
}

pub fn load_population(path: &Path) -> Result<Population> {
    population_from_str(&read(path)?)
}

/// Reads any versioned JSON document into `T`.
pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read(path)?;
    let ctx = path.display().to_string();
    let mut value = parse_json(&ctx, &text)?;
    if let Some(root) = value.as_object_mut() {
        check_version(&ctx, root)?;
        root.remove("schema_version");
    }
    serde_json::from_value(value).map_err(|e| Error::parse(ctx, e))
}

/// Writes `value` as canonical JSON with a `schema_version` field when it
/// serializes to an object.
pub fn save_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    write_atomic(path, &versioned(value)?)
}

pub fn versioned<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::parse("serialization", e))?;
    if let Some(root) = v.as_object_mut() {
        root.insert("schema_version".into(), SCHEMA_VERSION.into());
    }
    Ok(canonical_value(&v))
}

/// Timeline metadata for one saved design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub revision: u64,
    pub parent_revision: Option<u64>,
    pub timestamp: String,
    pub label: String,
    /// Seed that reproduces `summary` by re-running the simulation.
    pub seed: u64,
    pub summary: Indicators,
    /// Snapshot file, relative to the store directory.
    pub snapshot: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignIteration {
    pub entry: TimelineEntry,
    pub design: CityDesign,
}

#[derive(Serialize, Deserialize)]
struct Index {
    schema_version: u64,
    entries: Vec<TimelineEntry>,
}

/// Directory of design snapshots plus an `index.json`, appended atomically.
#[derive(Debug, Clone)]
pub struct TimelineStore {
    root: PathBuf,
    known: Vec<FunctionType>,
}

impl TimelineStore {
    /// Opens `root`, creating it and an empty index when absent.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        Self::open_with(root, &PlanningConfig::default())
    }

    /// As [`open`](Self::open), reading snapshots with `config`'s function types.
    pub fn open_with(root: impl Into<PathBuf>, config: &PlanningConfig) -> Result<Self> {
        let store = TimelineStore {
            root: root.into(),
            known: config.function_types.clone(),
        };
        fs::create_dir_all(store.root.join("snapshots"))?;
        if !store.index_path().exists() {
            store.write_index(&[])?;
        }
        store.list()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn index_path(&self) -> PathBuf {
        self.root.join("index.json")
    }

    fn write_index(&self, entries: &[TimelineEntry]) -> Result<()> {
        let index = Index {
            schema_version: SCHEMA_VERSION,
            entries: entries.to_vec(),
        };
        write_atomic(&self.index_path(), &to_canonical_json(&index)?)
    }

    /// Entries in append order.
    pub fn list(&self) -> Result<Vec<TimelineEntry>> {
        let text = fs::read_to_string(self.index_path())
            .map_err(|e| Error::CorruptIndex(format!("{}: {e}", self.index_path().display())))?;
        let index: Index = serde_json::from_str(&text).map_err(|e| {
            Error::CorruptIndex(format!(
                "{} line {} column {}: {e}",
                self.index_path().display(),
                e.line(),
                e.column()
            ))
        })?;
        if index.schema_version != SCHEMA_VERSION {
            return Err(Error::CorruptIndex(format!(
                "unsupported schema_version {}",
                index.schema_version
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &index.entries {
            if !seen.insert(e.revision) {
                return Err(Error::CorruptIndex(format!("revision {} listed twice", e.revision)));
            }
            if e.parent_revision.is_some_and(|p| !seen.contains(&p)) {
                return Err(Error::CorruptIndex(format!(
                    "revision {} names parent {:?} that precedes it nowhere",
                    e.revision, e.parent_revision
                )));
            }
        }
        Ok(index.entries)
    }

    /// Stores `design` under its revision. The parent is the latest entry.
    pub fn append(
        &self,
        design: &CityDesign,
        label: &str,
        timestamp: &str,
        seed: u64,
        summary: Indicators,
    ) -> Result<TimelineEntry> {
        let mut entries = self.list()?;
        if entries.iter().any(|e| e.revision == design.revision) {
            return Err(Error::Conflict(format!(
                "revision {} is already saved",
                design.revision
            )));
        }
        let snapshot = format!("snapshots/rev-{:06}.json", design.revision);
        write_atomic(&self.root.join(&snapshot), &city_to_string(design))?;
        let entry = TimelineEntry {
            revision: design.revision,
            parent_revision: entries.last().map(|e| e.revision),
            timestamp: timestamp.to_string(),
            label: label.to_string(),
            seed,
            summary,
            snapshot,
        };
        entries.push(entry.clone());
        self.write_index(&entries)?;
        Ok(entry)
    }

    pub fn get(&self, revision: u64) -> Result<DesignIteration> {
        let entry = self
            .list()?
            .into_iter()
            .find(|e| e.revision == revision)
            .ok_or_else(|| Error::NotFound(format!("timeline revision {revision}")))?;
        let text = fs::read_to_string(self.root.join(&entry.snapshot))
            .map_err(|e| Error::CorruptIndex(format!("snapshot {}: {e}", entry.snapshot)))?;
        let mut design = city_from_str(&text, &self.known)?;
        design.revision = entry.revision;
        Ok(DesignIteration { entry, design })
    }
}
