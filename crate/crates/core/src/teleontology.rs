//! Schema stages for context graphs.
//!
//! A spatial teleontology (STLO) describes geometric object types. A knowledge
//! teleontology (KTLO) grafts entity types under an `Entity` root that inherits
//! the spatial properties. An entity type graph (ETG) is a flattened selection
//! of a KTLO: every selected etype carries its chosen inherited properties and
//! no parent links remain.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Interval;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TeleontologyError {
    #[error("duplicate etype {0:?}")]
    DuplicateEtype(String),
    #[error("unknown etype {0:?}")]
    UnknownEtype(String),
    #[error("etype {0:?} is part of a parent cycle")]
    Cycle(String),
    #[error("etype {etype:?} declares property {property:?} twice")]
    DuplicateProperty { etype: String, property: String },
    #[error("etype {etype:?} has no property {property:?}")]
    UnknownProperty { etype: String, property: String },
    #[error("selection is empty")]
    EmptySelection,
    #[error("expected a {expected} teleontology, got {found}")]
    WrongStage { expected: Stage, found: Stage },
    #[error("{0}")]
    Invalid(String),
    #[error("schema file: {0}")]
    Json(String),
}

type Result<T> = std::result::Result<T, TeleontologyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "STLO")]
    Stlo,
    #[serde(rename = "KTLO")]
    Ktlo,
    #[serde(rename = "ETG")]
    Etg,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Stlo => "STLO",
            Stage::Ktlo => "KTLO",
            Stage::Etg => "ETG",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    String,
    Integer,
    Float,
    Geopoint,
    Interval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataProperty {
    pub name: String,
    pub datatype: DataType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectProperty {
    pub name: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Etype {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub data_properties: Vec<DataProperty>,
    #[serde(default)]
    pub object_properties: Vec<ObjectProperty>,
}

impl Etype {
    /// Etype whose id equals its name.
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        Etype {
            id: name.clone(),
            name,
            parent: None,
            data_properties: Vec::new(),
            object_properties: Vec::new(),
        }
    }

    pub fn under(mut self, parent: impl Into<String>) -> Self {
        self.parent = Some(parent.into());
        self
    }

    pub fn data(mut self, name: impl Into<String>, datatype: DataType) -> Self {
        self.data_properties.push(DataProperty { name: name.into(), datatype });
        self
    }

    pub fn object(mut self, name: impl Into<String>, target: impl Into<String>) -> Self {
        self.object_properties.push(ObjectProperty { name: name.into(), target: target.into() });
        self
    }

    pub fn property_names(&self) -> impl Iterator<Item = &str> {
        self.data_properties
            .iter()
            .map(|p| p.name.as_str())
            .chain(self.object_properties.iter().map(|p| p.name.as_str()))
    }
}

/// Region label and observation period attached to a schema as metadata.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoxMeta {
    pub label: String,
    #[serde(default)]
    pub period: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTeleontology")]
pub struct Teleontology {
    stage: Stage,
    etypes: Vec<Etype>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    root: Option<String>,
    #[serde(rename = "box")]
    box_meta: BoxMeta,
    /// Explicit class (e.g. OSM fclass) to etype id mapping.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    class_map: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawTeleontology {
    stage: Stage,
    etypes: Vec<Etype>,
    #[serde(default)]
    root: Option<String>,
    #[serde(rename = "box", default)]
    box_meta: BoxMeta,
    #[serde(default)]
    class_map: BTreeMap<String, String>,
}

impl TryFrom<RawTeleontology> for Teleontology {
    type Error = TeleontologyError;

    fn try_from(raw: RawTeleontology) -> Result<Self> {
        Teleontology::new(raw.stage, raw.etypes, raw.root, raw.box_meta)?.with_class_map(raw.class_map)
    }
}

impl Teleontology {
    pub fn new(stage: Stage, etypes: Vec<Etype>, root: Option<String>, box_meta: BoxMeta) -> Result<Self> {
        let t = Teleontology { stage, etypes, root, box_meta, class_map: BTreeMap::new() };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for e in &self.etypes {
            if !ids.insert(e.id.as_str()) {
                return Err(TeleontologyError::DuplicateEtype(e.id.clone()));
            }
            let mut names = BTreeSet::new();
            for p in e.property_names() {
                if !names.insert(p) {
                    return Err(TeleontologyError::DuplicateProperty {
                        etype: e.id.clone(),
                        property: p.to_string(),
                    });
                }
            }
        }
        for e in &self.etypes {
            if let Some(parent) = &e.parent {
                if self.stage == Stage::Etg {
                    return Err(TeleontologyError::Invalid(format!(
                        "ETG etype {:?} must not have a parent",
                        e.id
                    )));
                }
                if !ids.contains(parent.as_str()) {
                    return Err(TeleontologyError::UnknownEtype(parent.clone()));
                }
            }
        }
        if let Some(root) = &self.root {
            let r = self.etype(root).ok_or_else(|| TeleontologyError::UnknownEtype(root.clone()))?;
            if r.parent.is_some() {
                return Err(TeleontologyError::Invalid(format!("root {root:?} has a parent")));
            }
        }
        // every parent chain must terminate
        for e in &self.etypes {
            let mut cur = e;
            let mut steps = 0;
            while let Some(p) = &cur.parent {
                steps += 1;
                if steps > self.etypes.len() {
                    return Err(TeleontologyError::Cycle(e.id.clone()));
                }
                cur = self.etype(p).expect("parent checked above");
            }
            if self.stage != Stage::Etg && self.root.as_deref().is_some_and(|r| r != cur.id) {
                return Err(TeleontologyError::Invalid(format!(
                    "etype {:?} is not under root {:?}",
                    e.id,
                    self.root.as_deref().unwrap_or_default()
                )));
            }
        }
        Ok(())
    }

    pub fn with_class_map(mut self, class_map: BTreeMap<String, String>) -> Result<Self> {
        for (class, etype) in &class_map {
            if self.etype(etype).is_none() {
                return Err(TeleontologyError::Invalid(format!(
                    "class {class:?} maps to unknown etype {etype:?}"
                )));
            }
        }
        self.class_map = class_map;
        Ok(self)
    }

    pub fn with_box(mut self, box_meta: BoxMeta) -> Self {
        self.box_meta = box_meta;
        self
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn etypes(&self) -> &[Etype] {
        &self.etypes
    }

    pub fn root(&self) -> Option<&str> {
        self.root.as_deref()
    }

    pub fn box_meta(&self) -> &BoxMeta {
        &self.box_meta
    }

    pub fn class_map(&self) -> &BTreeMap<String, String> {
        &self.class_map
    }

    pub fn etype(&self, id: &str) -> Option<&Etype> {
        self.etypes.iter().find(|e| e.id == id)
    }

    /// Looks an etype up by id, then by case-insensitive name.
    pub fn find(&self, key: &str) -> Option<&Etype> {
        self.etype(key)
            .or_else(|| self.etypes.iter().find(|e| e.name.eq_ignore_ascii_case(key)))
    }

    /// Etype id for a class label: the explicit class map first, then an etype
    /// whose id or name matches the label.
    pub fn etype_for_class(&self, class: &str) -> Option<&str> {
        if let Some(id) = self.class_map.get(class) {
            return Some(id);
        }
        self.find(class).map(|e| e.id.as_str())
    }

    /// Chain from the top-most ancestor down to `id`.
    fn lineage(&self, id: &str) -> Result<Vec<&Etype>> {
        let mut chain = Vec::new();
        let mut cur = self.etype(id).ok_or_else(|| TeleontologyError::UnknownEtype(id.to_string()))?;
        loop {
            chain.push(cur);
            match &cur.parent {
                Some(p) => cur = self.etype(p).ok_or_else(|| TeleontologyError::UnknownEtype(p.clone()))?,
                None => break,
            }
        }
        chain.reverse();
        Ok(chain)
    }

    /// `true` when `id` equals `ancestor` or lies below it.
    pub fn is_subtype(&self, id: &str, ancestor: &str) -> bool {
        self.lineage(id).map(|l| l.iter().any(|e| e.id == ancestor)).unwrap_or(false)
    }

    /// Inherited plus own properties. On a name collision the lower etype wins.
    pub fn closure(&self, id: &str) -> Result<(Vec<DataProperty>, Vec<ObjectProperty>)> {
        let mut data: Vec<DataProperty> = Vec::new();
        let mut objects: Vec<ObjectProperty> = Vec::new();
        for e in self.lineage(id)? {
            for p in &e.data_properties {
                if let Some(slot) = data.iter_mut().find(|q| q.name == p.name) {
                    log::debug!("etype {:?} shadows inherited property {:?}", e.id, p.name);
                    *slot = p.clone();
                } else if let Some(pos) = objects.iter().position(|q| q.name == p.name) {
                    log::debug!("etype {:?} shadows inherited property {:?}", e.id, p.name);
                    objects.remove(pos);
                    data.push(p.clone());
                } else {
                    data.push(p.clone());
                }
            }
            for p in &e.object_properties {
                if let Some(slot) = objects.iter_mut().find(|q| q.name == p.name) {
                    log::debug!("etype {:?} shadows inherited property {:?}", e.id, p.name);
                    *slot = p.clone();
                } else if let Some(pos) = data.iter().position(|q| q.name == p.name) {
                    log::debug!("etype {:?} shadows inherited property {:?}", e.id, p.name);
                    data.remove(pos);
                    objects.push(p.clone());
                } else {
                    objects.push(p.clone());
                }
            }
        }
        Ok((data, objects))
    }

    /// Distributes every etype's inherited properties onto it and drops the
    /// parent links. Idempotent.
    pub fn flatten(&self) -> Teleontology {
        let etypes = self
            .etypes
            .iter()
            .map(|e| {
                let (data, objects) = self.closure(&e.id).expect("validated on construction");
                Etype {
                    id: e.id.clone(),
                    name: e.name.clone(),
                    parent: None,
                    data_properties: data,
                    object_properties: objects,
                }
            })
            .collect();
        Teleontology {
            stage: Stage::Etg,
            etypes,
            root: None,
            box_meta: self.box_meta.clone(),
            class_map: self.class_map.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("teleontology serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| TeleontologyError::Json(e.to_string()))
    }
}

/// The fixed spatial teleontology: `Object` with `Point`, `Line` and
/// `Polygon` below it.
pub fn default_stlo() -> Teleontology {
    let object = Etype::new("Object")
        .data("Id", DataType::String)
        .data("Coordinates", DataType::Geopoint)
        .object("PartIn", "Object")
        .object("SpatialRelation", "Object");
    let etypes = vec![
        object,
        Etype::new("Point").under("Object"),
        Etype::new("Line").under("Object"),
        Etype::new("Polygon").under("Object"),
    ];
    Teleontology::new(Stage::Stlo, etypes, Some("Object".into()), BoxMeta::default())
        .expect("default STLO is well formed")
}

pub const ENTITY_ROOT: &str = "Entity";

/// Builds a KTLO rooted at `Entity`, which inherits the STLO root's spatial
/// properties and adds `Name`, `Class`, `Function` and `Geometry`. Etypes with
/// no parent are grafted directly under `Entity`.
pub fn ktlo_from_stlo(stlo: &Teleontology, entity_etypes: Vec<Etype>) -> Result<Teleontology> {
    if stlo.stage != Stage::Stlo {
        return Err(TeleontologyError::WrongStage { expected: Stage::Stlo, found: stlo.stage });
    }
    let stlo_root = stlo
        .root()
        .ok_or_else(|| TeleontologyError::Invalid("STLO has no root".into()))?;
    let (data, objects) = stlo.closure(stlo_root)?;
    let mut entity = Etype::new(ENTITY_ROOT);
    entity.data_properties = data;
    entity.object_properties = objects
        .into_iter()
        .map(|p| ObjectProperty {
            target: if p.target == stlo_root { ENTITY_ROOT.to_string() } else { p.target },
            name: p.name,
        })
        .collect();
    entity = entity
        .data("Name", DataType::String)
        .data("Class", DataType::String)
        .data("Function", DataType::String)
        .data("Geometry", DataType::String);

    let mut names = BTreeSet::from([ENTITY_ROOT.to_string()]);
    let mut etypes = vec![entity];
    for mut e in entity_etypes {
        if !names.insert(e.name.clone()) || etypes.iter().any(|x| x.id == e.id) {
            return Err(TeleontologyError::DuplicateEtype(e.name));
        }
        if e.parent.is_none() {
            e.parent = Some(ENTITY_ROOT.to_string());
        }
        etypes.push(e);
    }
    Teleontology::new(Stage::Ktlo, etypes, Some(ENTITY_ROOT.into()), stlo.box_meta.clone())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PropertyChoice {
    /// Serialized as the string `"all"`.
    All(AllMarker),
    Only(BTreeSet<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllMarker {
    All,
}

/// Which etypes of a KTLO to keep, and which of their (inherited) properties.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SelectionSpec {
    pub etypes: BTreeMap<String, PropertyChoice>,
}

impl SelectionSpec {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every etype with every property.
    pub fn everything(ktlo: &Teleontology) -> Self {
        let mut s = Self::new();
        for e in ktlo.etypes() {
            s = s.select(&e.id);
        }
        s
    }

    pub fn select(mut self, id: &str) -> Self {
        self.etypes.insert(id.to_string(), PropertyChoice::All(AllMarker::All));
        self
    }

    pub fn select_with<I, S>(mut self, id: &str, properties: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let props = properties.into_iter().map(Into::into).collect();
        self.etypes.insert(id.to_string(), PropertyChoice::Only(props));
        self
    }
}

/// Projects a KTLO onto the selected etypes, flattening inheritance.
pub fn etg_from_ktlo(ktlo: &Teleontology, sel: &SelectionSpec) -> Result<Teleontology> {
    if ktlo.stage != Stage::Ktlo {
        return Err(TeleontologyError::WrongStage { expected: Stage::Ktlo, found: ktlo.stage });
    }
    if sel.etypes.is_empty() {
        return Err(TeleontologyError::EmptySelection);
    }
    let mut etypes = Vec::new();
    // keep the KTLO's etype order for deterministic output
    for id in sel.etypes.keys() {
        if ktlo.etype(id).is_none() {
            return Err(TeleontologyError::UnknownEtype(id.clone()));
        }
    }
    for e in ktlo.etypes().iter().filter(|e| sel.etypes.contains_key(&e.id)) {
        let (mut data, mut objects) = ktlo.closure(&e.id)?;
        if let PropertyChoice::Only(keep) = &sel.etypes[&e.id] {
            for name in keep {
                let known = data.iter().any(|p| &p.name == name) || objects.iter().any(|p| &p.name == name);
                if !known {
                    return Err(TeleontologyError::UnknownProperty {
                        etype: e.id.clone(),
                        property: name.clone(),
                    });
                }
            }
            data.retain(|p| keep.contains(&p.name));
            objects.retain(|p| keep.contains(&p.name));
        }
        etypes.push(Etype {
            id: e.id.clone(),
            name: e.name.clone(),
            parent: None,
            data_properties: data,
            object_properties: objects,
        });
    }
    let class_map = ktlo
        .class_map
        .iter()
        .filter(|(_, v)| sel.etypes.contains_key(*v))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Teleontology::new(Stage::Etg, etypes, None, ktlo.box_meta.clone())?.with_class_map(class_map)
}

/// Ready-made schemas for OSM-style places and diary-based personal contexts.
pub mod presets {
    use super::*;

    /// Etype every unmappable reference class falls back to.
    pub const DEFAULT_PLACE: &str = "Place";

    /// OSM-like place classes known to [`reference_etg`]. `building` carries
    /// the extra `type` property.
    pub const REFERENCE_CLASSES: &[&str] = &[
        "restaurant",
        "cafe",
        "pub",
        "bar",
        "bank",
        "supermarket",
        "library",
        "university",
        "school",
        "building",
        "sports_centre",
        "park",
        "bus_stop",
        "attraction",
    ];

    pub fn reference_ktlo(label: &str, period: Option<Interval>) -> Teleontology {
        let mut etypes = vec![Etype::new(DEFAULT_PLACE)];
        for class in REFERENCE_CLASSES {
            let mut e = Etype::new(*class).under(DEFAULT_PLACE);
            if *class == "building" {
                e = e.data("type", DataType::String);
            }
            etypes.push(e);
        }
        let stlo = default_stlo().with_box(BoxMeta { label: label.to_string(), period });
        ktlo_from_stlo(&stlo, etypes).expect("preset KTLO is well formed")
    }

    /// Flattened reference schema with every preset class selected.
    pub fn reference_etg(label: &str, period: Option<Interval>) -> Teleontology {
        let ktlo = reference_ktlo(label, period);
        etg_from_ktlo(&ktlo, &SelectionSpec::everything(&ktlo)).expect("preset ETG is well formed")
    }

    /// Personal-context place etypes, one per distinct diary location kind.
    pub const PERSONAL_PLACES: &[&str] = &[
        "Home",
        "House",
        "Classroom",
        "Library",
        "University",
        "Workplace",
        "Pub",
        "Restaurant",
        "Shop",
        "Bank",
        "SportsCentre",
        "Outdoors",
        "Street",
        "Transport",
        "Vehicle",
    ];

    pub fn personal_ktlo(label: &str, period: Option<Interval>) -> Teleontology {
        let mut etypes = vec![
            Etype::new("Person")
                .data("Mood", DataType::Integer)
                .data("Action", DataType::String)
                .object("WithWhom", "Person")
                .object("Near", ENTITY_ROOT),
            Etype::new("Place"),
        ];
        for p in PERSONAL_PLACES {
            etypes.push(Etype::new(*p).under("Place"));
        }
        let stlo = default_stlo().with_box(BoxMeta { label: label.to_string(), period });
        ktlo_from_stlo(&stlo, etypes).expect("preset KTLO is well formed")
    }

    pub fn personal_etg(label: &str, period: Option<Interval>) -> Teleontology {
        let ktlo = personal_ktlo(label, period);
        etg_from_ktlo(&ktlo, &SelectionSpec::everything(&ktlo)).expect("preset ETG is well formed")
    }
}
