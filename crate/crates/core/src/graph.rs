//! Entity graphs: typed entities plus subject-predicate-object triples with
//! optional validity intervals.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{geometry_from_wkt, geometry_to_wkt, BoundingBox, GeoPoint, Geometry};
use crate::teleontology::Teleontology;
use crate::time::Interval;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("triple {0} references unknown entity {1:?}")]
    DanglingReference(String, String),
    #[error("reference triple {0} carries a validity interval")]
    TimedReferenceTriple(String),
    #[error("entity {id:?} has etype {etype:?} which the ETG does not define")]
    UnknownEtype { id: String, etype: String },
    #[error("entity {0:?} has an empty class")]
    EmptyClass(String),
    #[error("entity {0:?} lies outside the reference region")]
    NotLocalized(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Reference,
    Personal,
    Derived,
}

#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(x) => write!(f, "{x}"),
            Literal::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Literal {
    fn from(s: &str) -> Self {
        Literal::Str(s.to_string())
    }
}

impl From<i64> for Literal {
    fn from(i: i64) -> Self {
        Literal::Int(i)
    }
}

/// Object position of a triple: another entity or a literal value.
#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Entity(String),
    Literal(Literal),
}

impl Term {
    pub fn entity(id: impl Into<String>) -> Self {
        Term::Entity(id.into())
    }

    pub fn lit(v: impl Into<Literal>) -> Self {
        Term::Literal(v.into())
    }

    pub fn as_entity(&self) -> Option<&str> {
        match self {
            Term::Entity(id) => Some(id),
            Term::Literal(_) => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Entity(id) => f.write_str(id),
            Term::Literal(l) => write!(f, "{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    #[serde(rename = "s")]
    pub subject: String,
    #[serde(rename = "p")]
    pub predicate: String,
    #[serde(rename = "o")]
    pub object: Term,
    #[serde(default)]
    pub validity: Option<Interval>,
    pub provenance: Provenance,
    /// Measured distance, for spatial relations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
}

impl Triple {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: Term, provenance: Provenance) -> Self {
        Triple {
            subject: subject.into(),
            predicate: predicate.into(),
            object,
            validity: None,
            provenance,
            distance_m: None,
        }
    }

    pub fn during(mut self, validity: Interval) -> Self {
        self.validity = Some(validity);
        self
    }

    pub fn at_distance(mut self, meters: f64) -> Self {
        self.distance_m = Some(meters);
        self
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}, {}", self.predicate, self.subject, self.object)?;
        if let Some(v) = &self.validity {
            write!(f, ", {v}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "EntityRecord", try_from = "EntityRecord")]
pub struct Entity {
    pub id: String,
    pub etype: String,
    pub name: Option<String>,
    pub class: String,
    pub geometries: Vec<Geometry>,
    pub properties: BTreeMap<String, Literal>,
}

impl Entity {
    /// Proximity anchor: the representative point of the first geometry.
    pub fn position(&self) -> Option<GeoPoint> {
        self.geometries.first().map(Geometry::representative_point)
    }
}

/// Wire form of an entity; geometries are WKT strings.
#[derive(Serialize, Deserialize)]
struct EntityRecord {
    id: String,
    etype: String,
    name: Option<String>,
    class: String,
    geom: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    properties: BTreeMap<String, Literal>,
}

impl From<Entity> for EntityRecord {
    fn from(e: Entity) -> Self {
        EntityRecord {
            geom: e.geometries.iter().map(geometry_to_wkt).collect(),
            id: e.id,
            etype: e.etype,
            name: e.name,
            class: e.class,
            properties: e.properties,
        }
    }
}

impl TryFrom<EntityRecord> for Entity {
    type Error = String;

    fn try_from(r: EntityRecord) -> Result<Self, Self::Error> {
        let geometries = r
            .geom
            .iter()
            .map(|g| geometry_from_wkt(g).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        Ok(Entity {
            id: r.id,
            etype: r.etype,
            name: r.name,
            class: r.class,
            geometries,
            properties: r.properties,
        })
    }
}

/// Reference location label, region and observation period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBox {
    pub label: String,
    pub region: BoundingBox,
    pub period: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityGraph {
    pub entities: BTreeMap<String, Entity>,
    pub triples: Vec<Triple>,
    #[serde(rename = "box")]
    pub box_meta: ReferenceBox,
    pub etg: Teleontology,
}

impl EntityGraph {
    pub fn empty(box_meta: ReferenceBox, etg: Teleontology) -> Self {
        EntityGraph { entities: BTreeMap::new(), triples: Vec::new(), box_meta, etg }
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn triples_with(&self, predicate: &str) -> impl Iterator<Item = &Triple> {
        let predicate = predicate.to_string();
        self.triples.iter().filter(move |t| t.predicate == predicate)
    }

    /// Checks reference-graph invariants: resolvable triples, no validity
    /// intervals, known etypes, and every vertex inside the region.
    pub fn validate(&self) -> Result<(), GraphError> {
        for t in &self.triples {
            for id in std::iter::once(t.subject.as_str()).chain(t.object.as_entity()) {
                if !self.entities.contains_key(id) {
                    return Err(GraphError::DanglingReference(t.to_string(), id.to_string()));
                }
            }
            if t.provenance == Provenance::Reference && t.validity.is_some() {
                return Err(GraphError::TimedReferenceTriple(t.to_string()));
            }
        }
        for e in self.entities.values() {
            if e.class.is_empty() {
                return Err(GraphError::EmptyClass(e.id.clone()));
            }
            if self.etg.etype(&e.etype).is_none() {
                return Err(GraphError::UnknownEtype { id: e.id.clone(), etype: e.etype.clone() });
            }
            let localized = e
                .geometries
                .iter()
                .flat_map(|g| g.vertices())
                .all(|p| self.box_meta.region.contains(p));
            if !localized {
                return Err(GraphError::NotLocalized(e.id.clone()));
            }
        }
        Ok(())
    }
}
