//! Time-invariant reference context: place records lifted to entities, plus
//! `PartIn` containment and `Near` proximity triples.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{point_in_polygon, GeoError, Geometry, SpatialIndex, DEFAULT_CELL_SIZE_M};
use crate::graph::{Entity, EntityGraph, Literal, Provenance, ReferenceBox, Term, Triple};
use crate::teleontology::{presets::DEFAULT_PLACE, Stage, Teleontology};

pub const PART_IN: &str = "PartIn";
pub const NEAR: &str = "Near";

/// Place-place proximity threshold.
pub const DEFAULT_PLACE_NEAR_M: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("duplicate place id {0:?}")]
    DuplicateId(String),
    #[error("place record has an empty id")]
    EmptyId,
    #[error("place {0:?} has an empty fclass")]
    EmptyClass(String),
    #[error("expected an ETG schema, got {0}")]
    NotEtg(Stage),
    #[error("class {class:?} of place {id:?} has no etype and the ETG lacks a default \"Place\" etype")]
    NoDefaultEtype { id: String, class: String },
    #[error("near threshold must be positive, got {0}")]
    Threshold(f64),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceRecord {
    pub id: String,
    pub name: Option<String>,
    pub fclass: String,
    pub geometry: Geometry,
    /// Building type, e.g. `apartments` or `church`.
    #[serde(rename = "type")]
    pub kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub graph: EntityGraph,
    /// Records with a vertex outside the region.
    pub dropped_outside: usize,
    /// Records whose class fell back to the default place etype.
    pub defaulted_class: usize,
}

/// Lifts place records into a time-invariant entity graph.
///
/// A record survives only if all its vertices lie inside the region. Its etype
/// comes from the ETG's class mapping; unknown classes go to `Place`.
pub fn ingest_reference(
    records: Vec<PlaceRecord>,
    box_meta: ReferenceBox,
    etg: Teleontology,
) -> Result<Ingested, ReferenceError> {
    if etg.stage() != Stage::Etg {
        return Err(ReferenceError::NotEtg(etg.stage()));
    }
    let mut seen = BTreeSet::new();
    let mut entities = BTreeMap::new();
    let (mut dropped_outside, mut defaulted_class) = (0, 0);
    for r in records {
        if r.id.is_empty() {
            return Err(ReferenceError::EmptyId);
        }
        if !seen.insert(r.id.clone()) {
            return Err(ReferenceError::DuplicateId(r.id));
        }
        if r.fclass.is_empty() {
            return Err(ReferenceError::EmptyClass(r.id));
        }
        if !r.geometry.vertices().iter().all(|p| box_meta.region.contains(p)) {
            dropped_outside += 1;
            continue;
        }
        let etype = match etg.etype_for_class(&r.fclass) {
            Some(e) => e.to_string(),
            None => {
                if etg.etype(DEFAULT_PLACE).is_none() {
                    return Err(ReferenceError::NoDefaultEtype { id: r.id, class: r.fclass });
                }
                defaulted_class += 1;
                DEFAULT_PLACE.to_string()
            }
        };
        let mut properties = BTreeMap::new();
        if let Some(kind) = r.kind {
            properties.insert("type".to_string(), Literal::Str(kind));
        }
        entities.insert(
            r.id.clone(),
            Entity {
                id: r.id,
                etype,
                name: r.name.filter(|n| !n.is_empty()),
                class: r.fclass,
                geometries: vec![r.geometry],
                properties,
            },
        );
    }
    if dropped_outside > 0 {
        log::info!("dropped {dropped_outside} place(s) outside the reference region");
    }
    if defaulted_class > 0 {
        log::info!("{defaulted_class} place(s) mapped to the default {DEFAULT_PLACE} etype");
    }
    let graph = EntityGraph { entities, triples: Vec::new(), box_meta, etg };
    Ok(Ingested { graph, dropped_outside, defaulted_class })
}

fn position_index(eg: &EntityGraph, cell_size_m: f64) -> Result<SpatialIndex<String>, GeoError> {
    SpatialIndex::build(
        eg.box_meta.region,
        cell_size_m,
        eg.entities.values().filter_map(|e| e.position().map(|p| (e.id.clone(), p))),
    )
}

/// Whether `inner`'s first geometry lies entirely inside any polygon of `outer`.
fn contained_in(inner: &Entity, outer: &Entity) -> bool {
    let Some(geom) = inner.geometries.first() else {
        return false;
    };
    outer.geometries.iter().filter_map(Geometry::as_polygon).any(|poly| {
        geom.vertices()
            .iter()
            .all(|v| point_in_polygon(v, poly).unwrap_or(false))
    })
}

/// Adds `PartIn(inner, outer)` for every entity lying inside a polygon entity.
/// Mutual containment (identical polygons) keeps only lower id in higher id.
pub fn compute_partin(mut eg: EntityGraph) -> EntityGraph {
    let index = match position_index(&eg, DEFAULT_CELL_SIZE_M) {
        Ok(ix) => ix,
        Err(e) => {
            log::warn!("cannot index entities for containment: {e}");
            return eg;
        }
    };
    let mut found = Vec::new();
    for outer in eg.entities.values() {
        for poly in outer.geometries.iter().filter_map(Geometry::as_polygon) {
            if poly.is_degenerate() {
                log::warn!("skipping zero-area polygon of {:?}", outer.id);
                continue;
            }
            for id in index.query_bbox(&poly.bounds()) {
                if id == outer.id {
                    continue;
                }
                let inner = &eg.entities[&id];
                if contained_in(inner, outer) && !(contained_in(outer, inner) && inner.id > outer.id) {
                    found.push((inner.id.clone(), outer.id.clone()));
                }
            }
        }
    }
    found.sort();
    found.dedup();
    eg.triples.extend(
        found
            .into_iter()
            .map(|(inner, outer)| Triple::new(inner, PART_IN, Term::Entity(outer), Provenance::Reference)),
    );
    eg
}

/// Adds one `Near(a, b)` per unordered pair within `threshold_m`, lower id
/// first.
pub fn compute_near(mut eg: EntityGraph, threshold_m: f64) -> Result<EntityGraph, ReferenceError> {
    if threshold_m.is_nan() || threshold_m <= 0.0 {
        return Err(ReferenceError::Threshold(threshold_m));
    }
    let index = position_index(&eg, DEFAULT_CELL_SIZE_M.max(threshold_m))?;
    let mut pairs = Vec::new();
    for e in eg.entities.values() {
        let Some(p) = e.position() else { continue };
        for (other, d) in index.query_within(&p, threshold_m) {
            if e.id < other {
                pairs.push((e.id.clone(), other, d));
            }
        }
    }
    pairs.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    eg.triples.extend(
        pairs
            .into_iter()
            .map(|(a, b, d)| Triple::new(a, NEAR, Term::Entity(b), Provenance::Reference).at_distance(d)),
    );
    Ok(eg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{geo_distance, BoundingBox, GeoPoint, Polygon};
    use crate::teleontology::presets::reference_etg;
    use crate::time::Interval;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn reference_box() -> ReferenceBox {
        ReferenceBox {
            label: "Trentino".into(),
            region: BoundingBox::new(45.6, 46.6, 10.4, 11.9).unwrap(),
            period: Interval::parse("05-08 22:02:19", "06-06 21:51:22").unwrap(),
        }
    }

    fn place(id: &str, class: &str, geometry: Geometry) -> PlaceRecord {
        PlaceRecord { id: id.into(), name: None, fclass: class.into(), geometry, kind: None }
    }

    fn square(id: &str, lat: f64, lon: f64, half: f64) -> PlaceRecord {
        let poly = Polygon::from_vertices(vec![
            pt(lat - half, lon - half),
            pt(lat - half, lon + half),
            pt(lat + half, lon + half),
            pt(lat + half, lon - half),
        ])
        .unwrap();
        place(id, "park", Geometry::Polygon(poly))
    }

    fn ingest(records: Vec<PlaceRecord>) -> Ingested {
        ingest_reference(records, reference_box(), reference_etg("Trentino", None)).unwrap()
    }

    #[test]
    fn lifts_a_named_restaurant() {
        let mut r = place("p1", "restaurant", Geometry::Point(pt(46.07, 11.12)));
        r.name = Some("Biba's".into());
        let out = ingest(vec![r]);
        let e = out.graph.entity("p1").unwrap();
        assert_eq!(e.class, "restaurant");
        assert_eq!(e.etype, "restaurant");
        assert_eq!(e.name.as_deref(), Some("Biba's"));
        out.graph.validate().unwrap();
    }

    #[test]
    fn drops_out_of_region_and_defaults_unknown_class() {
        let out = ingest(vec![
            place("far", "bank", Geometry::Point(pt(47.5, 11.0))),
            place("odd", "volcano", Geometry::Point(pt(46.0, 11.0))),
        ]);
        assert_eq!(out.dropped_outside, 1);
        assert_eq!(out.defaulted_class, 1);
        assert_eq!(out.graph.entity("odd").unwrap().etype, DEFAULT_PLACE);
    }

    #[test]
    fn empty_and_duplicate_inputs() {
        let out = ingest(vec![]);
        assert!(out.graph.entities.is_empty() && out.graph.triples.is_empty());
        let p = place("p", "bank", Geometry::Point(pt(46.0, 11.0)));
        let err = ingest_reference(vec![p.clone(), p], reference_box(), reference_etg("T", None)).unwrap_err();
        assert_eq!(err, ReferenceError::DuplicateId("p".into()));
    }

    #[test]
    fn partin_single_and_none() {
        let g = compute_partin(
            ingest(vec![square("A", 46.0, 11.0, 0.01), place("x", "bank", Geometry::Point(pt(46.0, 11.0)))]).graph,
        );
        assert_eq!(g.triples.len(), 1);
        assert_eq!(g.triples[0].to_string(), "PartIn(x, A)");

        let g = compute_partin(
            ingest(vec![square("A", 46.0, 11.0, 0.01), place("x", "bank", Geometry::Point(pt(46.2, 11.0)))]).graph,
        );
        assert!(g.triples.is_empty());
    }

    #[test]
    fn partin_nested_matches_brute_force() {
        let records = vec![
            square("A", 46.0, 11.0, 0.01),
            square("B", 46.0, 11.0, 0.05),
            place("x", "bank", Geometry::Point(pt(46.001, 11.002))),
            place("y", "bank", Geometry::Point(pt(46.03, 11.0))),
            place(
                "road",
                "bus_stop",
                Geometry::polyline(vec![pt(46.0, 11.0), pt(46.04, 11.0)]).unwrap(),
            ),
        ];
        let g = compute_partin(ingest(records).graph);
        let got: BTreeSet<_> = g.triples.iter().map(|t| t.to_string()).collect();

        let mut expected = BTreeSet::new();
        for inner in g.entities.values() {
            for outer in g.entities.values() {
                if inner.id == outer.id {
                    continue;
                }
                let Some(poly) = outer.geometries[0].as_polygon() else { continue };
                if inner.geometries[0].vertices().iter().all(|v| point_in_polygon(v, poly).unwrap()) {
                    expected.insert(format!("PartIn({}, {})", inner.id, outer.id));
                }
            }
        }
        assert_eq!(got, expected);
        assert!(got.contains("PartIn(x, A)") && got.contains("PartIn(x, B)") && got.contains("PartIn(A, B)"));
        assert!(got.contains("PartIn(road, B)") && !got.contains("PartIn(road, A)"));
    }

    #[test]
    fn identical_polygons_do_not_form_a_cycle() {
        let g = compute_partin(ingest(vec![square("A", 46.0, 11.0, 0.01), square("B", 46.0, 11.0, 0.01)]).graph);
        let got: Vec<_> = g.triples.iter().map(|t| t.to_string()).collect();
        assert_eq!(got, ["PartIn(A, B)"]);
    }

    #[test]
    fn near_examples() {
        let base = pt(46.07, 11.12);
        let g = ingest(vec![
            place("a", "bank", Geometry::Point(base)),
            place("b", "bank", Geometry::Point(base.offset_m(10.0, 0.0))),
            place("c", "bank", Geometry::Point(base.offset_m(10_000.0, 0.0))),
        ])
        .graph;
        let g = compute_near(g, 100.0).unwrap();
        assert_eq!(g.triples.len(), 1);
        let t = &g.triples[0];
        assert_eq!((t.subject.as_str(), t.object.as_entity()), ("a", Some("b")));
        assert!((t.distance_m.unwrap() - 10.0).abs() < 0.01);
        assert!(g.triples.iter().all(|t| t.validity.is_none() && t.subject != t.object.to_string()));
        assert!(compute_near(g, 0.0).is_err());
    }

    #[test]
    fn near_equals_all_pairs_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let records: Vec<_> = (0..2000)
            .map(|i| {
                let p = pt(rng.random_range(46.0..46.02), rng.random_range(11.0..11.03));
                place(&format!("e{i:04}"), "bank", Geometry::Point(p))
            })
            .collect();
        let g = compute_near(ingest(records).graph, 100.0).unwrap();
        let got: BTreeSet<_> = g.triples.iter().map(|t| (t.subject.clone(), t.object.to_string())).collect();
        let es: Vec<_> = g.entities.values().collect();
        let mut expected = BTreeSet::new();
        for (i, a) in es.iter().enumerate() {
            for b in &es[i + 1..] {
                if geo_distance(&a.position().unwrap(), &b.position().unwrap()) <= 100.0 {
                    expected.insert((a.id.clone(), b.id.clone()));
                }
            }
        }
        assert_eq!(got, expected);
        g.validate().unwrap();
    }
}
