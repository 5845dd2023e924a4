//! Context unification: schema alignment between personal and reference
//! etypes, spatio-temporal matching against reference places, etype-constrained
//! entity resolution, and pairwise matching between participants.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{geo_distance, GeoError, SpatialIndex, DEFAULT_CELL_SIZE_M};
use crate::graph::{Entity, EntityGraph, Provenance, ReferenceBox, Term, Triple};
use crate::personal::{me_id, Participant, PersonalStream, TimedPersonalContext};
use crate::reference::NEAR;
use crate::teleontology::Teleontology;
use crate::time::Interval;

pub const SAME_AS: &str = "SameAs";
pub const SAME_ENTITY: &str = "SameEntity";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnifyError {
    #[error("mapping refers to unknown {side} etype {name:?}")]
    UnknownEtype { side: &'static str, name: String },
    #[error("mapping refers to unknown {side} property {name:?}")]
    UnknownProperty { side: &'static str, name: String },
    #[error("stream of user {userid} covers period {found}, but the reference period is {expected}")]
    PeriodMismatch { userid: Participant, found: Interval, expected: Interval },
    #[error("user {0} has more than one stream")]
    DuplicateStream(Participant),
    #[error("{name} must be positive, got {value}")]
    Param { name: &'static str, value: f64 },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EtypePair {
    pub personal: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyPair {
    pub personal: String,
    pub reference: String,
}

/// Hand-written correspondence between personal and reference schema terms.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingConfig {
    pub etypes: Vec<EtypePair>,
    pub properties: Vec<PropertyPair>,
}

impl MappingConfig {
    /// Pairs between the preset personal places and OSM-style classes.
    pub fn preset() -> Self {
        let pairs = [
            ("Restaurant", "restaurant"),
            ("Bank", "bank"),
            ("Shop", "supermarket"),
            ("Pub", "pub"),
            ("Pub", "bar"),
            ("Library", "library"),
            ("University", "university"),
            ("Classroom", "university"),
            ("Classroom", "school"),
            ("Home", "building"),
            ("House", "building"),
            ("SportsCentre", "sports_centre"),
            ("Outdoors", "park"),
        ];
        MappingConfig {
            etypes: pairs
                .iter()
                .map(|(p, r)| EtypePair { personal: p.to_string(), reference: r.to_string() })
                .collect(),
            properties: ["Name", "Coordinates"]
                .iter()
                .map(|p| PropertyPair { personal: p.to_string(), reference: p.to_string() })
                .collect(),
        }
    }
}

/// Bidirectional schema lookup produced by [`epu_align`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub personal_to_reference: BTreeMap<String, BTreeSet<String>>,
    pub reference_to_personal: BTreeMap<String, BTreeSet<String>>,
    pub property_personal_to_reference: BTreeMap<String, BTreeSet<String>>,
    pub property_reference_to_personal: BTreeMap<String, BTreeSet<String>>,
    pub unaligned_personal: Vec<String>,
    pub unaligned_reference: Vec<String>,
    /// Reference KTLO used to accept subtypes of an aligned etype.
    #[serde(skip)]
    subsumption: Option<Teleontology>,
}

impl Alignment {
    pub fn with_subsumption(mut self, reference_ktlo: Teleontology) -> Self {
        self.subsumption = Some(reference_ktlo);
        self
    }

    pub fn reference_for(&self, personal_etype: &str) -> impl Iterator<Item = &str> {
        self.personal_to_reference.get(personal_etype).into_iter().flatten().map(String::as_str)
    }

    pub fn personal_for(&self, reference_etype: &str) -> impl Iterator<Item = &str> {
        self.reference_to_personal.get(reference_etype).into_iter().flatten().map(String::as_str)
    }

    /// Whether a reference entity of `reference_etype` can stand for an
    /// anonymous personal entity of `personal_etype`.
    pub fn compatible(&self, personal_etype: &str, reference_etype: &str) -> bool {
        self.reference_for(personal_etype).any(|r| {
            r == reference_etype || self.subsumption.as_ref().is_some_and(|k| k.is_subtype(reference_etype, r))
        })
    }
}

fn property_names(t: &Teleontology) -> BTreeSet<String> {
    t.etypes()
        .iter()
        .flat_map(|e| {
            e.data_properties
                .iter()
                .map(|p| p.name.clone())
                .chain(e.object_properties.iter().map(|p| p.name.clone()))
        })
        .collect()
}

pub fn epu_align(
    personal_etg: &Teleontology,
    reference_etg: &Teleontology,
    mapping: &MappingConfig,
) -> Result<Alignment, UnifyError> {
    let mut al = Alignment::default();
    for pair in &mapping.etypes {
        if personal_etg.etype(&pair.personal).is_none() {
            return Err(UnifyError::UnknownEtype { side: "personal", name: pair.personal.clone() });
        }
        if reference_etg.etype(&pair.reference).is_none() {
            return Err(UnifyError::UnknownEtype { side: "reference", name: pair.reference.clone() });
        }
        al.personal_to_reference.entry(pair.personal.clone()).or_default().insert(pair.reference.clone());
        al.reference_to_personal.entry(pair.reference.clone()).or_default().insert(pair.personal.clone());
    }
    let (pp, rp) = (property_names(personal_etg), property_names(reference_etg));
    for pair in &mapping.properties {
        if !pp.contains(&pair.personal) {
            return Err(UnifyError::UnknownProperty { side: "personal", name: pair.personal.clone() });
        }
        if !rp.contains(&pair.reference) {
            return Err(UnifyError::UnknownProperty { side: "reference", name: pair.reference.clone() });
        }
        al.property_personal_to_reference
            .entry(pair.personal.clone())
            .or_default()
            .insert(pair.reference.clone());
        al.property_reference_to_personal
            .entry(pair.reference.clone())
            .or_default()
            .insert(pair.personal.clone());
    }
    al.unaligned_personal = personal_etg
        .etypes()
        .iter()
        .filter(|e| !al.personal_to_reference.contains_key(&e.id))
        .map(|e| e.id.clone())
        .collect();
    al.unaligned_reference = reference_etg
        .etypes()
        .iter()
        .filter(|e| !al.reference_to_personal.contains_key(&e.id))
        .map(|e| e.id.clone())
        .collect();
    if !al.unaligned_personal.is_empty() {
        log::info!("unaligned personal etypes: {}", al.unaligned_personal.join(", "));
    }
    Ok(al)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnificationParams {
    /// Inclusive distance bound for `Near`.
    pub near_threshold_m: f64,
    pub coidentity_eps_m: f64,
    pub coidentity_min_overlap: usize,
    /// Prefer candidates whose name matches a named anonymous place.
    pub name_prefilter: bool,
}

impl Default for UnificationParams {
    fn default() -> Self {
        UnificationParams {
            near_threshold_m: 50.0,
            coidentity_eps_m: 25.0,
            coidentity_min_overlap: 10,
            name_prefilter: false,
        }
    }
}

impl UnificationParams {
    pub fn validate(&self) -> Result<(), UnifyError> {
        for (name, value) in [("near_threshold_m", self.near_threshold_m), ("coidentity_eps_m", self.coidentity_eps_m)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(UnifyError::Param { name, value });
            }
        }
        if self.coidentity_min_overlap == 0 {
            return Err(UnifyError::Param { name: "coidentity_min_overlap", value: 0.0 });
        }
        Ok(())
    }
}

/// Globally unique id of an anonymous entity, e.g. `User73#Restaurant1`.
pub fn qualify(userid: Participant, local_id: &str) -> String {
    format!("{}{local_id}", me_id(userid))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub anonymous_id: String,
    pub reference_id: String,
    pub distance_m: f64,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UnificationStats {
    pub reference_entity_count: usize,
    pub stream_count: usize,
    pub context_count: usize,
    pub unified_context_count: usize,
    pub derived_relation_count: usize,
    pub matched_reference_entity_count: usize,
    pub coverage_fraction: f64,
    pub same_entity_pairs: usize,
    /// Derived triples per predicate.
    pub breakdown: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationContext {
    pub reference: EntityGraph,
    pub streams: Vec<PersonalStream>,
    pub derived: Vec<Triple>,
    pub resolutions: Vec<Resolution>,
    pub stats: UnificationStats,
}

/// Index over the representative points of all reference entities.
pub fn reference_index(reference: &EntityGraph) -> Result<SpatialIndex<String>, UnifyError> {
    Ok(SpatialIndex::build(
        reference.box_meta.region,
        DEFAULT_CELL_SIZE_M,
        reference.entities.values().filter_map(|e| e.position().map(|p| (e.id.clone(), p))),
    )?)
}

/// Reference entities within the near threshold of the context's position,
/// nearest first.
pub fn near_places(ctx: &TimedPersonalContext, ix: &SpatialIndex<String>, params: &UnificationParams) -> Vec<(String, f64)> {
    match &ctx.position {
        Some(p) => ix.query_within(p, params.near_threshold_m),
        None => Vec::new(),
    }
}

/// One derived `Near(me, place, ΔT)` per reference entity within range.
pub fn stu_near(ctx: &TimedPersonalContext, ix: &SpatialIndex<String>, params: &UnificationParams) -> Vec<Triple> {
    near_triples(ctx, &near_places(ctx, ix, params))
}

fn near_triples(ctx: &TimedPersonalContext, near: &[(String, f64)]) -> Vec<Triple> {
    near.iter()
        .map(|(id, d)| {
            Triple::new(ctx.me(), NEAR, Term::entity(id), Provenance::Derived)
                .during(ctx.interval)
                .at_distance(*d)
        })
        .collect()
}

fn names_match(a: &str, b: &Entity) -> bool {
    b.name.as_deref().is_some_and(|n| n.trim().eq_ignore_ascii_case(a.trim()))
}

/// Picks the closest etype-compatible candidate for the context's anonymous
/// place. `near` must be sorted by distance, then id.
pub fn eu_resolve(
    ctx: &TimedPersonalContext,
    near: &[(String, f64)],
    reference: &EntityGraph,
    alignment: &Alignment,
    params: &UnificationParams,
) -> Option<Resolution> {
    let place = ctx.place()?;
    let compatible: Vec<(&String, f64, &Entity)> = near
        .iter()
        .filter_map(|(id, d)| reference.entity(id).map(|e| (id, *d, e)))
        .filter(|(_, _, e)| alignment.compatible(&place.etype, &e.etype))
        .collect();
    let named = match (&place.name, params.name_prefilter) {
        (Some(name), true) => compatible.iter().filter(|(_, _, e)| names_match(name, e)).cloned().collect(),
        _ => Vec::new(),
    };
    let pool = if named.is_empty() { &compatible } else { &named };
    pool.first().map(|(id, d, _)| Resolution {
        anonymous_id: qualify(ctx.userid, &place.id),
        reference_id: (*id).clone(),
        distance_m: *d,
        interval: ctx.interval,
    })
}

/// Derived triples for one resolved context: `Near` to every place in range,
/// `SameAs` from the anonymous place, and `Near` from each companion.
fn resolved_triples(ctx: &TimedPersonalContext, near: &[(String, f64)], r: &Resolution) -> Vec<Triple> {
    let mut out = near_triples(ctx, near);
    out.push(
        Triple::new(&r.anonymous_id, SAME_AS, Term::entity(&r.reference_id), Provenance::Derived).during(ctx.interval),
    );
    for person in ctx.persons() {
        out.push(
            Triple::new(qualify(ctx.userid, &person.id), NEAR, Term::entity(&r.reference_id), Provenance::Derived)
                .during(ctx.interval)
                .at_distance(r.distance_m),
        );
    }
    out
}

fn overlapping_pairs(a: &PersonalStream, b: &PersonalStream) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..b.contexts.len()).collect();
    order.sort_by_key(|&j| (b.contexts[j].interval.start, j));
    let max_len = b.contexts.iter().map(|c| c.interval.duration_secs()).max().unwrap_or(0);
    let mut pairs = Vec::new();
    for (i, ca) in a.contexts.iter().enumerate() {
        let from = ca.interval.start.plus_seconds(-max_len);
        let lo = order.partition_point(|&j| b.contexts[j].interval.start < from);
        for &j in &order[lo..] {
            let cb = &b.contexts[j];
            if cb.interval.start >= ca.interval.end {
                break;
            }
            if ca.interval.overlaps_strictly(&cb.interval) {
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Compares two participants over every pair of positively overlapping,
/// located contexts. Enough overlaps, all within `coidentity_eps_m`, yield a
/// single `SameEntity`; otherwise each close pair yields a `Near` between the
/// two participants over the shared time.
pub fn stu_coidentity(a: &PersonalStream, b: &PersonalStream, params: &UnificationParams) -> Vec<Triple> {
    let (a, b) = if a.userid <= b.userid { (a, b) } else { (b, a) };
    let measured: Vec<(Interval, f64)> = overlapping_pairs(a, b)
        .into_iter()
        .filter_map(|(i, j)| {
            let (ca, cb) = (&a.contexts[i], &b.contexts[j]);
            let d = geo_distance(ca.position.as_ref()?, cb.position.as_ref()?);
            Some((ca.interval.intersection(&cb.interval).expect("pair overlaps"), d))
        })
        .collect();
    let (ua, ub) = (me_id(a.userid), me_id(b.userid));
    if measured.len() >= params.coidentity_min_overlap && measured.iter().all(|(_, d)| *d <= params.coidentity_eps_m) {
        let span = measured.iter().map(|(iv, _)| *iv).reduce(|x, y| x.hull(&y)).expect("non-empty");
        return vec![Triple::new(ua, SAME_ENTITY, Term::entity(ub), Provenance::Derived).during(span)];
    }
    measured
        .into_iter()
        .filter(|(_, d)| *d <= params.near_threshold_m)
        .map(|(iv, d)| {
            Triple::new(&ua, NEAR, Term::entity(&ub), Provenance::Derived)
                .during(iv)
                .at_distance(d)
        })
        .collect()
}

/// Unifies the reference graph with every personal stream: first each stream
/// on its own against the reference places, then every pair of streams.
pub fn unify(
    reference: EntityGraph,
    streams: Vec<PersonalStream>,
    alignment: &Alignment,
    params: &UnificationParams,
) -> Result<ObservationContext, UnifyError> {
    params.validate()?;
    let expected = reference.box_meta.period;
    let mut seen = BTreeSet::new();
    for s in &streams {
        if s.period != expected {
            return Err(UnifyError::PeriodMismatch { userid: s.userid, found: s.period, expected });
        }
        if !seen.insert(s.userid) {
            return Err(UnifyError::DuplicateStream(s.userid));
        }
    }
    let ix = reference_index(&reference)?;

    let phase1: Vec<(Vec<Triple>, Vec<Resolution>)> = streams
        .par_iter()
        .map(|s| {
            let mut triples = Vec::new();
            let mut resolutions = Vec::new();
            for ctx in &s.contexts {
                let near = near_places(ctx, &ix, params);
                if let Some(r) = eu_resolve(ctx, &near, &reference, alignment, params) {
                    triples.extend(resolved_triples(ctx, &near, &r));
                    resolutions.push(r);
                }
            }
            (triples, resolutions)
        })
        .collect();
    let mut derived = Vec::new();
    let mut resolutions = Vec::new();
    for (t, r) in phase1 {
        derived.extend(t);
        resolutions.extend(r);
    }

    let pairs: Vec<(usize, usize)> = (0..streams.len())
        .flat_map(|i| (i + 1..streams.len()).map(move |j| (i, j)))
        .collect();
    let phase2: Vec<Vec<Triple>> = pairs
        .par_iter()
        .map(|&(i, j)| stu_coidentity(&streams[i], &streams[j], params))
        .collect();
    derived.extend(phase2.into_iter().flatten());

    let stats = compute_stats(&reference, &streams, &derived, &resolutions);
    Ok(ObservationContext { reference, streams, derived, resolutions, stats })
}

pub fn compute_stats(
    reference: &EntityGraph,
    streams: &[PersonalStream],
    derived: &[Triple],
    resolutions: &[Resolution],
) -> UnificationStats {
    let context_count = streams.iter().map(|s| s.contexts.len()).sum();
    let matched: BTreeSet<&str> = resolutions.iter().map(|r| r.reference_id.as_str()).collect();
    let mut breakdown = BTreeMap::new();
    for t in derived {
        *breakdown.entry(t.predicate.clone()).or_insert(0) += 1;
    }
    UnificationStats {
        reference_entity_count: reference.entities.len(),
        stream_count: streams.len(),
        context_count,
        unified_context_count: resolutions.len(),
        derived_relation_count: derived.len(),
        matched_reference_entity_count: matched.len(),
        coverage_fraction: if context_count == 0 { 0.0 } else { resolutions.len() as f64 / context_count as f64 },
        same_entity_pairs: derived.iter().filter(|t| t.predicate == SAME_ENTITY).count(),
        breakdown,
    }
}

/// The unified dataset alone: matched places, resolved contexts and the
/// triples linking them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedExport {
    #[serde(rename = "box")]
    pub box_meta: ReferenceBox,
    pub entities: Vec<Entity>,
    pub contexts: Vec<TimedPersonalContext>,
    pub derived: Vec<Triple>,
    pub resolutions: Vec<Resolution>,
}

impl ObservationContext {
    pub fn unified_export(&self) -> UnifiedExport {
        let matched: BTreeSet<&str> = self.resolutions.iter().map(|r| r.reference_id.as_str()).collect();
        let resolved: BTreeSet<&str> = self.resolutions.iter().map(|r| r.anonymous_id.as_str()).collect();
        let contexts = self
            .streams
            .iter()
            .flat_map(|s| s.contexts.iter())
            .filter(|c| c.place().is_some_and(|p| resolved.contains(qualify(c.userid, &p.id).as_str())))
            .cloned()
            .collect();
        UnifiedExport {
            box_meta: self.reference.box_meta.clone(),
            entities: matched.iter().filter_map(|id| self.reference.entity(id).cloned()).collect(),
            contexts,
            derived: self.derived.clone(),
            resolutions: self.resolutions.clone(),
        }
    }

    /// Reference triples are timeless, personal and derived validity
    /// intervals stay inside the reference period, and every resolution
    /// points at a reference entity.
    pub fn check_invariants(&self) -> Result<(), String> {
        let period = self.reference.box_meta.period;
        if let Some(t) = self.reference.triples.iter().find(|t| t.validity.is_some()) {
            return Err(format!("reference triple {t} carries a validity interval"));
        }
        for s in &self.streams {
            for c in &s.contexts {
                if !period.contains_interval(&c.interval) {
                    return Err(format!("context of user {} at {} leaves the period", c.userid, c.interval));
                }
                for t in &c.triples {
                    if t.validity.is_some_and(|v| !c.interval.contains_interval(&v)) {
                        return Err(format!("personal triple {t} escapes its context interval"));
                    }
                }
            }
        }
        for t in &self.derived {
            match t.validity {
                None => return Err(format!("derived triple {t} has no validity interval")),
                Some(v) if !period.contains_interval(&v) => {
                    return Err(format!("derived triple {t} leaves the period"));
                }
                _ => {}
            }
        }
        if let Some(r) = self.resolutions.iter().find(|r| self.reference.entity(&r.reference_id).is_none()) {
            return Err(format!("resolution {} targets unknown entity {}", r.anonymous_id, r.reference_id));
        }
        Ok(())
    }
}
