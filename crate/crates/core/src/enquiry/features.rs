use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::Weekday;
use serde::Serialize;

use super::EnquiryError;
use crate::graph::{Entity, Literal};
use crate::io::to_jsonl_bytes;
use crate::personal::{TimedPersonalContext, RESIDENCE_ANSWERS};
use crate::time::Timestamp;
use crate::unify::{qualify, ObservationContext, Resolution, UnificationStats};

/// Building types that make a place a residence.
pub const RESIDENCE_TYPES: &[&str] = &["apartments", "house", "residential"];

const PERSONAL_COLUMNS: &[&str] = &["userid", "timestamp", "day_of_week", "time_of_day", "what", "where", "withWhom", "mood"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Reference,
    Personal,
    Unified,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Reference, Source::Personal, Source::Unified];
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Reference => "reference",
            Source::Personal => "personal",
            Source::Unified => "unified",
        })
    }
}

/// A prediction purpose: a target property plus the feature properties
/// used on a single-source dataset and on the unified one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Purpose {
    pub id: String,
    pub target: String,
    pub features: Vec<String>,
    pub unified_features: Vec<String>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Purpose {
    /// Is a place a residence?
    pub fn e1() -> Self {
        Purpose {
            id: "E1".into(),
            target: "type".into(),
            features: strings(&["name", "class"]),
            unified_features: strings(&["day_of_week", "time_of_day", "name", "class"]),
        }
    }

    /// Is a participant at a living place?
    pub fn e2() -> Self {
        Purpose {
            id: "E2".into(),
            target: "where".into(),
            features: strings(&["what", "withWhom", "mood"]),
            unified_features: strings(&["name", "class", "what", "withWhom", "mood"]),
        }
    }

    /// Is a participant in a bank?
    pub fn e3() -> Self {
        let f = strings(&["what", "where", "withWhom", "mood"]);
        Purpose { id: "E3".into(), target: "class".into(), features: f.clone(), unified_features: f }
    }

    pub fn by_id(id: &str) -> Result<Self, EnquiryError> {
        match id.to_ascii_uppercase().as_str() {
            "E1" => Ok(Self::e1()),
            "E2" => Ok(Self::e2()),
            "E3" => Ok(Self::e3()),
            _ => Err(EnquiryError::UnknownPurpose(id.to_string())),
        }
    }

    pub fn features_for(&self, source: Source) -> &[String] {
        match source {
            Source::Unified => &self.unified_features,
            _ => &self.features,
        }
    }
}

/// True iff the schema holds the target and every feature.
pub fn purpose_feasibility(schema: &BTreeSet<String>, target: &str, features: &[String]) -> bool {
    schema.contains(target) && features.iter().all(|f| schema.contains(f))
}

fn missing(schema: &BTreeSet<String>, target: &str, features: &[String]) -> Vec<String> {
    std::iter::once(target.to_string())
        .chain(features.iter().cloned())
        .filter(|p| !schema.contains(p))
        .collect()
}

/// Properties available in one dataset of the observation context.
///
/// The reference schema comes from the reference ETG; the personal one is the
/// diary record layout and exists only when there are streams; the unified
/// schema is their union once at least one context has been resolved.
pub fn schema_of(obs: &ObservationContext, source: Source) -> BTreeSet<String> {
    let reference = || {
        let mut s: BTreeSet<String> = obs
            .reference
            .etg
            .etypes()
            .iter()
            .flat_map(|e| e.data_properties.iter().map(|p| p.name.to_lowercase()))
            .collect();
        s.insert("etype".into());
        s
    };
    let personal = || -> BTreeSet<String> {
        if obs.streams.is_empty() {
            BTreeSet::new()
        } else {
            PERSONAL_COLUMNS.iter().map(|s| s.to_string()).collect()
        }
    };
    match source {
        Source::Reference => reference(),
        Source::Personal => personal(),
        Source::Unified if obs.resolutions.is_empty() => BTreeSet::new(),
        Source::Unified => reference().into_iter().chain(personal()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub target: Vec<bool>,
}

impl FeatureTable {
    fn new(columns: &[String]) -> Self {
        FeatureTable { columns: columns.to_vec(), rows: Vec::new(), target: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Header plus one line per row, with the boolean `target` last.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = self.columns.iter().map(String::as_str).chain(["target"]).collect();
        w.write_record(&header).expect("in-memory write");
        for (row, t) in self.rows.iter().zip(&self.target) {
            let t = t.to_string();
            w.write_record(row.iter().map(String::as_str).chain([t.as_str()])).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 input")
    }
}

pub fn day_of_week(t: Timestamp) -> &'static str {
    match t.weekday() {
        Weekday::Mon => "Monday",
        Weekday::Tue => "Tuesday",
        Weekday::Wed => "Wednesday",
        Weekday::Thu => "Thursday",
        Weekday::Fri => "Friday",
        Weekday::Sat => "Saturday",
        Weekday::Sun => "Sunday",
    }
}

pub fn time_of_day(t: Timestamp) -> &'static str {
    match t.hour() {
        0..=5 => "night",
        6..=11 => "morning",
        12..=17 => "afternoon",
        _ => "evening",
    }
}

fn entity_value(e: &Entity, property: &str) -> String {
    match property {
        "name" => e.name.clone().unwrap_or_default(),
        "class" => e.class.clone(),
        "etype" => e.etype.clone(),
        "id" => e.id.clone(),
        other => e.properties.get(other).map(Literal::to_string).unwrap_or_default(),
    }
}

fn context_value(c: &TimedPersonalContext, property: &str) -> String {
    let b = &c.battery;
    let opt = |o: &Option<String>| o.clone().unwrap_or_default();
    match property {
        "userid" => c.userid.to_string(),
        "timestamp" => b.timestamp.to_string(),
        "day_of_week" => day_of_week(b.timestamp).into(),
        "time_of_day" => time_of_day(b.timestamp).into(),
        "what" => opt(&b.what),
        "where" => opt(&b.where_),
        "withWhom" => opt(&b.with_whom),
        "mood" => b.mood.map(|m| m.to_string()).unwrap_or_default(),
        _ => String::new(),
    }
}

fn is_residence_type(e: &Entity) -> bool {
    e.properties
        .get("type")
        .is_some_and(|t| RESIDENCE_TYPES.contains(&t.to_string().as_str()))
}

fn resolved_contexts(obs: &ObservationContext) -> Vec<(&TimedPersonalContext, &Entity)> {
    let by_anon: BTreeMap<&str, &Resolution> = obs.resolutions.iter().map(|r| (r.anonymous_id.as_str(), r)).collect();
    obs.streams
        .iter()
        .flat_map(|s| s.contexts.iter())
        .filter_map(|c| {
            let place = c.place()?;
            let r = by_anon.get(qualify(c.userid, &place.id).as_str())?;
            Some((c, obs.reference.entity(&r.reference_id)?))
        })
        .collect()
}

/// Builds the feature table of `purpose` on one dataset.
///
/// Reference rows are places; personal rows are contexts with a `where`
/// answer; unified rows are resolved contexts joined with their place.
pub fn export_features(obs: &ObservationContext, purpose: &Purpose, source: Source) -> Result<FeatureTable, EnquiryError> {
    let schema = schema_of(obs, source);
    let features = purpose.features_for(source);
    let gaps = missing(&schema, &purpose.target, features);
    if !gaps.is_empty() {
        return Err(EnquiryError::Infeasible {
            purpose: purpose.id.clone(),
            dataset: source.to_string(),
            missing: gaps.join(", "),
        });
    }
    let mut table = FeatureTable::new(features);
    let target_of = |c: Option<&TimedPersonalContext>, e: Option<&Entity>| -> Option<bool> {
        match purpose.target.as_str() {
            "type" => e.map(is_residence_type),
            "where" => c.and_then(|c| c.battery.where_.as_deref()).map(|w| RESIDENCE_ANSWERS.contains(&w)),
            "class" => e.map(|e| e.class == "bank"),
            other => {
                let v = match (c, e) {
                    (_, Some(e)) if !entity_value(e, other).is_empty() => entity_value(e, other),
                    (Some(c), _) => context_value(c, other),
                    _ => String::new(),
                };
                (!v.is_empty()).then(|| v == "true")
            }
        }
    };
    let value = |c: Option<&TimedPersonalContext>, e: Option<&Entity>, p: &str| -> String {
        let from_entity = e.map(|e| entity_value(e, p)).filter(|v| !v.is_empty());
        from_entity.or_else(|| c.map(|c| context_value(c, p))).unwrap_or_default()
    };
    let mut push = |c: Option<&TimedPersonalContext>, e: Option<&Entity>| {
        if let Some(t) = target_of(c, e) {
            table.rows.push(features.iter().map(|p| value(c, e, p)).collect());
            table.target.push(t);
        }
    };
    match source {
        Source::Reference => obs.reference.entities.values().for_each(|e| push(None, Some(e))),
        Source::Personal => obs.streams.iter().flat_map(|s| &s.contexts).for_each(|c| push(Some(c), None)),
        Source::Unified => resolved_contexts(obs).into_iter().for_each(|(c, e)| push(Some(c), Some(e))),
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    #[serde(flatten)]
    pub unification: UnificationStats,
    pub reference_export_bytes: usize,
    pub personal_export_bytes: usize,
    pub unified_export_bytes: usize,
}

pub fn reference_export(obs: &ObservationContext) -> Vec<u8> {
    let mut out = to_jsonl_bytes(obs.reference.entities.values());
    out.extend(to_jsonl_bytes(&obs.reference.triples));
    out
}

pub fn personal_export(obs: &ObservationContext) -> Vec<u8> {
    to_jsonl_bytes(obs.streams.iter().flat_map(|s| &s.contexts))
}

pub fn unified_export(obs: &ObservationContext) -> Vec<u8> {
    let u = obs.unified_export();
    let mut out = to_jsonl_bytes(&u.entities);
    out.extend(to_jsonl_bytes(&u.contexts));
    out.extend(to_jsonl_bytes(&u.derived));
    out.extend(to_jsonl_bytes(&u.resolutions));
    out
}

pub fn stats(obs: &ObservationContext) -> StatsReport {
    StatsReport {
        unification: obs.stats.clone(),
        reference_export_bytes: reference_export(obs).len(),
        personal_export_bytes: personal_export(obs).len(),
        unified_export_bytes: unified_export(obs).len(),
    }
}
