//! Enquiries over an observation context: triple-pattern matching with
//! temporal filters, and classification by which contexts an answer draws on.

mod features;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::Weekday;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Provenance, Term, Triple};
use crate::personal::{me_id, Participant, PERSON_ETYPE};
use crate::reference::NEAR;
use crate::time::{Interval, Timestamp};
use crate::unify::{qualify, ObservationContext};

pub use features::{
    day_of_week, export_features, personal_export, purpose_feasibility, reference_export, schema_of, stats,
    time_of_day, unified_export, FeatureTable, Purpose, Source, StatsReport, RESIDENCE_TYPES,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnquiryError {
    #[error("enquiry has no patterns")]
    NoPatterns,
    #[error("selected variable {0} does not occur in any pattern")]
    UnboundSelect(String),
    #[error("bad term {0:?}")]
    BadTerm(String),
    #[error("unknown weekday {0:?}")]
    Weekday(String),
    #[error("{purpose} is infeasible on the {dataset} dataset: missing {missing}")]
    Infeasible { purpose: String, dataset: String, missing: String },
    #[error("unknown purpose {0:?}, expected E1, E2 or E3")]
    UnknownPurpose(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EnquiryClass {
    R,
    P,
    PR,
    RP,
}

impl fmt::Display for EnquiryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A stored fact: a triple with its anonymous ids made globally unique and
/// the participants it concerns.
#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub subject: String,
    pub predicate: String,
    pub object: Term,
    pub validity: Option<Interval>,
    pub provenance: Provenance,
    pub users: BTreeSet<Participant>,
    /// Whether either end is a reference entity.
    pub touches_reference: bool,
}

/// Read-only fact index built from an observation context.
///
/// Besides the graph triples it holds attribute facts: `Name`, `Class`,
/// `Etype` and each stored property for reference entities; `Etype` and
/// `Label` for anonymous entities; `Etype(UserN, Person)` for participants.
/// `Near` between two places or two participants is stored both ways.
pub struct EnquiryStore {
    facts: Vec<Fact>,
    by_predicate: HashMap<String, Vec<usize>>,
    by_subject: HashMap<String, Vec<usize>>,
    by_object: HashMap<String, Vec<usize>>,
    reference_ids: BTreeSet<String>,
    user_ids: BTreeMap<String, Participant>,
}

fn term_key(t: &Term) -> String {
    match t {
        Term::Entity(id) => id.clone(),
        Term::Literal(l) => l.to_string(),
    }
}

impl EnquiryStore {
    pub fn new(obs: &ObservationContext) -> Self {
        let reference_ids: BTreeSet<String> = obs.reference.entities.keys().cloned().collect();
        let user_ids: BTreeMap<String, Participant> = obs.streams.iter().map(|s| (me_id(s.userid), s.userid)).collect();
        let mut store = EnquiryStore {
            facts: Vec::new(),
            by_predicate: HashMap::new(),
            by_subject: HashMap::new(),
            by_object: HashMap::new(),
            reference_ids,
            user_ids,
        };
        let r = &obs.reference;
        for t in &r.triples {
            store.push(t.subject.clone(), &t.predicate, t.object.clone(), t.validity, t.provenance);
        }
        for e in r.entities.values() {
            let mut attr = |p: &str, v: &str| {
                store.push(e.id.clone(), p, Term::lit(v), None, Provenance::Reference);
            };
            if let Some(n) = &e.name {
                attr("Name", n);
            }
            attr("Class", &e.class);
            attr("Etype", &e.etype);
            for (k, v) in &e.properties {
                attr(k, &v.to_string());
            }
        }
        for s in &obs.streams {
            let me = me_id(s.userid);
            store.push(me, "Etype", Term::lit(PERSON_ETYPE), Some(s.period), Provenance::Personal);
            for c in &s.contexts {
                let q = |id: &str| if id.starts_with('#') { qualify(c.userid, id) } else { id.to_string() };
                for t in &c.triples {
                    let object = match &t.object {
                        Term::Entity(id) => Term::Entity(q(id)),
                        lit => lit.clone(),
                    };
                    store.push(q(&t.subject), &t.predicate, object, Some(t.validity.unwrap_or(c.interval)), t.provenance);
                }
                for a in &c.anonymous {
                    let id = q(&a.id);
                    store.push(id.clone(), "Etype", Term::lit(a.etype.as_str()), Some(c.interval), Provenance::Personal);
                    store.push(id, "Label", Term::lit(a.label.as_str()), Some(c.interval), Provenance::Personal);
                }
            }
        }
        for t in &obs.derived {
            store.push(t.subject.clone(), &t.predicate, t.object.clone(), t.validity, t.provenance);
        }
        store
    }

    fn user_of(&self, id: &str) -> Option<Participant> {
        let me = id.split('#').next()?;
        self.user_ids.get(me).copied()
    }

    fn push(&mut self, subject: String, predicate: &str, object: Term, validity: Option<Interval>, provenance: Provenance) {
        let mut users = BTreeSet::new();
        let mut touches_reference = provenance == Provenance::Reference;
        for id in std::iter::once(subject.as_str()).chain(object.as_entity()) {
            if let Some(u) = self.user_of(id) {
                users.insert(u);
            }
            touches_reference |= self.reference_ids.contains(id);
        }
        let symmetric = predicate == NEAR
            && (provenance == Provenance::Reference || users.len() == 2 && self.user_ids.contains_key(&subject));
        self.index_fact(subject.clone(), predicate, object.clone(), validity, provenance, users.clone(), touches_reference);
        if symmetric {
            if let Term::Entity(other) = object {
                self.index_fact(other, predicate, Term::Entity(subject), validity, provenance, users, touches_reference);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn index_fact(
        &mut self,
        subject: String,
        predicate: &str,
        object: Term,
        validity: Option<Interval>,
        provenance: Provenance,
        users: BTreeSet<Participant>,
        touches_reference: bool,
    ) {
        let i = self.facts.len();
        self.by_predicate.entry(predicate.to_string()).or_default().push(i);
        self.by_subject.entry(subject.clone()).or_default().push(i);
        self.by_object.entry(term_key(&object)).or_default().push(i);
        self.facts.push(Fact {
            subject,
            predicate: predicate.to_string(),
            object,
            validity,
            provenance,
            users,
            touches_reference,
        });
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn is_reference_entity(&self, id: &str) -> bool {
        self.reference_ids.contains(id)
    }

    pub fn is_user(&self, id: &str) -> bool {
        self.user_ids.contains_key(id)
    }
}

/// A pattern position: `?name` is a variable, anything else a constant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternTerm {
    Var(String),
    Const(String),
}

impl FromStr for PatternTerm {
    type Err = EnquiryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix('?') {
            Some("") => Err(EnquiryError::BadTerm(s.to_string())),
            Some(_) => Ok(PatternTerm::Var(s.to_string())),
            None if s.is_empty() => Err(EnquiryError::BadTerm(s.to_string())),
            None => Ok(PatternTerm::Const(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enquiry {
    #[serde(default)]
    pub name: String,
    pub patterns: Vec<[String; 3]>,
    /// Timed facts must overlap this interval.
    #[serde(default)]
    pub during: Option<Interval>,
    /// Timed facts must touch one of these weekdays, e.g. `["Sat", "Sun"]`.
    #[serde(default)]
    pub days: Vec<String>,
    /// Only facts about these participants (reference facts always apply).
    #[serde(default)]
    pub users: Option<BTreeSet<Participant>>,
    /// Answer variables; all variables when empty.
    #[serde(default)]
    pub select: Vec<String>,
    /// Every timed fact of a solution must share a common instant.
    #[serde(default)]
    pub same_time: bool,
    /// The answer is the number of distinct selected bindings.
    #[serde(default)]
    pub count: bool,
}

struct Compiled {
    patterns: Vec<[PatternTerm; 3]>,
    days: Vec<Weekday>,
    select: Vec<String>,
}

impl Enquiry {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn variables(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for p in &self.patterns {
            for t in p {
                if t.starts_with('?') && !seen.contains(t) {
                    seen.push(t.clone());
                }
            }
        }
        seen
    }

    fn compile(&self) -> Result<Compiled, EnquiryError> {
        if self.patterns.is_empty() {
            return Err(EnquiryError::NoPatterns);
        }
        let patterns = self
            .patterns
            .iter()
            .map(|[s, p, o]| Ok([s.parse()?, p.parse()?, o.parse()?]))
            .collect::<Result<Vec<[PatternTerm; 3]>, EnquiryError>>()?;
        let vars = self.variables();
        for v in &self.select {
            if !vars.contains(v) {
                return Err(EnquiryError::UnboundSelect(v.clone()));
            }
        }
        let days = self
            .days
            .iter()
            .map(|d| d.parse::<Weekday>().map_err(|_| EnquiryError::Weekday(d.clone())))
            .collect::<Result<_, _>>()?;
        let select = if self.select.is_empty() { vars } else { self.select.clone() };
        Ok(Compiled { patterns, days, select })
    }

    pub fn validate(&self) -> Result<(), EnquiryError> {
        self.compile().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Bindings {
    pub columns: Vec<String>,
    /// Distinct rows, sorted lexicographically.
    pub rows: Vec<Vec<String>>,
}

impl Bindings {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| c.trim_start_matches('?'))).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 input")
    }
}

const DAY_SECS: i64 = 86_400;

fn touches_days(iv: &Interval, days: &[Weekday]) -> bool {
    let (first, last) = (iv.start.seconds().div_euclid(DAY_SECS), iv.end.seconds().div_euclid(DAY_SECS));
    (first..=last.min(first + 6)).any(|d| days.contains(&Timestamp::from_seconds(d * DAY_SECS).weekday()))
}

struct Solver<'a> {
    store: &'a EnquiryStore,
    enquiry: &'a Enquiry,
    compiled: &'a Compiled,
}

type Solution = (BTreeMap<String, String>, Vec<usize>);

impl Solver<'_> {
    fn admissible(&self, f: &Fact) -> bool {
        if let Some(users) = &self.enquiry.users {
            if f.provenance != Provenance::Reference && !f.users.is_subset(users) {
                return false;
            }
        }
        match f.validity {
            None => true,
            Some(v) => {
                self.enquiry.during.is_none_or(|d| d.overlaps(&v))
                    && (self.compiled.days.is_empty() || touches_days(&v, &self.compiled.days))
            }
        }
    }

    fn resolve<'b>(t: &'b PatternTerm, b: &'b BTreeMap<String, String>) -> Option<&'b str> {
        match t {
            PatternTerm::Const(c) => Some(c),
            PatternTerm::Var(v) => b.get(v).map(String::as_str),
        }
    }

    fn candidates(&self, pat: &[PatternTerm; 3], b: &BTreeMap<String, String>) -> Vec<usize> {
        let s = &self.store;
        let mut lists: Vec<&Vec<usize>> = Vec::new();
        let empty = Vec::new();
        if let Some(p) = Self::resolve(&pat[1], b) {
            lists.push(s.by_predicate.get(p).unwrap_or(&empty));
        }
        if let Some(x) = Self::resolve(&pat[0], b) {
            lists.push(s.by_subject.get(x).unwrap_or(&empty));
        }
        if let Some(x) = Self::resolve(&pat[2], b) {
            lists.push(s.by_object.get(x).unwrap_or(&empty));
        }
        match lists.into_iter().min_by_key(|l| l.len()) {
            Some(l) => l.clone(),
            None => (0..s.facts.len()).collect(),
        }
    }

    fn unify_term(t: &PatternTerm, value: &str, b: &mut BTreeMap<String, String>) -> bool {
        match t {
            PatternTerm::Const(c) => c == value,
            PatternTerm::Var(v) => match b.get(v) {
                Some(bound) => bound == value,
                None => {
                    b.insert(v.clone(), value.to_string());
                    true
                }
            },
        }
    }

    fn matches(&self, pat: &[PatternTerm; 3], f: &Fact, b: &BTreeMap<String, String>) -> Option<BTreeMap<String, String>> {
        let mut b = b.clone();
        (Self::unify_term(&pat[0], &f.subject, &mut b)
            && Self::unify_term(&pat[1], &f.predicate, &mut b)
            && Self::unify_term(&pat[2], &term_key(&f.object), &mut b))
        .then_some(b)
    }

    fn search(
        &self,
        depth: usize,
        b: &BTreeMap<String, String>,
        used: &mut Vec<usize>,
        common: Option<Interval>,
        out: &mut Vec<Solution>,
    ) {
        let Some(pat) = self.compiled.patterns.get(depth) else {
            out.push((b.clone(), used.clone()));
            return;
        };
        for i in self.candidates(pat, b) {
            let f = &self.store.facts[i];
            if !self.admissible(f) {
                continue;
            }
            let mut shared = common;
            if self.enquiry.same_time {
                if let Some(v) = f.validity {
                    shared = match common {
                        None => Some(v),
                        Some(c) => match c.intersection(&v) {
                            Some(x) => Some(x),
                            None => continue,
                        },
                    };
                }
            }
            if let Some(next) = self.matches(pat, f, b) {
                used.push(i);
                self.search(depth + 1, &next, used, shared, out);
                used.pop();
            }
        }
    }
}

fn solve(e: &Enquiry, store: &EnquiryStore) -> Result<(Compiled, Vec<Solution>), EnquiryError> {
    let compiled = e.compile()?;
    for [_, p, _] in &compiled.patterns {
        if let PatternTerm::Const(p) = p {
            if !store.by_predicate.contains_key(p) {
                log::warn!("enquiry {:?}: unknown predicate {p:?}", e.name);
                return Ok((compiled, Vec::new()));
            }
        }
    }
    let mut out = Vec::new();
    Solver { store, enquiry: e, compiled: &compiled }.search(0, &BTreeMap::new(), &mut Vec::new(), None, &mut out);
    Ok((compiled, out))
}

/// All distinct bindings of the selected variables, sorted.
pub fn evaluate(e: &Enquiry, store: &EnquiryStore) -> Result<Bindings, EnquiryError> {
    let (compiled, solutions) = solve(e, store)?;
    let rows: BTreeSet<Vec<String>> = solutions
        .iter()
        .map(|(b, _)| compiled.select.iter().map(|v| b[v].clone()).collect())
        .collect();
    Ok(Bindings { columns: compiled.select, rows: rows.into_iter().collect() })
}

/// R when only reference facts are involved, P when only one participant's
/// personal facts are. Mixed enquiries are PR when the answer describes the
/// reference side and RP when it describes participants.
///
/// A plain enquiry's answer side is where its selected variables bind. A
/// count describes the reference side when it counts reference values, or
/// when it anchors on a reference entity and names no participant.
pub fn classify_enquiry(e: &Enquiry, store: &EnquiryStore) -> Result<EnquiryClass, EnquiryError> {
    let (compiled, solutions) = solve(e, store)?;
    let consts: Vec<&str> = compiled
        .patterns
        .iter()
        .flat_map(|p| [&p[0], &p[2]])
        .filter_map(|t| match t {
            PatternTerm::Const(c) => Some(c.as_str()),
            PatternTerm::Var(_) => None,
        })
        .collect();
    let names_user = consts.iter().any(|c| store.user_of(c).is_some());
    let anchors_reference = consts.iter().any(|c| store.is_reference_entity(c));

    let involved: BTreeSet<usize> = if solutions.is_empty() {
        // no answer: judge by what each pattern could touch on its own
        let solver = Solver { store, enquiry: e, compiled: &compiled };
        compiled
            .patterns
            .iter()
            .flat_map(|p| {
                solver
                    .candidates(p, &BTreeMap::new())
                    .into_iter()
                    .filter(|&i| solver.admissible(&store.facts[i]) && solver.matches(p, &store.facts[i], &BTreeMap::new()).is_some())
                    .collect::<Vec<_>>()
            })
            .collect()
    } else {
        solutions.iter().flat_map(|(_, used)| used.iter().copied()).collect()
    };
    if involved.is_empty() {
        return Ok(if names_user { EnquiryClass::P } else { EnquiryClass::R });
    }
    let facts: Vec<&Fact> = involved.iter().map(|&i| &store.facts[i]).collect();
    let reference = facts.iter().any(|f| f.touches_reference);
    let users: BTreeSet<Participant> = facts.iter().flat_map(|f| f.users.iter().copied()).collect();
    let personal = facts.iter().any(|f| f.provenance != Provenance::Reference);
    if !personal {
        return Ok(EnquiryClass::R);
    }
    if !reference && users.len() <= 1 {
        return Ok(EnquiryClass::P);
    }

    let reference_side = |var: &str| {
        solutions.iter().all(|(b, used)| {
            let value = &b[var];
            store.is_reference_entity(value)
                || used.iter().zip(&compiled.patterns).any(|(&i, p)| {
                    store.facts[i].provenance == Provenance::Reference
                        && p.iter().any(|t| matches!(t, PatternTerm::Var(v) if v == var))
                })
        })
    };
    let answers_reference = !solutions.is_empty() && compiled.select.iter().all(|v| reference_side(v));
    let class = if e.count {
        if answers_reference || (anchors_reference && !names_user) {
            EnquiryClass::PR
        } else {
            EnquiryClass::RP
        }
    } else if answers_reference {
        EnquiryClass::PR
    } else {
        EnquiryClass::RP
    };
    Ok(class)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnquiryAnswer {
    pub name: String,
    pub class: EnquiryClass,
    pub bindings: Bindings,
    pub count: Option<usize>,
}

pub fn answer(e: &Enquiry, store: &EnquiryStore) -> Result<EnquiryAnswer, EnquiryError> {
    let bindings = evaluate(e, store)?;
    Ok(EnquiryAnswer {
        name: e.name.clone(),
        class: classify_enquiry(e, store)?,
        count: e.count.then_some(bindings.rows.len()),
        bindings,
    })
}

/// Facts as plain triples, for inspection.
pub fn fact_triples(store: &EnquiryStore) -> Vec<Triple> {
    store
        .facts
        .iter()
        .map(|f| Triple {
            subject: f.subject.clone(),
            predicate: f.predicate.clone(),
            object: f.object.clone(),
            validity: f.validity,
            provenance: f.provenance,
            distance_m: None,
        })
        .collect()
}
