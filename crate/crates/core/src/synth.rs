//! Deterministic synthetic places and participants with planted visits and
//! co-locations whose outcome is known in advance.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enquiry::RESIDENCE_TYPES;
use crate::geo::{geo_distance, BoundingBox, GeoPoint, Geometry, Polygon, METERS_PER_DEGREE};
use crate::io::{write_batteries_csv, write_gps_csv, write_places_csv, IoError};
use crate::personal::{
    estimate_position, me_id, GpsSample, Participant, PositionParams, QuestionBattery, QuestionSchedule,
    Vocabulary, RESIDENCE_ANSWERS,
};
use crate::reference::PlaceRecord;
use crate::time::{Interval, Timestamp};
use crate::unify::MappingConfig;

const WEEK_SECS: i64 = 7 * 86_400;
/// Minutes either side of a planted slot during which the walk is held.
pub const HOLD_MINUTES: i64 = 6;
const REVERSION: f64 = 0.05;
const COLOCATION_JITTER_M: f64 = 3.0;
const ANSWER_RADIUS_M: f64 = 50.0;
const OTHER_PLACE: &str = "Other place";
const WORK_ANSWER: &str = "Workplace";

const FCLASSES: &[(&str, u32)] = &[
    ("building", 30),
    ("restaurant", 10),
    ("cafe", 6),
    ("bar", 5),
    ("pub", 4),
    ("supermarket", 8),
    ("bank", 6),
    ("library", 3),
    ("school", 3),
    ("university", 2),
    ("park", 5),
    ("sports_centre", 4),
    ("bus_stop", 12),
    ("attraction", 2),
];

pub const BUILDING_TYPES: &[&str] = &["apartments", "house", "residential", "church", "office"];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error("planted {what} at {at} falls outside the period {period:?}")]
    OutsidePeriod { what: &'static str, at: Timestamp, period: Interval },
    #[error("user {userid} has two plants on the battery slot at {at}")]
    Conflict { userid: Participant, at: Timestamp },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedVisit {
    pub userid: Participant,
    /// Index into the generated places.
    pub place: usize,
    pub at: Timestamp,
    pub jitter_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedColocation {
    pub users: [Participant; 2],
    pub at: Timestamp,
}

fn default_start() -> Timestamp {
    Timestamp::parse("05-08 00:00:00").expect("valid default")
}

fn default_unanswered() -> f64 {
    0.1
}

fn default_step() -> f64 {
    5.0
}

fn default_noise() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_places: usize,
    pub n_participants: u32,
    pub bbox: BoundingBox,
    #[serde(default = "default_start")]
    pub start: Timestamp,
    pub weeks: u32,
    #[serde(default)]
    pub schedule: QuestionSchedule,
    #[serde(default)]
    pub visits: Vec<PlantedVisit>,
    #[serde(default)]
    pub colocations: Vec<PlantedColocation>,
    #[serde(default = "default_unanswered")]
    pub unanswered_rate: f64,
    /// Per-minute random walk step.
    #[serde(default = "default_step")]
    pub step_sigma_m: f64,
    #[serde(default = "default_noise")]
    pub gps_noise_m: f64,
}

impl SynthSpec {
    pub fn new(seed: u64, n_places: usize, n_participants: u32, bbox: BoundingBox, weeks: u32) -> Self {
        SynthSpec {
            seed,
            n_places,
            n_participants,
            bbox,
            start: default_start(),
            weeks,
            schedule: QuestionSchedule::default(),
            visits: Vec::new(),
            colocations: Vec::new(),
            unanswered_rate: default_unanswered(),
            step_sigma_m: default_step(),
            gps_noise_m: default_noise(),
        }
    }

    pub fn period(&self) -> Interval {
        let end = self.start.plus_seconds(i64::from(self.weeks.max(1)) * WEEK_SECS - 1);
        Interval::new(self.start, end).expect("end follows start")
    }

    /// Battery times: the schedule spacing applied from the period start.
    pub fn slots(&self) -> Vec<Timestamp> {
        let period = self.period();
        let mut out = Vec::new();
        let mut t = period.start;
        while t <= period.end {
            out.push(t);
            t = t.plus_seconds(self.schedule.spacing_secs(period.start, t));
        }
        out
    }

    /// Nearest battery slot, the earlier one on ties.
    pub fn snap(&self, t: Timestamp) -> Timestamp {
        let slots = self.slots();
        let i = slots.partition_point(|s| *s < t);
        match (i.checked_sub(1).map(|j| slots[j]), slots.get(i)) {
            (Some(a), Some(&b)) if t.abs_diff(a) <= t.abs_diff(b) => a,
            (_, Some(&b)) => b,
            (Some(a), None) => a,
            (None, None) => t,
        }
    }

    /// Adds `visits` planted visits to resolvable places and `colocations`
    /// planted meetings, drawn from the seed onto free battery slots.
    pub fn plant_random(&mut self, visits: usize, colocations: usize, max_jitter_m: f64) -> Result<(), SynthError> {
        if !(max_jitter_m >= 0.0 && max_jitter_m.is_finite()) {
            return Err(SynthError::Spec(format!("jitter {max_jitter_m} must be non-negative")));
        }
        if colocations > 0 && self.n_participants < 2 {
            return Err(SynthError::Spec("co-locations need at least two participants".into()));
        }
        let vocab = Vocabulary::default();
        let mapping = MappingConfig::preset();
        let targets: Vec<usize> = gen_places(self, &Frame::new(&self.bbox))
            .iter()
            .enumerate()
            .filter(|(_, p)| answer_for(&p.record, &vocab, &mapping).1)
            .map(|(i, _)| i)
            .collect();
        if visits > 0 && (targets.is_empty() || self.n_participants == 0) {
            return Err(SynthError::Spec("no participant or resolvable place to plant visits on".into()));
        }
        let slots = self.slots();
        let capacity = slots.len() * self.n_participants as usize;
        let mut taken: BTreeSet<(Participant, Timestamp)> = self
            .visits
            .iter()
            .map(|v| (v.userid, self.snap(v.at)))
            .chain(self.colocations.iter().flat_map(|c| c.users.map(|u| (u, self.snap(c.at)))))
            .collect();
        if taken.len() + visits + 2 * colocations > capacity {
            return Err(SynthError::Spec(format!("not enough battery slots for {visits} visits and {colocations} co-locations")));
        }
        let mut rng = rng_for(self.seed, u64::MAX - 1);
        let n = self.n_participants;
        let mut planted = 0;
        while planted < colocations {
            let (a, b) = (rng.random_range(1..=n), rng.random_range(1..=n));
            let at = slots[rng.random_range(0..slots.len())];
            if a != b && !taken.contains(&(a, at)) && !taken.contains(&(b, at)) {
                taken.extend([(a, at), (b, at)]);
                self.colocations.push(PlantedColocation { users: [a, b], at });
                planted += 1;
            }
        }
        planted = 0;
        while planted < visits {
            let userid = rng.random_range(1..=n);
            let at = slots[rng.random_range(0..slots.len())];
            if taken.insert((userid, at)) {
                let place = targets[rng.random_range(0..targets.len())];
                let jitter_m = rng.random::<f64>() * max_jitter_m;
                self.visits.push(PlantedVisit { userid, place, at, jitter_m });
                planted += 1;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.weeks == 0 {
            return bad("weeks must be positive".into());
        }
        if self.schedule.spacing_minutes.is_empty() || self.schedule.spacing_minutes.contains(&0) {
            return bad("battery spacing must be positive".into());
        }
        if !(0.0..1.0).contains(&self.unanswered_rate) {
            return bad(format!("unanswered_rate {} outside [0, 1)", self.unanswered_rate));
        }
        for (name, v) in [("step_sigma_m", self.step_sigma_m), ("gps_noise_m", self.gps_noise_m)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        let period = self.period();
        let user_ok = |u: Participant| (1..=self.n_participants).contains(&u);
        let mut taken = BTreeSet::new();
        for v in &self.visits {
            if !user_ok(v.userid) {
                return bad(format!("planted visit for unknown user {}", v.userid));
            }
            if v.place >= self.n_places {
                return bad(format!("planted visit to place {} of {}", v.place, self.n_places));
            }
            if !(v.jitter_m >= 0.0 && v.jitter_m.is_finite()) {
                return bad(format!("jitter {} must be non-negative", v.jitter_m));
            }
            if !period.contains(v.at) {
                return Err(SynthError::OutsidePeriod { what: "visit", at: v.at, period });
            }
            let at = self.snap(v.at);
            if !taken.insert((v.userid, at)) {
                return Err(SynthError::Conflict { userid: v.userid, at });
            }
        }
        for c in &self.colocations {
            let [a, b] = c.users;
            if a == b || !user_ok(a) || !user_ok(b) {
                return bad(format!("co-location needs two distinct known users, got {a} and {b}"));
            }
            if !period.contains(c.at) {
                return Err(SynthError::OutsidePeriod { what: "co-location", at: c.at, period });
            }
            let at = self.snap(c.at);
            for u in c.users {
                if !taken.insert((u, at)) {
                    return Err(SynthError::Conflict { userid: u, at });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedVisit {
    pub userid: Participant,
    /// The battery slot the visit was snapped to.
    pub timestamp: Timestamp,
    pub place_id: String,
    #[serde(rename = "where")]
    pub where_: String,
    /// Whether the answer can be aligned with the place class at all.
    pub resolvable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedColocation {
    /// `Near(UserA, UserB)` with the lower id first.
    pub subject: String,
    pub object: String,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub visits: Vec<ExpectedVisit>,
    pub colocations: Vec<ExpectedColocation>,
    /// Whether each place is a residence.
    pub residence: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub bbox: BoundingBox,
    pub period: Interval,
    pub places: Vec<PlaceRecord>,
    pub batteries: Vec<QuestionBattery>,
    pub gps: Vec<GpsSample>,
    pub truth: GroundTruth,
}

/// Local planar frame anchored at the south-west corner of the box.
#[derive(Clone, Copy)]
struct Frame {
    origin: GeoPoint,
    height: f64,
    width: f64,
    margin: f64,
}

impl Frame {
    fn new(b: &BoundingBox) -> Self {
        let origin = GeoPoint::new(b.min_lat, b.min_lon).expect("box corner is valid");
        let height = (b.max_lat - b.min_lat) * METERS_PER_DEGREE;
        let width = (b.max_lon - b.min_lon) * METERS_PER_DEGREE * b.min_lat.to_radians().cos();
        let margin = 100f64.min(height / 4.0).min(width / 4.0);
        Frame { origin, height, width, margin }
    }

    fn point(&self, (n, e): (f64, f64)) -> GeoPoint {
        self.origin.offset_m(n, e)
    }

    fn uniform(&self, rng: &mut impl Rng) -> (f64, f64) {
        let inner = |span: f64| (span - 2.0 * self.margin).max(0.0);
        let n = self.margin + rng.random::<f64>() * inner(self.height);
        let e = self.margin + rng.random::<f64>() * inner(self.width);
        (n, e)
    }
}

fn distance((a, b): (f64, f64), (c, d): (f64, f64)) -> f64 {
    (a - c).hypot(b - d)
}

fn in_disc(rng: &mut impl Rng, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    (r * theta.sin(), r * theta.cos())
}

fn title(fclass: &str) -> String {
    let mut c = fclass.replace('_', " ");
    if let Some(f) = c.get_mut(0..1) {
        f.make_ascii_uppercase();
    }
    c
}

struct GenPlace {
    record: PlaceRecord,
    at: (f64, f64),
}

fn square(frame: &Frame, (n, e): (f64, f64), side: f64) -> Geometry {
    let h = side / 2.0;
    let ring = [(-h, -h), (-h, h), (h, h), (h, -h)].map(|(dn, de)| frame.point((n + dn, e + de)));
    Geometry::Polygon(Polygon::from_vertices(ring.to_vec()).expect("square is a valid polygon"))
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gen_places(spec: &SynthSpec, frame: &Frame) -> Vec<GenPlace> {
    let mut rng = rng_for(spec.seed, 0);
    let total: u32 = FCLASSES.iter().map(|(_, w)| w).sum();
    (0..spec.n_places)
        .map(|i| {
            let at = frame.uniform(&mut rng);
            let mut roll = rng.random_range(0..total);
            let fclass = FCLASSES
                .iter()
                .find(|(_, w)| {
                    let hit = roll < *w;
                    roll = roll.saturating_sub(*w);
                    hit
                })
                .map(|(c, _)| *c)
                .expect("roll within total weight");
            let (geometry, kind, name) = match fclass {
                "building" => {
                    let kind = *BUILDING_TYPES.choose(&mut rng).expect("non-empty");
                    (square(frame, at, 16.0), Some(kind.to_string()), None)
                }
                "park" => (square(frame, at, 120.0), None, Some(format!("Park {i}"))),
                c => (Geometry::Point(frame.point(at)), None, Some(format!("{} {i}", title(c)))),
            };
            GenPlace {
                record: PlaceRecord { id: format!("p{i}"), name, fclass: fclass.to_string(), geometry, kind },
                at,
            }
        })
        .collect()
}

fn is_residence(p: &PlaceRecord) -> bool {
    p.kind.as_deref().is_some_and(|k| RESIDENCE_TYPES.contains(&k))
}

/// The diary answer a participant gives when at `place`.
fn answer_for(place: &PlaceRecord, vocab: &Vocabulary, mapping: &MappingConfig) -> (String, bool) {
    if is_residence(place) {
        return ("Home".to_string(), true);
    }
    if place.fclass == "building" {
        return (OTHER_PLACE.to_string(), false);
    }
    mapping
        .etypes
        .iter()
        .filter(|p| p.reference == place.fclass && p.personal != "Home" && p.personal != "House")
        .flat_map(|p| vocab.answers_for_etype(&p.personal))
        .next()
        .map(|a| (a.to_string(), true))
        .unwrap_or_else(|| (OTHER_PLACE.to_string(), false))
}

struct Hold {
    target: (f64, f64),
    jitter: f64,
    where_: Option<String>,
}

struct UserPlan<'a> {
    userid: Participant,
    holds: BTreeMap<Timestamp, Hold>,
    home: (f64, f64),
    work: (f64, f64),
    spec: &'a SynthSpec,
}

fn gen_user(plan: UserPlan<'_>, frame: &Frame, slots: &[Timestamp], vocab: &Vocabulary) -> (Vec<QuestionBattery>, Vec<GpsSample>) {
    let spec = plan.spec;
    let period = spec.period();
    let mut rng = rng_for(spec.seed, u64::from(plan.userid) + 1);
    let step = Normal::new(0.0, spec.step_sigma_m).expect("validated sigma");
    let noise = Normal::new(0.0, spec.gps_noise_m).expect("validated sigma");
    let what: Vec<&String> = vocab.what.iter().collect();
    let with_whom: Vec<&String> = vocab.with_whom.keys().collect();
    let wandering: Vec<&String> = vocab.where_.keys().filter(|a| !RESIDENCE_ANSWERS.contains(&a.as_str())).collect();

    let minutes = (period.end.seconds() - period.start.seconds()) / 60 + 1;
    let mut pos = plan.home;
    let mut track = Vec::with_capacity(minutes as usize);
    let mut gps = Vec::with_capacity(minutes as usize);
    let mut holds = plan.holds.iter().peekable();
    for m in 0..minutes {
        let t = period.start.plus_seconds(m * 60);
        while holds.peek().is_some_and(|(at, _)| at.seconds() + HOLD_MINUTES * 60 < t.seconds()) {
            holds.next();
        }
        let held = holds.peek().filter(|(at, _)| at.seconds() - HOLD_MINUTES * 60 <= t.seconds());
        pos = match held {
            Some((_, h)) => {
                let (dn, de) = in_disc(&mut rng, h.jitter);
                (h.target.0 + dn, h.target.1 + de)
            }
            None => {
                let working = t.weekday().number_from_monday() <= 5 && (9..17).contains(&t.hour());
                let anchor = if working { plan.work } else { plan.home };
                (
                    pos.0 + REVERSION * (anchor.0 - pos.0) + step.sample(&mut rng),
                    pos.1 + REVERSION * (anchor.1 - pos.1) + step.sample(&mut rng),
                )
            }
        };
        track.push(pos);
        let fix = (pos.0 + noise.sample(&mut rng), pos.1 + noise.sample(&mut rng));
        gps.push(GpsSample { userid: plan.userid, timestamp: t, point: frame.point(fix) });
    }

    let mut batteries = Vec::with_capacity(slots.len());
    for &t in slots {
        let here = track[((t.seconds() - period.start.seconds()) / 60) as usize];
        let planted = plan.holds.get(&t);
        if planted.is_none() && rng.random::<f64>() < spec.unanswered_rate {
            batteries.push(QuestionBattery {
                userid: plan.userid,
                timestamp: t,
                where_: None,
                what: None,
                with_whom: None,
                mood: None,
            });
            continue;
        }
        let where_ = match planted.and_then(|h| h.where_.clone()) {
            Some(w) => w,
            None if distance(here, plan.home) <= ANSWER_RADIUS_M => "Home".to_string(),
            None if distance(here, plan.work) <= ANSWER_RADIUS_M => WORK_ANSWER.to_string(),
            None => wandering.choose(&mut rng).map(|s| s.to_string()).unwrap_or_default(),
        };
        batteries.push(QuestionBattery {
            userid: plan.userid,
            timestamp: t,
            where_: Some(where_),
            what: what.choose(&mut rng).map(|s| s.to_string()),
            with_whom: with_whom.choose(&mut rng).map(|s| s.to_string()),
            mood: Some(rng.random_range(1..=5)),
        });
    }
    (batteries, gps)
}

/// Generates the whole dataset. Participants are `1..=n_participants`.
pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let frame = Frame::new(&spec.bbox);
    let vocab = Vocabulary::default();
    let mapping = MappingConfig::preset();
    let places = gen_places(spec, &frame);
    let slots = spec.slots();

    let mut meet_rng = rng_for(spec.seed, u64::MAX);
    let meetings: Vec<(f64, f64)> = spec.colocations.iter().map(|_| frame.uniform(&mut meet_rng)).collect();

    let mut truth = GroundTruth {
        visits: Vec::new(),
        colocations: Vec::new(),
        residence: places.iter().map(|p| (p.record.id.clone(), is_residence(&p.record))).collect(),
    };
    // homes and workplaces are private spots, not reference places
    let mut plans: Vec<UserPlan> = (1..=spec.n_participants)
        .map(|userid| {
            let mut rng = rng_for(spec.seed, u64::from(userid) + (1 << 32));
            let home = frame.uniform(&mut rng);
            let work = frame.uniform(&mut rng);
            UserPlan { userid, holds: BTreeMap::new(), home, work, spec }
        })
        .collect();
    for v in &spec.visits {
        let at = spec.snap(v.at);
        let place = &places[v.place];
        let (where_, resolvable) = answer_for(&place.record, &vocab, &mapping);
        truth.visits.push(ExpectedVisit {
            userid: v.userid,
            timestamp: at,
            place_id: place.record.id.clone(),
            where_: where_.clone(),
            resolvable,
        });
        plans[v.userid as usize - 1]
            .holds
            .insert(at, Hold { target: place.at, jitter: v.jitter_m, where_: Some(where_) });
    }
    for (c, &target) in spec.colocations.iter().zip(&meetings) {
        let at = spec.snap(c.at);
        let (a, b) = (c.users[0].min(c.users[1]), c.users[0].max(c.users[1]));
        truth.colocations.push(ExpectedColocation { subject: me_id(a), object: me_id(b), timestamp: at });
        for u in c.users {
            plans[u as usize - 1].holds.insert(at, Hold { target, jitter: COLOCATION_JITTER_M, where_: None });
        }
    }

    let per_user: Vec<_> = plans.into_par_iter().map(|p| gen_user(p, &frame, &slots, &vocab)).collect();
    let (mut batteries, mut gps) = (Vec::new(), Vec::new());
    for (b, g) in per_user {
        batteries.extend(b);
        gps.extend(g);
    }
    Ok(SynthData {
        bbox: spec.bbox,
        period: spec.period(),
        places: places.into_iter().map(|p| p.record).collect(),
        batteries,
        gps,
        truth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheck {
    pub recoverable: usize,
    /// Indices into `truth.visits` the naive pipeline misses.
    pub missed: Vec<usize>,
}

impl SynthData {
    /// Re-finds every planted visit with a windowed position estimate and a
    /// nearest-place scan over places of the same class.
    pub fn self_check(&self, params: &PositionParams, near_m: f64) -> SelfCheck {
        let by_id: BTreeMap<&str, &PlaceRecord> = self.places.iter().map(|p| (p.id.as_str(), p)).collect();
        let mut missed = Vec::new();
        for (i, v) in self.truth.visits.iter().enumerate() {
            let target = by_id[v.place_id.as_str()];
            let samples: Vec<GpsSample> = self.gps.iter().filter(|g| g.userid == v.userid).cloned().collect();
            let found = estimate_position(&samples, v.timestamp, params).and_then(|p| {
                self.places
                    .iter()
                    .filter(|q| q.fclass == target.fclass)
                    .map(|q| (geo_distance(&p, &q.geometry.representative_point()), q.id.as_str()))
                    .filter(|(d, _)| *d <= near_m)
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)))
            });
            if found.map(|(_, id)| id) != Some(v.place_id.as_str()) {
                missed.push(i);
            }
        }
        SelfCheck { recoverable: self.truth.visits.len() - missed.len(), missed }
    }

    /// Writes `places.csv`, `batteries.csv`, `gps.csv` and `truth.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), IoError> {
        fs::create_dir_all(dir)?;
        write_places_csv(&self.places, fs::File::create(dir.join("places.csv"))?)?;
        write_batteries_csv(&self.batteries, fs::File::create(dir.join("batteries.csv"))?)?;
        write_gps_csv(&self.gps, fs::File::create(dir.join("gps.csv"))?)?;
        let truth = serde_json::to_string_pretty(&self.truth)?;
        fs::write(dir.join("truth.json"), truth + "\n")?;
        Ok(())
    }
}
