//! Personal contexts: one timed entity graph per answered diary battery, as
//! perceived by the participant (`me`), located by clustering nearby GPS fixes.

mod dbscan;
mod vocab;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::graph::{Literal, Provenance, Term, Triple};
use crate::reference::NEAR;
use crate::time::{Interval, Timestamp};

pub use dbscan::{dbscan, Clustering};
pub use vocab::{Vocabulary, ALONE_MARKER, RESIDENCE_ANSWERS};

pub const ACTION: &str = "Action";
pub const MOOD: &str = "Mood";
pub const WITH_WHOM: &str = "WithWhom";
pub const PERSON_ETYPE: &str = "Person";

const WEEK_SECS: i64 = 7 * 24 * 3600;

pub type Participant = u32;

/// Entity id of the participant in their own contexts.
pub fn me_id(userid: Participant) -> String {
    format!("User{userid}")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PersonalError {
    #[error("user {userid} at {timestamp}: mood {value} is outside 1..=5")]
    Mood { userid: Participant, timestamp: Timestamp, value: u8 },
    #[error("unknown {question} answer {value:?}")]
    UnknownAnswer { question: &'static str, value: String },
    #[error("question schedule needs at least one positive spacing")]
    Schedule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionBattery {
    pub userid: Participant,
    pub timestamp: Timestamp,
    #[serde(rename = "where")]
    pub where_: Option<String>,
    pub what: Option<String>,
    #[serde(rename = "withWhom")]
    pub with_whom: Option<String>,
    pub mood: Option<u8>,
}

impl QuestionBattery {
    pub fn is_blank(&self) -> bool {
        self.where_.is_none() && self.what.is_none() && self.with_whom.is_none() && self.mood.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsSample {
    pub userid: Participant,
    pub timestamp: Timestamp,
    pub point: GeoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionParams {
    pub eps_m: f64,
    pub min_pts: usize,
    /// Total width of the sample window around the query time.
    pub window_secs: i64,
}

impl Default for PositionParams {
    fn default() -> Self {
        PositionParams { eps_m: 30.0, min_pts: 3, window_secs: 600 }
    }
}

/// Spacing between questions, one entry per week; the last entry repeats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionSchedule {
    pub spacing_minutes: Vec<u32>,
}

impl Default for QuestionSchedule {
    fn default() -> Self {
        QuestionSchedule { spacing_minutes: vec![30, 30, 60, 60] }
    }
}

impl QuestionSchedule {
    pub fn spacing_secs(&self, period_start: Timestamp, t: Timestamp) -> i64 {
        let week = ((t.seconds() - period_start.seconds()).max(0) / WEEK_SECS) as usize;
        let i = week.min(self.spacing_minutes.len().saturating_sub(1));
        i64::from(self.spacing_minutes.get(i).copied().unwrap_or(0)) * 60
    }

    fn validate(&self) -> Result<(), PersonalError> {
        if self.spacing_minutes.is_empty() || self.spacing_minutes.contains(&0) {
            return Err(PersonalError::Schedule);
        }
        Ok(())
    }
}

/// Locally scoped entity introduced by a generic answer, e.g. `#Person2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymousEntity {
    pub id: String,
    pub etype: String,
    /// The diary answer that introduced it.
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedPersonalContext {
    pub userid: Participant,
    pub interval: Interval,
    pub position: Option<GeoPoint>,
    pub triples: Vec<Triple>,
    #[serde(default)]
    pub anonymous: Vec<AnonymousEntity>,
    pub battery: QuestionBattery,
}

impl TimedPersonalContext {
    pub fn me(&self) -> String {
        me_id(self.userid)
    }

    /// The anonymous place introduced by the `where` answer.
    pub fn place(&self) -> Option<&AnonymousEntity> {
        self.anonymous.iter().find(|a| a.etype != PERSON_ETYPE)
    }

    pub fn persons(&self) -> impl Iterator<Item = &AnonymousEntity> {
        self.anonymous.iter().filter(|a| a.etype == PERSON_ETYPE)
    }
}

/// Source of stream-unique anonymous ids.
#[derive(Debug, Clone)]
pub struct AnonCounter {
    next: u64,
}

impl Default for AnonCounter {
    fn default() -> Self {
        AnonCounter { next: 1 }
    }
}

impl AnonCounter {
    pub fn fresh(&mut self, etype: &str) -> String {
        let id = format!("#{etype}{}", self.next);
        self.next += 1;
        id
    }
}

/// Encodes one battery as triples about `me`, valid over `interval`.
///
/// The `where` answer is handled before `withWhom`, so a battery answering
/// both yields `#Restaurant1` and then `#Person2`.
pub fn battery_to_context(
    b: &QuestionBattery,
    interval: Interval,
    position: Option<GeoPoint>,
    counter: &mut AnonCounter,
    vocab: &Vocabulary,
) -> Result<TimedPersonalContext, PersonalError> {
    let me = me_id(b.userid);
    let mut triples = Vec::new();
    let mut anonymous = Vec::new();
    let personal = |s: &str, p: &str, o: Term| Triple::new(s, p, o, Provenance::Personal).during(interval);

    if let Some(answer) = &b.where_ {
        let etype = vocab
            .place_etype(answer)
            .ok_or_else(|| PersonalError::UnknownAnswer { question: "where", value: answer.clone() })?;
        let id = counter.fresh(etype);
        triples.push(personal(&me, NEAR, Term::entity(&id)));
        anonymous.push(AnonymousEntity { id, etype: etype.to_string(), label: answer.clone(), name: None });
    }
    if let Some(answer) = &b.with_whom {
        let relation = vocab
            .relation(answer)
            .ok_or_else(|| PersonalError::UnknownAnswer { question: "withWhom", value: answer.clone() })?;
        if relation == ALONE_MARKER {
            triples.push(personal(&me, WITH_WHOM, Term::lit(answer.as_str())));
        } else {
            let id = counter.fresh(PERSON_ETYPE);
            triples.push(Triple::new(&id, relation, Term::entity(&me), Provenance::Personal));
            triples.push(personal(&me, WITH_WHOM, Term::entity(&id)));
            triples.push(personal(&me, NEAR, Term::entity(&id)));
            anonymous.push(AnonymousEntity { id, etype: PERSON_ETYPE.to_string(), label: answer.clone(), name: None });
        }
    }
    if let Some(answer) = &b.what {
        if !vocab.what.contains(answer) {
            return Err(PersonalError::UnknownAnswer { question: "what", value: answer.clone() });
        }
        triples.push(personal(&me, ACTION, Term::lit(answer.as_str())));
    }
    if let Some(mood) = b.mood {
        if !(1..=5).contains(&mood) {
            return Err(PersonalError::Mood { userid: b.userid, timestamp: b.timestamp, value: mood });
        }
        triples.push(personal(&me, MOOD, Term::Literal(Literal::Int(i64::from(mood)))));
    }
    Ok(TimedPersonalContext { userid: b.userid, interval, position, triples, anonymous, battery: b.clone() })
}

/// Mean location of the densest cluster of fixes near `t_q`.
///
/// Only samples with `|t - t_q| <= window/2` take part. Among equally large
/// clusters the one holding the sample closest in time to `t_q` wins.
pub fn estimate_position(samples: &[GpsSample], t_q: Timestamp, params: &PositionParams) -> Option<GeoPoint> {
    if params.window_secs <= 0 {
        return None;
    }
    let in_window: Vec<&GpsSample> = samples
        .iter()
        .filter(|s| 2 * s.timestamp.abs_diff(t_q) <= params.window_secs)
        .collect();
    let points: Vec<GeoPoint> = in_window.iter().map(|s| s.point).collect();
    let clustering = dbscan(&points, params.eps_m, params.min_pts.max(1));
    let biggest = clustering.clusters.iter().map(Vec::len).max()?;
    let nearest_in_time =
        |c: &Vec<usize>| c.iter().map(|&i| (in_window[i].timestamp.abs_diff(t_q), i)).min().expect("clusters are non-empty");
    let chosen = clustering
        .clusters
        .iter()
        .filter(|c| c.len() == biggest)
        .min_by_key(|c| nearest_in_time(c))?;
    Some(mean_point(chosen.iter().map(|&i| &points[i])))
}

fn mean_point<'a>(points: impl Iterator<Item = &'a GeoPoint>) -> GeoPoint {
    let (mut lat, mut lon, mut alt, mut n, mut with_alt) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for p in points {
        lat += p.lat;
        lon += p.lon;
        if let Some(a) = p.alt {
            alt += a;
            with_alt += 1;
        }
        n += 1;
    }
    let n_f = n as f64;
    let mean = GeoPoint::new(lat / n_f, lon / n_f).expect("mean of valid points is valid");
    if with_alt == n {
        mean.with_alt(alt / n_f).expect("mean altitude is finite")
    } else {
        mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalStream {
    pub userid: Participant,
    pub period: Interval,
    pub contexts: Vec<TimedPersonalContext>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub schedule: QuestionSchedule,
    pub position: PositionParams,
    pub vocabulary: Vocabulary,
}

/// One context per answered battery inside `period`, in time order.
pub fn build_stream(
    userid: Participant,
    batteries: &[QuestionBattery],
    samples: &[GpsSample],
    period: Interval,
    cfg: &StreamConfig,
) -> Result<PersonalStream, PersonalError> {
    cfg.schedule.validate()?;
    let mut mine: Vec<&QuestionBattery> = batteries.iter().filter(|b| b.userid == userid).collect();
    mine.sort_by_key(|b| b.timestamp);
    let mut fixes: Vec<GpsSample> = samples.iter().filter(|s| s.userid == userid).copied().collect();
    fixes.sort_by_key(|s| s.timestamp);

    let half = cfg.position.window_secs.max(0) / 2 + 1;
    let mut counter = AnonCounter::default();
    let mut contexts: Vec<TimedPersonalContext> = Vec::new();
    for b in mine {
        if !period.contains(b.timestamp) {
            log::warn!("user {userid}: battery at {} lies outside {period}, dropped", b.timestamp);
            continue;
        }
        if b.is_blank() {
            continue;
        }
        if contexts.last().is_some_and(|c| c.battery.timestamp == b.timestamp) {
            log::warn!("user {userid}: duplicate battery at {}, dropped", b.timestamp);
            continue;
        }
        let spacing = cfg.schedule.spacing_secs(period.start, b.timestamp);
        let interval = Interval::centered(b.timestamp, spacing)
            .clamp_to(&period)
            .expect("the battery time lies in both intervals");
        let lo = fixes.partition_point(|s| s.timestamp < b.timestamp.plus_seconds(-half));
        let hi = fixes.partition_point(|s| s.timestamp <= b.timestamp.plus_seconds(half));
        let position = estimate_position(&fixes[lo..hi], b.timestamp, &cfg.position);
        contexts.push(battery_to_context(b, interval, position, &mut counter, &cfg.vocabulary)?);
    }
    Ok(PersonalStream { userid, period, contexts })
}

/// Builds every participant's stream in parallel, ordered by user id.
pub fn build_streams(
    batteries: &[QuestionBattery],
    samples: &[GpsSample],
    period: Interval,
    cfg: &StreamConfig,
) -> Result<Vec<PersonalStream>, PersonalError> {
    let mut by_user: BTreeMap<Participant, (Vec<QuestionBattery>, Vec<GpsSample>)> = BTreeMap::new();
    for b in batteries {
        by_user.entry(b.userid).or_default().0.push(b.clone());
    }
    for s in samples {
        if let Some(entry) = by_user.get_mut(&s.userid) {
            entry.1.push(*s);
        }
    }
    by_user
        .into_par_iter()
        .map(|(userid, (bs, ss))| build_stream(userid, &bs, &ss, period, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::geo_distance;

    fn ts(s: &str) -> Timestamp {
        Timestamp::parse(s).unwrap()
    }

    fn battery(userid: u32, t: &str) -> QuestionBattery {
        QuestionBattery { userid, timestamp: ts(t), where_: None, what: None, with_whom: None, mood: None }
    }

    fn period() -> Interval {
        Interval::parse("05-08 00:00:00", "06-04 23:59:59").unwrap()
    }

    #[test]
    fn friend_at_lunch_example() {
        let mut b = battery(73, "05-10 13:00:00");
        b.where_ = Some("Restaurant / Canteen".into());
        b.with_whom = Some("Friend(s)".into());
        let dt = Interval::centered(b.timestamp, 1800);
        let ctx = battery_to_context(&b, dt, None, &mut AnonCounter::default(), &Vocabulary::default()).unwrap();
        let shown: Vec<String> = ctx.triples.iter().map(|t| t.to_string()).collect();
        assert!(shown.contains(&"FriendOf(#Person2, User73)".to_string()));
        assert!(shown.contains(&format!("WithWhom(User73, #Person2, {dt})")));
        assert!(shown.contains(&format!("Near(User73, #Person2, {dt})")));
        assert!(shown.contains(&format!("Near(User73, #Restaurant1, {dt})")));
        assert_eq!(ctx.triples.len(), 4);
        assert_eq!(ctx.place().unwrap().etype, "Restaurant");
        assert!(ctx.triples.iter().all(|t| t.provenance == Provenance::Personal));
    }

    #[test]
    fn mood_is_one_literal_triple() {
        let mut b = battery(1, "05-10 13:00:00");
        b.mood = Some(5);
        let ctx = battery_to_context(&b, Interval::instant(b.timestamp), None, &mut AnonCounter::default(), &Vocabulary::default())
            .unwrap();
        assert_eq!(ctx.triples.len(), 1);
        assert_eq!(ctx.triples[0].predicate, MOOD);
        assert_eq!(ctx.triples[0].object, Term::Literal(Literal::Int(5)));
    }

    #[test]
    fn blank_battery_gives_no_triples() {
        let b = battery(1, "05-10 13:00:00");
        let ctx = battery_to_context(&b, Interval::instant(b.timestamp), None, &mut AnonCounter::default(), &Vocabulary::default())
            .unwrap();
        assert!(ctx.triples.is_empty());
    }

    #[test]
    fn unknown_answer_is_named() {
        let mut b = battery(1, "05-10 13:00:00");
        b.where_ = Some("Moon base".into());
        let err = battery_to_context(&b, Interval::instant(b.timestamp), None, &mut AnonCounter::default(), &Vocabulary::default())
            .unwrap_err();
        assert!(err.to_string().contains("Moon base"));
        b.where_ = None;
        b.mood = Some(9);
        assert!(matches!(
            battery_to_context(&b, Interval::instant(b.timestamp), None, &mut AnonCounter::default(), &Vocabulary::default()),
            Err(PersonalError::Mood { value: 9, .. })
        ));
    }

    #[test]
    fn alone_creates_no_person() {
        let mut b = battery(1, "05-10 13:00:00");
        b.with_whom = Some("Alone".into());
        let ctx = battery_to_context(&b, Interval::instant(b.timestamp), None, &mut AnonCounter::default(), &Vocabulary::default())
            .unwrap();
        assert!(ctx.anonymous.is_empty());
        assert_eq!(ctx.triples.len(), 1);
    }

    #[test]
    fn week_one_interval_is_centered() {
        let mut b = battery(5, "05-08 12:00:00");
        b.what = Some("Eating".into());
        let s = build_stream(5, &[b], &[], period(), &StreamConfig::default()).unwrap();
        assert_eq!(s.contexts[0].interval, Interval::parse("05-08 11:45:00", "05-08 12:15:00").unwrap());
        assert!(s.contexts[0].position.is_none());
    }

    #[test]
    fn later_weeks_use_wider_spacing() {
        let mut b = battery(5, "05-24 12:00:00");
        b.what = Some("Eating".into());
        let s = build_stream(5, &[b], &[], period(), &StreamConfig::default()).unwrap();
        assert_eq!(s.contexts[0].interval.duration_secs(), 3600);
    }

    #[test]
    fn stream_drops_blank_and_out_of_period() {
        let answered = |t: &str| {
            let mut b = battery(2, t);
            b.what = Some("Studying".into());
            b
        };
        let batteries = vec![
            answered("05-09 10:00:00"),
            battery(2, "05-09 10:30:00"),
            answered("05-09 11:00:00"),
            answered("07-01 11:00:00"),
            answered("05-09 12:00:00"),
            answered("05-09 12:00:00"),
        ];
        let s = build_stream(2, &batteries, &[], period(), &StreamConfig::default()).unwrap();
        assert_eq!(s.contexts.len(), 3);
        assert!(s.contexts.windows(2).all(|w| w[0].battery.timestamp < w[1].battery.timestamp));
    }

    #[test]
    fn interval_clamped_to_period() {
        let mut b = battery(2, "05-08 00:05:00");
        b.what = Some("Sleeping".into());
        let s = build_stream(2, &[b], &[], period(), &StreamConfig::default()).unwrap();
        assert_eq!(s.contexts[0].interval.start, period().start);
        assert!(period().contains_interval(&s.contexts[0].interval));
    }

    #[test]
    fn anonymous_ids_unique_across_stream() {
        let batteries: Vec<_> = (0..20)
            .map(|i| {
                let mut b = battery(9, &format!("05-09 {:02}:00:00", i + 1));
                b.where_ = Some("Library".into());
                b.with_whom = Some("Classmate(s)".into());
                b
            })
            .collect();
        let s = build_stream(9, &batteries, &[], period(), &StreamConfig::default()).unwrap();
        let mut ids: Vec<_> = s.contexts.iter().flat_map(|c| c.anonymous.iter().map(|a| a.id.clone())).collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
        assert_eq!(n, 40);
    }

    fn sample(t: &str, p: GeoPoint) -> GpsSample {
        GpsSample { userid: 1, timestamp: ts(t), point: p }
    }

    #[test]
    fn position_none_without_samples() {
        assert!(estimate_position(&[], ts("05-09 10:00:00"), &PositionParams::default()).is_none());
    }

    #[test]
    fn constant_samples_give_that_point() {
        let p = GeoPoint::new(46.07, 11.12).unwrap().with_alt(200.0).unwrap();
        let samples: Vec<_> = (0..10).map(|i| sample(&format!("05-09 10:0{i}:00"), p)).collect();
        let got = estimate_position(&samples, ts("05-09 10:04:00"), &PositionParams::default()).unwrap();
        assert!(geo_distance(&got, &p) < 1e-6);
        assert!((got.alt.unwrap() - 200.0).abs() < 1e-9);
    }

    #[test]
    fn outlier_is_ignored() {
        let p = GeoPoint::new(46.07, 11.12).unwrap();
        let mut samples: Vec<_> = (0..8)
            .map(|i| sample(&format!("05-09 10:0{i}:00"), p.offset_m(f64::from(i) * 2.0, 0.0)))
            .collect();
        samples.push(sample("05-09 10:02:30", p.offset_m(3000.0, 0.0)));
        let got = estimate_position(&samples, ts("05-09 10:04:00"), &PositionParams::default()).unwrap();
        let lat = samples[..8].iter().map(|s| s.point.lat).sum::<f64>() / 8.0;
        let lon = samples[..8].iter().map(|s| s.point.lon).sum::<f64>() / 8.0;
        assert!((got.lat - lat).abs() < 1e-12 && (got.lon - lon).abs() < 1e-12);
        assert!(got.alt.is_none());
    }

    #[test]
    fn window_excludes_distant_times() {
        let p = GeoPoint::new(46.07, 11.12).unwrap();
        let samples: Vec<_> = (0..5).map(|i| sample(&format!("05-09 11:0{i}:00"), p)).collect();
        assert!(estimate_position(&samples, ts("05-09 10:00:00"), &PositionParams::default()).is_none());
    }

    #[test]
    fn tie_goes_to_cluster_nearest_in_time() {
        let a = GeoPoint::new(46.07, 11.12).unwrap();
        let b = a.offset_m(1000.0, 0.0);
        let samples = vec![
            sample("05-09 09:56:00", a),
            sample("05-09 09:57:00", a),
            sample("05-09 09:58:00", a),
            sample("05-09 10:01:00", b),
            sample("05-09 10:02:00", b),
            sample("05-09 10:03:00", b),
        ];
        let got = estimate_position(&samples, ts("05-09 10:00:00"), &PositionParams::default()).unwrap();
        assert!(geo_distance(&got, &b) < 1e-6);
    }

    proptest::proptest! {
        #[test]
        fn position_matches_oracle_pipeline(
            raw in proptest::collection::vec((0i64..900, 0.0f64..300.0, 0.0f64..300.0), 0..200),
            q in 0i64..900,
        ) {
            let o = GeoPoint::new(46.05, 11.1).unwrap();
            let base = ts("05-09 10:00:00");
            let samples: Vec<_> = raw
                .iter()
                .map(|&(dt, n, e)| GpsSample { userid: 1, timestamp: base.plus_seconds(dt), point: o.offset_m(n, e) })
                .collect();
            let t_q = base.plus_seconds(q);
            let params = PositionParams::default();
            let got = estimate_position(&samples, t_q, &params);

            let kept: Vec<&GpsSample> = samples.iter().filter(|s| (s.timestamp.seconds() - t_q.seconds()).abs() * 2 <= 600).collect();
            let pts: Vec<GeoPoint> = kept.iter().map(|s| s.point).collect();
            let (clusters, _) = super::dbscan::tests::naive(&pts, 30.0, 3);
            let best = clusters.iter().map(|c| c.len()).max();
            let expected = best.map(|m| {
                let c = clusters
                    .iter()
                    .filter(|c| c.len() == m)
                    .min_by_key(|c| c.iter().map(|&i| ((kept[i].timestamp.seconds() - t_q.seconds()).abs(), i)).min().unwrap())
                    .unwrap();
                let n = c.len() as f64;
                (c.iter().map(|&i| pts[i].lat).sum::<f64>() / n, c.iter().map(|&i| pts[i].lon).sum::<f64>() / n)
            });
            match (got, expected) {
                (None, None) => {}
                (Some(g), Some((lat, lon))) => {
                    proptest::prop_assert!((g.lat - lat).abs() < 1e-9 && (g.lon - lon).abs() < 1e-9);
                }
                (g, e) => proptest::prop_assert!(false, "got {:?}, expected {:?}", g, e),
            }
        }
    }
}
