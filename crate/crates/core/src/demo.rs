//! A small hand-made scene in central Trento: a few places and two
//! participants, User12 and User73, who have lunch together at Biba's.

use crate::geo::{BoundingBox, GeoPoint, Geometry, Polygon};
use crate::graph::{EntityGraph, ReferenceBox};
use crate::personal::{build_streams, GpsSample, PersonalStream, QuestionBattery, StreamConfig};
use crate::reference::{compute_near, compute_partin, ingest_reference, PlaceRecord, DEFAULT_PLACE_NEAR_M};
use crate::teleontology::presets::{personal_etg, reference_etg};
use crate::time::{Interval, Timestamp};
use crate::unify::{epu_align, unify, MappingConfig, ObservationContext, UnificationParams};

pub const LABEL: &str = "Trento";

pub fn origin() -> GeoPoint {
    GeoPoint::new(46.067, 11.121).expect("valid coordinates")
}

pub fn period() -> Interval {
    Interval::parse("05-08 00:00:00", "06-04 23:59:59").expect("valid period")
}

pub fn reference_box() -> ReferenceBox {
    ReferenceBox {
        label: LABEL.into(),
        region: BoundingBox::new(46.0, 46.15, 11.05, 11.2).expect("valid box"),
        period: period(),
    }
}

fn point(id: &str, name: Option<&str>, fclass: &str, north: f64, east: f64, kind: Option<&str>) -> PlaceRecord {
    PlaceRecord {
        id: id.into(),
        name: name.map(str::to_string),
        fclass: fclass.into(),
        geometry: Geometry::Point(origin().offset_m(north, east)),
        kind: kind.map(str::to_string),
    }
}

pub fn places() -> Vec<PlaceRecord> {
    let c = origin().offset_m(615.0, 10.0);
    let square = Polygon::from_vertices(vec![
        c.offset_m(-60.0, -60.0),
        c.offset_m(-60.0, 60.0),
        c.offset_m(60.0, 60.0),
        c.offset_m(60.0, -60.0),
    ])
    .expect("valid square");
    vec![
        point("biba", Some("Biba's"), "restaurant", 0.0, 0.0, None),
        point("poli", Some("Poli"), "supermarket", 40.0, 0.0, None),
        point("coop", Some("Coop"), "supermarket", 0.0, 300.0, None),
        point("sport", Some("Bar Sport"), "bar", 600.0, 0.0, None),
        point("stop", Some("Piazza Dante"), "bus_stop", 630.0, 20.0, None),
        PlaceRecord {
            id: "dante".into(),
            name: Some("Piazza Dante".into()),
            fclass: "park".into(),
            geometry: Geometry::Polygon(square),
            kind: None,
        },
        point("unicredit", Some("UniCredit"), "bank", -400.0, 100.0, None),
        point("flat", None, "building", -800.0, -300.0, Some("apartments")),
        point("duomo", Some("Duomo"), "building", 200.0, -500.0, Some("church")),
    ]
}

pub fn reference() -> EntityGraph {
    let ingested = ingest_reference(places(), reference_box(), reference_etg(LABEL, Some(period())))
        .expect("demo places are valid");
    compute_near(compute_partin(ingested.graph), DEFAULT_PLACE_NEAR_M).expect("positive threshold")
}

struct Visit {
    userid: u32,
    at: &'static str,
    place: (f64, f64),
    answers: [Option<&'static str>; 3],
    mood: u8,
}

fn visits() -> Vec<Visit> {
    vec![
        Visit {
            userid: 73,
            at: "05-13 13:00:00",
            place: (5.0, 0.0),
            answers: [Some("Restaurant / Canteen"), Some("Eating"), Some("Friend(s)")],
            mood: 5,
        },
        Visit {
            userid: 73,
            at: "05-13 18:00:00",
            place: (0.0, 305.0),
            answers: [Some("Shop / Supermarket"), Some("Shopping"), Some("Alone")],
            mood: 3,
        },
        Visit {
            userid: 73,
            at: "05-15 08:00:00",
            place: (-800.0, -295.0),
            answers: [Some("Home"), Some("Personal care"), Some("Alone")],
            mood: 4,
        },
        Visit {
            userid: 73,
            at: "05-16 11:00:00",
            place: (-395.0, 100.0),
            answers: [Some("Bank / Post office"), None, Some("Alone")],
            mood: 2,
        },
        Visit {
            userid: 12,
            at: "05-13 13:00:00",
            place: (-3.0, 2.0),
            answers: [Some("Restaurant / Canteen"), Some("Eating"), Some("Friend(s)")],
            mood: 4,
        },
        Visit {
            userid: 12,
            at: "05-14 21:00:00",
            place: (600.0, 6.0),
            answers: [Some("Bar / Pub"), Some("Social life"), Some("Friend(s)")],
            mood: 5,
        },
    ]
}

pub fn batteries() -> Vec<QuestionBattery> {
    visits()
        .into_iter()
        .map(|v| QuestionBattery {
            userid: v.userid,
            timestamp: Timestamp::parse(v.at).expect("valid time"),
            where_: v.answers[0].map(str::to_string),
            what: v.answers[1].map(str::to_string),
            with_whom: v.answers[2].map(str::to_string),
            mood: Some(v.mood),
        })
        .collect()
}

/// One fix a minute for five minutes either side of every visit, within a
/// couple of meters of the visited spot.
pub fn gps() -> Vec<GpsSample> {
    visits()
        .into_iter()
        .flat_map(|v| {
            let t = Timestamp::parse(v.at).expect("valid time");
            (-5i32..=5).map(move |k| GpsSample {
                userid: v.userid,
                timestamp: t.plus_seconds(i64::from(k) * 60),
                point: origin().offset_m(v.place.0 + f64::from(k % 2), v.place.1 - f64::from(k % 3)),
            })
        })
        .collect()
}

pub fn streams() -> Vec<PersonalStream> {
    build_streams(&batteries(), &gps(), period(), &StreamConfig::default()).expect("demo batteries are valid")
}

pub fn observation() -> ObservationContext {
    let alignment = epu_align(
        &personal_etg(LABEL, Some(period())),
        &reference_etg(LABEL, Some(period())),
        &MappingConfig::preset(),
    )
    .expect("preset mapping is valid");
    unify(reference(), streams(), &alignment, &UnificationParams::default()).expect("demo streams share the period")
}
