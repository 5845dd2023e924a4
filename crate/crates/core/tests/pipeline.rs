mod common;

use std::fs;
use std::io::BufReader;

use bigthick::demo;
use bigthick::enquiry::{answer, export_features, Enquiry, EnquiryClass, EnquiryStore, Purpose, Source};
use bigthick::geo::BoundingBox;
use bigthick::io::{read_batteries_csv, read_gps_csv, read_jsonl, read_places_csv, write_jsonl};
use bigthick::synth::{generate, PlantedColocation, PlantedVisit, SynthData, SynthSpec};
use bigthick::time::Timestamp;
use bigthick::unify::ObservationContext;

fn spec() -> SynthSpec {
    let mut s = SynthSpec::new(7, 80, 3, BoundingBox::new(46.06, 46.075, 11.12, 11.14).unwrap(), 1);
    s.visits = vec![
        PlantedVisit { userid: 1, place: 3, at: Timestamp::parse("05-09 12:00:00").unwrap(), jitter_m: 5.0 },
        PlantedVisit { userid: 2, place: 10, at: Timestamp::parse("05-12 19:30:00").unwrap(), jitter_m: 8.0 },
    ];
    s.colocations = vec![PlantedColocation { users: [2, 3], at: Timestamp::parse("05-13 21:00:00").unwrap() }];
    s
}

#[test]
fn files_round_trip_to_the_same_observation() {
    let data = generate(&spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write_dir(dir.path()).unwrap();

    let open = |name: &str| fs::File::open(dir.path().join(name)).unwrap();
    let reread = SynthData {
        places: read_places_csv(open("places.csv")).unwrap(),
        batteries: read_batteries_csv(open("batteries.csv")).unwrap(),
        gps: read_gps_csv(open("gps.csv")).unwrap(),
        ..data.clone()
    };
    assert_eq!(reread.batteries, data.batteries);
    assert_eq!(common::observe(&reread), common::observe(&data));
}

#[test]
fn reruns_write_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(&spec()).unwrap().write_dir(a.path()).unwrap();
    generate(&spec()).unwrap().write_dir(b.path()).unwrap();
    for f in ["places.csv", "batteries.csv", "gps.csv", "truth.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let obs = || serde_json::to_string(&common::observe(&generate(&spec()).unwrap())).unwrap();
    assert_eq!(obs(), obs());
}

#[test]
fn observation_survives_json() {
    let obs = common::observe(&generate(&spec()).unwrap());
    let text = serde_json::to_string(&obs).unwrap();
    let back: ObservationContext = serde_json::from_str(&text).unwrap();
    assert_eq!(back, obs);
}

#[test]
fn planted_truth_is_found() {
    let data = generate(&spec()).unwrap();
    let obs = common::observe(&data);
    for v in data.truth.visits.iter().filter(|v| v.resolvable) {
        assert!(
            obs.resolutions.iter().any(|r| r.reference_id == v.place_id && r.interval.contains(v.timestamp)),
            "{v:?}"
        );
    }
    let c = &data.truth.colocations[0];
    assert!(obs.derived.iter().any(|t| t.subject == c.subject && t.validity.is_some_and(|iv| iv.contains(c.timestamp))));
}

#[test]
fn contexts_survive_jsonl() {
    let streams = demo::streams();
    let mut buf = Vec::new();
    write_jsonl(streams.iter().flat_map(|s| &s.contexts), &mut buf).unwrap();
    let back: Vec<bigthick::personal::TimedPersonalContext> = read_jsonl(BufReader::new(&buf[..])).unwrap();
    assert_eq!(back.len(), 6);
    assert_eq!(back[0], streams[0].contexts[0]);
}

#[test]
fn demo_walkthrough() {
    let obs = demo::observation();
    let store = EnquiryStore::new(&obs);
    let e = Enquiry::from_json(r#"{"patterns": [["?a", "Near", "?b"], ["?a", "Etype", "Person"], ["?b", "Etype", "Person"]]}"#)
        .unwrap();
    let a = answer(&e, &store).unwrap();
    assert_eq!(a.class, EnquiryClass::RP);
    assert!(a.bindings.rows.contains(&vec!["User12".to_string(), "User73".to_string()]));

    let t = export_features(&obs, &Purpose::e1(), Source::Unified).unwrap();
    assert_eq!(t.columns, ["day_of_week", "time_of_day", "name", "class"]);
    assert_eq!(t.len(), 6);
}
