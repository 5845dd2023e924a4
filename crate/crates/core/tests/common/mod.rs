#![allow(dead_code)]

use bigthick::graph::ReferenceBox;
use bigthick::personal::{build_streams, StreamConfig};
use bigthick::reference::{compute_near, compute_partin, ingest_reference, DEFAULT_PLACE_NEAR_M};
use bigthick::synth::SynthData;
use bigthick::teleontology::presets::{personal_etg, reference_etg};
use bigthick::unify::{epu_align, unify, Alignment, MappingConfig, ObservationContext, UnificationParams};

pub const LABEL: &str = "Synthetica";

pub fn alignment(data: &SynthData) -> Alignment {
    epu_align(
        &personal_etg(LABEL, Some(data.period)),
        &reference_etg(LABEL, Some(data.period)),
        &MappingConfig::preset(),
    )
    .expect("preset mapping aligns")
}

/// Reference graph and streams, not yet unified.
pub fn sources(data: &SynthData) -> (bigthick::graph::EntityGraph, Vec<bigthick::personal::PersonalStream>) {
    let meta = ReferenceBox { label: LABEL.into(), region: data.bbox, period: data.period };
    let ingested = ingest_reference(data.places.clone(), meta, reference_etg(LABEL, Some(data.period))).expect("ingest");
    assert_eq!(ingested.dropped_outside, 0);
    let graph = compute_near(compute_partin(ingested.graph), DEFAULT_PLACE_NEAR_M).expect("near");
    let streams = build_streams(&data.batteries, &data.gps, data.period, &StreamConfig::default()).expect("streams");
    (graph, streams)
}

pub fn observe(data: &SynthData) -> ObservationContext {
    let (graph, streams) = sources(data);
    unify(graph, streams, &alignment(data), &UnificationParams::default()).expect("unify")
}
