//! Delimited-text exports of a simulated timeline.

use hetplan_core::{ClusterProfile, Timeline};
use serde::Serialize;

#[derive(Serialize)]
struct GanttRow<'a> {
    device: &'a str,
    lane: &'a str,
    kind: &'a str,
    ministage: usize,
    microbatch: Option<u64>,
    start: f64,
    end: f64,
    bytes: u64,
}

#[derive(Serialize)]
struct MemRow<'a> {
    device: &'a str,
    time: f64,
    bytes: u64,
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

/// One row per event, in timeline order:
/// `device,lane,kind,ministage,microbatch,start,end,bytes`.
pub fn gantt_csv(profile: &ClusterProfile, t: &Timeline) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &t.events {
        w.serialize(GanttRow {
            device: &profile.devices[e.device].id,
            lane: e.lane.name(),
            kind: e.kind.name(),
            ministage: e.ministage,
            microbatch: e.microbatch,
            start: e.start,
            end: e.end,
            bytes: e.bytes,
        })
        .expect("in-memory write");
    }
    finish(w)
}

/// Step trace of resident bytes: `device,time,bytes`.
pub fn memory_csv(profile: &ClusterProfile, t: &Timeline) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (d, trace) in t.memory_trace.iter().enumerate() {
        for &(time, bytes) in trace {
            w.serialize(MemRow { device: &profile.devices[d].id, time, bytes }).expect("in-memory write");
        }
    }
    finish(w)
}
