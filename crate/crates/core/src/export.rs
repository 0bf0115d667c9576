//! Flat export formats for snapshots, drift events, consistency results
//! and trajectories.

use serde::Serialize;
use serde_json::{json, Value};

use crate::consistency::ConsistencyResult;
use crate::drift_index::DriftKind;
use crate::pipeline::AnalysisBundle;
use crate::projection::Trajectories;

#[derive(Serialize)]
struct SnapshotLine<'a> {
    source: &'a str,
    segment: usize,
    params: &'a [f64],
}

#[derive(Serialize)]
struct EventLine<'a> {
    source: &'a str,
    segment: usize,
    record_index: usize,
    kind: DriftKind,
    level: f64,
}

/// One `{source, segment, params}` object per line.
pub fn snapshots_jsonl(bundle: &AnalysisBundle) -> String {
    let mut out = String::new();
    for s in bundle.sources.iter().flat_map(|s| &s.snapshots) {
        let line = SnapshotLine { source: &s.source, segment: s.segment, params: &s.params };
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    }
    out
}

/// One `{source, segment, record_index, kind, level}` object per line.
pub fn events_jsonl(bundle: &AnalysisBundle) -> String {
    let mut out = String::new();
    for e in bundle.sources.iter().flat_map(|s| &s.events) {
        let line = EventLine {
            source: &e.source,
            segment: e.segment,
            record_index: e.record_index,
            kind: e.kind,
            level: e.level,
        };
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn consistency_json(results: &[ConsistencyResult]) -> Value {
    Value::Array(
        results
            .iter()
            .map(|r| {
                json!({
                    "source": r.source,
                    "curve": r.curve,
                    "segments": r.segments,
                    "verdicts": r.verdicts,
                })
            })
            .collect(),
    )
}

/// `{bounds, sources: [{source, points: [[x, y, segment], ...]}]}`.
pub fn trajectories_json(trajectories: &Trajectories) -> Value {
    json!({
        "bounds": trajectories.bounds,
        "sources": trajectories.sources.iter().map(|s| json!({
            "source": s.source,
            "points": s.points.iter().map(|p| json!([p.xy[0], p.xy[1], p.segment])).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{analyze, AnalysisSettings};
    use crate::synth::{synth_stream, SynthSpec};

    fn bundle() -> AnalysisBundle {
        let out = synth_stream(&SynthSpec::abrupt(2, 3, 1200, 600, 0.05, 1));
        analyze(out.schema, &out.records, &AnalysisSettings::default(), vec![]).unwrap().bundle
    }

    #[test]
    fn line_formats() {
        let b = bundle();
        let snaps = snapshots_jsonl(&b);
        assert_eq!(snaps.lines().count(), 2 * 12);
        let first: Value = serde_json::from_str(snaps.lines().next().unwrap()).unwrap();
        assert_eq!(first["source"], "s0");
        assert_eq!(first["params"].as_array().unwrap().len(), 4);

        let events = events_jsonl(&b);
        let n: usize = b.sources.iter().map(|s| s.events.len()).sum();
        assert_eq!(events.lines().count(), n);
        for line in events.lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            assert!(matches!(v["kind"].as_str(), Some("warning" | "confirmed")));
        }
    }

    #[test]
    fn trajectory_points_are_triples() {
        let b = bundle();
        let t = trajectories_json(b.trajectories.as_ref().unwrap());
        let points = t["sources"][1]["points"].as_array().unwrap();
        assert_eq!(points.len(), 12);
        assert_eq!(points[3][2], 3);
        assert!(t["bounds"]["min"].is_array());
    }
}
