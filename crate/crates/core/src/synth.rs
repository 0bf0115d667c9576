//! Synthetic multi-source streams with planted abrupt drifts.
//!
//! Each phase has its own linear concept `y = [w·x + b > 0]` over uniform
//! attributes in `[0, 1]^d`, shared by all sources. A source switches
//! phase at the scheduled record positions plus its own lag, and labels
//! are flipped with probability `noise`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{DataRecord, DatasetSchema, SourceInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSource {
    pub id: String,
    /// Records by which this source's switches trail the schedule.
    #[serde(default)]
    pub lag_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub sources: Vec<SynthSource>,
    pub dims: usize,
    pub records_per_source: usize,
    /// Records falling in one unit segment.
    pub records_per_unit: usize,
    pub unit: i64,
    #[serde(default)]
    pub start: i64,
    /// Record positions at which a new phase begins.
    pub switches: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// `count` in-sync sources named `s0..`, one switch, no lag.
    pub fn abrupt(count: usize, dims: usize, records: usize, switch_at: usize, noise: f64, seed: u64) -> Self {
        Self {
            sources: (0..count).map(|i| SynthSource { id: format!("s{i}"), lag_records: 0 }).collect(),
            dims,
            records_per_source: records,
            records_per_unit: 100,
            unit: 3600,
            start: 0,
            switches: vec![switch_at],
            noise,
            seed,
        }
    }

    pub fn segment_count(&self) -> usize {
        self.records_per_source.div_ceil(self.records_per_unit.max(1))
    }

    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            attribute_names: (0..self.dims).map(|k| format!("x{k}")).collect(),
            label_name: "label".into(),
            sources: self
                .sources
                .iter()
                .map(|s| SourceInfo { id: s.id.clone(), name: s.id.clone() })
                .collect(),
            unit: self.unit,
            time_span: (self.start, self.start + self.segment_count() as i64 * self.unit),
            label_predicate: None,
        }
    }

    fn timestamp(&self, r: usize) -> i64 {
        self.start + (r as i64 * self.unit) / self.records_per_unit.max(1) as i64
    }
}

/// One linear concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Phase {
    pub fn label(&self, x: &[f64]) -> u8 {
        u8::from(self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOutput {
    pub schema: DatasetSchema,
    pub phases: Vec<Phase>,
    /// Per source, the record positions where its phase actually changes.
    pub switch_records: Vec<Vec<usize>>,
    pub records: Vec<DataRecord>,
}

impl SynthOutput {
    /// Header-prefixed CSV in the ingest format.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,source,label");
        for name in &self.schema.attribute_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for r in &self.records {
            write!(out, "{},{},{}", r.timestamp, r.source_id, r.y).unwrap();
            for v in &r.x {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Segment containing each source's switches.
    pub fn switch_segments(&self, records_per_unit: usize) -> Vec<Vec<usize>> {
        self.switch_records
            .iter()
            .map(|s| s.iter().map(|r| r / records_per_unit).collect())
            .collect()
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dims: usize) -> Vec<f64> {
    (0..dims).map(|_| StandardNormal.sample(rng)).collect()
}

/// Successive phases point at least 90 degrees apart so each switch
/// changes at least half of the decision regions' labels on average.
fn phases(spec: &SynthSpec) -> Vec<Phase> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out: Vec<Phase> = Vec::with_capacity(spec.switches.len() + 1);
    for _ in 0..=spec.switches.len() {
        let mut w = gaussian_vector(&mut rng, spec.dims);
        if let Some(prev) = out.last() {
            let d: f64 = w.iter().zip(&prev.weights).map(|(a, b)| a * b).sum();
            if d > 0.0 {
                w.iter_mut().for_each(|v| *v = -*v);
            }
        }
        // hyperplane through the centre of the cube keeps classes balanced
        let bias = -0.5 * w.iter().sum::<f64>();
        out.push(Phase { weights: w, bias });
    }
    out
}

pub fn synth_stream(spec: &SynthSpec) -> SynthOutput {
    let phases = phases(spec);
    let mut records = Vec::with_capacity(spec.sources.len() * spec.records_per_source);
    let mut switch_records = Vec::with_capacity(spec.sources.len());
    for (i, source) in spec.sources.iter().enumerate() {
        let stream_seed = spec.seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
        let switches: Vec<usize> = spec
            .switches
            .iter()
            .map(|s| s + source.lag_records)
            .filter(|&s| s < spec.records_per_source)
            .collect();
        for r in 0..spec.records_per_source {
            let phase = switches.iter().filter(|&&s| r >= s).count();
            let x: Vec<f64> = (0..spec.dims).map(|_| rng.random::<f64>()).collect();
            let mut y = phases[phase].label(&x);
            if rng.random::<f64>() < spec.noise {
                y = 1 - y;
            }
            records.push(DataRecord { source_id: source.id.clone(), timestamp: spec.timestamp(r), x, y });
        }
        switch_records.push(switches);
    }
    SynthOutput { schema: spec.schema(), phases, switch_records, records }
}
