//! Records, batches and per-attribute normalization.
//!
//! Raw multi-source CSV is parsed into [`DataRecord`]s, which are then laid
//! onto a shared unit-time grid by [`batchify`]. Every source gets one
//! [`Batch`] per grid segment, including empty placeholders, so that
//! downstream views can index all sources by the same segment number.

use std::collections::HashMap;
use std::io::Read;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// A single timestamped observation from one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub source_id: String,
    /// Epoch seconds.
    pub timestamp: i64,
    pub x: Vec<f64>,
    /// Binary label, always 0 or 1.
    pub y: u8,
}

impl DataRecord {
    pub fn positive(&self) -> bool {
        self.y == 1
    }
}

/// All records of one source inside one unit time segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub source_id: String,
    pub segment_index: usize,
    pub records: Vec<DataRecord>,
    /// Mean record-level drift level, filled in by the drift index.
    pub drift_level: f64,
}

impl Batch {
    pub fn empty(source_id: &str, segment_index: usize) -> Self {
        Self {
            source_id: source_id.to_string(),
            segment_index,
            records: Vec::new(),
            drift_level: 0.0,
        }
    }

    pub fn size(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Gt,
    Ge,
    Lt,
    Le,
}

/// Binarizes a raw numeric column, e.g. `aqi > 100`.
///
/// When `column` names the label column the raw label cell is tested;
/// when it names an attribute, that attribute's value decides the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPredicate {
    pub column: String,
    pub op: Comparison,
    pub threshold: f64,
}

impl LabelPredicate {
    pub fn apply(&self, value: f64) -> u8 {
        let hit = match self.op {
            Comparison::Gt => value > self.threshold,
            Comparison::Ge => value >= self.threshold,
            Comparison::Lt => value < self.threshold,
            Comparison::Le => value <= self.threshold,
        };
        u8::from(hit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub attribute_names: Vec<String>,
    pub label_name: String,
    pub sources: Vec<SourceInfo>,
    /// Unit segment length in seconds.
    pub unit: i64,
    /// Half-open `[start, end)` span in epoch seconds.
    pub time_span: (i64, i64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_predicate: Option<LabelPredicate>,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.attribute_names.is_empty() {
            return Err(DataError::InvalidSchema("no attributes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.attribute_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::InvalidSchema(format!(
                    "duplicate attribute `{name}`"
                )));
            }
        }
        if self.sources.is_empty() {
            return Err(DataError::InvalidSchema("no sources".into()));
        }
        if self.unit <= 0 {
            return Err(DataError::InvalidSchema("unit must be positive".into()));
        }
        if self.time_span.1 <= self.time_span.0 {
            return Err(DataError::InvalidSchema("empty time span".into()));
        }
        if let Some(pred) = &self.label_predicate {
            if pred.column != self.label_name && self.attribute_index(&pred.column).is_none() {
                return Err(DataError::InvalidSchema(format!(
                    "label predicate column `{}` not in schema",
                    pred.column
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|a| a == name)
    }

    pub fn source_index(&self, id: &str) -> Option<usize> {
        self.sources.iter().position(|s| s.id == id)
    }

    /// Number of unit segments covering the span (last one may be partial).
    pub fn segment_count(&self) -> usize {
        let len = self.time_span.1 - self.time_span.0;
        ((len + self.unit - 1) / self.unit) as usize
    }

    /// Segment containing `timestamp`, or `None` outside the span.
    pub fn segment_of(&self, timestamp: i64) -> Option<usize> {
        if timestamp < self.time_span.0 || timestamp >= self.time_span.1 {
            return None;
        }
        Some(((timestamp - self.time_span.0) / self.unit) as usize)
    }

    /// Wall-clock `[start, end)` interval of a segment.
    pub fn segment_interval(&self, segment: usize) -> (i64, i64) {
        let start = self.time_span.0 + segment as i64 * self.unit;
        (start, start + self.unit)
    }

    pub fn same_shape(&self, other: &DatasetSchema) -> bool {
        self.attribute_names == other.attribute_names && self.label_name == other.label_name
    }
}

/// Streaming per-attribute statistics (Welford mean/variance plus range).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub attributes: Vec<AttributeStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub count: u64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    m2: f64,
}

impl Default for AttributeStats {
    fn default() -> Self {
        Self {
            count: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            mean: 0.0,
            m2: 0.0,
        }
    }
}

impl AttributeStats {
    pub fn observe(&mut self, v: f64) {
        self.count += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
        // rounding can push the mean a hair outside [min, max]
        self.mean = self.mean.clamp(self.min, self.max);
    }

    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        let range = self.max - self.min;
        if !(range > 0.0) {
            return 0.5;
        }
        ((v - self.min) / range).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        self.min + u * (self.max - self.min)
    }
}

impl NormalizationStats {
    pub fn new(dims: usize) -> Self {
        Self {
            attributes: vec![AttributeStats::default(); dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.attributes.len()
    }

    pub fn observe(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.attributes.len());
        for (stats, &v) in self.attributes.iter_mut().zip(x) {
            stats.observe(v);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        normalize(x, self)
    }
}

/// Min-max scales `x` into `[0, 1]^d`; constant attributes map to 0.5 and
/// values beyond the observed range are clamped.
pub fn normalize(x: &[f64], stats: &NormalizationStats) -> Vec<f64> {
    x.iter()
        .zip(&stats.attributes)
        .map(|(&v, s)| s.normalize(v))
        .collect()
}

/// A row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowReject {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: Vec<DataRecord>,
    pub rejects: Vec<RowReject>,
}

/// Accepts integer epoch seconds, RFC 3339, `YYYY-MM-DD HH:MM:SS`,
/// `YYYY-MM-DDTHH:MM:SS` (UTC) and bare dates.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

fn parse_label(raw: &str) -> Option<u8> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(1),
        "0" | "false" | "no" => Some(0),
        other => match other.parse::<f64>() {
            Ok(v) if v == 1.0 => Some(1),
            Ok(v) if v == 0.0 => Some(0),
            _ => None,
        },
    }
}

struct ParsedRow {
    row: usize,
    source_id: String,
    timestamp: i64,
    label_raw: String,
    cells: Vec<Option<f64>>,
}

/// Parses header-prefixed CSV (`timestamp,source,label,<attributes...>`).
///
/// Rows are sorted by `(source, timestamp)`; missing attribute cells take
/// the running mean of earlier values of the same source and attribute.
/// Bad rows are reported, and the ingest only fails outright when more
/// than half of the rows are rejected.
pub fn ingest_csv<R: Read>(stream: R, schema: &DatasetSchema) -> Result<IngestReport, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(stream);

    let header = reader
        .headers()
        .map_err(|e| DataError::MalformedHeader(e.to_string()))?
        .clone();
    let expected: Vec<&str> = ["timestamp", "source", "label"]
        .into_iter()
        .chain(schema.attribute_names.iter().map(String::as_str))
        .collect();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(DataError::MalformedHeader(format!(
            "expected `{}`, found `{}`",
            expected.join(","),
            got.join(",")
        )));
    }

    let dims = schema.dims();
    let predicate_attr = schema
        .label_predicate
        .as_ref()
        .and_then(|p| schema.attribute_index(&p.column));
    let mut rows = Vec::new();
    let mut rejects = Vec::new();
    let mut total = 0usize;

    for (i, result) in reader.records().enumerate() {
        let row = i + 1;
        total += 1;
        let rec = match result {
            Ok(r) => r,
            Err(e) => {
                rejects.push(RowReject { row, reason: e.to_string() });
                continue;
            }
        };
        if rec.len() != dims + 3 {
            rejects.push(RowReject {
                row,
                reason: format!("expected {} columns, found {}", dims + 3, rec.len()),
            });
            continue;
        }
        let Some(timestamp) = parse_timestamp(&rec[0]) else {
            rejects.push(RowReject { row, reason: format!("bad timestamp `{}`", &rec[0]) });
            continue;
        };
        let source_id = rec[1].to_string();
        if schema.source_index(&source_id).is_none() {
            rejects.push(RowReject { row, reason: format!("unknown source `{source_id}`") });
            continue;
        }
        let mut cells = Vec::with_capacity(dims);
        let mut bad_cell = None;
        for (k, cell) in rec.iter().skip(3).enumerate() {
            if cell.is_empty() {
                cells.push(None);
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => cells.push(Some(v)),
                    _ => {
                        bad_cell = Some(k);
                        break;
                    }
                }
            }
        }
        if let Some(k) = bad_cell {
            rejects.push(RowReject {
                row,
                reason: format!("bad value for `{}`", schema.attribute_names[k]),
            });
            continue;
        }
        // label is resolved before imputation so predicate rows can reject early
        let label_ok = match (&schema.label_predicate, predicate_attr) {
            (Some(_), Some(k)) => cells[k].is_some(),
            (Some(_), None) => rec[2].parse::<f64>().is_ok(),
            (None, _) => parse_label(&rec[2]).is_some(),
        };
        if !label_ok {
            rejects.push(RowReject { row, reason: format!("bad label `{}`", &rec[2]) });
            continue;
        }
        rows.push(ParsedRow {
            row,
            source_id,
            timestamp,
            label_raw: rec[2].to_string(),
            cells,
        });
    }

    if total > 0 && rejects.len() * 2 > total {
        return Err(DataError::TooManyRejects {
            rejected: rejects.len(),
            total,
        });
    }

    rows.sort_by(|a, b| {
        (schema.source_index(&a.source_id), a.timestamp, a.row)
            .cmp(&(schema.source_index(&b.source_id), b.timestamp, b.row))
    });

    let mut running: HashMap<String, Vec<(f64, u64)>> = HashMap::new();
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        let sums = running
            .entry(row.source_id.clone())
            .or_insert_with(|| vec![(0.0, 0); dims]);
        let x: Vec<f64> = row
            .cells
            .iter()
            .zip(sums.iter_mut())
            .map(|(cell, (sum, n))| match cell {
                Some(v) => {
                    *sum += v;
                    *n += 1;
                    *v
                }
                None if *n > 0 => *sum / *n as f64,
                None => 0.0,
            })
            .collect();
        let y = match (&schema.label_predicate, predicate_attr) {
            (Some(p), Some(k)) => p.apply(x[k]),
            (Some(p), None) => p.apply(row.label_raw.parse::<f64>().unwrap_or(f64::NAN)),
            (None, _) => parse_label(&row.label_raw).unwrap_or(0),
        };
        records.push(DataRecord {
            source_id: row.source_id,
            timestamp: row.timestamp,
            x,
            y,
        });
    }

    rejects.sort_by_key(|r| r.row);
    Ok(IngestReport { records, rejects })
}

/// Records of one source laid onto the unit grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceBatches {
    pub source_id: String,
    pub batches: Vec<Batch>,
}

/// Groups records by source and unit segment. Every schema source gets
/// exactly `schema.segment_count()` batches, empty segments included.
pub fn batchify(records: &[DataRecord], schema: &DatasetSchema) -> Result<Vec<SourceBatches>, DataError> {
    let segments = schema.segment_count();
    let mut out: Vec<SourceBatches> = schema
        .sources
        .iter()
        .map(|s| SourceBatches {
            source_id: s.id.clone(),
            batches: (0..segments).map(|t| Batch::empty(&s.id, t)).collect(),
        })
        .collect();

    let mut last_ts: Vec<Option<i64>> = vec![None; schema.sources.len()];
    for rec in records {
        let src = schema
            .source_index(&rec.source_id)
            .ok_or_else(|| DataError::UnknownSource(rec.source_id.clone()))?;
        if rec.x.len() != schema.dims() {
            return Err(DataError::DimensionMismatch {
                expected: schema.dims(),
                found: rec.x.len(),
            });
        }
        let segment = schema.segment_of(rec.timestamp).ok_or(DataError::TimestampOutOfSpan {
            source_id: rec.source_id.clone(),
            timestamp: rec.timestamp,
        })?;
        if let Some(prev) = last_ts[src] {
            if rec.timestamp < prev {
                return Err(DataError::Unsorted(rec.source_id.clone()));
            }
        }
        last_ts[src] = Some(rec.timestamp);
        out[src].batches[segment].records.push(rec.clone());
    }
    Ok(out)
}
