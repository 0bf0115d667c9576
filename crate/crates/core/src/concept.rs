//! Concept explanation: correlation ranking, the binned correlation matrix,
//! drift-bounded segment recommendations, and the identified-concept store.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Batch, DataRecord, DatasetSchema, SourceBatches};
use crate::error::ConceptError;

pub const DEFAULT_BINS: usize = 6;
pub const DEFAULT_ATTRIBUTE_CAP: usize = 15;
/// Cells holding more than this share of the selection get a heavy stroke.
pub const HEAVY_SHARE: f64 = 0.05;

/// Inclusive segment ranges for one source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRanges {
    pub source: String,
    pub ranges: Vec<[usize; 2]>,
}

/// The analyst's selection of sources and time segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptContext {
    pub sources: Vec<SourceRanges>,
}

impl ConceptContext {
    pub fn validate(&self, segment_count: usize) -> Result<(), ConceptError> {
        for sel in &self.sources {
            let mut sorted = sel.ranges.clone();
            sorted.sort();
            for &[start, end] in &sorted {
                if start > end || end >= segment_count {
                    return Err(ConceptError::InvalidRange { source_id: sel.source.clone(), start, end });
                }
            }
            if sorted.windows(2).any(|w| w[1][0] <= w[0][1]) {
                return Err(ConceptError::OverlappingRanges(sel.source.clone()));
            }
        }
        Ok(())
    }

    /// The selected batches, in context order.
    pub fn select<'a>(&self, data: &'a [SourceBatches]) -> Result<Vec<&'a Batch>, ConceptError> {
        let segment_count = data.first().map_or(0, |s| s.batches.len());
        self.validate(segment_count)?;
        let mut out = Vec::new();
        for sel in &self.sources {
            let src = data
                .iter()
                .find(|s| s.source_id == sel.source)
                .ok_or_else(|| ConceptError::UnknownSource(sel.source.clone()))?;
            let mut ranges = sel.ranges.clone();
            ranges.sort();
            for [start, end] in ranges {
                out.extend(&src.batches[start..=end]);
            }
        }
        Ok(out)
    }
}

pub fn record_count(batches: &[&Batch]) -> usize {
    batches.iter().map(|b| b.size()).sum()
}

fn centered_cosine(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mx = xs.clone().sum::<f64>() / n;
    let my = ys.clone().sum::<f64>() / n;
    let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
    for (x, y) in xs.zip(ys) {
        let (a, b) = (x - mx, y - my);
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    (dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0)
}

/// Cosine similarity between the mean-centred values of attribute `k` and
/// the mean-centred labels of a batch.
pub fn attribute_correlation(batch: &Batch, k: usize) -> Result<f64, ConceptError> {
    if batch.is_empty() {
        return Err(ConceptError::EmptyBatch);
    }
    let xs = batch.records.iter().map(|r| r.x[k]);
    let ys = batch.records.iter().map(|r| f64::from(r.y));
    Ok(centered_cosine(xs, ys))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAttribute {
    pub name: String,
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRanking {
    pub entries: Vec<RankedAttribute>,
}

impl AttributeRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Scores each attribute by its mean correlation over the non-empty
/// selected batches and orders by absolute score, names breaking ties.
pub fn rank_attributes(batches: &[&Batch], schema: &DatasetSchema, cap: usize) -> Result<AttributeRanking, ConceptError> {
    let filled: Vec<&&Batch> = batches.iter().filter(|b| !b.is_empty()).collect();
    if filled.is_empty() {
        return Err(ConceptError::EmptySelection);
    }
    let mut entries = schema
        .attribute_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let total = filled
                .iter()
                .map(|b| attribute_correlation(b, k))
                .sum::<Result<f64, _>>()?;
            Ok(RankedAttribute { name: name.clone(), index: k, score: total / filled.len() as f64 })
        })
        .collect::<Result<Vec<_>, ConceptError>>()?;
    entries.sort_by(|a, b| b.score.abs().total_cmp(&a.score.abs()).then_with(|| a.name.cmp(&b.name)));
    entries.truncate(cap);
    Ok(AttributeRanking { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AxisKind {
    /// One bin per schema source, in schema order.
    Source { sources: Vec<String> },
    /// Equal-width bins with `edges.len() == bins + 1`.
    Attribute { index: usize, edges: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixAxis {
    pub name: String,
    #[serde(flatten)]
    pub kind: AxisKind,
}

impl MatrixAxis {
    pub fn bins(&self) -> usize {
        match &self.kind {
            AxisKind::Source { sources } => sources.len(),
            AxisKind::Attribute { edges, .. } => edges.len() - 1,
        }
    }

    /// Bin of a record; out-of-range values land in the nearest end bin.
    pub fn bin_of(&self, record: &DataRecord) -> usize {
        match &self.kind {
            AxisKind::Source { sources } => sources
                .iter()
                .position(|s| *s == record.source_id)
                .unwrap_or(0),
            AxisKind::Attribute { index, edges } => {
                let bins = edges.len() - 1;
                let (lo, hi) = (edges[0], edges[bins]);
                let v = record.x[*index];
                if !(hi > lo) {
                    return 0;
                }
                let pos = ((v - lo) / (hi - lo) * bins as f64).floor();
                if pos < 0.0 {
                    0
                } else {
                    (pos as usize).min(bins - 1)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stroke {
    None,
    Light,
    Heavy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub pos: u64,
    pub neg: u64,
    /// `(pos - neg) / (pos + neg)`, absent for empty cells.
    pub ratio: Option<f64>,
    pub heavy: bool,
    pub stroke: Stroke,
}

impl CellStats {
    pub fn from_counts(pos: u64, neg: u64, total: u64) -> Self {
        let count = pos + neg;
        let ratio = (count > 0).then(|| (pos as f64 - neg as f64) / count as f64);
        let heavy = count as f64 > HEAVY_SHARE * total as f64;
        let stroke = match (count, heavy) {
            (0, _) => Stroke::None,
            (_, true) => Stroke::Heavy,
            _ => Stroke::Light,
        };
        Self { pos, neg, ratio, heavy, stroke }
    }

    pub fn count(&self) -> u64 {
        self.pos + self.neg
    }
}

/// Cells of one ordered axis pair, row-major over `(row_bin, col_bin)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCells {
    pub row: usize,
    pub col: usize,
    pub row_bins: usize,
    pub col_bins: usize,
    pub cells: Vec<CellStats>,
}

impl PairCells {
    pub fn cell(&self, row_bin: usize, col_bin: usize) -> &CellStats {
        &self.cells[row_bin * self.col_bins + col_bin]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub pos: Vec<u64>,
    pub neg: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    /// The source pseudo-attribute first, then the ranked attributes.
    pub axes: Vec<MatrixAxis>,
    pub total: u64,
    pub positives: u64,
    /// Every ordered pair `(row, col)` with `row != col`, row-major.
    pub pairs: Vec<PairCells>,
    pub diagonal: Vec<Histogram>,
}

impl MatrixSpec {
    fn pair_index(&self, row: usize, col: usize) -> usize {
        assert_ne!(row, col, "diagonal cells hold histograms");
        row * (self.axes.len() - 1) + if col < row { col } else { col - 1 }
    }

    pub fn pair(&self, row: usize, col: usize) -> &PairCells {
        &self.pairs[self.pair_index(row, col)]
    }

    pub fn cell(&self, row: usize, col: usize, row_bin: usize, col_bin: usize) -> &CellStats {
        self.pair(row, col).cell(row_bin, col_bin)
    }
}

fn attribute_axis(name: &str, index: usize, batches: &[&Batch], bins: usize) -> MatrixAxis {
    let (lo, hi) = batches
        .iter()
        .flat_map(|b| &b.records)
        .map(|r| r.x[index])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let edges = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + (hi - lo) * k as f64 / bins as f64 })
        .collect();
    MatrixAxis { name: name.to_string(), kind: AxisKind::Attribute { index, edges } }
}

/// Axis layout for a selection: the source axis, then one equal-width
/// axis per ranked attribute spanning the selection's range.
pub fn build_axes(batches: &[&Batch], schema: &DatasetSchema, ranking: &AttributeRanking, bins: usize) -> Vec<MatrixAxis> {
    let bins = bins.max(1);
    let mut axes = vec![MatrixAxis {
        name: "source".into(),
        kind: AxisKind::Source { sources: schema.sources.iter().map(|s| s.id.clone()).collect() },
    }];
    axes.extend(ranking.entries.iter().map(|e| attribute_axis(&e.name, e.index, batches, bins)));
    axes
}

/// Counts positive and negative records into every cell of a fixed layout.
pub fn count_matrix(batches: &[&Batch], axes: Vec<MatrixAxis>) -> MatrixSpec {
    let n_axes = axes.len();
    let records: Vec<&DataRecord> = batches.iter().flat_map(|b| &b.records).collect();
    let bins: Vec<Vec<usize>> = records.iter().map(|r| axes.iter().map(|a| a.bin_of(r)).collect()).collect();
    let total = records.len() as u64;
    let positives = records.iter().filter(|r| r.positive()).count() as u64;

    let mut pairs = Vec::with_capacity(n_axes * n_axes.saturating_sub(1));
    for row in 0..n_axes {
        for col in (0..n_axes).filter(|&c| c != row) {
            let (rb, cb) = (axes[row].bins(), axes[col].bins());
            let mut counts = vec![(0u64, 0u64); rb * cb];
            for (r, b) in records.iter().zip(&bins) {
                let slot = &mut counts[b[row] * cb + b[col]];
                if r.positive() {
                    slot.0 += 1;
                } else {
                    slot.1 += 1;
                }
            }
            pairs.push(PairCells {
                row,
                col,
                row_bins: rb,
                col_bins: cb,
                cells: counts.into_iter().map(|(p, n)| CellStats::from_counts(p, n, total)).collect(),
            });
        }
    }
    let diagonal = (0..n_axes)
        .map(|a| {
            let mut h = Histogram { pos: vec![0; axes[a].bins()], neg: vec![0; axes[a].bins()] };
            for (r, b) in records.iter().zip(&bins) {
                if r.positive() {
                    h.pos[b[a]] += 1;
                } else {
                    h.neg[b[a]] += 1;
                }
            }
            h
        })
        .collect();
    MatrixSpec { axes, total, positives, pairs, diagonal }
}

pub fn build_matrix(
    batches: &[&Batch],
    schema: &DatasetSchema,
    ranking: &AttributeRanking,
    bins: usize,
) -> Result<MatrixSpec, ConceptError> {
    if ranking.is_empty() {
        return Err(ConceptError::EmptyRanking);
    }
    Ok(count_matrix(batches, build_axes(batches, schema, ranking, bins)))
}

/// Share of positives over a whole dataset, as a pos/neg ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelBalance {
    pub positives: u64,
    pub negatives: u64,
}

impl LabelBalance {
    pub fn of<'a>(records: impl IntoIterator<Item = &'a DataRecord>) -> Self {
        let (mut positives, mut negatives) = (0, 0);
        for r in records {
            if r.positive() {
                positives += 1;
            } else {
                negatives += 1;
            }
        }
        Self { positives, negatives }
    }

    pub fn ratio(&self) -> f64 {
        let n = self.positives + self.negatives;
        if n == 0 {
            0.0
        } else {
            (self.positives as f64 - self.negatives as f64) / n as f64
        }
    }
}

/// Cell ratios re-centred on the dataset-wide ratio; the neutral (white)
/// value is `neutral`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebasedMatrix {
    pub neutral: f64,
    /// Parallel to `MatrixSpec::pairs`.
    pub pairs: Vec<Vec<Option<f64>>>,
}

pub fn rebase_ratio(ratio: f64, baseline: f64) -> f64 {
    (ratio - baseline).clamp(-1.0, 1.0)
}

pub fn rebase_colors(matrix: &MatrixSpec, baseline: f64) -> RebasedMatrix {
    RebasedMatrix {
        neutral: baseline,
        pairs: matrix
            .pairs
            .iter()
            .map(|p| p.cells.iter().map(|c| c.ratio.map(|r| rebase_ratio(r, baseline))).collect())
            .collect(),
    }
}

/// Segments between the confirmations around `t`: from just after the last
/// confirmation at or before `t` to just before the next one, clamped to
/// `[0, segment_count - 1]`.
pub fn recommend_segment(confirmations: &[usize], t: usize, segment_count: usize) -> [usize; 2] {
    let last = segment_count.saturating_sub(1);
    let t = t.min(last);
    let start = confirmations.iter().copied().filter(|&c| c <= t).max().map_or(0, |c| c + 1);
    let end = confirmations.iter().copied().filter(|&c| c > t).min().map_or(last, |c| c - 1);
    let start = start.min(last);
    [start, end.max(start)]
}

/// An identified concept. Never modified after creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub id: u64,
    pub attribute_names: Vec<String>,
    pub context: ConceptContext,
    pub ranking: AttributeRanking,
    pub matrix: MatrixSpec,
    pub created_at: i64,
    pub note: String,
}

/// Stored concept (lower-left) against a live context (upper-right),
/// both binned on the stored concept's axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedMatrix {
    pub lower: MatrixSpec,
    pub upper: MatrixSpec,
}

impl PairedMatrix {
    pub fn axes(&self) -> &[MatrixAxis] {
        &self.lower.axes
    }

    /// The displayed cell: below the diagonal from the stored concept,
    /// above it from the live context.
    pub fn cell(&self, row: usize, col: usize, row_bin: usize, col_bin: usize) -> &CellStats {
        if row > col {
            self.lower.cell(row, col, row_bin, col_bin)
        } else {
            self.upper.cell(row, col, row_bin, col_bin)
        }
    }

    /// Address of the cell mirrored across the diagonal.
    pub fn mirror(row: usize, col: usize, row_bin: usize, col_bin: usize) -> (usize, usize, usize, usize) {
        (col, row, col_bin, row_bin)
    }

    /// Grounded histogram (stored concept) and inverted one (live context).
    pub fn diagonal(&self, axis: usize) -> (&Histogram, &Histogram) {
        (&self.lower.diagonal[axis], &self.upper.diagonal[axis])
    }
}

pub fn compare(stored: &ConceptRecord, live: &[&Batch], schema: &DatasetSchema) -> Result<PairedMatrix, ConceptError> {
    if stored.attribute_names != schema.attribute_names {
        return Err(ConceptError::SchemaMismatch);
    }
    Ok(PairedMatrix {
        lower: stored.matrix.clone(),
        upper: count_matrix(live, stored.matrix.axes.clone()),
    })
}

/// A concept about to be stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptDraft {
    pub attribute_names: Vec<String>,
    pub context: ConceptContext,
    pub ranking: AttributeRanking,
    pub matrix: MatrixSpec,
    pub note: String,
}

/// Append-only concept store, optionally backed by a JSON-lines file.
#[derive(Debug, Default)]
pub struct ConceptStore {
    path: Option<PathBuf>,
    records: Vec<ConceptRecord>,
}

impl ConceptStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a JSON-lines store, loading existing records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ConceptError> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| ConceptError::StorageFailure(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| ConceptError::StorageFailure(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ConceptRecord =
                    serde_json::from_str(&line).map_err(|e| ConceptError::StorageFailure(e.to_string()))?;
                records.push(rec);
            }
        }
        Ok(Self { path: Some(path), records })
    }

    pub fn identify(&mut self, draft: ConceptDraft) -> Result<u64, ConceptError> {
        let created_at = chrono::Utc::now().timestamp();
        let created_at = self.records.last().map_or(created_at, |r| created_at.max(r.created_at));
        self.insert(draft, created_at)
    }

    /// Like [`identify`](Self::identify) with an explicit creation time.
    pub fn insert(&mut self, draft: ConceptDraft, created_at: i64) -> Result<u64, ConceptError> {
        let id = self.records.last().map_or(1, |r| r.id + 1);
        let record = ConceptRecord {
            id,
            attribute_names: draft.attribute_names,
            context: draft.context,
            ranking: draft.ranking,
            matrix: draft.matrix,
            created_at,
            note: draft.note,
        };
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&record).map_err(|e| ConceptError::StorageFailure(e.to_string()))?;
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| ConceptError::StorageFailure(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| ConceptError::StorageFailure(e.to_string()))?;
        }
        self.records.push(record);
        Ok(id)
    }

    pub fn get(&self, id: u64) -> Option<&ConceptRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// All records in creation order.
    pub fn list(&self) -> &[ConceptRecord] {
        &self.records
    }
}
