//! Read-only payloads derived from an analysis bundle, plus the on-demand
//! concept computations behind the POST endpoints.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use driftscope_core::concept::{
    self, AttributeRanking, ConceptContext, ConceptDraft, MatrixSpec, PairedMatrix, RebasedMatrix,
};
use driftscope_core::drift_index::DriftKind;
use driftscope_core::export;
use driftscope_core::pipeline::AnalysisBundle;
use driftscope_core::ConceptError;

#[derive(Debug, Clone, Serialize)]
pub struct SourceSummary {
    pub id: String,
    pub name: String,
    pub record_count: usize,
    pub window: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SchemaView {
    pub attribute_names: Vec<String>,
    pub label_name: String,
    pub unit: i64,
    pub time_span: (i64, i64),
    pub segment_count: usize,
    pub sources: Vec<SourceSummary>,
    pub c_grid: Vec<f64>,
    pub default_c: f64,
    pub delta_t: usize,
    pub warning_level: f64,
    pub confirm_level: f64,
    pub global_ratio: f64,
}

pub fn schema_view(bundle: &AnalysisBundle) -> SchemaView {
    let s = &bundle.schema;
    SchemaView {
        attribute_names: s.attribute_names.clone(),
        label_name: s.label_name.clone(),
        unit: s.unit,
        time_span: s.time_span,
        segment_count: s.segment_count(),
        sources: s
            .sources
            .iter()
            .map(|info| {
                let a = bundle.source(&info.id);
                SourceSummary {
                    id: info.id.clone(),
                    name: info.name.clone(),
                    record_count: a.map_or(0, |a| a.record_count),
                    window: a.map_or(0, |a| a.window),
                }
            })
            .collect(),
        c_grid: bundle.consistency.as_ref().map(|c| c.by_c.iter().map(|x| x.c).collect()).unwrap_or_default(),
        default_c: bundle.settings.c,
        delta_t: bundle.settings.delta_t,
        warning_level: bundle.settings.warning_level,
        confirm_level: bundle.settings.confirm_level,
        global_ratio: bundle.label_balance.ratio(),
    }
}

/// Maximal runs of segments whose batch level reaches `threshold`.
pub fn runs_at_or_above(levels: &[f64], threshold: f64) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &l) in levels.iter().enumerate() {
        match (l >= threshold, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push([s, t - 1]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push([s, levels.len() - 1]);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct TimelineRow {
    pub source: String,
    /// Segments with a confirmed drift (the `×` marks).
    pub confirmations: Vec<usize>,
    /// Runs of segments at or above the warning level (the `−` marks).
    pub warnings: Vec<[usize; 2]>,
    pub drift_levels: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimelineView {
    pub segment_count: usize,
    pub warning_level: f64,
    pub sources: Vec<TimelineRow>,
}

pub fn timeline_view(bundle: &AnalysisBundle) -> TimelineView {
    TimelineView {
        segment_count: bundle.schema.segment_count(),
        warning_level: bundle.settings.warning_level,
        sources: bundle
            .sources
            .iter()
            .zip(&bundle.batches)
            .map(|(s, b)| TimelineRow {
                source: s.source.clone(),
                confirmations: s.confirmation_segments(),
                warnings: runs_at_or_above(&s.drift_levels, bundle.settings.warning_level),
                drift_levels: s.drift_levels.clone(),
                batch_sizes: b.batches.iter().map(|b| b.size()).collect(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Stripe {
    pub start: usize,
    pub end: usize,
    /// Accuracy lost relative to the segment before the run.
    pub drop: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarkedDrift {
    pub segment: usize,
    pub record_index: usize,
    pub level: f64,
    /// Outside every inferred segment at the requested threshold (triangle).
    pub inconsistent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AccuracySeries {
    pub source: String,
    /// `[first_segment, last_segment, mean accuracy]` per bucket.
    pub points: Vec<(usize, usize, Option<f64>)>,
    pub stripes: Vec<Stripe>,
    /// Segments where a warning was raised (hollow dots).
    pub warnings: Vec<usize>,
    pub confirmations: Vec<MarkedDrift>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AccuracyView {
    pub from: usize,
    pub to: usize,
    pub c: Option<f64>,
    pub series: Vec<AccuracySeries>,
}

#[derive(Debug, Clone, Copy)]
pub struct AccuracyQuery<'a> {
    pub source: Option<&'a str>,
    pub from: Option<usize>,
    pub to: Option<usize>,
    pub max_points: usize,
    pub c: Option<f64>,
}

fn downsample(values: &[Option<f64>], offset: usize, max_points: usize) -> Vec<(usize, usize, Option<f64>)> {
    let width = values.len().div_ceil(max_points.max(1)).max(1);
    values
        .chunks(width)
        .enumerate()
        .map(|(k, chunk)| {
            let present: Vec<f64> = chunk.iter().flatten().copied().collect();
            let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
            let first = offset + k * width;
            (first, first + chunk.len() - 1, mean)
        })
        .collect()
}

fn stripes(accuracy: &[Option<f64>], levels: &[f64], threshold: f64) -> Vec<Stripe> {
    runs_at_or_above(levels, threshold)
        .into_iter()
        .map(|[start, end]| {
            let before = accuracy[..start].iter().rev().flatten().next().copied();
            let lowest = accuracy[start..=end].iter().flatten().copied().fold(f64::INFINITY, f64::min);
            let drop = match before {
                Some(b) if lowest.is_finite() => (b - lowest).max(0.0),
                _ => 0.0,
            };
            Stripe { start, end, drop }
        })
        .collect()
}

pub fn accuracy_view(bundle: &AnalysisBundle, q: AccuracyQuery<'_>) -> Result<AccuracyView, ApiFailure> {
    let segments = bundle.schema.segment_count();
    let last = segments.saturating_sub(1);
    let from = q.from.unwrap_or(0);
    let to = q.to.unwrap_or(last).min(last);
    if from > to {
        return Err(ApiFailure::bad_request("invalid_range", format!("from {from} exceeds to {to}")));
    }
    let consistency = bundle.consistency.as_ref().map(|c| c.at(q.c.unwrap_or(c.default_c)));
    let selected: Vec<_> = match q.source {
        Some(id) => vec![bundle.source(id).ok_or_else(|| ApiFailure::unknown_source(id))?],
        None => bundle.sources.iter().collect(),
    };
    let series = selected
        .into_iter()
        .map(|s| {
            let verdicts = consistency
                .and_then(|c| c.results.iter().find(|r| r.source == s.source))
                .map(|r| r.verdicts.clone())
                .unwrap_or_default();
            let in_range = |seg: usize| (from..=to).contains(&seg);
            AccuracySeries {
                source: s.source.clone(),
                points: downsample(&s.accuracy[from..=to], from, q.max_points),
                stripes: stripes(&s.accuracy, &s.drift_levels, bundle.settings.warning_level)
                    .into_iter()
                    .filter(|st| st.end >= from && st.start <= to)
                    .collect(),
                warnings: {
                    let mut w: Vec<usize> = s
                        .events
                        .iter()
                        .filter(|e| e.kind == DriftKind::Warning && in_range(e.segment))
                        .map(|e| e.segment)
                        .collect();
                    w.dedup();
                    w
                },
                confirmations: s
                    .confirmations()
                    .filter(|e| in_range(e.segment))
                    .map(|e| MarkedDrift {
                        segment: e.segment,
                        record_index: e.record_index,
                        level: e.level,
                        inconsistent: verdicts.iter().any(|v| v.segment == e.segment && !v.consistent),
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(AccuracyView { from, to, c: consistency.map(|c| c.c), series })
}

pub fn trajectories_view(bundle: &AnalysisBundle, from: Option<usize>, to: Option<usize>) -> Result<Value, ApiFailure> {
    let t = bundle
        .trajectories
        .as_ref()
        .ok_or_else(|| ApiFailure::unavailable("trajectories_unavailable", "fewer than two snapshots"))?;
    let mut body = export::trajectories_json(t);
    let from = from.unwrap_or(0);
    let to = to.unwrap_or(usize::MAX);
    body["window"] = serde_json::json!({ "from": from, "to": to, "bounds": t.window_bounds(from, to) });
    Ok(body)
}

pub fn consistency_view(bundle: &AnalysisBundle, c: Option<f64>) -> Result<Value, ApiFailure> {
    let cons = bundle
        .consistency
        .as_ref()
        .ok_or_else(|| ApiFailure::unavailable("consistency_unavailable", "needs at least two sources"))?;
    let at = cons.at(c.unwrap_or(cons.default_c));
    Ok(serde_json::json!({
        "c": at.c,
        "delta_t": cons.delta_t,
        "results": export::consistency_json(&at.results),
        "inconsistent_sources": at.results.iter().filter(|r| r.inconsistent).map(|r| &r.source).collect::<Vec<_>>(),
        "timelines": at.results.iter().map(|r| serde_json::json!({"source": r.source, "timeline": r.timeline})).collect::<Vec<_>>(),
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct Recommendation {
    pub source: String,
    pub segment: usize,
    pub range: [usize; 2],
    pub interval: (i64, i64),
}

pub fn recommend_view(bundle: &AnalysisBundle, source: &str, t: i64) -> Result<Recommendation, ApiFailure> {
    let s = bundle.source(source).ok_or_else(|| ApiFailure::unknown_source(source))?;
    let schema = &bundle.schema;
    let segment = schema
        .segment_of(t)
        .ok_or_else(|| ApiFailure::bad_request("out_of_span", format!("timestamp {t} outside the dataset span")))?;
    let range = concept::recommend_segment(&s.confirmation_segments(), segment, schema.segment_count());
    Ok(Recommendation {
        source: source.to_string(),
        segment,
        range,
        interval: (schema.segment_interval(range[0]).0, schema.segment_interval(range[1]).1),
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct MatrixRequest {
    pub context: ConceptContext,
    #[serde(default)]
    pub bins: Option<usize>,
    #[serde(default)]
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixResponse {
    pub batch_count: usize,
    pub record_count: usize,
    pub ranking: AttributeRanking,
    pub matrix: MatrixSpec,
    pub rebased: RebasedMatrix,
}

impl MatrixRequest {
    fn bins(&self, bundle: &AnalysisBundle) -> usize {
        self.bins.unwrap_or(bundle.settings.bins).max(1)
    }

    fn cap(&self, bundle: &AnalysisBundle) -> usize {
        self.cap.unwrap_or(bundle.settings.attribute_cap).clamp(1, concept::DEFAULT_ATTRIBUTE_CAP)
    }
}

pub fn concept_matrix(bundle: &AnalysisBundle, req: &MatrixRequest) -> Result<MatrixResponse, ApiFailure> {
    let batches = req.context.select(&bundle.batches)?;
    let ranking = concept::rank_attributes(&batches, &bundle.schema, req.cap(bundle))?;
    let matrix = concept::build_matrix(&batches, &bundle.schema, &ranking, req.bins(bundle))?;
    let rebased = concept::rebase_colors(&matrix, bundle.label_balance.ratio());
    Ok(MatrixResponse {
        batch_count: batches.iter().filter(|b| !b.is_empty()).count(),
        record_count: concept::record_count(&batches),
        ranking,
        matrix,
        rebased,
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct IdentifyRequest {
    pub context: ConceptContext,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub bins: Option<usize>,
    #[serde(default)]
    pub cap: Option<usize>,
}

pub fn concept_draft(bundle: &AnalysisBundle, req: &IdentifyRequest) -> Result<ConceptDraft, ApiFailure> {
    let m = concept_matrix(
        bundle,
        &MatrixRequest { context: req.context.clone(), bins: req.bins, cap: req.cap },
    )?;
    Ok(ConceptDraft {
        attribute_names: bundle.schema.attribute_names.clone(),
        context: req.context.clone(),
        ranking: m.ranking,
        matrix: m.matrix,
        note: req.note.clone(),
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct CompareRequest {
    pub concept_id: u64,
    pub context: ConceptContext,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareResponse {
    pub concept_id: u64,
    pub paired: PairedMatrix,
}

pub fn compare_view(
    bundle: &AnalysisBundle,
    stored: &concept::ConceptRecord,
    context: &ConceptContext,
) -> Result<CompareResponse, ApiFailure> {
    let batches = context.select(&bundle.batches)?;
    let paired = concept::compare(stored, &batches, &bundle.schema)?;
    Ok(CompareResponse { concept_id: stored.id, paired })
}

/// An error with an HTTP status and a machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiFailure {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiFailure {
    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self { status: 400, code, message: message.into() }
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self { status: 404, code, message: message.into() }
    }

    pub fn unavailable(code: &'static str, message: impl Into<String>) -> Self {
        Self { status: 409, code, message: message.into() }
    }

    pub fn unknown_source(id: &str) -> Self {
        Self::not_found("unknown_source", format!("no source `{id}`"))
    }
}

impl From<ConceptError> for ApiFailure {
    fn from(e: ConceptError) -> Self {
        let code = match &e {
            ConceptError::EmptyBatch | ConceptError::EmptySelection => "empty_selection",
            ConceptError::UnknownSource(_) => "unknown_source",
            ConceptError::InvalidRange { .. } => "invalid_range",
            ConceptError::OverlappingRanges(_) => "overlapping_ranges",
            ConceptError::SchemaMismatch => "schema_mismatch",
            ConceptError::EmptyRanking => "empty_ranking",
            ConceptError::UnknownConcept(_) => "unknown_concept",
            ConceptError::StorageFailure(_) => "storage_failure",
        };
        let status = match &e {
            ConceptError::UnknownSource(_) | ConceptError::UnknownConcept(_) => 404,
            ConceptError::StorageFailure(_) => 500,
            _ => 400,
        };
        Self { status, code, message: e.to_string() }
    }
}
