//! Offline pipeline: ingest, learn, detect, judge, project.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::concept::{LabelBalance, DEFAULT_ATTRIBUTE_CAP, DEFAULT_BINS};
use crate::consistency::{self, ConsistencyResult, DriftLevelGrid, SourceCurve};
use crate::data::{self, DataRecord, DatasetSchema, NormalizationStats, RowReject, SourceBatches};
use crate::drift_index::{DetectorConfig, DetectorState, DriftEvent, DriftKind, DriftStatus, WindowMode};
use crate::learner::{EnsembleConfig, EnsembleState, ParameterSnapshot};
use crate::projection::{self, Trajectories};

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("ingest of {path} failed: {message}")]
    Ingest { path: PathBuf, message: String },
    #[error("{stage} failed{}: {message}", source_id.as_ref().map(|s| format!(" for source `{s}`")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        source_id: Option<String>,
        message: String,
    },
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl PipelineError {
    fn stage(stage: &'static str, source_id: Option<&str>, err: impl std::fmt::Display) -> Self {
        Self::Stage { stage, source_id: source_id.map(str::to_string), message: err.to_string() }
    }
}

fn default_window() -> usize {
    500
}
fn default_mode() -> WindowMode {
    WindowMode::SinceReset
}
fn default_warning() -> f64 {
    2.0
}
fn default_confirm() -> f64 {
    3.0
}
fn default_delta_t() -> usize {
    1
}
fn default_c() -> f64 {
    0.7
}
fn default_capacity() -> usize {
    5
}
fn default_lr() -> f64 {
    0.05
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_cap() -> usize {
    DEFAULT_ATTRIBUTE_CAP
}

/// Analysis parameters; everything except file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Overrides the manifest's unit segment length (seconds).
    #[serde(default)]
    pub unit: Option<i64>,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Per-source window overrides.
    #[serde(default)]
    pub windows: BTreeMap<String, usize>,
    #[serde(default = "default_mode")]
    pub window_mode: WindowMode,
    #[serde(default = "default_warning")]
    pub warning_level: f64,
    #[serde(default = "default_confirm")]
    pub confirm_level: f64,
    #[serde(default = "default_delta_t")]
    pub delta_t: usize,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_capacity")]
    pub ensemble_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_cap")]
    pub attribute_cap: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.warning_level < self.confirm_level) {
            return Err("warning_level must be below confirm_level".into());
        }
        if self.window == 0 || self.windows.values().any(|&w| w == 0) {
            return Err("window sizes must be positive".into());
        }
        if self.ensemble_size == 0 || self.bins == 0 || self.attribute_cap == 0 {
            return Err("ensemble_size, bins and attribute_cap must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        if !(0.0 < self.c && self.c < 1.0) {
            return Err("c must lie in (0, 1)".into());
        }
        if matches!(self.unit, Some(u) if u <= 0) {
            return Err("unit must be positive".into());
        }
        Ok(())
    }

    pub fn detector_config(&self, source: &str) -> DetectorConfig {
        let mut cfg = DetectorConfig::new(*self.windows.get(source).unwrap_or(&self.window), self.window_mode);
        cfg.warning_level = self.warning_level;
        cfg.confirm_level = self.confirm_level;
        cfg
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig { capacity: self.ensemble_size, learning_rate: self.learning_rate }
    }
}

/// Config file contents (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(flatten)]
    pub settings: AnalysisSettings,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let err = |message: String| PipelineError::Config { path: path.to_path_buf(), message };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        // `settings` is flattened, which would silently accept typos, so the
        // file locations are split off and the rest parsed strictly.
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        let manifest = match table.remove("manifest") {
            Some(toml::Value::String(m)) => PathBuf::from(m),
            Some(_) => return Err(err("`manifest` must be a string".into())),
            None => return Err(err("missing `manifest`".into())),
        };
        let output = match table.remove("output") {
            Some(toml::Value::String(o)) => Some(PathBuf::from(o)),
            Some(_) => return Err(err("`output` must be a string".into())),
            None => None,
        };
        let settings: AnalysisSettings = table.try_into().map_err(|e: toml::de::Error| err(e.to_string()))?;
        let mut cfg = PipelineConfig { manifest, output, settings };
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.manifest.is_relative() {
            cfg.manifest = base.join(&cfg.manifest);
        }
        if let Some(out) = cfg.output.as_mut().filter(|o| o.is_relative()) {
            *out = base.join(&*out);
        }
        cfg.settings.validate().map_err(err)?;
        Ok(cfg)
    }
}

/// Dataset manifest (JSON): the schema plus the CSV files holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub schema: DatasetSchema,
    pub files: Vec<PathBuf>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let err = |message: String| PipelineError::Ingest { path: path.to_path_buf(), message };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut manifest: Manifest = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        manifest.schema.validate().map_err(|e| err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in &mut manifest.files {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRejects {
    pub file: String,
    pub rejects: Vec<RowReject>,
}

/// Everything learned about one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceAnalysis {
    pub source: String,
    pub window: usize,
    pub record_count: usize,
    /// Output-model prequential accuracy per segment; `None` when empty.
    pub accuracy: Vec<Option<f64>>,
    pub drift_levels: Vec<f64>,
    pub events: Vec<DriftEvent>,
    pub snapshots: Vec<ParameterSnapshot>,
    pub normalization: NormalizationStats,
}

impl SourceAnalysis {
    pub fn confirmations(&self) -> impl Iterator<Item = &DriftEvent> {
        self.events.iter().filter(|e| e.kind == DriftKind::Confirmed)
    }

    /// Segments holding at least one confirmation, ascending and unique.
    pub fn confirmation_segments(&self) -> Vec<usize> {
        let mut segs: Vec<usize> = self.confirmations().map(|e| e.segment).collect();
        segs.dedup();
        segs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyAtC {
    pub c: f64,
    pub results: Vec<ConsistencyResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyBundle {
    pub delta_t: usize,
    pub default_c: f64,
    pub curves: Vec<SourceCurve>,
    pub by_c: Vec<ConsistencyAtC>,
}

impl ConsistencyBundle {
    /// Precomputed results at the grid value closest to `c`.
    pub fn at(&self, c: f64) -> &ConsistencyAtC {
        self.by_c
            .iter()
            .min_by(|a, b| (a.c - c).abs().total_cmp(&(b.c - c).abs()))
            .expect("non-empty c grid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub version: u32,
    pub settings: AnalysisSettings,
    pub schema: DatasetSchema,
    pub ingest_rejects: Vec<FileRejects>,
    pub batches: Vec<SourceBatches>,
    pub sources: Vec<SourceAnalysis>,
    pub grid: DriftLevelGrid,
    pub consistency: Option<ConsistencyBundle>,
    pub trajectories: Option<Trajectories>,
    pub label_balance: LabelBalance,
}

impl AnalysisBundle {
    pub fn source(&self, id: &str) -> Option<&SourceAnalysis> {
        self.sources.iter().find(|s| s.source == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        fs::write(path, self.to_json())
            .map_err(|e| PipelineError::Output { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let err = |message: String| PipelineError::Ingest { path: path.to_path_buf(), message };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

/// Wall-clock cost of each stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub ingest_ms: f64,
    pub learn_and_detect_ms: f64,
    pub consistency_ms: f64,
    pub projection_ms: f64,
    pub records: usize,
}

impl StageTimings {
    pub fn per_record_ms(&self) -> f64 {
        if self.records == 0 {
            0.0
        } else {
            self.learn_and_detect_ms / self.records as f64
        }
    }
}

pub struct PipelineRun {
    pub bundle: AnalysisBundle,
    pub timings: StageTimings,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Trains the ensemble and runs the drift index over one source's batches.
pub fn analyze_source(
    batches: &mut SourceBatches,
    dims: usize,
    settings: &AnalysisSettings,
) -> Result<SourceAnalysis, PipelineError> {
    let source = batches.source_id.clone();
    let det_cfg = settings.detector_config(&source);
    let mut ensemble = EnsembleState::new(&source, dims, settings.ensemble_config());
    let mut detector = DetectorState::new(det_cfg);
    let mut stats = NormalizationStats::new(dims);
    let mut events = Vec::new();
    let mut accuracy = Vec::with_capacity(batches.batches.len());
    let mut drift_levels = Vec::with_capacity(batches.batches.len());
    let mut snapshots = Vec::with_capacity(batches.batches.len());
    let mut offset = 0usize;

    for batch in &mut batches.batches {
        let segment = batch.segment_index;
        let outcome = ensemble
            .step(batch, &mut stats, |i, rec, correct| {
                let before = detector.last_status();
                let obs = detector.observe(correct);
                let kind = match obs.status {
                    DriftStatus::Confirmed => Some(DriftKind::Confirmed),
                    DriftStatus::Warning if before == DriftStatus::Stable => Some(DriftKind::Warning),
                    _ => None,
                };
                if let Some(kind) = kind {
                    events.push(DriftEvent {
                        source: source.clone(),
                        segment,
                        record_index: offset + i,
                        timestamp: rec.timestamp,
                        kind,
                        level: obs.level,
                    });
                }
                obs.status == DriftStatus::Confirmed
            })
            .map_err(|e| PipelineError::stage("learn", Some(&source), e))?;
        offset += batch.size();
        batch.drift_level = detector.finish_batch();
        accuracy.push(outcome.accuracy);
        drift_levels.push(batch.drift_level);
        snapshots.push(outcome.snapshot);
    }

    Ok(SourceAnalysis {
        source,
        window: det_cfg.window,
        record_count: offset,
        accuracy,
        drift_levels,
        events,
        snapshots,
        normalization: stats,
    })
}

/// Runs every stage after ingest on in-memory records.
pub fn analyze(
    schema: DatasetSchema,
    records: &[DataRecord],
    settings: &AnalysisSettings,
    ingest_rejects: Vec<FileRejects>,
) -> Result<PipelineRun, PipelineError> {
    let mut timings = StageTimings { records: records.len(), ..Default::default() };
    settings.validate().map_err(|e| PipelineError::stage("config", None, e))?;
    let mut schema = schema;
    if let Some(unit) = settings.unit {
        schema.unit = unit;
    }
    schema.validate().map_err(|e| PipelineError::stage("batchify", None, e))?;

    let mut batches = data::batchify(records, &schema).map_err(|e| PipelineError::stage("batchify", None, e))?;

    let start = Instant::now();
    let dims = schema.dims();
    let sources: Vec<SourceAnalysis> = batches
        .par_iter_mut()
        .map(|b| analyze_source(b, dims, settings))
        .collect::<Result<_, _>>()?;
    timings.learn_and_detect_ms = ms(start);
    info!(
        stage = "learn+detect",
        ms = timings.learn_and_detect_ms,
        per_record_ms = timings.per_record_ms(),
        "stage finished"
    );

    let grid = DriftLevelGrid::new(
        sources.iter().map(|s| s.source.clone()).collect(),
        sources.iter().map(|s| s.drift_levels.clone()).collect(),
        sources
            .iter()
            .map(|s| {
                let mut flags = vec![false; s.drift_levels.len()];
                for seg in s.confirmation_segments() {
                    flags[seg] = true;
                }
                flags
            })
            .collect(),
    );

    let start = Instant::now();
    let consistency = if grid.source_count() >= 2 {
        let curves = consistency::fit_all(&grid, settings.delta_t, settings.confirm_level)
            .map_err(|e| PipelineError::stage("consistency", None, e))?;
        let by_c = consistency::c_grid()
            .into_iter()
            .map(|c| ConsistencyAtC {
                c,
                results: curves.iter().map(|sc| consistency::evaluate(sc, c, settings.delta_t)).collect(),
            })
            .collect();
        Some(ConsistencyBundle { delta_t: settings.delta_t, default_c: settings.c, curves, by_c })
    } else {
        None
    };
    timings.consistency_ms = ms(start);
    info!(stage = "consistency", ms = timings.consistency_ms, "stage finished");

    let start = Instant::now();
    let per_source: Vec<(String, Vec<ParameterSnapshot>)> =
        sources.iter().map(|s| (s.source.clone(), s.snapshots.clone())).collect();
    let trajectories = match projection::build_trajectories(&per_source) {
        Ok(t) => Some(t),
        Err(crate::error::ProjectionError::InsufficientData(_)) => None,
        Err(e) => return Err(PipelineError::stage("projection", None, e)),
    };
    timings.projection_ms = ms(start);
    info!(stage = "projection", ms = timings.projection_ms, "stage finished");

    let label_balance = LabelBalance::of(records);
    let bundle = AnalysisBundle {
        version: BUNDLE_VERSION,
        settings: settings.clone(),
        schema,
        ingest_rejects,
        batches,
        sources,
        grid,
        consistency,
        trajectories,
        label_balance,
    };
    Ok(PipelineRun { bundle, timings })
}

/// Reads the manifest and its CSV files.
pub fn ingest_manifest(manifest: &Manifest) -> Result<(Vec<DataRecord>, Vec<FileRejects>), PipelineError> {
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for path in &manifest.files {
        let file = fs::File::open(path)
            .map_err(|e| PipelineError::Ingest { path: path.clone(), message: e.to_string() })?;
        let report = data::ingest_csv(std::io::BufReader::new(file), &manifest.schema)
            .map_err(|e| PipelineError::Ingest { path: path.clone(), message: e.to_string() })?;
        records.extend(report.records);
        if !report.rejects.is_empty() {
            rejects.push(FileRejects { file: path.display().to_string(), rejects: report.rejects });
        }
    }
    let schema = &manifest.schema;
    records.sort_by(|a, b| {
        (schema.source_index(&a.source_id), a.timestamp).cmp(&(schema.source_index(&b.source_id), b.timestamp))
    });
    Ok((records, rejects))
}

/// Full offline run; persists the bundle when the config names an output.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    let start = Instant::now();
    let manifest = Manifest::load(&config.manifest)?;
    let (records, rejects) = ingest_manifest(&manifest)?;
    let ingest_ms = ms(start);
    info!(stage = "ingest", ms = ingest_ms, records = records.len(), "stage finished");

    let mut run = analyze(manifest.schema, &records, &config.settings, rejects)?;
    run.timings.ingest_ms = ingest_ms;
    if let Some(out) = &config.output {
        run.bundle.save(out)?;
        info!(path = %out.display(), "bundle written");
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_stream, SynthSpec};

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults() {
        let s = AnalysisSettings::default();
        assert_eq!((s.window, s.delta_t, s.ensemble_size, s.bins, s.attribute_cap), (500, 1, 5, 6, 15));
        assert_eq!((s.warning_level, s.confirm_level, s.c, s.learning_rate), (2.0, 3.0, 0.7, 0.05));
        assert_eq!(s.window_mode, WindowMode::SinceReset);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn config_paths_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.toml", "manifest = \"m.json\"\noutput = \"out/b.json\"\nwindow = 100\n[windows]\ns1 = 1500\n");
        let cfg = PipelineConfig::load(&p).unwrap();
        assert_eq!(cfg.manifest, dir.path().join("m.json"));
        assert_eq!(cfg.output, Some(dir.path().join("out/b.json")));
        assert_eq!(cfg.settings.detector_config("s1").window, 1500);
        assert_eq!(cfg.settings.detector_config("s0").window, 100);
        assert_eq!(cfg.settings.detector_config("s0").warmup, 20);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        for text in ["manifest = \"m.json\"\nwindw = 3\n", "window = 3\n", "manifest = \"m.json\"\nc = 1.5\n"] {
            let p = write(dir.path(), "bad.toml", text);
            assert!(matches!(PipelineConfig::load(&p), Err(PipelineError::Config { .. })), "{text}");
        }
    }

    #[test]
    fn nearest_grid_value() {
        let out = synth_stream(&SynthSpec::abrupt(2, 2, 600, 300, 0.1, 1));
        let run = analyze(out.schema, &out.records, &AnalysisSettings::default(), vec![]).unwrap();
        let cons = run.bundle.consistency.unwrap();
        assert_eq!(cons.by_c.len(), 10);
        assert_eq!(cons.at(0.72).c, 0.7);
        assert_eq!(cons.at(0.99).c, 0.95);
        assert_eq!(cons.at(0.1).c, 0.5);
    }

    #[test]
    fn events_carry_stream_positions() {
        let out = synth_stream(&SynthSpec::abrupt(1, 3, 3000, 1500, 0.0, 2));
        let run = analyze(out.schema.clone(), &out.records, &AnalysisSettings::default(), vec![]).unwrap();
        let src = &run.bundle.sources[0];
        assert_eq!(src.record_count, 3000);
        assert_eq!(src.snapshots.len(), out.schema.segment_count());
        for e in &src.events {
            assert_eq!(e.segment, e.record_index / 100);
            assert_eq!(e.timestamp, out.records[e.record_index].timestamp);
        }
        assert!(!src.confirmation_segments().is_empty());
        assert!(src.events.iter().any(|e| e.kind == DriftKind::Warning));
    }

    #[test]
    fn grid_mirrors_source_analyses() {
        let out = synth_stream(&SynthSpec::abrupt(2, 2, 800, 400, 0.05, 3));
        let run = analyze(out.schema, &out.records, &AnalysisSettings::default(), vec![]).unwrap();
        let b = &run.bundle;
        for (i, s) in b.sources.iter().enumerate() {
            assert_eq!(b.grid.levels[i], s.drift_levels);
            assert_eq!(b.grid.drift_segments(i), s.confirmation_segments());
        }
        let json = b.to_json();
        assert_eq!(serde_json::from_str::<AnalysisBundle>(&json).unwrap(), *b);
    }
}
