mod common;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use driftscope_core::concept::{self, ConceptContext, ConceptDraft, ConceptStore, SourceRanges};
use driftscope_core::data::{batchify, ingest_csv, Batch, DataRecord, DatasetSchema, NormalizationStats, SourceBatches, SourceInfo};
use driftscope_core::learner::{EnsembleConfig, EnsembleState, LinearModel};
use driftscope_core::pipeline::{analyze, run_pipeline, AnalysisSettings, Manifest, PipelineConfig, PipelineError};
use driftscope_core::synth::{synth_stream, SynthSpec};

fn draft_for(schema: &DatasetSchema, data: &[SourceBatches], ctx: ConceptContext, bins: usize) -> ConceptDraft {
    let batches = ctx.select(data).unwrap();
    let ranking = concept::rank_attributes(&batches, schema, 15).unwrap();
    let matrix = concept::build_matrix(&batches, schema, &ranking, bins).unwrap();
    ConceptDraft { attribute_names: schema.attribute_names.clone(), context: ctx, ranking, matrix, note: "n".into() }
}

#[test]
fn store_round_trips_through_disk() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (schema, data) = common::random_dataset(&mut rng, 2, 3, 5, 20);
    let ctx = ConceptContext { sources: vec![SourceRanges { source: "s1".into(), ranges: vec![[0, 1], [3, 4]] }] };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("concepts.jsonl");

    let mut store = ConceptStore::open(&path).unwrap();
    let first = store.insert(draft_for(&schema, &data, ctx.clone(), 6), 1000).unwrap();
    let second = store.insert(draft_for(&schema, &data, ctx, 4), 1001).unwrap();
    assert_eq!((first, second), (1, 2));

    let reopened = ConceptStore::open(&path).unwrap();
    assert_eq!(reopened.list(), store.list());
    let a = serde_json::to_string(reopened.get(2).unwrap()).unwrap();
    let b = serde_json::to_string(store.get(2).unwrap()).unwrap();
    assert_eq!(a, b);

    let mut reopened = reopened;
    let ctx = ConceptContext { sources: vec![SourceRanges { source: "s0".into(), ranges: vec![[0, 4]] }] };
    let next = reopened.identify(draft_for(&schema, &data, ctx, 6));
    assert_eq!(next.unwrap(), 3);
}

#[test]
fn self_comparison_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (schema, data) = common::random_dataset(&mut rng, 2, 4, 6, 25);
    let ctx = ConceptContext { sources: vec![SourceRanges { source: "s0".into(), ranges: vec![[1, 4]] }] };
    let mut store = ConceptStore::in_memory();
    let id = store.insert(draft_for(&schema, &data, ctx.clone(), 6), 0).unwrap();
    let stored = store.get(id).unwrap();
    let paired = concept::compare(stored, &ctx.select(&data).unwrap(), &schema).unwrap();
    assert_eq!(paired.lower, paired.upper);
    let n = paired.axes().len();
    for row in 0..n {
        for col in (0..n).filter(|&c| c != row) {
            let p = paired.lower.pair(row, col);
            for rb in 0..p.row_bins {
                for cb in 0..p.col_bins {
                    let (r2, c2, rb2, cb2) = concept::PairedMatrix::mirror(row, col, rb, cb);
                    assert_eq!(paired.cell(row, col, rb, cb), paired.cell(r2, c2, rb2, cb2));
                }
            }
        }
    }
}

#[test]
fn compare_rejects_a_different_schema() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (schema, data) = common::random_dataset(&mut rng, 1, 3, 3, 20);
    let (other_schema, other) = common::random_dataset(&mut rng, 1, 2, 3, 20);
    let ctx = ConceptContext { sources: vec![SourceRanges { source: "s0".into(), ranges: vec![[0, 2]] }] };
    let mut store = ConceptStore::in_memory();
    let id = store.insert(draft_for(&schema, &data, ctx.clone(), 6), 0).unwrap();
    let live = ctx.select(&other).unwrap();
    assert!(concept::compare(store.get(id).unwrap(), &live, &other_schema).is_err());
}

fn two_source_schema(dims: usize) -> DatasetSchema {
    DatasetSchema {
        attribute_names: (0..dims).map(|k| format!("a{k}")).collect(),
        label_name: "y".into(),
        sources: ["calm", "storm"].iter().map(|s| SourceInfo { id: s.to_string(), name: s.to_string() }).collect(),
        unit: 100,
        time_span: (0, 400),
        label_predicate: None,
    }
}

#[test]
fn sandstorm_comparison() {
    // Stored concept: the label follows a0 alone. Live concept: every record
    // is positive regardless of attributes.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let schema = two_source_schema(3);
    let mut records = Vec::new();
    for k in 0..2400 {
        let t = (k % 400) as i64;
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        let y = u8::from(x[0] > rng.random_range(0.0..1.0));
        records.push(DataRecord { source_id: "calm".into(), timestamp: t, x: x.clone(), y });
        records.push(DataRecord { source_id: "storm".into(), timestamp: t, x, y: 1 });
    }
    records.sort_by_key(|r| (r.source_id.clone(), r.timestamp));
    let data = batchify(&records, &schema).unwrap();

    let calm = ConceptContext { sources: vec![SourceRanges { source: "calm".into(), ranges: vec![[0, 3]] }] };
    let storm = ConceptContext { sources: vec![SourceRanges { source: "storm".into(), ranges: vec![[0, 3]] }] };
    let mut store = ConceptStore::in_memory();
    let id = store.insert(draft_for(&schema, &data, calm, 6), 0).unwrap();
    let stored = store.get(id).unwrap();
    assert_eq!(stored.ranking.entries[0].name, "a0");

    let paired = concept::compare(stored, &storm.select(&data).unwrap(), &schema).unwrap();
    for pair in &paired.upper.pairs {
        assert!(pair.cells.iter().all(|c| c.ratio.is_none_or(|r| r == 1.0)));
    }
    // lower half: a0 axis (1) against the source axis (0), calm column
    let calm_col = 0;
    let ratios: Vec<f64> = (0..6).map(|b| paired.cell(1, 0, b, calm_col).ratio.unwrap()).collect();
    assert!(ratios.windows(2).all(|w| w[0] < w[1]), "{ratios:?}");
    assert!(ratios[0] < -0.5 && ratios[5] > 0.5);
}

#[test]
fn noiseless_single_phase_is_learnable() {
    for seed in 0..20 {
        let mut spec = SynthSpec::abrupt(1, 5, 2000, 0, 0.0, seed);
        spec.switches.clear();
        let out = synth_stream(&spec);
        let mut model = LinearModel::zeros(5, 0);
        let mut correct = Vec::new();
        for r in &out.records {
            correct.push(model.predict_label(&r.x).unwrap() == r.y);
            model.sgd_update(&r.x, r.y, 0.5).unwrap();
        }
        let best = correct
            .windows(200)
            .map(|w| w.iter().filter(|&&c| c).count() as f64 / 200.0)
            .fold(0.0, f64::max);
        assert!(best >= 0.95, "seed {seed}: best window accuracy {best}");
    }
}

#[test]
fn ensemble_capacity_and_argmax_hold_over_a_stream() {
    let mut spec = SynthSpec::abrupt(1, 4, 4000, 2000, 0.05, 2);
    spec.records_per_unit = 100;
    let out = synth_stream(&spec);
    let sources = batchify(&out.records, &out.schema).unwrap();
    let mut ensemble = EnsembleState::new("s0", 4, EnsembleConfig::default());
    let mut stats = NormalizationStats::new(4);
    let mut sizes = vec![ensemble.models.len()];
    let mut total = 0;
    for (t, batch) in sources[0].batches.iter().enumerate() {
        ensemble
            .step(batch, &mut stats, |i, _, _| {
                assert_eq!(i, total % 100);
                total += 1;
                t == 25 && i == 50
            })
            .unwrap();
        let n = ensemble.models.len();
        assert!(n <= 5);
        sizes.push(n);
        let out_acc = ensemble.output_model().last_verification_accuracy;
        assert!(ensemble.models.iter().all(|m| m.last_verification_accuracy <= out_acc));
    }
    let first_full = sizes.iter().position(|&n| n == 5).unwrap();
    assert!(sizes[..=first_full].windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(total, 4000);
}

#[test]
fn ingest_is_deterministic() {
    let out = synth_stream(&SynthSpec::abrupt(2, 3, 300, 150, 0.1, 1));
    let mut csv = out.to_csv();
    csv.push_str("garbage,s0,1,1,2,3\n");
    let a = ingest_csv(csv.as_bytes(), &out.schema).unwrap();
    let b = ingest_csv(csv.as_bytes(), &out.schema).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.rejects, b.rejects);
    assert_eq!(a.rejects.len(), 1);
}

#[test]
fn snapshots_are_bit_identical_across_runs() {
    let out = synth_stream(&SynthSpec::abrupt(2, 3, 1500, 700, 0.05, 6));
    let settings = AnalysisSettings::default();
    let a = analyze(out.schema.clone(), &out.records, &settings, vec![]).unwrap();
    let b = analyze(out.schema.clone(), &out.records, &settings, vec![]).unwrap();
    for (x, y) in a.bundle.sources.iter().zip(&b.bundle.sources) {
        for (p, q) in x.snapshots.iter().zip(&y.snapshots) {
            assert!(p.params.iter().zip(&q.params).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}

fn write_dataset(dir: &std::path::Path, sources: usize, files: Vec<PathBuf>) -> PathBuf {
    let out = synth_stream(&SynthSpec::abrupt(sources, 3, 1200, 600, 0.05, 3));
    std::fs::write(dir.join("data.csv"), out.to_csv()).unwrap();
    let manifest = Manifest { schema: out.schema, files };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string(&manifest).unwrap()).unwrap();
    std::fs::write(dir.join("run.toml"), "manifest = \"manifest.json\"\n").unwrap();
    dir.join("run.toml")
}

#[test]
fn unreadable_file_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_dataset(dir.path(), 2, vec![PathBuf::from("missing.csv")]);
    let cfg = PipelineConfig::load(&config).unwrap();
    match run_pipeline(&cfg) {
        Err(PipelineError::Ingest { path, .. }) => assert!(path.ends_with("missing.csv")),
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("missing file accepted"),
    }
}

#[test]
fn single_source_bundle_omits_only_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_dataset(dir.path(), 1, vec![PathBuf::from("data.csv")]);
    let run = run_pipeline(&PipelineConfig::load(&config).unwrap()).unwrap();
    let b = &run.bundle;
    assert!(b.consistency.is_none());
    assert!(b.trajectories.is_some());
    assert_eq!(b.sources.len(), 1);
    assert_eq!(b.sources[0].record_count, 1200);
    assert_eq!(b.sources[0].snapshots.len(), b.schema.segment_count());
    assert_eq!(b.grid.segment_count(), b.schema.segment_count());
}

#[test]
fn empty_segments_keep_grid_alignment() {
    let schema = two_source_schema(1);
    let records = vec![
        DataRecord { source_id: "calm".into(), timestamp: 5, x: vec![1.0], y: 1 },
        DataRecord { source_id: "storm".into(), timestamp: 350, x: vec![2.0], y: 0 },
    ];
    let data = batchify(&records, &schema).unwrap();
    let sizes: Vec<Vec<usize>> = data.iter().map(|s| s.batches.iter().map(Batch::size).collect()).collect();
    assert_eq!(sizes, vec![vec![1, 0, 0, 0], vec![0, 0, 0, 1]]);
}
