use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use driftscope_core::concept::ConceptStore;
use driftscope_core::drift_index::WindowMode;
use driftscope_core::export;
use driftscope_core::pipeline::{run_pipeline, AnalysisBundle, Manifest, PipelineConfig};
use driftscope_core::synth::{synth_stream, SynthSource, SynthSpec};
use driftscope_service::{router, AppState};

#[derive(Parser)]
#[command(name = "driftscope", version, about = "Multi-source concept drift analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sliding,
    SinceReset,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Snapshots,
    Events,
    Consistency,
    Trajectories,
}

#[derive(Subcommand)]
enum Command {
    /// Run the offline analysis and write a bundle.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Bundle path; defaults to the config's `output`, then `bundle.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, value_enum)]
        window_mode: Option<Mode>,
        #[arg(long)]
        delta_t: Option<usize>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        ensemble_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the HTTP API for a bundle.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// JSON-lines concept store; in memory when omitted.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Write a synthetic dataset (data.csv, manifest.json, config.toml).
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 3)]
        sources: usize,
        #[arg(long, default_value_t = 5)]
        dims: usize,
        #[arg(long, default_value_t = 10_000)]
        records: usize,
        #[arg(long, default_value_t = 100)]
        records_per_unit: usize,
        #[arg(long, default_value_t = 3600)]
        unit: i64,
        /// Record positions of phase switches.
        #[arg(long = "switch", default_values_t = [5000])]
        switches: Vec<usize>,
        /// `source_index=records` lag, repeatable.
        #[arg(long = "lag")]
        lags: Vec<String>,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Export part of a bundle as JSON or JSON lines.
    Export {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_enum)]
        what: ExportKind,
        /// Threshold for consistency results.
        #[arg(long)]
        c: Option<f64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> std::process::ExitCode {
    match run() {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run { config, out, window, window_mode, delta_t, c, ensemble_size, learning_rate, bins, seed } => {
            let mut cfg = PipelineConfig::load(&config)?;
            let s = &mut cfg.settings;
            if let Some(v) = window {
                s.window = v;
            }
            if let Some(m) = window_mode {
                s.window_mode = match m {
                    Mode::Sliding => WindowMode::Sliding,
                    Mode::SinceReset => WindowMode::SinceReset,
                };
            }
            if let Some(v) = delta_t {
                s.delta_t = v;
            }
            if let Some(v) = c {
                s.c = v;
            }
            if let Some(v) = ensemble_size {
                s.ensemble_size = v;
            }
            if let Some(v) = learning_rate {
                s.learning_rate = v;
            }
            if let Some(v) = bins {
                s.bins = v;
            }
            if let Some(v) = seed {
                s.seed = v;
            }
            if let Err(msg) = s.validate() {
                bail!("invalid settings: {msg}");
            }
            let run = run_pipeline(&cfg)?;
            let path = out.or(cfg.output.clone()).unwrap_or_else(|| PathBuf::from("bundle.json"));
            run.bundle.save(&path)?;
            for s in &run.bundle.sources {
                println!("{}: {} records, {} confirmed drifts", s.source, s.record_count, s.confirmations().count());
            }
            println!("{:.4} ms/record, bundle written to {}", run.timings.per_record_ms(), path.display());
        }
        Command::Serve { bundle, host, port, store } => {
            let bundle = AnalysisBundle::load(&bundle)?;
            let store = match store {
                Some(p) => ConceptStore::open(&p).with_context(|| format!("opening {}", p.display()))?,
                None => ConceptStore::in_memory(),
            };
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bind address")?;
            let app = router(AppState::new(bundle, store));
            tokio::runtime::Runtime::new()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                tracing::info!("listening on http://{addr}");
                axum::serve(listener, app).await
            })?;
        }
        Command::Synth { out_dir, sources, dims, records, records_per_unit, unit, switches, lags, noise, seed } => {
            let mut spec_sources: Vec<SynthSource> =
                (0..sources).map(|i| SynthSource { id: format!("s{i}"), lag_records: 0 }).collect();
            for lag in &lags {
                let (i, r) = lag.split_once('=').with_context(|| format!("lag `{lag}` is not index=records"))?;
                let i: usize = i.parse()?;
                let src = spec_sources.get_mut(i).with_context(|| format!("no source {i}"))?;
                src.lag_records = r.parse()?;
            }
            let spec = SynthSpec {
                sources: spec_sources,
                dims,
                records_per_source: records,
                records_per_unit,
                unit,
                start: 0,
                switches,
                noise,
                seed,
            };
            write_synth(&out_dir, &spec)?;
            println!("wrote {}", out_dir.display());
        }
        Command::Export { bundle, what, c, out } => {
            let bundle = AnalysisBundle::load(&bundle)?;
            let text = match what {
                ExportKind::Snapshots => export::snapshots_jsonl(&bundle),
                ExportKind::Events => export::events_jsonl(&bundle),
                ExportKind::Consistency => {
                    let cons = bundle.consistency.as_ref().context("bundle has no consistency results")?;
                    let at = cons.at(c.unwrap_or(cons.default_c));
                    export::consistency_json(&at.results).to_string()
                }
                ExportKind::Trajectories => {
                    let t = bundle.trajectories.as_ref().context("bundle has no trajectories")?;
                    export::trajectories_json(t).to_string()
                }
            };
            match out {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn write_synth(dir: &Path, spec: &SynthSpec) -> Result<()> {
    fs::create_dir_all(dir)?;
    let out = synth_stream(spec);
    fs::write(dir.join("data.csv"), out.to_csv())?;
    let manifest = Manifest { schema: out.schema.clone(), files: vec![PathBuf::from("data.csv")] };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(
        dir.join("config.toml"),
        "manifest = \"manifest.json\"\noutput = \"bundle.json\"\nwindow = 500\ndelta_t = 1\nc = 0.7\n",
    )?;
    Ok(())
}
