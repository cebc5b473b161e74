//! Command-line driver for the batch pipeline.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use retrace_core::annotate::{current_state, export_timeline, read_log, AnnotationBody, TimelineFormat};
use retrace_core::artifacts::BinaryArtifactMap;
use retrace_core::evaluate::{
    block_correct, evaluate_matches, load_groundtruth, read_exclusions, stratified_sample, summarize_block_eval,
    summarize_function_eval, write_groundtruth, BlockSubjectResult, GroundTruthLabel, SamplePool, Truth,
};
use retrace_core::matchers::FunctionMatch;
use retrace_core::ocr::{backend_from_id, run_ocr_all, OcrConfig};
use retrace_core::pipeline::{load_labels, run_pipeline, scatter_csv, PipelineConfig};
use retrace_core::SessionBundle;

#[derive(Debug, Parser)]
#[command(name = "retrace", version, about = "Reconstruct and annotate reverse-engineering sessions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a bundle and print its summary.
    Ingest { dir: PathBuf },
    /// Recognize text on every frame, filling the OCR cache.
    Ocr {
        session: PathBuf,
        #[arg(long, default_value = "mock")]
        backend: String,
        /// OcrConfig JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the full pipeline and append new annotations.
    Annotate(AnnotateArgs),
    /// Score stored frame labels against a ground-truth CSV.
    Evaluate {
        session: PathBuf,
        #[arg(long)]
        groundtruth: PathBuf,
        /// Dataset name in the report.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Write scatter or timeline data.
    Export {
        session: PathBuf,
        #[arg(long, conflicts_with = "timeline", required_unless_present = "timeline")]
        scatter: bool,
        #[arg(long)]
        timeline: bool,
        /// Timeline format: jsonl or csv.
        #[arg(long, default_value = "jsonl")]
        format: String,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Draw a per-subject stratified frame sample from all bundles under a root.
    Sample {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// CSV of session_id,frame_index pairs to skip.
        #[arg(long)]
        exclude: Option<PathBuf>,
    },
    /// Write a ground-truth CSV prefilled with the predicted labels, for manual correction.
    Label {
        session: PathBuf,
        /// Frame indices to include; every frame when omitted.
        #[arg(long, value_delimiter = ',')]
        frames: Vec<usize>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Serve bundles under a root over HTTP.
    Serve {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Write the keygenme demo bundle.
    Demo { dir: PathBuf },
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    pub session: PathBuf,
    /// PipelineConfig JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<String>,
    /// Fuzzy symbol similarity threshold (0-100).
    #[arg(long)]
    pub threshold: Option<u32>,
    #[arg(long = "min-interval")]
    pub min_interval: Option<u64>,
    #[arg(long = "max-gap")]
    pub max_gap: Option<u64>,
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
    #[arg(long)]
    pub filters: Option<PathBuf>,
    #[arg(long)]
    pub patterns: Option<PathBuf>,
    #[arg(long)]
    pub stoplist: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long = "no-blocks")]
    pub no_blocks: bool,
}

impl AnnotateArgs {
    pub fn pipeline_config(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let mut cfg: PipelineConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                cfg.bundle = self.session.clone();
                cfg
            }
            None => PipelineConfig::new(&self.session, "mock"),
        };
        if let Some(b) = &self.backend {
            cfg.backend = b.clone();
        }
        if let Some(t) = self.threshold {
            if t > 100 {
                bail!("--threshold must be within 0..=100");
            }
            cfg.matching.threshold = t;
        }
        if let Some(v) = self.min_interval {
            cfg.consolidation.min_interval_ms = v;
        }
        if let Some(v) = self.max_gap {
            cfg.consolidation.max_gap_ms = v;
        }
        for (slot, v) in [
            (&mut cfg.artifacts, &self.artifacts),
            (&mut cfg.filters, &self.filters),
            (&mut cfg.patterns, &self.patterns),
            (&mut cfg.stoplist, &self.stoplist),
        ] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        if self.parallelism.is_some() {
            cfg.parallelism = self.parallelism;
        }
        if self.no_blocks {
            cfg.block_matching = false;
        }
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(dir: &Path) -> anyhow::Result<SessionBundle> {
    SessionBundle::load(dir).with_context(|| format!("loading bundle {}", dir.display()))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { dir } => {
            let b = load(&dir)?;
            let keyframes = b.frames.iter().filter(|f| f.is_keyframe()).count();
            let summary = json!({
                "manifest": b.manifest,
                "frames": b.frames.len(),
                "keyframes": keyframes,
                "events": b.events.len(),
                "artifacts": b.artifact_path().exists(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Ocr { session, backend, config } => {
            let b = load(&session)?;
            let cfg = match config {
                Some(p) => OcrConfig::load(&p)?,
                None => OcrConfig::default(),
            };
            let backend = backend_from_id(&backend)?;
            let batch = run_ocr_all(&b, backend.as_ref(), &cfg)?;
            let tokens: usize = batch.frames.iter().map(|f| f.tokens.len()).sum();
            println!(
                "{}",
                json!({"frames": batch.frames.len(), "cache_hits": batch.cache_hits, "tokens": tokens, "backend": backend.id()})
            );
        }
        Command::Annotate(args) => {
            let out = run_pipeline(&args.pipeline_config()?)?;
            println!("{}", serde_json::to_string_pretty(&out.report)?);
        }
        Command::Evaluate { session, groundtruth, dataset, json } => {
            let b = load(&session)?;
            let truth = load_groundtruth(&groundtruth)?;
            let labels = load_labels(&b)?;
            if labels.is_empty() {
                bail!("no stored frame labels in {}; run `retrace annotate` first", session.display());
            }
            let matches: Vec<FunctionMatch> =
                labels.iter().map(|l| FunctionMatch { frame_index: l.frame_index, label: l.label.clone() }).collect();
            let counts = evaluate_matches(&matches, &truth)?;
            let name = dataset.unwrap_or_else(|| b.manifest.session_id.clone());
            let report = summarize_function_eval(&[(name, counts)]);
            let blocks = match block_results(&b, &truth)? {
                Some(r) => Some(summarize_block_eval(&[r], report.total.accuracy())),
                None => None,
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&json!({"functions": report, "blocks": blocks}))?);
            } else {
                print!("{}", report.to_table());
                if let Some(br) = blocks {
                    println!();
                    print!("{}", br.to_table());
                }
            }
        }
        Command::Export { session, scatter, format, out, .. } => {
            let b = load(&session)?;
            let annotations = current_state(&read_log(&b.annotations_path())?);
            let text = if scatter {
                scatter_csv(&b, &annotations)?
            } else {
                let fmt = match format.as_str() {
                    "jsonl" => TimelineFormat::Jsonl,
                    "csv" => TimelineFormat::Csv,
                    other => bail!("unknown timeline format {other:?}; expected jsonl or csv"),
                };
                export_timeline(&annotations, fmt)?
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Sample { root, n, seed, exclude } => {
            let excluded = match exclude {
                Some(p) => read_exclusions(&std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => BTreeSet::new(),
            };
            let pools = sample_pools(&root)?;
            if pools.is_empty() {
                bail!("no bundles under {}", root.display());
            }
            let picked = stratified_sample(&pools, n, seed, &excluded)?;
            let mut w = String::new();
            w.push_str("subject,session_id,frame_index\n");
            for e in picked {
                w.push_str(&format!("{},{},{}\n", e.subject, e.session_id, e.frame_index));
            }
            print!("{w}");
        }
        Command::Label { session, frames, out } => {
            let b = load(&session)?;
            let labels = load_labels(&b)?;
            let wanted: BTreeSet<usize> = frames.into_iter().collect();
            let rows: Vec<GroundTruthLabel> = labels
                .iter()
                .filter(|l| wanted.is_empty() || wanted.contains(&l.frame_index))
                .map(|l| GroundTruthLabel {
                    frame_index: l.frame_index,
                    truth: l.label.entry().map_or(Truth::NoFunction, Truth::Function),
                    blocks: None,
                })
                .collect();
            if let Some(missing) = wanted.iter().find(|i| !rows.iter().any(|r| r.frame_index == **i)) {
                bail!("frame {missing} has no stored label; run `retrace annotate` first");
            }
            emit(out.as_deref(), &write_groundtruth(&rows)?)?;
        }
        Command::Serve { root, bind } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::api::serve(root, &bind))?;
        }
        Command::Demo { dir } => {
            let b = retrace_core::demo::write_demo_bundle(&dir)?;
            println!("wrote {} ({} frames) to {}", b.manifest.session_id, b.frame_count(), dir.display());
        }
    }
    Ok(())
}

/// One pool per bundle directory directly under `root`.
pub fn sample_pools(root: &Path) -> anyhow::Result<Vec<SamplePool>> {
    let mut pools = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let dir = entry?.path();
        if !dir.join("manifest.json").exists() {
            continue;
        }
        let b = load(&dir)?;
        pools.push(SamplePool {
            session_id: b.manifest.session_id.clone(),
            subject: b.manifest.subject_pseudonym.clone(),
            frame_count: b.frame_count(),
        });
    }
    Ok(pools)
}

/// Block-level counts from BlockView annotations on frames whose ground truth lists blocks.
fn block_results(b: &SessionBundle, truth: &[GroundTruthLabel]) -> anyhow::Result<Option<BlockSubjectResult>> {
    let labeled: Vec<(&GroundTruthLabel, _)> = truth
        .iter()
        .filter_map(|g| match (g.truth, &g.blocks) {
            (Truth::Function(f), Some(bs)) if !bs.is_empty() => Some((g, (f, bs))),
            _ => None,
        })
        .collect();
    if labeled.is_empty() {
        return Ok(None);
    }
    let map = BinaryArtifactMap::import(b.artifact_path())?;
    let views = current_state(&read_log(&b.annotations_path())?);
    let (mut correct, mut total) = (0, 0);
    for (g, (entry, expected)) in labeled {
        let Some(frame) = b.frames.get(g.frame_index) else {
            bail!("ground truth frame {} out of range", g.frame_index);
        };
        let Some(function) = map.function(entry) else {
            bail!("ground truth function {entry} not in the artifact map");
        };
        let mut seen: Vec<_> = views
            .iter()
            .filter(|a| a.t_start == frame.t)
            .filter_map(|a| match a.body {
                AnnotationBody::BlockView { function: f, block, .. } if f == entry => Some(block),
                _ => None,
            })
            .collect();
        for want in expected {
            total += 1;
            if let Some(pos) = seen.iter().position(|p| block_correct(Some(*p), Some(*want), function)) {
                seen.remove(pos);
                correct += 1;
            }
        }
    }
    Ok(Some(BlockSubjectResult { subject: b.manifest.subject_pseudonym.clone(), correct, total }))
}
