//! Batch driver: ingest, OCR, rename pass, matching, annotation, export.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{
    annotate_feature_use, annotate_navigation, append_log, build_function_intervals, detect_renames, export_scatter,
    export_timeline, feature_spans, read_log, sort_annotations, Annotation, AnnotationBody, AnnotationKind,
    ConsolidationConfig, FrameObs, TimelineFormat,
};
use crate::artifacts::{Addr, BinaryArtifactMap, RenameEvent, Stoplist, SymbolIndex, SymbolTimeline};
use crate::error::{Error, Result};
use crate::input::{aggregate_keystrokes, detect_feature_window, resolve_clicks, PatternTable, DEFAULT_WORD_GAP_MS};
use crate::matchers::{detect_block_rects, match_blocks, match_function, FilterTable, FunctionLabel, MatchConfig, DEFAULT_ACCEPT_RATIO};
use crate::ocr::{backend_from_id, run_ocr_all, OcrConfig};
use crate::session::{SessionBundle, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub bundle: PathBuf,
    /// Artifact map; defaults to `artifacts/<binary_id>.json` inside the bundle.
    #[serde(default)]
    pub artifacts: Option<PathBuf>,
    pub backend: String,
    #[serde(default)]
    pub ocr: OcrConfig,
    #[serde(default)]
    pub matching: MatchConfig,
    #[serde(default)]
    pub consolidation: ConsolidationConfig,
    #[serde(default)]
    pub filters: Option<PathBuf>,
    #[serde(default)]
    pub patterns: Option<PathBuf>,
    #[serde(default)]
    pub stoplist: Option<PathBuf>,
    /// Worker threads; the global pool when absent.
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default = "default_word_gap")]
    pub word_gap_ms: u64,
    #[serde(default = "default_true")]
    pub block_matching: bool,
}

fn default_word_gap() -> u64 {
    DEFAULT_WORD_GAP_MS
}

fn default_true() -> bool {
    true
}

impl PipelineConfig {
    pub fn new(bundle: impl Into<PathBuf>, backend: &str) -> Self {
        PipelineConfig {
            bundle: bundle.into(),
            artifacts: None,
            backend: backend.to_string(),
            ocr: OcrConfig::default(),
            matching: MatchConfig::default(),
            consolidation: ConsolidationConfig::default(),
            filters: None,
            patterns: None,
            stoplist: None,
            parallelism: None,
            word_gap_ms: DEFAULT_WORD_GAP_MS,
            block_matching: true,
        }
    }
}

/// Per-frame function label with its capture time, as stored in `matches.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub frame_index: usize,
    pub t: Timestamp,
    #[serde(flatten)]
    pub label: FunctionLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub millis: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub session_id: String,
    pub frames: usize,
    pub ocr_cache_hits: usize,
    pub annotations: usize,
    pub appended: usize,
    pub stages: Vec<StageReport>,
}

impl PipelineReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    /// Annotations produced by this run, in canonical order.
    pub annotations: Vec<Annotation>,
    pub labels: Vec<FrameLabel>,
    pub timeline: SymbolTimeline,
}

struct Stages(Vec<StageReport>);

impl Stages {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>, count: impl Fn(&T) -> usize) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage))?;
        self.0.push(StageReport {
            stage: stage.to_string(),
            millis: start.elapsed().as_secs_f64() * 1000.0,
            count: count(&out),
        });
        Ok(out)
    }
}

pub fn matches_path(bundle: &SessionBundle) -> PathBuf {
    bundle.root().join("matches.jsonl")
}

pub fn renames_path(bundle: &SessionBundle) -> PathBuf {
    bundle.root().join("renames.jsonl")
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = String::new();
    for it in items {
        buf.push_str(&serde_json::to_string(it)?);
        buf.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    std::fs::write(&tmp, buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Per-frame labels from the last pipeline run; empty when never run.
pub fn load_labels(bundle: &SessionBundle) -> Result<Vec<FrameLabel>> {
    let path = matches_path(bundle);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::schema(format!("matches.jsonl:{}", i + 1), e.to_string())))
        .collect()
}

pub fn load_renames(bundle: &SessionBundle) -> Result<Vec<RenameEvent>> {
    let path = renames_path(bundle);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Scatter CSV for a bundle from its current FunctionView annotations and stored labels.
pub fn scatter_csv(bundle: &SessionBundle, annotations: &[Annotation]) -> Result<String> {
    let labels = load_labels(bundle)?;
    let samples: Vec<(Timestamp, Option<Addr>)> = labels.iter().map(|l| (l.t, l.label.entry())).collect();
    let views: Vec<Annotation> = annotations
        .iter()
        .filter(|a| a.kind() == AnnotationKind::FunctionView && a.status != crate::annotate::Status::Rejected)
        .cloned()
        .collect();
    let order = match BinaryArtifactMap::import(bundle.artifact_path()) {
        Ok(map) => map.function_order(),
        Err(Error::MissingFile(_)) => {
            let mut v: Vec<Addr> = samples.iter().filter_map(|s| s.1).collect();
            v.sort();
            v.dedup();
            v
        }
        Err(e) => return Err(e),
    };
    export_scatter(&views, &samples, &order)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    match cfg.parallelism {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::schema("parallelism", e.to_string()))?;
            pool.install(|| run_inner(cfg))
        }
        None => run_inner(cfg),
    }
}

fn run_inner(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let mut st = Stages(Vec::new());

    let bundle = st.run("ingest", || SessionBundle::load(&cfg.bundle), |b| b.frame_count())?;
    let session_id = bundle.manifest.session_id.clone();
    let tool = bundle.manifest.tool_hint.clone();

    let (map, index) = st.run(
        "artifacts",
        || {
            let path = cfg.artifacts.clone().unwrap_or_else(|| bundle.artifact_path());
            let map = BinaryArtifactMap::import(path)?;
            let stoplist = match &cfg.stoplist {
                Some(p) => Stoplist::load(p)?,
                None => Stoplist::default(),
            };
            let index = SymbolIndex::build(&map, &stoplist);
            Ok((map, index))
        },
        |(m, _)| m.functions.len(),
    )?;

    let batch = st.run(
        "ocr",
        || {
            let backend = backend_from_id(&cfg.backend)?;
            run_ocr_all(&bundle, backend.as_ref(), &cfg.ocr)
        },
        |b| b.frames.len() - b.cache_hits,
    )?;

    let frames: Vec<FrameObs<'_>> = batch
        .frames
        .iter()
        .zip(&bundle.frames)
        .map(|(ocr, rec)| FrameObs {
            index: rec.index,
            t: rec.t,
            ocr,
        })
        .collect();
    let times: Vec<Timestamp> = bundle.frames.iter().map(|f| f.t).collect();

    let (words, clicks, spans) = st.run(
        "input",
        || {
            let patterns = match &cfg.patterns {
                Some(p) => PatternTable::load(p)?,
                None => PatternTable::default(),
            }
            .for_tool(tool.as_deref());
            let words = aggregate_keystrokes(&bundle.events, cfg.word_gap_ms);
            let pairs: Vec<(Timestamp, &crate::ocr::OcrFrame)> = frames.iter().map(|f| (f.t, f.ocr)).collect();
            let clicks = resolve_clicks(&bundle.events, &pairs);
            let windows: Vec<_> = frames.par_iter().filter_map(|f| detect_feature_window(f.ocr, &patterns)).collect();
            Ok((words, clicks, feature_spans(&windows, &times)))
        },
        |(w, c, s)| w.len() + c.len() + s.len(),
    )?;

    let mut timeline = SymbolTimeline::new(index);
    let renames = st.run(
        "renames",
        || Ok(detect_renames(&session_id, &frames, &spans, &words, &clicks, &mut timeline, &cfg.matching)),
        Vec::len,
    )?;

    let labels: Vec<FrameLabel> = st.run(
        "matching",
        || {
            Ok(frames
                .par_iter()
                .map(|f| FrameLabel {
                    frame_index: f.index,
                    t: f.t,
                    label: match_function(f.ocr, &timeline.at(f.t), &cfg.matching).label,
                })
                .collect())
        },
        Vec::len,
    )?;

    let mut annotations = st.run(
        "annotate",
        || {
            let samples: Vec<(Timestamp, FunctionLabel)> = labels.iter().map(|l| (l.t, l.label.clone())).collect();
            let views = build_function_intervals(&session_id, &samples, &cfg.consolidation, &timeline);
            let uses = annotate_feature_use(&session_id, &spans, &words);
            let navs = annotate_navigation(&session_id, &clicks, &views, &uses, &map, &timeline);
            let blocks = if cfg.block_matching {
                block_views(cfg, &bundle, &session_id, &frames, &labels, &map, tool.as_deref())?
            } else {
                Vec::new()
            };
            let mut all: Vec<Annotation> = Vec::new();
            all.extend(views);
            all.extend(uses);
            all.extend(navs);
            all.extend(renames.iter().cloned());
            all.extend(blocks);
            sort_annotations(&mut all);
            Ok(all)
        },
        Vec::len,
    )?;
    annotations.dedup_by(|a, b| a.id == b.id);

    let appended = st.run(
        "export",
        || {
            write_jsonl(&matches_path(&bundle), &labels)?;
            write_jsonl(&renames_path(&bundle), timeline.renames())?;
            let log_path = bundle.annotations_path();
            let existing: HashSet<String> = read_log(&log_path)?.into_iter().map(|a| a.id).collect();
            let fresh: Vec<Annotation> = annotations.iter().filter(|a| !existing.contains(&a.id)).cloned().collect();
            append_log(&log_path, &fresh)?;
            let exports = bundle.root().join("exports");
            std::fs::create_dir_all(&exports).map_err(|e| Error::io(&exports, e))?;
            let current = crate::annotate::current_state(&read_log(&log_path)?);
            for (name, body) in [
                ("timeline.jsonl", export_timeline(&current, TimelineFormat::Jsonl)?),
                ("timeline.csv", export_timeline(&current, TimelineFormat::Csv)?),
                ("scatter.csv", scatter_csv(&bundle, &current)?),
            ] {
                let p = exports.join(name);
                std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            }
            Ok(fresh.len())
        },
        |n| *n,
    )?;

    Ok(PipelineOutput {
        report: PipelineReport {
            session_id,
            frames: bundle.frame_count(),
            ocr_cache_hits: batch.cache_hits,
            annotations: annotations.len(),
            appended,
            stages: st.0,
        },
        annotations,
        labels,
        timeline,
    })
}

/// BlockView point annotations for every function-labeled frame.
fn block_views(
    cfg: &PipelineConfig,
    bundle: &SessionBundle,
    session_id: &str,
    frames: &[FrameObs<'_>],
    labels: &[FrameLabel],
    map: &BinaryArtifactMap,
    tool: Option<&str>,
) -> Result<Vec<Annotation>> {
    let filters = match &cfg.filters {
        Some(p) => FilterTable::load(p)?,
        None => FilterTable::default(),
    }
    .for_tool(tool);
    let mut reader = bundle.reader();
    let mut out = Vec::new();
    for (f, l) in frames.iter().zip(labels) {
        let Some(function) = l.label.entry().and_then(|e| map.function(e)) else { continue };
        let image = reader.reconstruct(f.index)?;
        let rects = detect_block_rects(&image, &filters);
        if rects.is_empty() {
            continue;
        }
        for m in match_blocks(f.ocr, &rects, function, DEFAULT_ACCEPT_RATIO) {
            if let Some((entry, block)) = m.block {
                out.push(Annotation::auto(
                    session_id,
                    AnnotationBody::BlockView {
                        function: entry,
                        block,
                        ambiguous: m.ambiguous,
                    },
                    f.t,
                    None,
                ));
            }
        }
    }
    Ok(out)
}
