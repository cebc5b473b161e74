//! Python bindings. Records cross the boundary as plain dicts and lists in the
//! same shape as the on-disk JSON; addresses are `0x` hex strings there and
//! ints everywhere else.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyModule};
use serde::de::DeserializeOwned;
use serde::Serialize;

use retrace_core::annotate::{
    self, append_log, current_state, export_timeline, manual_record, read_log, supersede_status, Annotation,
    AnnotationBody, ConsolidationConfig, EditError, Provenance, Status, TimelineFormat,
};
use retrace_core::artifacts::{sanitize_symbol as core_sanitize, Addr, BinaryArtifactMap, Stoplist, SymbolIndex};
use retrace_core::evaluate::{self, BlockSubjectResult, OutcomeCounts, Ratio, SamplePool};
use retrace_core::input::DEFAULT_WORD_GAP_MS;
use retrace_core::matchers::{self, MatchConfig};
use retrace_core::ocr::{OcrFrame, OcrToken};
use retrace_core::pipeline::{self, PipelineConfig};
use retrace_core::session::EventRecord;
use retrace_core::Timestamp;

create_exception!(retrace, RetraceError, PyException);

fn core_err(e: retrace_core::Error) -> PyErr {
    RetraceError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = PyModule::import(obj.py(), "json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_status(s: &str) -> PyResult<Status> {
    Status::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown status {s:?}")))
}

/// A loaded session bundle.
#[pyclass(name = "SessionBundle", frozen)]
struct PySessionBundle {
    inner: retrace_core::SessionBundle,
}

#[pymethods]
impl PySessionBundle {
    #[new]
    fn new(py: Python<'_>, path: PathBuf) -> PyResult<Self> {
        let inner = py.detach(|| retrace_core::SessionBundle::load(&path)).map_err(core_err)?;
        Ok(PySessionBundle { inner })
    }

    #[getter]
    fn session_id(&self) -> &str {
        &self.inner.manifest.session_id
    }

    #[getter]
    fn path(&self) -> PathBuf {
        self.inner.root().to_path_buf()
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.inner.frame_count()
    }

    fn manifest<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.manifest)
    }

    fn frames<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.frames)
    }

    /// Events with `start <= t <= end`, optionally restricted to the given type names.
    #[pyo3(signature = (start=None, end=None, types=None))]
    fn events<'py>(
        &self,
        py: Python<'py>,
        start: Option<u64>,
        end: Option<u64>,
        types: Option<Vec<String>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let picked: Vec<&EventRecord> = self
            .inner
            .events
            .iter()
            .filter(|e| start.is_none_or(|s| e.t.0 >= s) && end.is_none_or(|x| e.t.0 <= x))
            .filter(|e| types.as_ref().is_none_or(|ts| ts.iter().any(|t| t == e.kind.type_name())))
            .collect();
        to_py(py, &picked)
    }

    /// Index of the latest frame captured at or before `t`.
    fn frame_at(&self, t: u64) -> Option<usize> {
        self.inner.frame_at_or_before(Timestamp(t))
    }

    fn frame_png<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyBytes>> {
        let png = py
            .detach(|| self.inner.reconstruct_frame(index).and_then(|img| img.to_png()))
            .map_err(core_err)?;
        Ok(PyBytes::new(py, &png))
    }

    /// `(width, height, rgba_bytes)` of a reconstructed frame.
    fn frame_rgba<'py>(&self, py: Python<'py>, index: usize) -> PyResult<(u32, u32, Bound<'py, PyBytes>)> {
        let img = py.detach(|| self.inner.reconstruct_frame(index)).map_err(core_err)?;
        Ok((img.width(), img.height(), PyBytes::new(py, img.rgba())))
    }

    /// Current annotations after replaying the log.
    fn annotations<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let log = read_log(&self.inner.annotations_path()).map_err(core_err)?;
        to_py(py, &current_state(&log))
    }

    /// Per-frame function labels from the last pipeline run.
    fn labels<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &pipeline::load_labels(&self.inner).map_err(core_err)?)
    }

    /// Appends a manual annotation; `payload` is the kind-specific dict.
    #[pyo3(signature = (kind, payload, t_start, t_end=None, author="researcher"))]
    fn add_annotation<'py>(
        &self,
        py: Python<'py>,
        kind: &str,
        payload: &Bound<'py, PyAny>,
        t_start: u64,
        t_end: Option<u64>,
        author: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let body: AnnotationBody = {
            let p: serde_json::Value = from_py(payload)?;
            serde_json::from_value(serde_json::json!({"kind": kind, "payload": p}))
                .map_err(|e| PyValueError::new_err(e.to_string()))?
        };
        let path = self.inner.annotations_path();
        let log = read_log(&path).map_err(core_err)?;
        let draft = Annotation {
            id: String::new(),
            session_id: self.inner.manifest.session_id.clone(),
            body,
            t_start: Timestamp(t_start),
            t_end: t_end.map(Timestamp),
            status: Status::Manual,
            provenance: Provenance::Human { author: author.to_string() },
            supersedes: None,
        };
        let rec = manual_record(draft, author, log.len()).map_err(core_err)?;
        append_log(&path, std::slice::from_ref(&rec)).map_err(core_err)?;
        to_py(py, &rec)
    }

    /// Appends a record changing an annotation's status.
    #[pyo3(signature = (id, status, author="researcher"))]
    fn set_status<'py>(&self, py: Python<'py>, id: &str, status: &str, author: &str) -> PyResult<Bound<'py, PyAny>> {
        let status = parse_status(status)?;
        let path = self.inner.annotations_path();
        let log = read_log(&path).map_err(core_err)?;
        let rec = supersede_status(&log, id, status, author).map_err(|e| match e {
            EditError::NotFound => PyValueError::new_err(format!("no annotation {id:?}")),
            EditError::Superseded(next) => RetraceError::new_err(format!("annotation {id:?} was superseded by {next:?}")),
        })?;
        append_log(&path, std::slice::from_ref(&rec)).map_err(core_err)?;
        to_py(py, &rec)
    }

    fn scatter_csv(&self) -> PyResult<String> {
        let log = read_log(&self.inner.annotations_path()).map_err(core_err)?;
        pipeline::scatter_csv(&self.inner, &current_state(&log)).map_err(core_err)
    }

    /// Timeline export, `jsonl` or `csv`.
    #[pyo3(signature = (format="jsonl"))]
    fn timeline(&self, format: &str) -> PyResult<String> {
        let fmt = match format {
            "jsonl" => TimelineFormat::Jsonl,
            "csv" => TimelineFormat::Csv,
            other => return Err(PyValueError::new_err(format!("unknown format {other:?}"))),
        };
        let log = read_log(&self.inner.annotations_path()).map_err(core_err)?;
        export_timeline(&current_state(&log), fmt).map_err(core_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "SessionBundle({:?}, frames={}, events={})",
            self.inner.manifest.session_id,
            self.inner.frame_count(),
            self.inner.events.len()
        )
    }
}

/// Symbol index over an artifact map, for matching screen text to functions.
#[pyclass(name = "SymbolIndex", frozen)]
struct PySymbolIndex {
    map: BinaryArtifactMap,
    index: SymbolIndex,
}

#[pymethods]
impl PySymbolIndex {
    /// Loads `artifacts/<binary_id>.json`; `stoplist` is a word-list file, the built-in list when omitted.
    #[new]
    #[pyo3(signature = (artifacts, stoplist=None))]
    fn new(artifacts: PathBuf, stoplist: Option<PathBuf>) -> PyResult<Self> {
        let map = BinaryArtifactMap::import(&artifacts).map_err(core_err)?;
        let stop = match stoplist {
            Some(p) => Stoplist::load(p).map_err(core_err)?,
            None => Stoplist::default(),
        };
        let index = SymbolIndex::build(&map, &stop);
        Ok(PySymbolIndex { map, index })
    }

    #[getter]
    fn function_count(&self) -> usize {
        self.map.functions.len()
    }

    /// Function entry owning a sanitized symbol, if it is discriminative.
    fn lookup(&self, symbol: &str) -> Option<u64> {
        self.index.symbol_to_function().get(&core_sanitize(symbol)).map(|a| a.0)
    }

    /// Labels a screen from its tokens: plain strings, or `(text, x, y, w, h)` tuples.
    #[pyo3(signature = (tokens, threshold=None))]
    fn match_tokens<'py>(
        &self,
        py: Python<'py>,
        tokens: Vec<Bound<'py, PyAny>>,
        threshold: Option<u32>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut toks = Vec::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            let tok = match t.extract::<String>() {
                Ok(text) => OcrToken::new(text, 0, 20 * i as u32, 10, 10, 100.0),
                Err(_) => {
                    let (text, x, y, w, h): (String, u32, u32, u32, u32) = t.extract()?;
                    OcrToken::new(text, x, y, w, h, 100.0)
                }
            };
            toks.push(tok);
        }
        let mut cfg = MatchConfig::default();
        if let Some(th) = threshold {
            cfg.threshold = th;
        }
        let m = matchers::match_function(&OcrFrame::new(0, toks), &self.index, &cfg);
        to_py(py, &m.label)
    }
}

#[pyfunction]
fn levenshtein(a: &str, b: &str) -> usize {
    matchers::levenshtein(a, b)
}

#[pyfunction]
fn similarity_score(a: &str, b: &str) -> u32 {
    matchers::similarity_score(a, b)
}

#[pyfunction]
fn sanitize_symbol(raw: &str) -> String {
    core_sanitize(raw)
}

/// Writes the keygenme demo bundle to `dir`.
#[pyfunction]
fn write_demo_bundle(py: Python<'_>, dir: PathBuf) -> PyResult<PySessionBundle> {
    let inner = py.detach(|| retrace_core::demo::write_demo_bundle(&dir)).map_err(core_err)?;
    Ok(PySessionBundle { inner })
}

/// Runs the pipeline; returns `{"report": ..., "annotations": [...]}` for this run.
#[pyfunction]
#[pyo3(signature = (bundle, backend="mock", threshold=None, min_interval_ms=None, max_gap_ms=None, block_matching=true, parallelism=None))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline<'py>(
    py: Python<'py>,
    bundle: PathBuf,
    backend: &str,
    threshold: Option<u32>,
    min_interval_ms: Option<u64>,
    max_gap_ms: Option<u64>,
    block_matching: bool,
    parallelism: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = PipelineConfig::new(bundle, backend);
    if let Some(t) = threshold {
        cfg.matching.threshold = t;
    }
    if let Some(v) = min_interval_ms {
        cfg.consolidation.min_interval_ms = v;
    }
    if let Some(v) = max_gap_ms {
        cfg.consolidation.max_gap_ms = v;
    }
    cfg.block_matching = block_matching;
    cfg.parallelism = parallelism;
    let out = py.detach(|| pipeline::run_pipeline(&cfg)).map_err(core_err)?;
    to_py(py, &serde_json::json!({"report": out.report, "annotations": out.annotations}))
}

/// Typed words `(text, t_start, t_end)` from event dicts.
#[pyfunction]
#[pyo3(signature = (events, gap_ms=DEFAULT_WORD_GAP_MS))]
fn aggregate_keystrokes(events: &Bound<'_, PyAny>, gap_ms: u64) -> PyResult<Vec<(String, u64, u64)>> {
    let events: Vec<EventRecord> = from_py(events)?;
    Ok(retrace_core::input::aggregate_keystrokes(&events, gap_ms)
        .into_iter()
        .map(|w| (w.text, w.t_start.0, w.t_end.0))
        .collect())
}

/// Function intervals `(entry, t_start, t_end)` from `(t, entry or None)` samples.
#[pyfunction]
#[pyo3(signature = (samples, min_interval_ms=None, max_gap_ms=None))]
fn consolidate(
    samples: Vec<(u64, Option<u64>)>,
    min_interval_ms: Option<u64>,
    max_gap_ms: Option<u64>,
) -> Vec<(u64, u64, u64)> {
    let d = ConsolidationConfig::default();
    let cfg = ConsolidationConfig {
        min_interval_ms: min_interval_ms.unwrap_or(d.min_interval_ms),
        max_gap_ms: max_gap_ms.unwrap_or(d.max_gap_ms),
    };
    let s: Vec<(Timestamp, Option<Addr>)> = samples.into_iter().map(|(t, e)| (Timestamp(t), e.map(Addr))).collect();
    annotate::consolidate(&s, &cfg)
        .into_iter()
        .map(|iv| (iv.entry.0, iv.t_start.0, iv.t_end.0))
        .collect()
}

/// `(with_correct, wrong, miss, without_correct, detected)`.
type CountTuple = (u64, u64, u64, u64, u64);

/// Function-level report from `(dataset, counts)` rows.
#[pyfunction]
fn summarize_function_eval<'py>(py: Python<'py>, groups: Vec<(String, CountTuple)>) -> PyResult<Bound<'py, PyAny>> {
    let groups: Vec<(String, OutcomeCounts)> =
        groups.into_iter().map(|(n, (a, b, c, d, e))| (n, OutcomeCounts::new(a, b, c, d, e))).collect();
    to_py(py, &evaluate::summarize_function_eval(&groups))
}

/// Block-level report from `(subject, correct, total)` rows and the pooled function accuracy `(num, den)`.
#[pyfunction]
fn summarize_block_eval<'py>(
    py: Python<'py>,
    results: Vec<(String, u64, u64)>,
    function_accuracy: (u64, u64),
) -> PyResult<Bound<'py, PyAny>> {
    if function_accuracy.1 == 0 {
        return Err(PyValueError::new_err("function accuracy denominator is zero"));
    }
    let rows: Vec<BlockSubjectResult> =
        results.into_iter().map(|(subject, correct, total)| BlockSubjectResult { subject, correct, total }).collect();
    to_py(py, &evaluate::summarize_block_eval(&rows, Ratio::new(function_accuracy.0, function_accuracy.1)))
}

/// Stratified frame sample from `(session_id, subject, frame_count)` pools.
#[pyfunction]
#[pyo3(signature = (pools, n, seed, exclusions=None))]
fn stratified_sample(
    pools: Vec<(String, String, usize)>,
    n: usize,
    seed: u64,
    exclusions: Option<Vec<(String, usize)>>,
) -> PyResult<Vec<(String, String, usize)>> {
    let pools: Vec<SamplePool> = pools
        .into_iter()
        .map(|(session_id, subject, frame_count)| SamplePool { session_id, subject, frame_count })
        .collect();
    let excluded: BTreeSet<(String, usize)> = exclusions.unwrap_or_default().into_iter().collect();
    Ok(evaluate::stratified_sample(&pools, n, seed, &excluded)
        .map_err(core_err)?
        .into_iter()
        .map(|e| (e.subject, e.session_id, e.frame_index))
        .collect())
}

#[pymodule]
#[pyo3(name = "retrace")]
fn retrace_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RetraceError", m.py().get_type::<RetraceError>())?;
    m.add("TOOL_VERSION", retrace_core::TOOL_VERSION)?;
    m.add_class::<PySessionBundle>()?;
    m.add_class::<PySymbolIndex>()?;
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_score, m)?)?;
    m.add_function(wrap_pyfunction!(sanitize_symbol, m)?)?;
    m.add_function(wrap_pyfunction!(write_demo_bundle, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_keystrokes, m)?)?;
    m.add_function(wrap_pyfunction!(consolidate, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_function_eval, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_block_eval, m)?)?;
    m.add_function(wrap_pyfunction!(stratified_sample, m)?)?;
    Ok(())
}
