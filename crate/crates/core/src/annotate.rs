//! Annotation stream: renames, function views, navigation and feature use.
//!
//! Renames are detected in one sequential pass because they are the only
//! state carried across frames. Everything else is a pure function of the
//! time-sorted per-frame matches, clicks and typed words.

use std::collections::{BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifacts::{is_symbol_char, symbols_in, Addr, BinaryArtifactMap, NamedArtifact, RenameEvent, RenameScope, SymbolTimeline};
use crate::error::{Error, Result};
use crate::input::{ClickedToken, Feature, FeatureWindow, TypedWord};
use crate::matchers::{match_function, FunctionLabel, MatchConfig};
use crate::ocr::OcrFrame;
use crate::session::Timestamp;

pub const DOUBLE_CLICK_CONFIRM_MS: u64 = 5_000;
pub const XREF_CONFIRM_MS: u64 = 15_000;
pub const RENAME_CLICK_LOOKBACK_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnnotationKind {
    Navigation,
    FunctionView,
    BlockView,
    FeatureUse,
    Rename,
    TaskMark,
    Comment,
}

impl AnnotationKind {
    pub const ALL: [AnnotationKind; 7] = [
        AnnotationKind::Navigation,
        AnnotationKind::FunctionView,
        AnnotationKind::BlockView,
        AnnotationKind::FeatureUse,
        AnnotationKind::Rename,
        AnnotationKind::TaskMark,
        AnnotationKind::Comment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnnotationKind::Navigation => "Navigation",
            AnnotationKind::FunctionView => "FunctionView",
            AnnotationKind::BlockView => "BlockView",
            AnnotationKind::FeatureUse => "FeatureUse",
            AnnotationKind::Rename => "Rename",
            AnnotationKind::TaskMark => "TaskMark",
            AnnotationKind::Comment => "Comment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavMechanism {
    DoubleClick,
    XrefClick,
    Search,
}

/// Kind-specific payload; serialized as `"kind": ..., "payload": {...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum AnnotationBody {
    FunctionView {
        entry: Addr,
        display_name: String,
    },
    BlockView {
        function: Addr,
        block: Addr,
        ambiguous: bool,
    },
    Navigation {
        mechanism: NavMechanism,
        from: Option<Addr>,
        to: Addr,
    },
    Rename {
        scope: RenameScope,
        old: String,
        new: String,
    },
    FeatureUse {
        feature: Feature,
        text: String,
    },
    Comment {
        text: String,
    },
    TaskMark {
        label: String,
    },
}

impl AnnotationBody {
    pub fn kind(&self) -> AnnotationKind {
        match self {
            AnnotationBody::FunctionView { .. } => AnnotationKind::FunctionView,
            AnnotationBody::BlockView { .. } => AnnotationKind::BlockView,
            AnnotationBody::Navigation { .. } => AnnotationKind::Navigation,
            AnnotationBody::Rename { .. } => AnnotationKind::Rename,
            AnnotationBody::FeatureUse { .. } => AnnotationKind::FeatureUse,
            AnnotationBody::Comment { .. } => AnnotationKind::Comment,
            AnnotationBody::TaskMark { .. } => AnnotationKind::TaskMark,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Suggested,
    Confirmed,
    Rejected,
    Manual,
}

impl Status {
    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Provenance {
    Auto { tool_version: String },
    Human { author: String },
}

impl Provenance {
    pub fn auto() -> Self {
        Provenance::Auto {
            tool_version: crate::TOOL_VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub session_id: String,
    #[serde(flatten)]
    pub body: AnnotationBody,
    pub t_start: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<Timestamp>,
    pub status: Status,
    pub provenance: Provenance,
    /// Id of the record this one replaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<String>,
}

impl Annotation {
    /// A suggested, automatically produced annotation with a content-derived id.
    pub fn auto(session_id: &str, body: AnnotationBody, t_start: Timestamp, t_end: Option<Timestamp>) -> Self {
        let mut a = Annotation {
            id: String::new(),
            session_id: session_id.to_string(),
            body,
            t_start,
            t_end,
            status: Status::Suggested,
            provenance: Provenance::auto(),
            supersedes: None,
        };
        a.assign_id("");
        a
    }

    pub fn kind(&self) -> AnnotationKind {
        self.body.kind()
    }

    /// Sets `id` to a hash of the content and `salt`.
    pub fn assign_id(&mut self, salt: &str) {
        self.id.clear();
        let body = serde_json::to_vec(self).expect("annotations serialize");
        let mut bytes = body;
        bytes.extend_from_slice(salt.as_bytes());
        self.id = format!("a{}", &crate::sha256_hex(&bytes)[..16]);
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_end.is_some_and(|e| e < self.t_start) {
            return Err(Error::schema(format!("annotation {}", self.id), "t_end precedes t_start"));
        }
        Ok(())
    }

    fn sort_key(&self) -> (Timestamp, AnnotationKind, Option<Timestamp>, &str) {
        (self.t_start, self.kind(), self.t_end, &self.id)
    }
}

/// Sorts by start time, then kind, end time and id.
pub fn sort_annotations(annotations: &mut [Annotation]) {
    annotations.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsolidationConfig {
    pub min_interval_ms: u64,
    pub max_gap_ms: u64,
}

impl Default for ConsolidationConfig {
    fn default() -> Self {
        ConsolidationConfig {
            min_interval_ms: 5_000,
            max_gap_ms: 10_000,
        }
    }
}

/// One OCR'd frame with its capture time.
#[derive(Debug, Clone, Copy)]
pub struct FrameObs<'a> {
    pub index: usize,
    pub t: Timestamp,
    pub ocr: &'a OcrFrame,
}

/// A feature window visible on consecutive frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpan {
    pub feature: Feature,
    pub first_frame: usize,
    pub last_frame: usize,
    pub t_start: Timestamp,
    pub t_end: Timestamp,
    /// Typed words are paired with the span up to this time, the capture
    /// time of the next frame.
    pub input_end: Timestamp,
}

impl FeatureSpan {
    fn overlapping<'w>(&self, words: &'w [TypedWord]) -> impl Iterator<Item = &'w TypedWord> + 'w {
        let (start, end) = (self.t_start, self.input_end);
        words.iter().filter(move |w| w.t_start <= end && w.t_end >= start)
    }
}

/// Groups per-frame feature windows into spans. `frame_times[i]` is the
/// capture time of frame `i`.
pub fn feature_spans(windows: &[FeatureWindow], frame_times: &[Timestamp]) -> Vec<FeatureSpan> {
    let mut sorted: Vec<&FeatureWindow> = windows.iter().collect();
    sorted.sort_by_key(|w| w.frame_index);
    let mut out: Vec<FeatureSpan> = Vec::new();
    for w in sorted {
        let Some(&t) = frame_times.get(w.frame_index) else { continue };
        if let Some(last) = out.last_mut() {
            if last.feature == w.feature && last.last_frame + 1 == w.frame_index {
                last.last_frame = w.frame_index;
                last.t_end = t;
                continue;
            }
        }
        out.push(FeatureSpan {
            feature: w.feature.clone(),
            first_frame: w.frame_index,
            last_frame: w.frame_index,
            t_start: t,
            t_end: t,
            input_end: t,
        });
    }
    for s in &mut out {
        s.input_end = frame_times.get(s.last_frame + 1).copied().unwrap_or(s.t_end);
    }
    out
}

/// Pairs every feature span with the words typed while it was visible.
pub fn annotate_feature_use(session_id: &str, spans: &[FeatureSpan], words: &[TypedWord]) -> Vec<Annotation> {
    spans
        .iter()
        .map(|s| {
            let text = s.overlapping(words).map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ");
            Annotation::auto(
                session_id,
                AnnotationBody::FeatureUse {
                    feature: s.feature.clone(),
                    text,
                },
                s.t_start,
                Some(s.t_end),
            )
        })
        .collect()
}

/// Function shown at or shortly before `t`, matched against the names valid at that time.
fn function_context(frames: &[FrameObs<'_>], t: Timestamp, timeline: &SymbolTimeline, cfg: &MatchConfig) -> Option<Addr> {
    let end = frames.partition_point(|f| f.t <= t);
    frames[..end]
        .iter()
        .rev()
        .take_while(|f| t.since(f.t) <= RENAME_CLICK_LOOKBACK_MS)
        .find_map(|f| match_function(f.ocr, &timeline.at(f.t), cfg).label.entry())
}

fn rename_target(
    feature: &Feature,
    clicks: &[ClickedToken],
    at: Timestamp,
    context: Option<Addr>,
    timeline: &SymbolTimeline,
) -> Option<(RenameScope, String)> {
    let index = timeline.at(at);
    let recent = clicks
        .iter()
        .rev()
        .skip_while(|c| c.t > at)
        .take_while(|c| at.since(c.t) <= RENAME_CLICK_LOOKBACK_MS);
    for c in recent {
        let text = c.token.text.trim();
        let named = index.resolve_name(text).or_else(|| symbols_in(text).find_map(|s| index.resolve_name(&s)));
        let found = match (feature, named) {
            (Feature::RenameFunction, Some(NamedArtifact::Function(f))) => Some((RenameScope::Function, NamedArtifact::Function(f))),
            (Feature::EditLabel | Feature::DefineName, Some(a @ NamedArtifact::Function(_))) => Some((RenameScope::Function, a)),
            (Feature::EditLabel | Feature::DefineName, Some(a @ NamedArtifact::Global(_))) => Some((RenameScope::Global, a)),
            (Feature::RenameLocal, None) => {
                if let Some(f) = context {
                    let parts = std::iter::once(text).chain(text.split(|ch: char| !is_symbol_char(ch)));
                    for part in parts {
                        let part = part.trim_matches(|ch: char| ch.is_ascii_punctuation() && ch != '_');
                        let sanitized = crate::artifacts::sanitize_symbol(part);
                        if !sanitized.is_empty() && !index.is_stopword(&sanitized) && index.occurs(part, Some(f)) {
                            return Some((RenameScope::Local { function: f }, part.to_string()));
                        }
                    }
                }
                None
            }
            _ => None,
        };
        if let Some((scope, artifact)) = found {
            let name = index.display_name(artifact).unwrap_or(text).to_string();
            return Some((scope, name));
        }
    }
    match (feature, context) {
        (Feature::RenameFunction, Some(f)) => index.function_name(f).map(|n| (RenameScope::Function, n.to_string())),
        _ => None,
    }
}

/// Sequential rename pass.
///
/// For each rename-class span with typed input, the new name is the last
/// word typed while the window was up and the old name comes from the most
/// recent suitable click (or, for function renames, the function in view).
/// Successful renames are appended to `timeline` effective 1 ms after the
/// window was last seen. Unresolvable targets yield an annotation with an
/// empty old name and no timeline change.
pub fn detect_renames(
    session_id: &str,
    frames: &[FrameObs<'_>],
    spans: &[FeatureSpan],
    words: &[TypedWord],
    clicks: &[ClickedToken],
    timeline: &mut SymbolTimeline,
    cfg: &MatchConfig,
) -> Vec<Annotation> {
    let mut out = Vec::new();
    for span in spans.iter().filter(|s| s.feature.is_rename()) {
        let Some(word) = span.overlapping(words).last() else { continue };
        let context = function_context(frames, span.t_start, timeline, cfg);
        let target = rename_target(&span.feature, clicks, span.t_start, context, timeline);
        let (scope, old) = match target {
            Some((scope, old)) => {
                let ev = RenameEvent {
                    t: span.t_end.plus(1),
                    scope,
                    old_name: old.clone(),
                    new_name: word.text.clone(),
                };
                match timeline.push(ev) {
                    Ok(()) => (scope, old),
                    Err(_) => (scope, String::new()),
                }
            }
            None => {
                let scope = match (&span.feature, context) {
                    (Feature::RenameLocal, Some(f)) => RenameScope::Local { function: f },
                    (Feature::RenameFunction, _) => RenameScope::Function,
                    _ => RenameScope::Global,
                };
                (scope, String::new())
            }
        };
        out.push(Annotation::auto(
            session_id,
            AnnotationBody::Rename {
                scope,
                old,
                new: word.text.clone(),
            },
            span.t_start,
            Some(span.t_end),
        ));
    }
    out
}

/// A kept function interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FunctionInterval {
    pub entry: Addr,
    pub t_start: Timestamp,
    pub t_end: Timestamp,
}

/// Consolidates time-sorted per-frame labels into function intervals.
///
/// Runs of equal labels shorter than `min_interval_ms` are discarded first
/// (unless it is zero); kept runs of the same function separated by at most
/// `max_gap_ms` are then joined. Filtering before joining keeps the interval
/// count non-increasing in `max_gap_ms`.
pub fn consolidate(samples: &[(Timestamp, Option<Addr>)], cfg: &ConsolidationConfig) -> Vec<FunctionInterval> {
    let mut runs: Vec<FunctionInterval> = Vec::new();
    let mut prev: Option<Option<Addr>> = None;
    for &(t, label) in samples {
        if prev == Some(label) {
            if let (Some(_), Some(r)) = (label, runs.last_mut()) {
                r.t_end = t;
            }
        } else if let Some(entry) = label {
            runs.push(FunctionInterval { entry, t_start: t, t_end: t });
        }
        prev = Some(label);
    }
    let kept = runs
        .into_iter()
        .filter(|r| cfg.min_interval_ms == 0 || r.t_end.since(r.t_start) >= cfg.min_interval_ms);
    let mut out: Vec<FunctionInterval> = Vec::new();
    for r in kept {
        match out.last_mut() {
            Some(last) if last.entry == r.entry && r.t_start.since(last.t_end) <= cfg.max_gap_ms => last.t_end = r.t_end,
            _ => out.push(r),
        }
    }
    out
}

/// FunctionView annotations for consolidated intervals, named as of each interval's start.
pub fn build_function_intervals(
    session_id: &str,
    samples: &[(Timestamp, FunctionLabel)],
    cfg: &ConsolidationConfig,
    timeline: &SymbolTimeline,
) -> Vec<Annotation> {
    let plain: Vec<(Timestamp, Option<Addr>)> = samples.iter().map(|(t, l)| (*t, l.entry())).collect();
    consolidate(&plain, cfg)
        .into_iter()
        .map(|iv| {
            let display_name = timeline.at(iv.t_start).function_name(iv.entry).unwrap_or_default().to_string();
            Annotation::auto(
                session_id,
                AnnotationBody::FunctionView {
                    entry: iv.entry,
                    display_name,
                },
                iv.t_start,
                Some(iv.t_end),
            )
        })
        .collect()
}

fn parse_address_token(text: &str) -> Option<Addr> {
    let t = text.trim_matches(|c: char| c.is_ascii_punctuation() && c != '_');
    let digits = t.strip_prefix("0x").unwrap_or(t);
    if digits.len() < 4 || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
        return None;
    }
    u64::from_str_radix(digits, 16).ok().map(Addr)
}

fn is_xref_click(c: &ClickedToken, map: &BinaryArtifactMap) -> bool {
    let lower = c.token.text.to_lowercase();
    lower.contains("references to") || lower.contains("xrefs to") || parse_address_token(&c.token.text).is_some_and(|a| map.is_xref_endpoint(a))
}

/// Navigation annotations: each entry into a function is attributed to at
/// most one trigger that precedes it, preferring a double click on that
/// function within 5 s, then an xref click, then a search feature, each
/// within 15 s. Unconfirmed triggers produce nothing.
pub fn annotate_navigation(
    session_id: &str,
    clicks: &[ClickedToken],
    function_views: &[Annotation],
    feature_uses: &[Annotation],
    map: &BinaryArtifactMap,
    timeline: &SymbolTimeline,
) -> Vec<Annotation> {
    let mut views: Vec<(Timestamp, Addr)> = function_views
        .iter()
        .filter_map(|a| match a.body {
            AnnotationBody::FunctionView { entry, .. } => Some((a.t_start, entry)),
            _ => None,
        })
        .collect();
    views.sort();

    let searches: Vec<Timestamp> = feature_uses
        .iter()
        .filter(|a| matches!(&a.body, AnnotationBody::FeatureUse { feature, .. } if feature.is_search()))
        .map(|a| a.t_start)
        .collect();

    let mut used_clicks: HashSet<usize> = HashSet::new();
    let mut used_searches: BTreeSet<usize> = BTreeSet::new();
    let mut out = Vec::new();
    for (k, &(entered, to)) in views.iter().enumerate() {
        let from = k.checked_sub(1).map(|p| views[p].1).filter(|&f| f != to);
        if k > 0 && from.is_none() {
            continue;
        }
        let before = |t: Timestamp, window: u64| t <= entered && entered.since(t) <= window;
        let double = clicks.iter().enumerate().rev().find(|(i, c)| {
            !used_clicks.contains(i) && c.click_count >= 2 && before(c.t, DOUBLE_CLICK_CONFIRM_MS) && {
                let index = timeline.at(c.t);
                let text = c.token.text.trim();
                let named = index.resolve_name(text).or_else(|| symbols_in(text).find_map(|s| index.resolve_name(&s)));
                named == Some(NamedArtifact::Function(to))
            }
        });
        let trigger = if let Some((i, c)) = double {
            used_clicks.insert(i);
            Some((NavMechanism::DoubleClick, c.t))
        } else if let Some((i, c)) = clicks
            .iter()
            .enumerate()
            .rev()
            .find(|(i, c)| !used_clicks.contains(i) && before(c.t, XREF_CONFIRM_MS) && is_xref_click(c, map))
        {
            used_clicks.insert(i);
            Some((NavMechanism::XrefClick, c.t))
        } else if let Some(i) = (0..searches.len())
            .rev()
            .find(|i| !used_searches.contains(i) && before(searches[*i], XREF_CONFIRM_MS))
        {
            used_searches.insert(i);
            Some((NavMechanism::Search, searches[i]))
        } else {
            None
        };
        if let Some((mechanism, t)) = trigger {
            out.push(Annotation::auto(session_id, AnnotationBody::Navigation { mechanism, from, to }, t, None));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimelineFormat {
    Jsonl,
    Csv,
}

pub const TIMELINE_CSV_HEADER: [&str; 7] = ["id", "t_start", "t_end", "kind", "payload", "status", "provenance"];

/// Serializes annotations in their canonical order.
pub fn export_timeline(annotations: &[Annotation], format: TimelineFormat) -> Result<String> {
    let mut sorted = annotations.to_vec();
    sort_annotations(&mut sorted);
    match format {
        TimelineFormat::Jsonl => {
            let mut out = String::new();
            for a in &sorted {
                out.push_str(&serde_json::to_string(a)?);
                out.push('\n');
            }
            Ok(out)
        }
        TimelineFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(TIMELINE_CSV_HEADER)?;
            for a in &sorted {
                let v = serde_json::to_value(a)?;
                let provenance = match &a.provenance {
                    Provenance::Auto { tool_version } => format!("auto:{tool_version}"),
                    Provenance::Human { author } => format!("human:{author}"),
                };
                w.write_record([
                    a.id.clone(),
                    a.t_start.0.to_string(),
                    a.t_end.map(|t| t.0.to_string()).unwrap_or_default(),
                    a.kind().name().to_string(),
                    v["payload"].to_string(),
                    v["status"].as_str().unwrap_or_default().to_string(),
                    provenance,
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::schema("timeline csv", e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

/// Parses annotations from JSON lines; blank lines are skipped.
pub fn parse_annotations(text: &str, location: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: Annotation =
            serde_json::from_str(line).map_err(|e| Error::schema(format!("{location}:{}", i + 1), e.to_string()))?;
        a.validate()?;
        out.push(a);
    }
    Ok(out)
}

pub const SCATTER_CSV_HEADER: [&str; 3] = ["t", "function_ordinal", "entry"];

/// One row per function-labeled sample inside a kept FunctionView interval
/// of that function; ordinals are 1-based ranks of the entry address.
pub fn export_scatter(function_views: &[Annotation], samples: &[(Timestamp, Option<Addr>)], order: &[Addr]) -> Result<String> {
    let intervals: Vec<(Addr, Timestamp, Timestamp)> = function_views
        .iter()
        .filter_map(|a| match a.body {
            AnnotationBody::FunctionView { entry, .. } => Some((entry, a.t_start, a.t_end.unwrap_or(a.t_start))),
            _ => None,
        })
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCATTER_CSV_HEADER)?;
    for &(t, label) in samples {
        let Some(entry) = label else { continue };
        if !intervals.iter().any(|&(e, s, end)| e == entry && s <= t && t <= end) {
            continue;
        }
        let Ok(rank) = order.binary_search(&entry) else { continue };
        w.write_record([t.0.to_string(), (rank + 1).to_string(), entry.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::schema("scatter csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Reads an annotation log; a missing file is an empty log.
pub fn read_log(path: &Path) -> Result<Vec<Annotation>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_annotations(&text, "annotations.jsonl")
}

/// Appends records to an annotation log.
pub fn append_log(path: &Path, records: &[Annotation]) -> Result<()> {
    if records.is_empty() {
        return Ok(());
    }
    let mut buf = String::new();
    for r in records {
        r.validate()?;
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

/// Current annotations after replaying the log: each record replaces the one it supersedes.
pub fn current_state(log: &[Annotation]) -> Vec<Annotation> {
    let superseded: HashSet<&str> = log.iter().filter_map(|a| a.supersedes.as_deref()).collect();
    let mut seen = HashSet::new();
    let mut out: Vec<Annotation> = log
        .iter()
        .filter(|a| !superseded.contains(a.id.as_str()) && seen.insert(a.id.as_str()))
        .cloned()
        .collect();
    sort_annotations(&mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EditError {
    NotFound,
    /// The record was already superseded by the given id.
    Superseded(String),
}

/// Builds the record that changes `id`'s status, attributed to `author`.
pub fn supersede_status(log: &[Annotation], id: &str, status: Status, author: &str) -> Result<Annotation, EditError> {
    let target = log.iter().find(|a| a.id == id).ok_or(EditError::NotFound)?;
    if let Some(next) = log.iter().find(|a| a.supersedes.as_deref() == Some(id)) {
        return Err(EditError::Superseded(next.id.clone()));
    }
    let mut rec = target.clone();
    rec.status = status;
    rec.provenance = Provenance::Human { author: author.to_string() };
    rec.supersedes = Some(id.to_string());
    rec.assign_id(&log.len().to_string());
    Ok(rec)
}

/// Stamps a manual annotation for appending to a log of `log_len` records.
pub fn manual_record(mut a: Annotation, author: &str, log_len: usize) -> Result<Annotation> {
    a.status = Status::Manual;
    a.provenance = Provenance::Human { author: author.to_string() };
    a.supersedes = None;
    a.validate()?;
    a.assign_id(&format!("manual:{log_len}"));
    Ok(a)
}
