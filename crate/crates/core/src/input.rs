//! Keystroke aggregation, click resolution and feature-window detection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Rect;
use crate::matchers::similarity_score;
use crate::ocr::{token_at_point, OcrFrame, OcrToken};
use crate::session::{EventKind, EventRecord, Timestamp};

pub const DEFAULT_WORD_GAP_MS: u64 = 2000;
pub const DOUBLE_CLICK_WINDOW_MS: u64 = 400;
pub const OCR_STALENESS_MS: u64 = 2000;
/// Minimum per-word similarity for a pattern phrase to match on-screen text.
pub const PHRASE_WORD_SCORE: u32 = 90;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedWord {
    pub text: String,
    pub t_start: Timestamp,
    pub t_end: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum KeyClass {
    Char(char),
    Erase,
    Boundary,
    Ignored,
}

const MODIFIER_NAMES: &[&str] = &["ctrl", "control", "alt", "meta", "cmd", "command", "super", "win", "altgr", "option"];

fn classify_key(key: &str, modifiers: &[String]) -> KeyClass {
    let lower = key.to_ascii_lowercase();
    let chord = modifiers.iter().any(|m| MODIFIER_NAMES.contains(&m.to_ascii_lowercase().as_str()));
    match lower.as_str() {
        "backspace" | "delete" | "del" => return KeyClass::Erase,
        "enter" | "return" | "tab" | "escape" | "esc" => return KeyClass::Boundary,
        "space" if !chord => return KeyClass::Char(' '),
        _ => {}
    }
    let mut chars = key.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if !c.is_control() && !chord => KeyClass::Char(c),
        // Modifiers alone, arrows, function keys, OS keys and chords carry no text.
        _ => KeyClass::Ignored,
    }
}

/// Combines keystrokes into timestamped words.
///
/// Words break on pauses longer than `gap_ms`, on Enter/Tab/Escape and on
/// mouse clicks. Backspace and Delete remove the last retained character of
/// the current word and do nothing when it is empty. Words are trimmed and
/// empty words discarded.
pub fn aggregate_keystrokes(events: &[EventRecord], gap_ms: u64) -> Vec<TypedWord> {
    struct Current {
        chars: Vec<char>,
        t_start: Option<Timestamp>,
        t_end: Timestamp,
    }

    fn flush(cur: &mut Option<Current>, out: &mut Vec<TypedWord>) {
        if let Some(c) = cur.take() {
            let text: String = c.chars.iter().collect::<String>().trim().to_string();
            if let (false, Some(t_start)) = (text.is_empty(), c.t_start) {
                out.push(TypedWord {
                    text,
                    t_start,
                    t_end: c.t_end,
                });
            }
        }
    }

    let mut out = Vec::new();
    let mut cur: Option<Current> = None;
    for ev in events {
        let class = match &ev.kind {
            EventKind::Keystroke { key, modifiers } => classify_key(key, modifiers),
            EventKind::MouseClick { .. } => KeyClass::Boundary,
            _ => KeyClass::Ignored,
        };
        if class == KeyClass::Ignored {
            continue;
        }
        if class == KeyClass::Boundary {
            flush(&mut cur, &mut out);
            continue;
        }
        if cur.as_ref().is_some_and(|c| ev.t.since(c.t_end) > gap_ms) {
            flush(&mut cur, &mut out);
        }
        let c = cur.get_or_insert_with(|| Current {
            chars: Vec::new(),
            t_start: None,
            t_end: ev.t,
        });
        c.t_end = ev.t;
        match class {
            KeyClass::Char(ch) => {
                c.chars.push(ch);
                c.t_start.get_or_insert(ev.t);
            }
            KeyClass::Erase => {
                c.chars.pop();
            }
            _ => unreachable!(),
        }
    }
    flush(&mut cur, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickedToken {
    pub t: Timestamp,
    pub token: OcrToken,
    pub click_count: u8,
}

/// Latest OCR frame captured at or before `t` and no older than [`OCR_STALENESS_MS`].
fn frame_for_click<'a>(frames: &'a [(Timestamp, &'a OcrFrame)], t: Timestamp) -> Option<&'a OcrFrame> {
    let i = frames.partition_point(|(ft, _)| *ft <= t).checked_sub(1)?;
    let (ft, frame) = frames[i];
    (t.since(ft) <= OCR_STALENESS_MS).then_some(frame)
}

/// Resolves one click against time-sorted `(capture time, OCR frame)` pairs.
pub fn resolve_click(click: &EventRecord, frames: &[(Timestamp, &OcrFrame)]) -> Option<ClickedToken> {
    let EventKind::MouseClick { x, y, click_count, .. } = click.kind else {
        return None;
    };
    let frame = frame_for_click(frames, click.t)?;
    let token = token_at_point(frame, x, y)?;
    Some(ClickedToken {
        t: click.t,
        token: token.clone(),
        click_count: click_count.clamp(1, 2),
    })
}

/// Resolves every click in `events`, folding two single clicks on the same
/// token within [`DOUBLE_CLICK_WINDOW_MS`] into one double click.
pub fn resolve_clicks(events: &[EventRecord], frames: &[(Timestamp, &OcrFrame)]) -> Vec<ClickedToken> {
    let mut out: Vec<ClickedToken> = Vec::new();
    for ev in events {
        let Some(clicked) = resolve_click(ev, frames) else { continue };
        if let Some(prev) = out.last_mut() {
            if prev.click_count == 1
                && clicked.click_count == 1
                && prev.token == clicked.token
                && clicked.t.since(prev.t) <= DOUBLE_CLICK_WINDOW_MS
            {
                prev.click_count = 2;
                continue;
            }
        }
        out.push(clicked);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feature {
    RenameFunction,
    RenameLocal,
    EditLabel,
    DefineName,
    FindReferences,
    FindString,
    SearchFunctions,
    Other(String),
}

impl Feature {
    /// Features whose dialogs rename an artifact.
    pub fn is_rename(&self) -> bool {
        matches!(self, Feature::RenameFunction | Feature::RenameLocal | Feature::EditLabel | Feature::DefineName)
    }

    /// Features that list or search for locations to jump to.
    pub fn is_search(&self) -> bool {
        matches!(self, Feature::FindReferences | Feature::FindString | Feature::SearchFunctions)
    }

    pub fn label(&self) -> &str {
        match self {
            Feature::RenameFunction => "Rename Function",
            Feature::RenameLocal => "Rename Local Variable",
            Feature::EditLabel => "Edit Label",
            Feature::DefineName => "Define Name",
            Feature::FindReferences => "References to",
            Feature::FindString => "Find String",
            Feature::SearchFunctions => "Search for Functions",
            Feature::Other(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturePattern {
    pub feature: Feature,
    pub phrases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_hint: Option<String>,
}

/// Ordered feature patterns; earlier entries take priority.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatternTable(pub Vec<FeaturePattern>);

impl Default for PatternTable {
    fn default() -> Self {
        let p = |feature: Feature, phrases: &[&str], tool: Option<&str>| FeaturePattern {
            feature,
            phrases: phrases.iter().map(|s| s.to_string()).collect(),
            tool_hint: tool.map(str::to_string),
        };
        PatternTable(vec![
            p(Feature::RenameLocal, &["Rename Local Variable"], Some("ghidra")),
            p(Feature::RenameFunction, &["Rename Function"], Some("ghidra")),
            p(Feature::EditLabel, &["Edit Label"], Some("ghidra")),
            p(Feature::EditLabel, &["Rename address"], Some("ida")),
            p(Feature::DefineName, &["Define Name"], Some("binja")),
            p(Feature::RenameLocal, &["Rename Variable", "Rename lvar"], None),
            p(Feature::RenameFunction, &["Rename Symbol"], None),
            p(Feature::FindReferences, &["References to", "xrefs to", "Cross References"], None),
            p(Feature::FindString, &["Find String", "Search for Strings", "Text search"], None),
            p(Feature::SearchFunctions, &["Search for Functions", "Choose function", "Go to function"], None),
        ])
    }
}

impl PatternTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::schema(path.display().to_string(), e.to_string()))
    }

    /// Patterns applicable to `tool`: generic ones plus that tool's overlay.
    /// With no tool hint every pattern applies.
    pub fn for_tool(&self, tool: Option<&str>) -> PatternTable {
        PatternTable(
            self.0
                .iter()
                .filter(|p| match (tool, p.tool_hint.as_deref()) {
                    (Some(t), Some(h)) => t.eq_ignore_ascii_case(h),
                    _ => true,
                })
                .cloned()
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub frame_index: usize,
    pub feature: Feature,
    pub title_token_bbox: Rect,
}

struct Word<'a> {
    text: String,
    token: &'a OcrToken,
    /// First word of its OCR token with no text close by on its left.
    starts_line: bool,
}

fn same_line(a: &Rect, b: &Rect) -> bool {
    let (_, ay) = a.center();
    let (_, by) = b.center();
    (ay - by).abs() <= f64::from(a.h.max(b.h)) / 2.0
}

/// Finds a visible feature window by its title.
///
/// A phrase matches when consecutive words on one line score at least
/// [`PHRASE_WORD_SCORE`] against the phrase words (case-insensitive) and the
/// first word begins a text line (it starts its token and no token sits just
/// to its left), so menu entries that merely mention a title do not count.
pub fn detect_feature_window(frame: &OcrFrame, patterns: &PatternTable) -> Option<FeatureWindow> {
    let has_left_neighbor = |t: &OcrToken| {
        frame.tokens.iter().any(|o| {
            !std::ptr::eq(o, t)
                && same_line(&o.bbox, &t.bbox)
                && o.bbox.x < t.bbox.x
                && t.bbox.x.saturating_sub(o.bbox.right()) <= 2 * t.bbox.h.max(o.bbox.h)
        })
    };
    let words: Vec<Word<'_>> = frame
        .tokens
        .iter()
        .flat_map(|t| {
            let line_start = !has_left_neighbor(t);
            t.text.split_whitespace().enumerate().map(move |(i, w)| Word {
                text: w.to_lowercase(),
                token: t,
                starts_line: i == 0 && line_start,
            })
        })
        .collect();

    for pattern in &patterns.0 {
        for phrase in &pattern.phrases {
            let pw: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
            if pw.is_empty() || pw.len() > words.len() {
                continue;
            }
            for start in 0..=(words.len() - pw.len()) {
                if !words[start].starts_line {
                    continue;
                }
                let run = &words[start..start + pw.len()];
                let on_line = run.windows(2).all(|w| std::ptr::eq(w[0].token, w[1].token) || same_line(&w[0].token.bbox, &w[1].token.bbox));
                if on_line && run.iter().zip(&pw).all(|(w, p)| similarity_score(&w.text, p) >= PHRASE_WORD_SCORE) {
                    let bbox = run.iter().skip(1).fold(run[0].token.bbox, |acc, w| acc.union(&w.token.bbox));
                    return Some(FeatureWindow {
                        frame_index: frame.frame_index,
                        feature: pattern.feature.clone(),
                        title_token_bbox: bbox,
                    });
                }
            }
        }
    }
    None
}
