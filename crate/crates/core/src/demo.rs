//! Demo session: a short Ghidra session on a license-check binary.
//!
//! The subject opens the main function from the function list, renames it,
//! labels a global, looks up its references, enters the checking function
//! and renames a local variable there. Frames carry painted token boxes and
//! mock OCR sidecars with the text on screen.

use std::path::Path;

use crate::artifacts::{Addr, BinaryArtifactMap, BlockRecord, FunctionRecord, GlobalRecord, StringRecord, Xref, XrefKind};
use crate::error::{Error, Result};
use crate::image::{Image, Rect};
use crate::ocr::{format_token_table, MockBackend, OcrToken};
use crate::session::{write_bundle, EventKind, EventRecord, ProcessSample, SessionBundle, SessionManifest, Timestamp};

pub const DEMO_SESSION_ID: &str = "demo-keygenme";
pub const DEMO_BINARY_ID: &str = "keygenme";
pub const SCREEN_W: u32 = 960;
pub const SCREEN_H: u32 = 600;
const BACKGROUND: [u8; 4] = [238, 238, 238, 255];
const PANEL: [u8; 4] = [214, 220, 232, 255];
const FIELD: [u8; 4] = [228, 228, 210, 255];

/// 2024-03-12 00:00:00 UTC.
const DAY_MS: u64 = 1_710_201_600_000;

/// Wall-clock time of the demo day.
pub const fn at(h: u64, m: u64, s: u64, ms: u64) -> Timestamp {
    Timestamp(DAY_MS + ((h * 60 + m) * 60 + s) * 1000 + ms)
}

pub const MAIN: Addr = Addr(0x10ed40);
pub const CHECK: Addr = Addr(0x1a3a20);
pub const HELPER: Addr = Addr(0x101a40);
pub const PRINTER: Addr = Addr(0x102b10);
pub const KEY_GLOBAL: Addr = Addr(0x288bb);
pub const INIT: Addr = Addr(0x101000);
pub const ENTRY: Addr = Addr(0x101100);

const MAIN_LINES: [&str; 8] = [
    "PUSH RBP",
    "MOV RBP, RSP",
    "SUB RSP, 0x20",
    "LEA RDI, [s_Enter_license_key_00102010]",
    "CALL FUN_00101a40",
    "MOV EAX, dword ptr [DAT_00288bb]",
    "MOV RDI, RAX",
    "CALL FUN_001a3a20",
];

const CHECK_LINES: [&str; 7] = [
    "PUSH RBP",
    "MOV RBP, RSP",
    "MOV qword ptr [RBP + param_1], RDI",
    "MOV EAX, dword ptr [DAT_00288bb]",
    "XOR EAX, 0x1000",
    "MOV byte ptr [RBP + bVar8], AL",
    "CMP byte ptr [RBP + bVar8], 0x0",
];

fn block(addr: u64, lines: &[&str]) -> BlockRecord {
    BlockRecord {
        address: Addr(addr),
        text_lines: lines.iter().map(|s| s.to_string()).collect(),
    }
}

/// Artifact map of the demo binary.
pub fn demo_artifact_map() -> BinaryArtifactMap {
    let f = |entry: Addr, name: &str, blocks: Vec<BlockRecord>| FunctionRecord {
        entry_address: entry,
        name: name.to_string(),
        blocks,
    };
    BinaryArtifactMap {
        binary_id: DEMO_BINARY_ID.to_string(),
        functions: vec![
            f(INIT, "_init", vec![block(0x101000, &["SUB RSP, 0x8", "ADD RSP, 0x8", "RET"])]),
            f(
                ENTRY,
                "entry",
                vec![block(0x101100, &["XOR EBP, EBP", "MOV R9, RDX", "CALL qword ptr [__libc_start_main]", "HLT"])],
            ),
            f(
                HELPER,
                "FUN_00101a40",
                vec![
                    block(0x101a40, &["PUSH RBP", "MOV RBP, RSP", "SUB RSP, 0x20", "MOV qword ptr [RBP + local_10], RDI"]),
                    block(0x101a58, &["MOV EAX, 0x0", "LEAVE", "RET"]),
                ],
            ),
            f(
                PRINTER,
                "FUN_00102b10",
                vec![
                    block(0x102b10, &["PUSH RBP", "MOV RBP, RSP", "CALL FUN_00101a40", "MOV EAX, 0x0"]),
                    block(0x102b30, &["LEAVE", "RET"]),
                ],
            ),
            f(
                MAIN,
                "FUN_0010ed40",
                vec![
                    block(0x10ed40, &MAIN_LINES),
                    block(0x10ed78, &["TEST AL, AL", "JZ LAB_0010ed90"]),
                    block(0x10ed80, &["MOV EAX, 0x0", "LEAVE", "RET"]),
                    block(0x10ed90, &["MOV EAX, 0x1", "LEAVE", "RET"]),
                ],
            ),
            f(
                CHECK,
                "FUN_001a3a20",
                vec![
                    block(0x1a3a20, &CHECK_LINES[..6]),
                    block(0x1a3a48, &[CHECK_LINES[6], "JZ LAB_001a3a60"]),
                    block(0x1a3a50, &["MOV EAX, 0x1", "LEAVE", "RET"]),
                    block(0x1a3a60, &["MOV EAX, 0x0", "LEAVE", "RET"]),
                ],
            ),
        ],
        globals: vec![GlobalRecord {
            address: KEY_GLOBAL,
            name: "DAT_00288bb".to_string(),
            type_name: "undefined4".to_string(),
        }],
        strings: vec![StringRecord {
            address: Addr(0x102010),
            literal: "Enter license key:".to_string(),
        }],
        xrefs: vec![
            Xref { from_address: MAIN, to_address: HELPER, kind: XrefKind::Call },
            Xref { from_address: MAIN, to_address: CHECK, kind: XrefKind::Call },
            Xref { from_address: MAIN, to_address: KEY_GLOBAL, kind: XrefKind::Data },
            Xref { from_address: MAIN, to_address: Addr(0x102010), kind: XrefKind::String },
            Xref { from_address: CHECK, to_address: KEY_GLOBAL, kind: XrefKind::Data },
            Xref { from_address: PRINTER, to_address: HELPER, kind: XrefKind::Call },
        ],
    }
}

const CHAR_W: u32 = 8;
const LINE_H: u32 = 12;

/// Lays text out as one token per word starting at (x, y).
fn words(out: &mut Vec<OcrToken>, text: &str, x: u32, y: u32) {
    let mut cx = x;
    for w in text.split_whitespace() {
        let width = CHAR_W * w.chars().count() as u32;
        out.push(OcrToken::new(w, cx, y, width, LINE_H, 91.0));
        cx += width + CHAR_W;
    }
}

/// A single token holding a whole phrase, as OCR reports menu entries and titles.
fn phrase(out: &mut Vec<OcrToken>, text: &str, x: u32, y: u32) {
    out.push(OcrToken::new(text, x, y, CHAR_W * text.chars().count() as u32, LINE_H, 93.0));
}

struct Screen {
    tokens: Vec<OcrToken>,
    panels: Vec<(Rect, [u8; 4])>,
}

// Scene boundaries, as frame capture times.
fn scene_times() -> [(Timestamp, Timestamp); 5] {
    [
        (at(14, 37, 57, 500), at(14, 38, 9, 500)),   // rename function dialog
        (at(14, 39, 54, 500), at(14, 40, 2, 500)),   // edit label dialog
        (at(14, 40, 10, 500), at(14, 40, 12, 500)),  // context menu
        (at(14, 40, 15, 500), at(14, 40, 18, 500)),  // references window
        (at(14, 40, 28, 500), at(14, 40, 29, 500)),  // rename local dialog
    ]
}

const LIST_ROWS: [&str; 6] = ["_init", "entry", "FUN_00101a40", "FUN_00102b10", "FUN_0010ed40", "FUN_001a3a20"];
const LISTING_X: u32 = 300;
const LISTING_Y: u32 = 80;

fn list_row_pos(i: usize) -> (u32, u32) {
    (40, 80 + 20 * i as u32)
}

fn listing_line_y(i: usize) -> u32 {
    LISTING_Y + 30 + 18 * i as u32
}

fn typed_so_far(keys: &[(Timestamp, &str)], t: Timestamp) -> String {
    keys.iter()
        .filter(|(kt, _)| *kt <= t)
        .map(|(_, k)| if *k == "Space" { " " } else { k })
        .collect()
}

fn screen_at(t: Timestamp, keys: &Keys) -> Screen {
    let mut tokens = Vec::new();
    let mut panels = Vec::new();
    let scenes = scene_times();
    let within = |k: usize| scenes[k].0 <= t && t <= scenes[k].1;

    let main_renamed = t > scenes[0].1;
    let global_renamed = t > scenes[1].1;
    let local_renamed = t > scenes[4].1;
    let global = if global_renamed { "keyplus0x1000" } else { "DAT_00288bb" };

    if t < at(14, 37, 48, 0) {
        panels.push((Rect::new(20, 40, 220, 180), PANEL));
        phrase(&mut tokens, "Functions", 40, 50);
        for (i, row) in LIST_ROWS.iter().enumerate() {
            let (x, y) = list_row_pos(i);
            phrase(&mut tokens, row, x, y);
        }
    } else if t < at(14, 40, 26, 0) {
        phrase(&mut tokens, if main_renamed { "main" } else { "FUN_0010ed40" }, LISTING_X, LISTING_Y);
        for (i, line) in MAIN_LINES.iter().enumerate() {
            words(&mut tokens, &line.replace("DAT_00288bb", global), LISTING_X, listing_line_y(i));
        }
    } else {
        phrase(&mut tokens, "FUN_001a3a20", LISTING_X, LISTING_Y);
        for (i, line) in CHECK_LINES.iter().enumerate() {
            let mut l = line.replace("DAT_00288bb", global);
            if local_renamed {
                l = l.replace("bVar8", "license key");
            }
            words(&mut tokens, &l, LISTING_X, listing_line_y(i));
        }
    }

    let dialog = |tokens: &mut Vec<OcrToken>, panels: &mut Vec<(Rect, [u8; 4])>, title: &str, field: &str| {
        panels.push((Rect::new(320, 300, 360, 110), PANEL));
        phrase(tokens, title, 336, 312);
        panels.push((Rect::new(336, 340, 320, 24), FIELD));
        if !field.trim().is_empty() {
            words(tokens, field, 344, 346);
        }
    };
    if within(0) {
        let typed = typed_so_far(&keys.main, t);
        let field = if typed.is_empty() { "FUN_0010ed40".to_string() } else { typed };
        dialog(&mut tokens, &mut panels, "Rename Function", &field);
    }
    if within(1) {
        let typed = typed_so_far(&keys.label, t);
        let field = if typed.is_empty() { "DAT_00288bb".to_string() } else { typed };
        dialog(&mut tokens, &mut panels, "Edit Label", &field);
    }
    if within(2) {
        let (x, y) = menu_origin();
        panels.push((Rect::new(x - 8, y - 6, 300, 92), PANEL));
        for (i, item) in MENU_ITEMS.iter().enumerate() {
            phrase(&mut tokens, item, x, y + 20 * i as u32);
        }
    }
    if within(3) {
        panels.push((Rect::new(560, 360, 380, 110), PANEL));
        phrase(&mut tokens, "References to keyplus0x1000", 576, 372);
        words(&mut tokens, "main 0010ed5c READ", 576, 400);
        words(&mut tokens, "FUN_001a3a20 001a3a34 READ", 576, 420);
    }
    if within(4) {
        let typed = typed_so_far(&keys.local, t);
        let field = if typed.is_empty() { "bVar8".to_string() } else { typed };
        dialog(&mut tokens, &mut panels, "Rename Local Variable", &field);
    }
    Screen { tokens, panels }
}

const MENU_ITEMS: [&str; 4] = ["Copy", "Find References to keyplusOxl000", "Set Equate", "Bookmark"];

fn menu_origin() -> (u32, u32) {
    (520, listing_line_y(5) + 16)
}

fn token_color(text: &str) -> [u8; 4] {
    let h = crate::sha256_hex(text.as_bytes());
    let b = hex::decode(&h[..6]).expect("hex digest");
    [b[0] / 3, b[1] / 3, b[2] / 3, 255]
}

fn render(screen: &Screen) -> Image {
    let mut img = Image::filled(SCREEN_W, SCREEN_H, BACKGROUND);
    for (r, c) in &screen.panels {
        img.fill_rect(*r, *c);
    }
    for t in &screen.tokens {
        img.fill_rect(t.bbox, token_color(&t.text));
    }
    img
}

struct Keys {
    main: Vec<(Timestamp, &'static str)>,
    label: Vec<(Timestamp, &'static str)>,
    local: Vec<(Timestamp, &'static str)>,
}

fn key_run(start: Timestamp, step_ms: u64, keys: &[&'static str]) -> Vec<(Timestamp, &'static str)> {
    keys.iter().enumerate().map(|(i, k)| (start.plus(step_ms * i as u64), *k)).collect()
}

fn demo_keys() -> Keys {
    Keys {
        main: key_run(at(14, 38, 1, 0), 200, &["m", "a", "i", "n"]),
        label: key_run(
            at(14, 39, 56, 0),
            150,
            &["k", "e", "y", "p", "l", "u", "s", "0", "x", "1", "0", "0", "0"],
        ),
        local: key_run(
            at(14, 40, 28, 600),
            70,
            &["l", "i", "c", "e", "n", "s", "e", "Space", "k", "e", "y"],
        ),
    }
}

fn center_of(screen: &Screen, text: &str) -> (u32, u32) {
    let t = screen
        .tokens
        .iter()
        .find(|t| t.text == text)
        .unwrap_or_else(|| panic!("demo screen lacks token {text:?}"));
    let (x, y) = t.bbox.center();
    (x as u32, y as u32)
}

fn click(t: Timestamp, (x, y): (u32, u32), button: &str, click_count: u8) -> EventRecord {
    EventRecord {
        t,
        kind: EventKind::MouseClick {
            x,
            y,
            button: button.to_string(),
            click_count,
        },
    }
}

pub fn demo_start() -> Timestamp {
    at(14, 37, 45, 0)
}

pub fn demo_end() -> Timestamp {
    at(14, 40, 41, 0)
}

/// Capture times of the demo frames: every second on the half second.
pub fn demo_frame_times() -> Vec<Timestamp> {
    (0..176).map(|k| at(14, 37, 45, 500).plus(1000 * k)).collect()
}

fn demo_events(keys: &Keys) -> Vec<EventRecord> {
    let s = |t: Timestamp| screen_at(t, keys);
    let mut ev = vec![
        EventRecord {
            t: at(14, 37, 45, 100),
            kind: EventKind::WindowInfo {
                title: "CodeBrowser: keygenme".to_string(),
                x: 0,
                y: 0,
                w: SCREEN_W,
                h: SCREEN_H,
                focused: true,
            },
        },
        EventRecord {
            t: at(14, 37, 45, 200),
            kind: EventKind::ProcessList {
                processes: vec![
                    ProcessSample {
                        name: "ghidraRun".to_string(),
                        cpu_pct: 14.5,
                        mem_bytes: 1_288_490_188,
                    },
                    ProcessSample {
                        name: "keygenme".to_string(),
                        cpu_pct: 0.0,
                        mem_bytes: 2_097_152,
                    },
                ],
            },
        },
        click(at(14, 37, 48, 0), center_of(&s(at(14, 37, 47, 500)), "FUN_0010ed40"), "left", 2),
        click(at(14, 39, 52, 0), center_of(&s(at(14, 39, 51, 500)), "[DAT_00288bb]"), "left", 1),
        click(at(14, 40, 10, 0), center_of(&s(at(14, 40, 9, 500)), "[keyplus0x1000]"), "right", 1),
        click(at(14, 40, 13, 0), center_of(&s(at(14, 40, 12, 500)), MENU_ITEMS[1]), "left", 1),
        click(at(14, 40, 26, 900), center_of(&s(at(14, 40, 26, 500)), "bVar8],"), "left", 1),
    ];
    let key = |t: Timestamp, k: &str| EventRecord {
        t,
        kind: EventKind::Keystroke {
            key: k.to_string(),
            modifiers: Vec::new(),
        },
    };
    for run in [&keys.main, &keys.label, &keys.local] {
        ev.extend(run.iter().map(|(t, k)| key(*t, k)));
    }
    ev.push(key(at(14, 38, 9, 800), "Enter"));
    ev.push(key(at(14, 40, 2, 800), "Enter"));
    ev.push(key(at(14, 40, 29, 800), "Enter"));
    ev.sort_by_key(|e| e.t);
    ev
}

/// Writes the demo bundle (frames, events, artifact map and OCR sidecars) into `dir`.
pub fn write_demo_bundle(dir: impl AsRef<Path>) -> Result<SessionBundle> {
    let dir = dir.as_ref();
    let keys = demo_keys();
    let times = demo_frame_times();
    let screens: Vec<Screen> = times.iter().map(|&t| screen_at(t, &keys)).collect();
    let frames: Vec<(Timestamp, Image)> = times.iter().zip(&screens).map(|(&t, s)| (t, render(s))).collect();
    let manifest = SessionManifest {
        session_id: DEMO_SESSION_ID.to_string(),
        subject_pseudonym: "subject-07".to_string(),
        binary_id: DEMO_BINARY_ID.to_string(),
        tool_hint: Some("ghidra".to_string()),
        start: demo_start(),
        end: demo_end(),
        frame_count: frames.len(),
        capture_interval_ms: 1000,
    };
    let bundle = write_bundle(dir, manifest, &frames, &demo_events(&keys))?;

    for (i, s) in screens.iter().enumerate() {
        let path = MockBackend::sidecar_path(dir, i);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, format_token_table(&s.tokens)).map_err(|e| Error::io(&path, e))?;
    }
    let art = bundle.artifact_path();
    if let Some(parent) = art.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&art, demo_artifact_map().to_json()?).map_err(|e| Error::io(&art, e))?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_is_valid() {
        let json = demo_artifact_map().to_json().unwrap();
        BinaryArtifactMap::from_json(&json).unwrap();
    }

    #[test]
    fn clock_formatting() {
        assert_eq!(at(14, 37, 48, 500).clock(), "14:37:48");
    }
}
