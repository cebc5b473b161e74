//! Oracles and fixture generators shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retrace_core::artifacts::{Addr, BinaryArtifactMap, BlockRecord, FunctionRecord};
use retrace_core::image::{Image, Rect};
use retrace_core::matchers::{detect_block_rects, FilterTable, RectRegion};
use retrace_core::ocr::OcrToken;
use retrace_core::session::{EventKind, EventRecord, Timestamp};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// String distance

/// Textbook full-matrix edit distance.
pub fn oracle_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Score from the oracle distance in floating point, capped below 100 for distinct strings.
pub fn oracle_similarity(a: &str, b: &str) -> u32 {
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 100;
    }
    let d = oracle_levenshtein(a, b);
    let pct = 100.0 * (max_len - d) as f64 / max_len as f64;
    let s = (pct + 0.5).floor() as u32;
    if d > 0 {
        s.min(99)
    } else {
        s
    }
}

/// Short strings over a small alphabet so that edits collide often.
pub fn random_string(rng: &mut impl Rng, max_len: usize) -> String {
    const ALPHA: &[char] = &['a', 'b', 'c', '0', '1', 'O', 'l', '_', 'é', 'x'];
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| ALPHA[rng.random_range(0..ALPHA.len())]).collect()
}

// ---------------------------------------------------------------------------
// Keystrokes

#[derive(Debug, Clone)]
pub enum KeyOp {
    Char(char),
    Space,
    Erase(&'static str),
    Boundary(&'static str),
    Click,
    Noise(&'static str),
    Chord(char),
}

impl KeyOp {
    pub fn event(&self, t: u64) -> EventRecord {
        match self {
            KeyOp::Char(c) => EventRecord::key(t, &c.to_string()),
            KeyOp::Space => EventRecord::key(t, "Space"),
            KeyOp::Erase(k) | KeyOp::Boundary(k) | KeyOp::Noise(k) => EventRecord::key(t, k),
            KeyOp::Click => EventRecord::click(t, 5, 5, 1),
            KeyOp::Chord(c) => EventRecord {
                t: Timestamp(t),
                kind: EventKind::Keystroke {
                    key: c.to_string(),
                    modifiers: vec!["ctrl".to_string()],
                },
            },
        }
    }
}

pub fn random_key_ops(rng: &mut impl Rng, len: usize) -> Vec<(u64, KeyOp)> {
    const CHARS: &[char] = &['a', 'b', 'k', 'e', 'y', '0', 'x', '1', '_', '.'];
    let mut t = 1_000_000u64;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        t += match rng.random_range(0..10) {
            0 => rng.random_range(1500..4000),
            1 => 0,
            _ => rng.random_range(20..400),
        };
        let op = match rng.random_range(0..100) {
            0..=49 => KeyOp::Char(CHARS[rng.random_range(0..CHARS.len())]),
            50..=54 => KeyOp::Space,
            55..=69 => KeyOp::Erase(if rng.random_bool(0.8) { "Backspace" } else { "Delete" }),
            70..=74 => KeyOp::Boundary(["Enter", "Tab", "Escape"][rng.random_range(0..3)]),
            75..=79 => KeyOp::Click,
            80..=94 => KeyOp::Noise(["Shift", "Control", "Left", "F5", "Win", "Home"][rng.random_range(0..6)]),
            _ => KeyOp::Chord(CHARS[rng.random_range(0..CHARS.len())]),
        };
        out.push((t, op));
    }
    out
}

/// `(text, t_start, t_end)` per word, by replaying each segment on a character stack.
pub fn oracle_words(ops: &[(u64, KeyOp)], gap_ms: u64) -> Vec<(String, u64, u64)> {
    enum Edit {
        Push(char),
        Pop,
    }
    let mut segments: Vec<Vec<(u64, Edit)>> = vec![Vec::new()];
    for (t, op) in ops {
        let edit = match op {
            KeyOp::Char(c) => Edit::Push(*c),
            KeyOp::Space => Edit::Push(' '),
            KeyOp::Erase(_) => Edit::Pop,
            KeyOp::Boundary(_) | KeyOp::Click => {
                segments.push(Vec::new());
                continue;
            }
            KeyOp::Noise(_) | KeyOp::Chord(_) => continue,
        };
        let cur = segments.last_mut().unwrap();
        if cur.last().is_some_and(|(prev, _)| t - prev > gap_ms) {
            segments.push(Vec::new());
        }
        segments.last_mut().unwrap().push((*t, edit));
    }

    let mut out = Vec::new();
    for seg in segments {
        let mut stack: Vec<char> = Vec::new();
        let mut first_push = None;
        for (t, e) in &seg {
            match e {
                Edit::Push(c) => {
                    stack.push(*c);
                    first_push.get_or_insert(*t);
                }
                Edit::Pop => {
                    stack.pop();
                }
            }
        }
        let text: String = stack.into_iter().collect();
        let text = text.trim();
        if !text.is_empty() {
            out.push((text.to_string(), first_push.unwrap(), seg.last().unwrap().0));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Images

pub fn random_image(rng: &mut impl Rng, w: u32, h: u32) -> Image {
    let rgba: Vec<u8> = (0..w * h * 4).map(|_| rng.random()).collect();
    Image::new(w, h, rgba).unwrap()
}

/// Paints random rectangles and scattered pixels over a copy of `base`.
pub fn mutate_image(rng: &mut impl Rng, base: &Image) -> Image {
    let mut img = base.clone();
    let (w, h) = (img.width(), img.height());
    for _ in 0..rng.random_range(0..4) {
        let x = rng.random_range(0..w);
        let y = rng.random_range(0..h);
        let rw = rng.random_range(1..=w - x);
        let rh = rng.random_range(1..=h - y);
        img.fill_rect(Rect::new(x, y, rw, rh), [rng.random(), rng.random(), rng.random(), 255]);
    }
    for _ in 0..rng.random_range(0..6) {
        let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
        img.set_pixel(x, y, [rng.random(), rng.random(), rng.random(), rng.random()]);
    }
    img
}

/// A screen-like frame: flat background with a few text-like bars.
pub fn textured_frame(rng: &mut impl Rng, w: u32, h: u32) -> Image {
    let mut img = Image::filled(w, h, [236, 236, 236, 255]);
    for row in (4..h.saturating_sub(8)).step_by(12) {
        let mut x = 4;
        while x + 10 < w {
            let len = rng.random_range(4..24).min(w - x - 2);
            if rng.random_bool(0.7) {
                img.fill_rect(Rect::new(x, row, len, 7), [30, 30, 30, 255]);
            }
            x += len + 6;
        }
    }
    img
}

// ---------------------------------------------------------------------------
// Synthetic matching corpus

pub const CORPUS_FUNCTIONS: usize = 24;

const MNEMONICS: &[&str] = &["MOV", "LEA", "PUSH", "POP", "CMP", "TEST", "XOR", "ADD", "SUB", "CALL", "JZ", "JNZ"];
const REGISTERS: &[&str] = &["RAX", "RBX", "RCX", "RDX", "RSI", "RDI", "RBP", "RSP", "EAX", "ECX", "EDX"];

pub fn corpus_entry(i: usize) -> Addr {
    Addr(0x101000 + 0x240 * i as u64)
}

fn string_symbol(i: usize) -> String {
    const WORDS: &[&str] = &["usage", "failed", "license", "invalid", "ok", "serial", "retry", "open", "denied", "key"];
    format!("s_{}_{:08x}", WORDS[i % WORDS.len()], 0x00402000 + 0x40 * i)
}

fn corpus_lines(i: usize, b: usize, blocks: usize, entry: u64) -> Vec<String> {
    let k = i * 16 + b;
    let lab = |n: usize| format!("LAB_{:08x}", entry + 0x40 * n as u64);
    let next = lab((b + 1).min(blocks - 1));
    let global = format!("DAT_{:08x}", 0x00600000 + 0x18 * k);
    if b == 0 {
        return vec![
            "PUSH RBP".into(),
            "MOV RBP,RSP".into(),
            "SUB RSP,0x30".into(),
            "MOV dword ptr [RBP + -0x24],EDI".into(),
            format!("MOV RAX,qword ptr [{global}]"),
        ];
    }
    if b == blocks - 1 {
        return vec!["MOV EAX,0x0".into(), "CALL __stack_chk_fail".into(), "LEAVE".into(), "RET".into()];
    }
    match (i + b) % 4 {
        0 => vec![format!("MOV EAX,dword ptr [{global}]"), format!("CMP EAX,0x{b:x}"), format!("JLE {next}")],
        1 => vec![format!("LEA RDI,[{}]", string_symbol(k)), "CALL puts".into(), format!("JMP {}", lab(blocks - 1))],
        2 => vec![
            format!("CALL FUN_{:08x}", corpus_entry((i + b) % CORPUS_FUNCTIONS).0),
            "TEST EAX,EAX".into(),
            format!("JNZ {next}"),
        ],
        _ => vec![
            format!("MOV qword ptr [{global}],RAX"),
            "ADD dword ptr [RBP + -0x14],0x1".into(),
            format!("JMP {}", lab(1)),
        ],
    }
}

/// Artifact map of [`CORPUS_FUNCTIONS`] functions of 6 to 9 blocks that
/// reference their own labels, globals and strings and call each other.
/// Library calls and the epilogue are shared by every function and so are
/// non-discriminative.
pub fn corpus_map() -> BinaryArtifactMap {
    let mut functions = Vec::new();
    for i in 0..CORPUS_FUNCTIONS {
        let entry = corpus_entry(i);
        let n = 6 + i % 4;
        let blocks = (0..n)
            .map(|b| BlockRecord {
                address: Addr(entry.0 + 0x40 * b as u64),
                text_lines: corpus_lines(i, b, n, entry.0),
            })
            .collect();
        functions.push(FunctionRecord {
            entry_address: entry,
            name: format!("FUN_{:08x}", entry.0),
            blocks,
        });
    }
    BinaryArtifactMap {
        binary_id: "corpus".to_string(),
        functions,
        globals: Vec::new(),
        strings: Vec::new(),
        xrefs: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameTruth {
    Function(Addr),
    StoplistOnly,
    StringTable,
}

/// Lays out `lines` as word tokens, one line every 16 px.
pub fn layout_lines(lines: &[String], x0: u32, y0: u32) -> Vec<OcrToken> {
    let mut out = Vec::new();
    for (li, line) in lines.iter().enumerate() {
        let mut x = x0;
        for word in line.split(' ').filter(|w| !w.is_empty()) {
            let w = 8 * word.chars().count() as u32;
            out.push(OcrToken::new(word, x, y0 + 16 * li as u32, w, 12, 91.0));
            x += w + 8;
        }
    }
    out
}

/// One frame of the corpus: its truth and its clean tokens.
pub fn corpus_frame(rng: &mut impl Rng, map: &BinaryArtifactMap, kind: u32) -> (FrameTruth, Vec<OcrToken>) {
    match kind {
        0 => {
            // A listing view: a window of 10 to 20 consecutive lines.
            let f = &map.functions[rng.random_range(0..map.functions.len())];
            let all: Vec<String> = std::iter::once(format!("undefined {}()", f.name))
                .chain(f.blocks.iter().flat_map(|b| b.text_lines.iter().cloned()))
                .collect();
            let len = rng.random_range(10..=20).min(all.len());
            let first = rng.random_range(0..=all.len() - len);
            (FrameTruth::Function(f.entry_address), layout_lines(&all[first..first + len], 40, 60))
        }
        1 => {
            let lines: Vec<String> = (0..rng.random_range(4..14))
                .map(|_| {
                    format!(
                        "{} {},{}",
                        MNEMONICS[rng.random_range(0..MNEMONICS.len())],
                        REGISTERS[rng.random_range(0..REGISTERS.len())],
                        REGISTERS[rng.random_range(0..REGISTERS.len())]
                    )
                })
                .collect();
            (FrameTruth::StoplistOnly, layout_lines(&lines, 40, 60))
        }
        _ => {
            // Defined Strings style listing: one string per row, each owned by another function.
            let strings: Vec<(usize, String)> = map
                .functions
                .iter()
                .enumerate()
                .flat_map(|(i, f)| {
                    f.blocks.iter().flat_map(|b| &b.text_lines).filter_map(move |l| {
                        let s = l.split_once('[')?.1.strip_suffix(']')?;
                        s.starts_with("s_").then(|| (i, s.to_string()))
                    })
                })
                .collect();
            let start = rng.random_range(0..strings.len());
            let rows = rng.random_range(8..16);
            let lines: Vec<String> = (0..rows)
                .map(|r| {
                    let (i, s) = &strings[(start + r) % strings.len()];
                    let addr = s.rsplit('_').next().unwrap();
                    format!("{addr} {s} ds \"{i}\"")
                })
                .collect();
            (FrameTruth::StringTable, layout_lines(&lines, 40, 60))
        }
    }
}

// ---------------------------------------------------------------------------
// Control-flow graph painter

pub const CANVAS: [u8; 4] = [70, 74, 80, 255];
pub const NODE_FILL: [u8; 4] = [255, 255, 255, 255];
const INK: [u8; 4] = [20, 20, 20, 255];
const EDGE: [u8; 4] = [120, 150, 220, 255];
const OCCLUDER: [u8; 4] = [40, 40, 48, 255];
pub const CHAR_W: u32 = 7;
const LINE_H: u32 = 14;

#[derive(Debug, Clone)]
pub struct PaintedNode {
    pub block: Addr,
    pub bbox: Rect,
    pub occluded: bool,
}

#[derive(Debug, Clone)]
pub struct CfgShot {
    pub function: FunctionRecord,
    pub image: Image,
    pub tokens: Vec<OcrToken>,
    pub nodes: Vec<PaintedNode>,
    pub duplicate_pair: (Addr, Addr),
}

fn random_line(rng: &mut impl Rng) -> String {
    match rng.random_range(0..6) {
        0 => format!("MOV {},qword ptr [RBP + -0x{:x}]", REGISTERS[rng.random_range(0..REGISTERS.len())], rng.random_range(8..0x80)),
        1 => format!("CALL FUN_{:08x}", rng.random_range(0x100000..0x1fffff)),
        2 => format!("LEA RDI,[s_{}_{:08x}]", ["error", "menu", "flag", "input"][rng.random_range(0..4)], rng.random_range(0x400000..0x4fffff)),
        3 => format!("CMP dword ptr [RBP + -0x{:x}],0x{:x}", rng.random_range(8..0x80), rng.random_range(0..0x40)),
        4 => format!("JNZ LAB_{:08x}", rng.random_range(0x100000..0x1fffff)),
        _ => format!("{} {},{}", MNEMONICS[rng.random_range(0..MNEMONICS.len())], REGISTERS[rng.random_range(0..REGISTERS.len())], REGISTERS[rng.random_range(0..REGISTERS.len())]),
    }
}

fn node_size(lines: &[String]) -> (u32, u32) {
    let chars = lines.iter().map(|l| l.chars().count()).max().unwrap_or(1) as u32;
    (CHAR_W * chars + 12, LINE_H * lines.len() as u32 + 8)
}

/// Paints a graph view of a random function with `n` blocks (3..=8): one
/// pair of identical one-line blocks, one node hidden 90% behind a dark
/// panel, the rest fully visible. Returns the image with the tokens a
/// recognizer would report for the visible text.
pub fn paint_cfg(rng: &mut impl Rng, n: usize) -> CfgShot {
    assert!((3..=8).contains(&n));
    let entry = Addr(0x100000 + 0x1000 * rng.random_range(1..0x100u64));
    let dup_line = format!("MOV EAX,0x{:x}", rng.random_range(0..0x10));
    let mut blocks = Vec::new();
    for b in 0..n {
        let lines = if b < 2 {
            vec![dup_line.clone()]
        } else {
            (0..rng.random_range(2..6)).map(|_| random_line(rng)).collect()
        };
        blocks.push(BlockRecord {
            address: Addr(entry.0 + 0x20 * b as u64),
            text_lines: lines,
        });
    }
    let function = FunctionRecord {
        entry_address: entry,
        name: format!("FUN_{:08x}", entry.0),
        blocks,
    };

    // Block 2 is the occluded one and sits alone in the right column.
    let (w, h) = (1100, 820);
    let mut image = Image::filled(w, h, CANVAS);
    let mut nodes = Vec::new();
    let mut order: Vec<usize> = (0..n).filter(|&b| b != 2).collect();
    for k in (1..order.len()).rev() {
        order.swap(k, rng.random_range(0..=k));
    }
    let mut col_y = [20u32, 20u32];
    for (k, &b) in order.iter().enumerate() {
        let col = k % 2;
        let (nw, nh) = node_size(&function.blocks[b].text_lines);
        let bbox = Rect::new(20 + 360 * col as u32, col_y[col], nw, nh);
        col_y[col] += nh + 24;
        nodes.push(PaintedNode {
            block: function.blocks[b].address,
            bbox,
            occluded: false,
        });
    }
    let (ow, oh) = node_size(&function.blocks[2].text_lines);
    nodes.push(PaintedNode {
        block: function.blocks[2].address,
        bbox: Rect::new(740, 40, ow.max(300), oh),
        occluded: true,
    });

    for pair in nodes.windows(2) {
        let (a, b) = (pair[0].bbox, pair[1].bbox);
        let (ax, ay) = (a.x + a.w / 2, a.bottom());
        let by = b.y.max(ay);
        image.fill_rect(Rect::new(ax, ay, 2, (by - ay).max(1) + 4), EDGE);
    }

    let mut tokens = Vec::new();
    for node in &nodes {
        image.fill_rect(node.bbox, NODE_FILL);
        let lines = &function.blocks.iter().find(|bl| bl.address == node.block).unwrap().text_lines;
        for (li, line) in lines.iter().enumerate() {
            let mut x = node.bbox.x + 6;
            for word in line.split(' ') {
                let ww = CHAR_W * word.chars().count() as u32;
                let t = OcrToken::new(word, x, node.bbox.y + 5 + LINE_H * li as u32, ww, 10, 88.0);
                image.fill_rect(Rect::new(t.bbox.x, t.bbox.y + 2, ww.saturating_sub(1), 7), INK);
                tokens.push(t);
                x += ww + CHAR_W;
            }
        }
    }

    // Everything right of the first tenth of the occluded node is covered.
    let occ = nodes.last().unwrap().bbox;
    let visible_w = occ.w / 10;
    let cover = Rect::new(occ.x + visible_w, occ.y.saturating_sub(10), w - occ.x - visible_w, occ.h + 20);
    image.fill_rect(cover, OCCLUDER);
    tokens.retain(|t| !t.bbox.intersects(&cover));

    CfgShot {
        duplicate_pair: (function.blocks[0].address, function.blocks[1].address),
        function,
        image,
        tokens,
        nodes,
    }
}

/// Detected node rectangle whose bbox equals `r` within one pixel.
pub fn find_rect(detected: &[Rect], r: Rect) -> Option<usize> {
    detected.iter().position(|d| {
        d.x.abs_diff(r.x) <= 1 && d.y.abs_diff(r.y) <= 1 && d.w.abs_diff(r.w) <= 1 && d.h.abs_diff(r.h) <= 1
    })
}

pub fn generic_node_rects(img: &Image) -> Vec<RectRegion> {
    detect_block_rects(img, &FilterTable::default().for_tool(None))
}
