//! Session bundles: the on-disk record of one capture session.
//!
//! ```text
//! <bundle>/
//!   manifest.json
//!   frames/NNNNNN.kf.json + NNNNNN.kf.png          keyframe
//!   frames/NNNNNN.patch.json + NNNNNN.RR.png       patch frame, one PNG per region
//!   events.jsonl
//!   ocr/NNNNNN.json                                OCR cache
//!   artifacts/<binary_id>.json
//!   annotations.jsonl
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{self, EncodedFrame, PatchRegion};
use crate::error::{Error, Result};
use crate::image::{decode_png, Image, Rect};

/// Milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, ms: u64) -> Timestamp {
        Timestamp(self.0.saturating_sub(ms))
    }

    pub fn plus(self, ms: u64) -> Timestamp {
        Timestamp(self.0 + ms)
    }

    /// Milliseconds from `earlier` to `self`, zero when `earlier` is later.
    pub fn since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }

    /// `HH:MM:SS` of the UTC time of day.
    pub fn clock(self) -> String {
        let s = (self.0 / 1000) % 86_400;
        format!("{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub subject_pseudonym: String,
    pub binary_id: String,
    pub tool_hint: Option<String>,
    pub start: Timestamp,
    pub end: Timestamp,
    pub frame_count: usize,
    pub capture_interval_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMeta {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl RegionMeta {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FrameKind {
    Keyframe { width: u32, height: u32 },
    Patch { regions: Vec<RegionMeta> },
}

/// Frame metadata; pixel data stays on disk until reconstruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub t: Timestamp,
    #[serde(flatten)]
    pub kind: FrameKind,
}

impl FrameRecord {
    pub fn is_keyframe(&self) -> bool {
        matches!(self.kind, FrameKind::Keyframe { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSample {
    pub name: String,
    pub cpu_pct: f64,
    pub mem_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum EventKind {
    #[serde(rename = "key")]
    Keystroke {
        key: String,
        #[serde(default)]
        modifiers: Vec<String>,
    },
    #[serde(rename = "click")]
    MouseClick {
        x: u32,
        y: u32,
        button: String,
        click_count: u8,
    },
    #[serde(rename = "window")]
    WindowInfo {
        title: String,
        x: i32,
        y: i32,
        w: u32,
        h: u32,
        focused: bool,
    },
    #[serde(rename = "proc")]
    ProcessList { processes: Vec<ProcessSample> },
    #[serde(rename = "comment")]
    Comment { text: String },
}

impl EventKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            EventKind::Keystroke { .. } => "key",
            EventKind::MouseClick { .. } => "click",
            EventKind::WindowInfo { .. } => "window",
            EventKind::ProcessList { .. } => "proc",
            EventKind::Comment { .. } => "comment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: Timestamp,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl EventRecord {
    pub fn key(t: u64, key: &str) -> Self {
        EventRecord {
            t: Timestamp(t),
            kind: EventKind::Keystroke {
                key: key.to_string(),
                modifiers: Vec::new(),
            },
        }
    }

    pub fn click(t: u64, x: u32, y: u32, click_count: u8) -> Self {
        EventRecord {
            t: Timestamp(t),
            kind: EventKind::MouseClick {
                x,
                y,
                button: "left".to_string(),
                click_count,
            },
        }
    }
}

/// A loaded, validated session bundle.
#[derive(Debug, Clone)]
pub struct SessionBundle {
    root: PathBuf,
    pub manifest: SessionManifest,
    pub frames: Vec<FrameRecord>,
    pub events: Vec<EventRecord>,
}

fn frame_stem(index: usize) -> String {
    format!("{index:06}")
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8], location: &str) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::schema(location, e.to_string()))
}

impl SessionBundle {
    /// Loads and validates the bundle rooted at `path`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let root = path.as_ref().to_path_buf();
        let manifest: SessionManifest = parse_json(&read(&root.join("manifest.json"))?, "manifest.json")?;
        if manifest.start > manifest.end {
            return Err(Error::schema("manifest.json", "start is after end"));
        }

        let frames = load_frames(&root, &manifest)?;
        let (max_w, max_h) = frames.iter().fold((0, 0), |(w, h), f| match f.kind {
            FrameKind::Keyframe { width, height } => (w.max(width), h.max(height)),
            FrameKind::Patch { .. } => (w, h),
        });

        let events_path = root.join("events.jsonl");
        let text = String::from_utf8(read(&events_path)?)
            .map_err(|_| Error::schema("events.jsonl", "not valid UTF-8"))?;
        let mut events: Vec<EventRecord> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let location = format!("events.jsonl:{}", n + 1);
            let ev: EventRecord = parse_json(line.as_bytes(), &location)?;
            if ev.t < manifest.start || ev.t > manifest.end {
                return Err(Error::schema(location, format!("t={} outside session bounds", ev.t.0)));
            }
            if let EventKind::MouseClick { x, y, .. } = ev.kind {
                if x >= max_w || y >= max_h {
                    return Err(Error::schema(location, format!("click ({x},{y}) outside the {max_w}x{max_h} screen")));
                }
            }
            if events.last().is_some_and(|prev| prev.t > ev.t) {
                return Err(Error::UnsortedEvents { line: n + 1 });
            }
            events.push(ev);
        }

        Ok(SessionBundle {
            root,
            manifest,
            frames,
            events,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.root.join("frames")
    }

    pub fn ocr_dir(&self) -> PathBuf {
        self.root.join("ocr")
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.root.join("annotations.jsonl")
    }

    pub fn artifact_path(&self) -> PathBuf {
        self.root.join("artifacts").join(format!("{}.json", self.manifest.binary_id))
    }

    /// Index of the latest frame captured at or before `t`.
    pub fn frame_at_or_before(&self, t: Timestamp) -> Option<usize> {
        self.frames.partition_point(|f| f.t <= t).checked_sub(1)
    }

    /// Creates a reader with its own memoization state.
    pub fn reader(&self) -> FrameReader<'_> {
        FrameReader { bundle: self, memo: None }
    }

    /// Reconstructs frame `index` without memoization.
    pub fn reconstruct_frame(&self, index: usize) -> Result<Image> {
        self.reader().reconstruct(index)
    }

    fn load_keyframe(&self, index: usize) -> Result<Image> {
        let FrameKind::Keyframe { width, height } = self.frames[index].kind else {
            unreachable!("caller passes keyframe indices");
        };
        let path = self.frames_dir().join(format!("{}.kf.png", frame_stem(index)));
        let corrupt = |message: String| Error::CorruptPatch { frame: index, message };
        let (w, h, rgba) = decode_png(&read(&path)?).map_err(|e| corrupt(e.to_string()))?;
        if (w, h) != (width, height) {
            return Err(corrupt(format!("keyframe is {w}x{h}, metadata says {width}x{height}")));
        }
        Image::new(w, h, rgba)
    }

    /// Decodes the patch regions of frame `index`.
    pub fn load_patches(&self, index: usize) -> Result<Vec<PatchRegion>> {
        let FrameKind::Patch { regions } = &self.frames[index].kind else {
            return Ok(Vec::new());
        };
        let corrupt = |message: String| Error::CorruptPatch { frame: index, message };
        regions
            .iter()
            .enumerate()
            .map(|(r, meta)| {
                let path = self.frames_dir().join(format!("{}.{r:02}.png", frame_stem(index)));
                let (w, h, pixels) = decode_png(&read(&path)?).map_err(|e| corrupt(e.to_string()))?;
                if (w, h) != (meta.width, meta.height) {
                    return Err(corrupt(format!("region {r} is {w}x{h}, metadata says {}x{}", meta.width, meta.height)));
                }
                Ok(PatchRegion {
                    x: meta.x,
                    y: meta.y,
                    width: w,
                    height: h,
                    pixels,
                })
            })
            .collect()
    }

    /// Writes the bundle in canonical form to `dir`. Frame PNGs are copied verbatim.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let frames_dir = dir.join("frames");
        create_dir(&frames_dir)?;
        write_manifest(dir, &self.manifest)?;
        for frame in &self.frames {
            write_frame_meta(&frames_dir, frame)?;
            let stem = frame_stem(frame.index);
            let pngs: Vec<String> = match &frame.kind {
                FrameKind::Keyframe { .. } => vec![format!("{stem}.kf.png")],
                FrameKind::Patch { regions } => (0..regions.len()).map(|r| format!("{stem}.{r:02}.png")).collect(),
            };
            for name in pngs {
                write(&frames_dir.join(&name), &read(&self.frames_dir().join(&name))?)?;
            }
        }
        write_events(dir, &self.events)
    }
}

fn load_frames(root: &Path, manifest: &SessionManifest) -> Result<Vec<FrameRecord>> {
    let frames_dir = root.join("frames");
    let entries = fs::read_dir(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let mut metas: BTreeMap<usize, PathBuf> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&frames_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some((stem, rest)) = name.split_once('.') else { continue };
        if rest != "kf.json" && rest != "patch.json" {
            continue;
        }
        let index: usize = stem
            .parse()
            .map_err(|_| Error::schema(format!("frames/{name}"), "frame file name is not a zero-padded index"))?;
        if metas.insert(index, entry.path()).is_some() {
            return Err(Error::schema(format!("frames/{name}"), format!("frame {index} has both keyframe and patch metadata")));
        }
    }

    for (expected, &index) in metas.keys().enumerate() {
        if index != expected {
            return Err(Error::schema("frames", format!("frame index {expected} is missing")));
        }
    }
    if metas.len() != manifest.frame_count {
        return Err(Error::schema(
            "manifest.json",
            format!("frame_count is {} but {} frames are on disk", manifest.frame_count, metas.len()),
        ));
    }

    let mut frames: Vec<FrameRecord> = Vec::with_capacity(metas.len());
    let mut dims: Option<(u32, u32)> = None;
    for (index, path) in metas {
        let location = format!("frames/{}", path.file_name().unwrap().to_string_lossy());
        let frame: FrameRecord = parse_json(&read(&path)?, &location)?;
        let is_kf_file = location.ends_with(".kf.json");
        if frame.index != index || frame.is_keyframe() != is_kf_file {
            return Err(Error::schema(location, "metadata does not match its file name"));
        }
        if frame.t < manifest.start || frame.t > manifest.end {
            return Err(Error::schema(location, format!("t={} outside session bounds", frame.t.0)));
        }
        if frames.last().is_some_and(|prev| prev.t > frame.t) {
            return Err(Error::schema(location, "frame timestamps decrease"));
        }
        let stem = frame_stem(index);
        match &frame.kind {
            FrameKind::Keyframe { width, height } => {
                dims = Some((*width, *height));
                let png = frames_dir.join(format!("{stem}.kf.png"));
                if !png.exists() {
                    return Err(Error::MissingFile(png));
                }
            }
            FrameKind::Patch { regions } => {
                let Some((w, h)) = dims else {
                    return Err(Error::schema(location, "frame 0 must be a keyframe"));
                };
                for (r, reg) in regions.iter().enumerate() {
                    if reg.width == 0 || reg.height == 0 || reg.x + reg.width > w || reg.y + reg.height > h {
                        return Err(Error::schema(location, format!("region {r} lies outside the {w}x{h} frame")));
                    }
                    let png = frames_dir.join(format!("{stem}.{r:02}.png"));
                    if !png.exists() {
                        return Err(Error::MissingFile(png));
                    }
                }
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

fn write_manifest(dir: &Path, manifest: &SessionManifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    write(&dir.join("manifest.json"), &bytes)
}

fn write_frame_meta(frames_dir: &Path, frame: &FrameRecord) -> Result<()> {
    let suffix = if frame.is_keyframe() { "kf" } else { "patch" };
    let mut bytes = serde_json::to_vec(frame)?;
    bytes.push(b'\n');
    write(&frames_dir.join(format!("{}.{suffix}.json", frame_stem(frame.index))), &bytes)
}

fn write_events(dir: &Path, events: &[EventRecord]) -> Result<()> {
    let mut bytes = Vec::new();
    for ev in events {
        serde_json::to_writer(&mut bytes, ev)?;
        bytes.push(b'\n');
    }
    write(&dir.join("events.jsonl"), &bytes)
}

/// Encodes `frames` with the differential codec and writes a complete bundle.
///
/// `manifest.frame_count` is overwritten with the number of frames supplied.
pub fn write_bundle(
    dir: impl AsRef<Path>,
    mut manifest: SessionManifest,
    frames: &[(Timestamp, Image)],
    events: &[EventRecord],
) -> Result<SessionBundle> {
    let dir = dir.as_ref();
    let frames_dir = dir.join("frames");
    create_dir(&frames_dir)?;
    manifest.frame_count = frames.len();

    let images: Vec<Image> = frames.iter().map(|(_, img)| img.clone()).collect();
    for (index, (encoded, (t, _))) in codec::encode_stream(&images)?.into_iter().zip(frames).enumerate() {
        let stem = frame_stem(index);
        let kind = match encoded {
            EncodedFrame::Keyframe(img) => {
                write(&frames_dir.join(format!("{stem}.kf.png")), &img.to_png()?)?;
                FrameKind::Keyframe {
                    width: img.width(),
                    height: img.height(),
                }
            }
            EncodedFrame::Patch(patches) => {
                for (r, p) in patches.iter().enumerate() {
                    write(&frames_dir.join(format!("{stem}.{r:02}.png")), &p.to_png()?)?;
                }
                FrameKind::Patch {
                    regions: patches
                        .iter()
                        .map(|p| RegionMeta {
                            x: p.x,
                            y: p.y,
                            width: p.width,
                            height: p.height,
                        })
                        .collect(),
                }
            }
        };
        write_frame_meta(&frames_dir, &FrameRecord { index, t: *t, kind })?;
    }
    write_manifest(dir, &manifest)?;
    write_events(dir, events)?;
    SessionBundle::load(dir)
}

/// Sequential frame reconstruction with a one-frame memo.
pub struct FrameReader<'a> {
    bundle: &'a SessionBundle,
    memo: Option<(usize, Image)>,
}

impl FrameReader<'_> {
    pub fn reconstruct(&mut self, index: usize) -> Result<Image> {
        let frames = &self.bundle.frames;
        if index >= frames.len() {
            return Err(Error::IndexOutOfRange {
                index,
                count: frames.len(),
            });
        }
        let keyframe = (0..=index).rev().find(|&i| frames[i].is_keyframe()).unwrap_or(0);
        let (mut img, mut at) = match self.memo.take() {
            Some((m, img)) if m >= keyframe && m <= index => (img, m),
            _ => (self.bundle.load_keyframe(keyframe)?, keyframe),
        };
        while at < index {
            at += 1;
            let patches = self.bundle.load_patches(at)?;
            codec::apply_patches_in_place(&mut img, &patches).map_err(|e| Error::CorruptPatch {
                frame: at,
                message: e.to_string(),
            })?;
        }
        self.memo = Some((index, img.clone()));
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(start: u64, end: u64) -> SessionManifest {
        SessionManifest {
            session_id: "s1".into(),
            subject_pseudonym: "p1".into(),
            binary_id: "bin".into(),
            tool_hint: Some("ghidra".into()),
            start: Timestamp(start),
            end: Timestamp(end),
            frame_count: 0,
            capture_interval_ms: 1000,
        }
    }

    fn frames(n: usize) -> Vec<(Timestamp, Image)> {
        (0..n)
            .map(|i| {
                let mut img = Image::filled(64, 40, [200, 200, 200, 255]);
                for y in 0..40 {
                    for x in 0..64 {
                        let v = ((x * 7 + y * 13) * 31 % 251) as u8;
                        img.set_pixel(x, y, [v, v.wrapping_mul(3), 128, 255]);
                    }
                }
                img.fill_rect(Rect::new(i as u32, 2, 3, 3), [0, 0, 0, 255]);
                (Timestamp(1000 + i as u64 * 1000), img)
            })
            .collect()
    }

    #[test]
    fn three_frame_bundle_loads() {
        let dir = tempfile::tempdir().unwrap();
        let b = write_bundle(dir.path(), manifest(1000, 5000), &frames(3), &[EventRecord::key(1500, "a")]).unwrap();
        assert_eq!(b.manifest.frame_count, 3);
        assert_eq!(b.frame_count(), 3);
        assert_eq!(b.events.len(), 1);
    }

    #[test]
    fn event_before_start_is_schema_violation() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), manifest(1000, 5000), &frames(3), &[]).unwrap();
        fs::write(dir.path().join("events.jsonl"), "{\"t\":10,\"type\":\"key\",\"key\":\"a\"}\n").unwrap();
        let err = SessionBundle::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::SchemaViolation { ref location, .. } if location == "events.jsonl:1"), "{err}");
    }

    #[test]
    fn frame_gap_names_missing_index() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), manifest(1000, 5000), &frames(4), &[]).unwrap();
        let f = dir.path().join("frames");
        for entry in fs::read_dir(&f).unwrap() {
            let p = entry.unwrap().path();
            if p.file_name().unwrap().to_string_lossy().starts_with("000002.") {
                fs::remove_file(p).unwrap();
            }
        }
        let err = SessionBundle::load(dir.path()).unwrap_err();
        match err {
            Error::SchemaViolation { message, .. } => assert!(message.contains("frame index 2"), "{message}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unsorted_events_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), manifest(1000, 5000), &frames(2), &[]).unwrap();
        let lines = "{\"t\":2000,\"type\":\"key\",\"key\":\"a\"}\n{\"t\":1500,\"type\":\"key\",\"key\":\"b\"}\n";
        fs::write(dir.path().join("events.jsonl"), lines).unwrap();
        assert!(matches!(SessionBundle::load(dir.path()), Err(Error::UnsortedEvents { line: 2 })));
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(SessionBundle::load(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn reconstruct_bounds_and_keyframe_identity() {
        let dir = tempfile::tempdir().unwrap();
        let fs_ = frames(3);
        let b = write_bundle(dir.path(), manifest(1000, 5000), &fs_, &[]).unwrap();
        assert!(b.frames[0].is_keyframe());
        assert_eq!(b.reconstruct_frame(0).unwrap(), fs_[0].1);
        assert!(matches!(b.reconstruct_frame(3), Err(Error::IndexOutOfRange { index: 3, count: 3 })));
    }

    #[test]
    fn corrupt_region_png_reported() {
        let dir = tempfile::tempdir().unwrap();
        let b = write_bundle(dir.path(), manifest(1000, 5000), &frames(3), &[]).unwrap();
        assert!(!b.frames[1].is_keyframe());
        fs::write(dir.path().join("frames/000001.00.png"), b"not a png").unwrap();
        assert!(matches!(b.reconstruct_frame(2), Err(Error::CorruptPatch { frame: 1, .. })));
    }

    #[test]
    fn frame_lookup_by_time() {
        let dir = tempfile::tempdir().unwrap();
        let b = write_bundle(dir.path(), manifest(1000, 5000), &frames(3), &[]).unwrap();
        assert_eq!(b.frame_at_or_before(Timestamp(999)), None);
        assert_eq!(b.frame_at_or_before(Timestamp(1000)), Some(0));
        assert_eq!(b.frame_at_or_before(Timestamp(2999)), Some(1));
        assert_eq!(b.frame_at_or_before(Timestamp(9999)), Some(2));
    }

    #[test]
    fn clock_format() {
        assert_eq!(Timestamp((14 * 3600 + 37 * 60 + 48) * 1000 + 250).clock(), "14:37:48");
    }
}
