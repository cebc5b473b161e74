//! Text recognition on reconstructed screenshots.
//!
//! Engines run as external processes behind a small adapter contract:
//! `argv = [engine, png_path, config_path]`, and stdout carries one token per
//! line as `text<TAB>x<TAB>y<TAB>w<TAB>h<TAB>conf`. Coordinates produced by an
//! engine refer to the preprocessed (upscaled) image and are mapped back to
//! the original screenshot before they are cached.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Rect};
use crate::session::SessionBundle;

/// Radius for attributing a click that misses every token box.
pub const NEAREST_TOKEN_RADIUS: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrToken {
    pub text: String,
    pub bbox: Rect,
    pub confidence: f32,
}

impl OcrToken {
    pub fn new(text: impl Into<String>, x: u32, y: u32, w: u32, h: u32, confidence: f32) -> Self {
        OcrToken {
            text: text.into(),
            bbox: Rect::new(x, y, w, h),
            confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrFrame {
    pub frame_index: usize,
    pub tokens: Vec<OcrToken>,
    pub backend_id: String,
    pub config_fingerprint: String,
}

impl OcrFrame {
    /// Builds a frame with tokens in canonical (y, x) order.
    pub fn new(frame_index: usize, mut tokens: Vec<OcrToken>) -> Self {
        sort_tokens(&mut tokens);
        OcrFrame {
            frame_index,
            tokens,
            backend_id: String::new(),
            config_fingerprint: String::new(),
        }
    }
}

fn sort_tokens(tokens: &mut [OcrToken]) {
    tokens.sort_by(|a, b| {
        (a.bbox.y, a.bbox.x, &a.text, a.bbox.w, a.bbox.h).cmp(&(b.bbox.y, b.bbox.x, &b.text, b.bbox.w, b.bbox.h))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    #[default]
    None,
    Otsu,
    Fixed(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationHint {
    #[default]
    Sparse,
    Block,
    Line,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcrConfig {
    pub upscale_factor: u32,
    pub grayscale: bool,
    pub threshold: ThresholdMode,
    pub char_whitelist: Option<String>,
    pub segmentation_hint: SegmentationHint,
}

impl Default for OcrConfig {
    fn default() -> Self {
        OcrConfig {
            upscale_factor: 2,
            grayscale: false,
            threshold: ThresholdMode::None,
            char_whitelist: None,
            segmentation_hint: SegmentationHint::Sparse,
        }
    }
}

impl OcrConfig {
    /// Configuration that leaves images untouched.
    pub fn identity() -> Self {
        OcrConfig {
            upscale_factor: 1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.upscale_factor == 0 {
            return Err(Error::schema("ocr config", "upscale_factor must be at least 1"));
        }
        Ok(())
    }

    /// Cache key for results produced by `backend_id` under this configuration.
    pub fn fingerprint(&self, backend_id: &str) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::sha256_hex(format!("{backend_id}\n{json}").as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: OcrConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn luminance(p: [u8; 4]) -> u8 {
    ((299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2]) + 500) / 1000) as u8
}

/// Otsu threshold over a 256-bin histogram; `None` when only one level occurs.
fn otsu_level(hist: &[u64; 256]) -> Option<u8> {
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w_bg, mut sum_bg) = (0u64, 0f64);
    let (mut best, mut best_var) = (0u8, -1f64);
    for (t, &count) in hist.iter().enumerate() {
        w_bg += count;
        if w_bg == 0 {
            continue;
        }
        let w_fg = total - w_bg;
        if w_fg == 0 {
            break;
        }
        sum_bg += t as f64 * count as f64;
        let mean_bg = sum_bg / w_bg as f64;
        let mean_fg = (sum_all - sum_bg) / w_fg as f64;
        let var = w_bg as f64 * w_fg as f64 * (mean_bg - mean_fg).powi(2);
        if var > best_var {
            best_var = var;
            best = t as u8;
        }
    }
    Some(best)
}

/// Nearest-neighbor upscaling followed by optional grayscale and thresholding.
///
/// A degenerate histogram (a single gray level) under Otsu maps every pixel
/// to background (black).
pub fn preprocess_image(img: &Image, cfg: &OcrConfig) -> Image {
    let f = cfg.upscale_factor.max(1);
    let (w, h) = (img.width() * f, img.height() * f);
    let mut rgba = Vec::with_capacity(w as usize * h as usize * 4);
    for y in 0..h {
        for x in 0..w {
            rgba.extend_from_slice(&img.pixel(x / f, y / f));
        }
    }

    let gray = cfg.grayscale || cfg.threshold != ThresholdMode::None;
    if gray {
        for px in rgba.chunks_exact_mut(4) {
            let l = luminance([px[0], px[1], px[2], px[3]]);
            px[..3].fill(l);
        }
    }
    let level = match cfg.threshold {
        ThresholdMode::None => None,
        ThresholdMode::Fixed(v) => Some(Some(v)),
        ThresholdMode::Otsu => {
            let mut hist = [0u64; 256];
            for px in rgba.chunks_exact(4) {
                hist[px[0] as usize] += 1;
            }
            Some(otsu_level(&hist))
        }
    };
    match level {
        None => {}
        Some(None) => rgba.chunks_exact_mut(4).for_each(|px| px[..3].fill(0)),
        Some(Some(t)) => rgba.chunks_exact_mut(4).for_each(|px| {
            let v = if px[0] > t { 255 } else { 0 };
            px[..3].fill(v);
        }),
    }
    Image::new(w, h, rgba).expect("dimensions are consistent")
}

/// Input handed to a backend for one frame.
pub struct OcrRequest<'a> {
    pub bundle_root: &'a Path,
    pub frame_index: usize,
    /// The preprocessed image.
    pub image: &'a Image,
    pub config: &'a OcrConfig,
}

/// A text recognizer. Returned boxes refer to `request.image` coordinates.
pub trait OcrBackend: Send + Sync {
    fn id(&self) -> String;

    /// Whether the backend inspects pixels. Backends that do not are spared frame reconstruction.
    fn needs_pixels(&self) -> bool {
        true
    }

    fn recognize(&self, request: &OcrRequest<'_>) -> Result<Vec<OcrToken>>;
}

/// Parses the adapter's tab-separated token table. Rows with negative
/// confidence or blank text are skipped.
pub fn parse_token_table(text: &str) -> Result<Vec<OcrToken>> {
    let mut tokens = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::BackendFailure(format!("line {}: expected 6 fields, got {}", n + 1, fields.len())));
        }
        let num = |i: usize| -> Result<u32> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| Error::BackendFailure(format!("line {}: bad number {:?}", n + 1, fields[i])))
        };
        let conf: f32 = fields[5]
            .trim()
            .parse()
            .map_err(|_| Error::BackendFailure(format!("line {}: bad confidence {:?}", n + 1, fields[5])))?;
        let text = fields[0].trim();
        if text.is_empty() || conf < 0.0 {
            continue;
        }
        let (w, h) = (num(3)?, num(4)?);
        if w == 0 || h == 0 {
            continue;
        }
        tokens.push(OcrToken::new(text, num(1)?, num(2)?, w, h, conf.min(100.0)));
    }
    Ok(tokens)
}

pub fn format_token_table(tokens: &[OcrToken]) -> String {
    tokens
        .iter()
        .map(|t| format!("{}\t{}\t{}\t{}\t{}\t{}\n", t.text, t.bbox.x, t.bbox.y, t.bbox.w, t.bbox.h, t.confidence))
        .collect()
}

/// Deterministic backend that reads `mock_ocr/NNNNNN.tsv` sidecar files holding
/// tokens in original screenshot coordinates. Frames without a sidecar have no text.
#[derive(Debug, Clone, Default)]
pub struct MockBackend;

impl MockBackend {
    pub fn sidecar_path(bundle_root: &Path, frame_index: usize) -> PathBuf {
        bundle_root.join("mock_ocr").join(format!("{frame_index:06}.tsv"))
    }
}

impl OcrBackend for MockBackend {
    fn id(&self) -> String {
        "mock".into()
    }

    fn needs_pixels(&self) -> bool {
        false
    }

    fn recognize(&self, request: &OcrRequest<'_>) -> Result<Vec<OcrToken>> {
        let path = Self::sidecar_path(request.bundle_root, request.frame_index);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(path, e)),
        };
        let f = request.config.upscale_factor.max(1);
        Ok(parse_token_table(&text)?
            .into_iter()
            .map(|mut t| {
                t.bbox = Rect::new(t.bbox.x * f, t.bbox.y * f, t.bbox.w * f, t.bbox.h * f);
                t
            })
            .collect())
    }
}

/// Character confusion and dropout model for recognizer output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-character probability of substitution by a random alphanumeric.
    pub char_error_rate: f64,
    /// Per-character probability that a confusable glyph (O/0, l/1, I/l) is swapped.
    pub confusion_rate: f64,
    /// Per-token probability that the token is lost.
    pub drop_rate: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            char_error_rate: 0.05,
            confusion_rate: 0.05,
            drop_rate: 0.1,
            seed: 0,
        }
    }
}

const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

fn confusable(c: char) -> Option<char> {
    match c {
        'O' => Some('0'),
        '0' => Some('O'),
        'l' => Some('1'),
        '1' => Some('l'),
        'I' => Some('l'),
        _ => None,
    }
}

impl NoiseConfig {
    pub fn rng_for_frame(&self, frame_index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ (frame_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    /// Applies character-level noise to one string.
    pub fn perturb_text(&self, text: &str, rng: &mut impl Rng) -> String {
        text.chars()
            .map(|c| {
                if let Some(alt) = confusable(c) {
                    if rng.random_bool(self.confusion_rate) {
                        return alt;
                    }
                }
                if rng.random_bool(self.char_error_rate) {
                    ALNUM[rng.random_range(0..ALNUM.len())] as char
                } else {
                    c
                }
            })
            .collect()
    }

    /// Drops and perturbs tokens.
    pub fn perturb_tokens(&self, tokens: Vec<OcrToken>, rng: &mut impl Rng) -> Vec<OcrToken> {
        let mut out = Vec::with_capacity(tokens.len());
        for mut t in tokens {
            if rng.random_bool(self.drop_rate) {
                continue;
            }
            t.text = self.perturb_text(&t.text, rng);
            if !t.text.trim().is_empty() {
                out.push(t);
            }
        }
        out
    }
}

/// Wraps another backend and injects recognition noise, seeded per frame.
pub struct NoisyBackend<B> {
    pub inner: B,
    pub noise: NoiseConfig,
}

impl<B: OcrBackend> OcrBackend for NoisyBackend<B> {
    fn id(&self) -> String {
        let n = &self.noise;
        format!(
            "{}+noise(c={},k={},d={},s={})",
            self.inner.id(),
            n.char_error_rate,
            n.confusion_rate,
            n.drop_rate,
            n.seed
        )
    }

    fn needs_pixels(&self) -> bool {
        self.inner.needs_pixels()
    }

    fn recognize(&self, request: &OcrRequest<'_>) -> Result<Vec<OcrToken>> {
        let tokens = self.inner.recognize(request)?;
        let mut rng = self.noise.rng_for_frame(request.frame_index);
        Ok(self.noise.perturb_tokens(tokens, &mut rng))
    }
}

/// Runs an engine adapter as a subprocess.
#[derive(Debug, Clone)]
pub struct ExternalBackend {
    pub program: PathBuf,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl OcrBackend for ExternalBackend {
    fn id(&self) -> String {
        format!("exec:{}", self.program.display())
    }

    fn recognize(&self, request: &OcrRequest<'_>) -> Result<Vec<OcrToken>> {
        let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = std::env::temp_dir().join(format!("retrace-ocr-{}-{}-{n}", std::process::id(), request.frame_index));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let png = dir.join("frame.png");
        let cfg = dir.join("config.json");
        let result = (|| {
            fs::write(&png, request.image.to_png()?).map_err(|e| Error::io(&png, e))?;
            fs::write(&cfg, serde_json::to_vec(request.config)?).map_err(|e| Error::io(&cfg, e))?;
            let output = Command::new(&self.program).arg(&png).arg(&cfg).output().map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::BackendUnavailable(self.program.display().to_string())
                } else {
                    Error::BackendFailure(e.to_string())
                }
            })?;
            if !output.status.success() {
                return Err(Error::BackendFailure(format!(
                    "{} exited with {}: {}",
                    self.program.display(),
                    output.status,
                    String::from_utf8_lossy(&output.stderr).trim()
                )));
            }
            let stdout = String::from_utf8(output.stdout).map_err(|_| Error::BackendFailure("stdout is not UTF-8".into()))?;
            parse_token_table(&stdout)
        })();
        let _ = fs::remove_dir_all(&dir);
        result
    }
}

/// Resolves a backend id: `mock`, `mock+noise`, or `exec:<program>`.
pub fn backend_from_id(id: &str) -> Result<Box<dyn OcrBackend>> {
    match id {
        "mock" => Ok(Box::new(MockBackend)),
        "mock+noise" => Ok(Box::new(NoisyBackend {
            inner: MockBackend,
            noise: NoiseConfig::default(),
        })),
        _ => match id.strip_prefix("exec:") {
            Some(program) if !program.is_empty() => Ok(Box::new(ExternalBackend {
                program: PathBuf::from(program),
            })),
            _ => Err(Error::BackendUnavailable(id.to_string())),
        },
    }
}

/// Maps boxes from preprocessed coordinates back to the original frame and clamps them.
fn map_back(tokens: Vec<OcrToken>, factor: u32, frame_w: u32, frame_h: u32) -> Vec<OcrToken> {
    let f = factor.max(1);
    tokens
        .into_iter()
        .filter_map(|mut t| {
            let text = t.text.trim();
            if text.is_empty() {
                return None;
            }
            t.text = text.to_string();
            let x = t.bbox.x / f;
            let y = t.bbox.y / f;
            if x >= frame_w || y >= frame_h {
                return None;
            }
            let w = (t.bbox.w / f).max(1).min(frame_w - x);
            let h = (t.bbox.h / f).max(1).min(frame_h - y);
            t.bbox = Rect::new(x, y, w, h);
            t.confidence = t.confidence.clamp(0.0, 100.0);
            Some(t)
        })
        .collect()
}

pub fn cache_path(bundle: &SessionBundle, frame_index: usize) -> PathBuf {
    bundle.ocr_dir().join(format!("{frame_index:06}.json"))
}

/// Reads a cached OCR result if it was produced under the same backend and configuration.
pub fn read_cache(bundle: &SessionBundle, frame_index: usize, backend_id: &str, fingerprint: &str) -> Option<OcrFrame> {
    let bytes = fs::read(cache_path(bundle, frame_index)).ok()?;
    let frame: OcrFrame = serde_json::from_slice(&bytes).ok()?;
    (frame.frame_index == frame_index && frame.backend_id == backend_id && frame.config_fingerprint == fingerprint)
        .then_some(frame)
}

fn write_cache(bundle: &SessionBundle, frame: &OcrFrame) -> Result<()> {
    let dir = bundle.ocr_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = cache_path(bundle, frame.frame_index);
    let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(".{:06}.{}.{n}.tmp", frame.frame_index, std::process::id()));
    let mut bytes = serde_json::to_vec(frame)?;
    bytes.push(b'\n');
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

fn frame_dims(bundle: &SessionBundle, index: usize) -> (u32, u32) {
    bundle.frames[..=index]
        .iter()
        .rev()
        .find_map(|f| match f.kind {
            crate::session::FrameKind::Keyframe { width, height } => Some((width, height)),
            _ => None,
        })
        .unwrap_or((0, 0))
}

fn recognize_frame(
    bundle: &SessionBundle,
    frame_index: usize,
    image: Option<&Image>,
    backend: &dyn OcrBackend,
    cfg: &OcrConfig,
    backend_id: &str,
    fingerprint: &str,
) -> Result<OcrFrame> {
    let (w, h) = frame_dims(bundle, frame_index);
    let pre;
    let placeholder;
    let image = match image {
        Some(img) => {
            pre = preprocess_image(img, cfg);
            &pre
        }
        None => {
            placeholder = Image::filled(0, 0, [0; 4]);
            &placeholder
        }
    };
    let raw = backend.recognize(&OcrRequest {
        bundle_root: bundle.root(),
        frame_index,
        image,
        config: cfg,
    })?;
    let mut tokens = map_back(raw, cfg.upscale_factor, w, h);
    sort_tokens(&mut tokens);
    let frame = OcrFrame {
        frame_index,
        tokens,
        backend_id: backend_id.to_string(),
        config_fingerprint: fingerprint.to_string(),
    };
    write_cache(bundle, &frame)?;
    Ok(frame)
}

/// Recognizes one frame, consulting and updating the `ocr/` cache.
pub fn run_ocr(bundle: &SessionBundle, frame_index: usize, backend: &dyn OcrBackend, cfg: &OcrConfig) -> Result<OcrFrame> {
    cfg.validate()?;
    if frame_index >= bundle.frame_count() {
        return Err(Error::IndexOutOfRange {
            index: frame_index,
            count: bundle.frame_count(),
        });
    }
    let backend_id = backend.id();
    let fingerprint = cfg.fingerprint(&backend_id);
    if let Some(hit) = read_cache(bundle, frame_index, &backend_id, &fingerprint) {
        return Ok(hit);
    }
    let image = if backend.needs_pixels() {
        Some(bundle.reconstruct_frame(frame_index)?)
    } else {
        None
    };
    recognize_frame(bundle, frame_index, image.as_ref(), backend, cfg, &backend_id, &fingerprint)
}

/// Outcome of recognizing every frame of a bundle.
#[derive(Debug, Clone)]
pub struct OcrBatch {
    pub frames: Vec<OcrFrame>,
    pub cache_hits: usize,
}

/// Recognizes all frames. Cache misses are reconstructed sequentially and
/// recognized in parallel.
pub fn run_ocr_all(bundle: &SessionBundle, backend: &dyn OcrBackend, cfg: &OcrConfig) -> Result<OcrBatch> {
    cfg.validate()?;
    let backend_id = backend.id();
    let fingerprint = cfg.fingerprint(&backend_id);
    let mut frames: Vec<Option<OcrFrame>> = (0..bundle.frame_count())
        .map(|i| read_cache(bundle, i, &backend_id, &fingerprint))
        .collect();
    let cache_hits = frames.iter().filter(|f| f.is_some()).count();
    let misses: Vec<usize> = frames.iter().enumerate().filter(|(_, f)| f.is_none()).map(|(i, _)| i).collect();

    const CHUNK: usize = 32;
    let mut reader = bundle.reader();
    for chunk in misses.chunks(CHUNK) {
        let images: Vec<Option<Image>> = if backend.needs_pixels() {
            chunk.iter().map(|&i| reader.reconstruct(i).map(Some)).collect::<Result<_>>()?
        } else {
            vec![None; chunk.len()]
        };
        let done: Vec<OcrFrame> = chunk
            .par_iter()
            .zip(images.par_iter())
            .map(|(&i, img)| recognize_frame(bundle, i, img.as_ref(), backend, cfg, &backend_id, &fingerprint))
            .collect::<Result<_>>()?;
        for f in done {
            let i = f.frame_index;
            frames[i] = Some(f);
        }
    }
    Ok(OcrBatch {
        frames: frames.into_iter().map(|f| f.expect("every frame recognized")).collect(),
        cache_hits,
    })
}

/// Finds the token under a click.
///
/// A containing box wins, the smallest area first. Otherwise the token whose
/// center is nearest within [`NEAREST_TOKEN_RADIUS`] pixels is returned.
pub fn token_at_point(frame: &OcrFrame, x: u32, y: u32) -> Option<&OcrToken> {
    // Ties fall to the earlier token in canonical (y, x) order.
    let key = |t: &OcrToken| (t.bbox.y, t.bbox.x, t.text.clone());
    let containing = frame
        .tokens
        .iter()
        .filter(|t| t.bbox.contains(x, y))
        .min_by(|a, b| a.bbox.area().cmp(&b.bbox.area()).then_with(|| key(a).cmp(&key(b))));
    if containing.is_some() {
        return containing;
    }
    let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
    frame
        .tokens
        .iter()
        .map(|t| {
            let (cx, cy) = t.bbox.center();
            (((cx - px).powi(2) + (cy - py).powi(2)).sqrt(), t)
        })
        .filter(|(d, _)| *d <= NEAREST_TOKEN_RADIUS)
        .min_by(|(da, a), (db, b)| da.total_cmp(db).then_with(|| key(a).cmp(&key(b))))
        .map(|(_, t)| t)
}
