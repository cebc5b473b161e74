//! RGBA raster type and PNG serialization.

use std::io::Cursor;

use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    /// Center point in fractional pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            f64::from(self.x) + f64::from(self.w) / 2.0,
            f64::from(self.y) + f64::from(self.h) / 2.0,
        )
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.right() && other.x < self.right() && self.y < other.bottom() && other.y < self.bottom()
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        Rect {
            x,
            y,
            w: self.right().max(other.right()) - x,
            h: self.bottom().max(other.bottom()) - y,
        }
    }
}

/// 8-bit RGBA raster, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    rgba: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(width: u32, height: u32, rgba: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * 4;
        if rgba.len() != expected {
            return Err(Error::schema(
                "image",
                format!("raster has {} bytes, expected {expected} for {width}x{height}", rgba.len()),
            ));
        }
        Ok(Image { width, height, rgba })
    }

    pub fn filled(width: u32, height: u32, color: [u8; 4]) -> Self {
        let rgba = color.iter().copied().cycle().take(width as usize * height as usize * 4).collect();
        Image { width, height, rgba }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn rgba(&self) -> &[u8] {
        &self.rgba
    }

    pub fn into_rgba(self) -> Vec<u8> {
        self.rgba
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 4
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let o = self.offset(x, y);
        [self.rgba[o], self.rgba[o + 1], self.rgba[o + 2], self.rgba[o + 3]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, color: [u8; 4]) {
        let o = self.offset(x, y);
        self.rgba[o..o + 4].copy_from_slice(&color);
    }

    /// Fills `rect`, clipped to the image bounds.
    pub fn fill_rect(&mut self, rect: Rect, color: [u8; 4]) {
        let x1 = rect.right().min(self.width);
        let y1 = rect.bottom().min(self.height);
        for y in rect.y.min(y1)..y1 {
            for x in rect.x.min(x1)..x1 {
                self.set_pixel(x, y, color);
            }
        }
    }

    /// Copies the pixels of `rect` into a new image. `rect` must lie within bounds.
    pub fn crop(&self, rect: Rect) -> Image {
        debug_assert!(rect.right() <= self.width && rect.bottom() <= self.height);
        let mut rgba = Vec::with_capacity(rect.area() as usize * 4);
        for y in rect.y..rect.bottom() {
            let start = self.offset(rect.x, y);
            rgba.extend_from_slice(&self.rgba[start..start + rect.w as usize * 4]);
        }
        Image {
            width: rect.w,
            height: rect.h,
            rgba,
        }
    }

    /// Writes `src` with its top-left corner at (x, y). The caller guarantees bounds.
    pub(crate) fn blit(&mut self, src_rgba: &[u8], x: u32, y: u32, w: u32, h: u32) {
        let row = w as usize * 4;
        for dy in 0..h {
            let dst = self.offset(x, y + dy);
            let src = dy as usize * row;
            self.rgba[dst..dst + row].copy_from_slice(&src_rgba[src..src + row]);
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, &self.rgba)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Image> {
        let (width, height, rgba) = decode_png(bytes)?;
        Image::new(width, height, rgba)
    }
}

pub(crate) fn encode_png(width: u32, height: u32, rgba: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(png::ColorType::Rgba);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer.write_image_data(rgba).map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Decodes any 8-bit PNG into RGBA.
pub(crate) fn decode_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width, info.height);
    let rgba = match info.color_type {
        png::ColorType::Rgba => buf,
        png::ColorType::Rgb => buf.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g, 255]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0], p[1]]).collect(),
        png::ColorType::Indexed => return Err(Error::Png("unexpanded palette image".into())),
    };
    Ok((w, h, rgba))
}
