//! Differential frame codec.
//!
//! Consecutive screenshots are stored as the bounding rectangles of the
//! pixels that changed. Changed pixels are grouped into 8-connected
//! components; the bounding boxes of the components are merged until no two
//! overlap.

use crate::error::{Error, Result};
use crate::image::{Image, Rect};

/// Keyframe is forced after this many consecutive patch frames.
pub const MAX_PATCH_RUN: usize = 100;

/// A patch frame is replaced by a keyframe when its encoded regions exceed
/// this fraction of a full-frame encoding.
pub const KEYFRAME_BYTE_RATIO: f64 = 0.6;

/// A changed region with its raw RGBA pixels.
#[derive(Clone, PartialEq, Eq)]
pub struct PatchRegion {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl std::fmt::Debug for PatchRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PatchRegion({},{} {}x{})", self.x, self.y, self.width, self.height)
    }
}

impl PatchRegion {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.width, self.height)
    }

    pub fn from_image(x: u32, y: u32, img: &Image) -> Self {
        PatchRegion {
            x,
            y,
            width: img.width(),
            height: img.height(),
            pixels: img.rgba().to_vec(),
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        crate::image::encode_png(self.width, self.height, &self.pixels)
    }
}

/// Copies every patch raster onto a copy of `base`.
pub fn apply_patches(base: &Image, patches: &[PatchRegion]) -> Result<Image> {
    let mut out = base.clone();
    apply_patches_in_place(&mut out, patches)?;
    Ok(out)
}

pub(crate) fn apply_patches_in_place(img: &mut Image, patches: &[PatchRegion]) -> Result<()> {
    for p in patches {
        let fits = p.x.checked_add(p.width).is_some_and(|r| r <= img.width())
            && p.y.checked_add(p.height).is_some_and(|b| b <= img.height());
        if !fits {
            return Err(Error::OutOfBounds {
                x: p.x,
                y: p.y,
                width: p.width,
                height: p.height,
                frame_width: img.width(),
                frame_height: img.height(),
            });
        }
        if p.pixels.len() != p.width as usize * p.height as usize * 4 {
            return Err(Error::schema(
                "patch region",
                format!("raster has {} bytes for {}x{}", p.pixels.len(), p.width, p.height),
            ));
        }
    }
    for p in patches {
        img.blit(&p.pixels, p.x, p.y, p.width, p.height);
    }
    Ok(())
}

/// Computes the patch regions that turn `prev` into `next`.
pub fn diff_frames(prev: &Image, next: &Image) -> Result<Vec<PatchRegion>> {
    if prev.width() != next.width() || prev.height() != next.height() {
        return Err(Error::DimensionMismatch(
            prev.width(),
            prev.height(),
            next.width(),
            next.height(),
        ));
    }
    let (w, h) = (prev.width() as usize, prev.height() as usize);
    let changed: Vec<bool> = prev
        .rgba()
        .chunks_exact(4)
        .zip(next.rgba().chunks_exact(4))
        .map(|(a, b)| a != b)
        .collect();

    let rects = merge_overlapping(changed_components(&changed, w, h));
    Ok(rects
        .into_iter()
        .map(|r| PatchRegion::from_image(r.x, r.y, &next.crop(r)))
        .collect())
}

/// Bounding boxes of the 8-connected components of `mask`.
fn changed_components(mask: &[bool], w: usize, h: usize) -> Vec<Rect> {
    let mut seen = vec![false; mask.len()];
    let mut stack = Vec::new();
    let mut rects = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        rects.push(Rect::new(x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32));
    }
    rects
}

/// Repeatedly unions intersecting rectangles; result sorted by (y, x).
fn merge_overlapping(mut rects: Vec<Rect>) -> Vec<Rect> {
    loop {
        let mut merged_any = false;
        let mut out: Vec<Rect> = Vec::with_capacity(rects.len());
        for r in rects {
            match out.iter().position(|o| o.intersects(&r)) {
                Some(i) => {
                    out[i] = out[i].union(&r);
                    merged_any = true;
                }
                None => out.push(r),
            }
        }
        rects = out;
        if !merged_any {
            break;
        }
    }
    rects.sort_by_key(|r| (r.y, r.x, r.w, r.h));
    rects
}

/// One encoded frame of a stream.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodedFrame {
    Keyframe(Image),
    Patch(Vec<PatchRegion>),
}

/// Encodes a frame sequence into keyframes and patch frames.
///
/// A keyframe starts the stream, follows any size change, is forced after
/// [`MAX_PATCH_RUN`] patch frames, and replaces patch frames whose encoded
/// regions would exceed [`KEYFRAME_BYTE_RATIO`] of the full frame.
pub fn encode_stream(frames: &[Image]) -> Result<Vec<EncodedFrame>> {
    let mut out = Vec::with_capacity(frames.len());
    let mut since_keyframe = 0usize;
    for (i, frame) in frames.iter().enumerate() {
        let prev = i.checked_sub(1).map(|p| &frames[p]);
        let same_size = prev.is_some_and(|p| p.width() == frame.width() && p.height() == frame.height());
        if !same_size || since_keyframe >= MAX_PATCH_RUN {
            out.push(EncodedFrame::Keyframe(frame.clone()));
            since_keyframe = 0;
            continue;
        }
        let patches = diff_frames(prev.unwrap(), frame)?;
        let patch_bytes: usize = patches
            .iter()
            .map(|p| p.to_png().map(|b| b.len()))
            .sum::<Result<usize>>()?;
        let full_bytes = frame.to_png()?.len();
        if patch_bytes as f64 > KEYFRAME_BYTE_RATIO * full_bytes as f64 {
            out.push(EncodedFrame::Keyframe(frame.clone()));
            since_keyframe = 0;
        } else {
            out.push(EncodedFrame::Patch(patches));
            since_keyframe += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLACK: [u8; 4] = [0, 0, 0, 255];
    const WHITE: [u8; 4] = [255, 255, 255, 255];

    #[test]
    fn empty_patch_list_is_identity() {
        let img = Image::filled(5, 3, [1, 2, 3, 4]);
        assert_eq!(apply_patches(&img, &[]).unwrap(), img);
    }

    #[test]
    fn white_patch_on_black() {
        let base = Image::filled(4, 4, BLACK);
        let patch = PatchRegion::from_image(1, 1, &Image::filled(2, 2, WHITE));
        let out = apply_patches(&base, &[patch]).unwrap();
        let mut white = Vec::new();
        for y in 0..4 {
            for x in 0..4 {
                if out.pixel(x, y) == WHITE {
                    white.push((x, y));
                }
            }
        }
        assert_eq!(white, vec![(1, 1), (2, 1), (1, 2), (2, 2)]);
        assert_eq!(base, Image::filled(4, 4, BLACK));
    }

    #[test]
    fn out_of_bounds_patch_rejected() {
        let base = Image::filled(4, 4, BLACK);
        let patch = PatchRegion::from_image(3, 3, &Image::filled(2, 2, WHITE));
        assert!(matches!(apply_patches(&base, &[patch]), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn identical_images_have_no_patches() {
        let img = Image::filled(16, 16, [9, 9, 9, 255]);
        assert!(diff_frames(&img, &img).unwrap().is_empty());
    }

    #[test]
    fn single_pixel_change() {
        let a = Image::filled(16, 16, BLACK);
        let mut b = a.clone();
        b.set_pixel(5, 7, WHITE);
        let patches = diff_frames(&a, &b).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].rect(), Rect::new(5, 7, 1, 1));
        assert_eq!(patches[0].pixels, WHITE.to_vec());
    }

    #[test]
    fn disconnected_changes_stay_separate() {
        let a = Image::filled(64, 64, BLACK);
        let mut b = a.clone();
        b.set_pixel(0, 0, WHITE);
        b.set_pixel(63, 63, WHITE);
        let patches = diff_frames(&a, &b).unwrap();
        assert_eq!(patches.len(), 2);
        assert_eq!(apply_patches(&a, &patches).unwrap(), b);
    }

    #[test]
    fn diagonal_pixels_are_one_component() {
        let a = Image::filled(8, 8, BLACK);
        let mut b = a.clone();
        b.set_pixel(2, 2, WHITE);
        b.set_pixel(3, 3, WHITE);
        let patches = diff_frames(&a, &b).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].rect(), Rect::new(2, 2, 2, 2));
    }

    #[test]
    fn overlapping_boxes_merge() {
        // An L-shape and a pixel inside its bounding box but not connected to it.
        let a = Image::filled(10, 10, BLACK);
        let mut b = a.clone();
        for x in 0..6 {
            b.set_pixel(x, 0, WHITE);
        }
        for y in 0..6 {
            b.set_pixel(0, y, WHITE);
        }
        b.set_pixel(4, 4, WHITE);
        let patches = diff_frames(&a, &b).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].rect(), Rect::new(0, 0, 6, 6));
    }

    #[test]
    fn dimension_mismatch() {
        let a = Image::filled(4, 4, BLACK);
        let b = Image::filled(4, 5, BLACK);
        assert!(matches!(diff_frames(&a, &b), Err(Error::DimensionMismatch(4, 4, 4, 5))));
    }

    fn textured(w: u32, h: u32) -> Image {
        let mut img = Image::filled(w, h, BLACK);
        for y in 0..h {
            for x in 0..w {
                let v = ((x * 7 + y * 13) * 31 % 251) as u8;
                img.set_pixel(x, y, [v, v.wrapping_mul(3), v.wrapping_add(17), 255]);
            }
        }
        img
    }

    #[test]
    fn stream_forces_keyframes() {
        let frames: Vec<Image> = (0..(MAX_PATCH_RUN + 3))
            .map(|i| {
                let mut img = textured(32, 32);
                img.set_pixel((i % 32) as u32, 0, WHITE);
                img
            })
            .collect();
        let enc = encode_stream(&frames).unwrap();
        let keyframes: Vec<usize> = enc
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f, EncodedFrame::Keyframe(_)))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(keyframes, vec![0, MAX_PATCH_RUN + 1]);
    }

    #[test]
    fn full_repaint_becomes_keyframe() {
        let enc = encode_stream(&[Image::filled(32, 32, BLACK), textured(32, 32)]).unwrap();
        assert!(matches!(enc[1], EncodedFrame::Keyframe(_)));
    }
}
