use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Rect};

/// An RGB color with a per-channel tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorClass {
    pub rgb: [u8; 3],
    pub tolerance: u8,
}

impl ColorClass {
    fn matches(&self, px: [u8; 4]) -> bool {
        self.rgb.iter().zip(px).all(|(&c, p)| c.abs_diff(p) <= self.tolerance)
    }
}

/// Size and color filters for graph-node detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectFilters {
    pub node_colors: Vec<ColorClass>,
    pub min_width: u32,
    pub min_height: u32,
    pub max_width: u32,
    pub max_height: u32,
    /// Components covering less than this fraction of their bounding box are `Other`.
    #[serde(default = "default_min_fill")]
    pub min_fill: f64,
}

fn default_min_fill() -> f64 {
    0.3
}

impl RectFilters {
    fn with_colors(colors: &[([u8; 3], u8)]) -> Self {
        RectFilters {
            node_colors: colors.iter().map(|&(rgb, tolerance)| ColorClass { rgb, tolerance }).collect(),
            min_width: 16,
            min_height: 10,
            max_width: 1600,
            max_height: 1200,
            min_fill: default_min_fill(),
        }
    }
}

/// Per-tool filter defaults, keyed by tool hint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FilterTable(pub BTreeMap<String, RectFilters>);

impl Default for FilterTable {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert("ida".to_string(), RectFilters::with_colors(&[([255, 255, 255], 6), ([255, 255, 200], 6)]));
        m.insert("ghidra".to_string(), RectFilters::with_colors(&[([255, 255, 255], 6)]));
        m.insert("binja".to_string(), RectFilters::with_colors(&[([42, 42, 42], 4), ([48, 48, 56], 4)]));
        m.insert("generic".to_string(), RectFilters::with_colors(&[([255, 255, 255], 6)]));
        FilterTable(m)
    }
}

impl FilterTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::schema(path.display().to_string(), e.to_string()))
    }

    /// Filters for `tool`, falling back to `generic`.
    pub fn for_tool(&self, tool: Option<&str>) -> RectFilters {
        tool.and_then(|t| self.0.get(&t.to_ascii_lowercase()))
            .or_else(|| self.0.get("generic"))
            .cloned()
            .unwrap_or_else(|| RectFilters::with_colors(&[([255, 255, 255], 6)]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillClass {
    Node,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectRegion {
    pub bbox: Rect,
    pub fill_class: FillClass,
}

/// Finds node-colored regions: 4-connected components of pixels matching a
/// node color class whose bounding boxes pass the size filters, sorted by (y, x).
pub fn detect_block_rects(img: &Image, filters: &RectFilters) -> Vec<RectRegion> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mask: Vec<bool> = img
        .rgba()
        .chunks_exact(4)
        .map(|p| {
            let px = [p[0], p[1], p[2], p[3]];
            filters.node_colors.iter().any(|c| c.matches(px))
        })
        .collect();

    let mut seen = vec![false; mask.len()];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1, mut count) = (usize::MAX, usize::MAX, 0, 0, 0usize);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            count += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        let bbox = Rect::new(x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32);
        let fits = bbox.w >= filters.min_width
            && bbox.h >= filters.min_height
            && bbox.w <= filters.max_width
            && bbox.h <= filters.max_height;
        if !fits {
            continue;
        }
        let fill = count as f64 / bbox.area() as f64;
        out.push(RectRegion {
            bbox,
            fill_class: if fill >= filters.min_fill { FillClass::Node } else { FillClass::Other },
        });
    }
    out.sort_by_key(|r| (r.bbox.y, r.bbox.x));
    out
}
