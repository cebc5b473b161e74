use serde::{Deserialize, Serialize};

use super::levenshtein;
use super::rects::{FillClass, RectRegion};
use crate::artifacts::{Addr, FunctionRecord};
use crate::ocr::OcrFrame;

pub const DEFAULT_ACCEPT_RATIO: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMatch {
    pub rect: RectRegion,
    /// `(function entry, block address)` of the accepted candidate.
    pub block: Option<(Addr, Addr)>,
    /// Edit distance to the accepted candidate, or to the closest one when unmatched.
    pub distance: usize,
    /// Another candidate block renders the same text.
    pub ambiguous: bool,
}

fn normalize(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Assigns node rectangles to the basic blocks of `function`.
///
/// Each node's text is the reading-order concatenation of the tokens centered
/// inside it. A candidate is acceptable when its edit distance is at most
/// `accept_ratio × max(len)`. Assignment is greedy by ascending distance and
/// uses each block once; a block is reused only when every block sharing its
/// text is already taken. Non-node rectangles are skipped.
pub fn match_blocks(frame: &OcrFrame, rects: &[RectRegion], function: &FunctionRecord, accept_ratio: f64) -> Vec<BlockMatch> {
    let nodes: Vec<&RectRegion> = rects.iter().filter(|r| r.fill_class == FillClass::Node).collect();
    let rect_texts: Vec<String> = nodes
        .iter()
        .map(|r| {
            let words: Vec<&str> = frame
                .tokens
                .iter()
                .filter(|t| {
                    let (cx, cy) = t.bbox.center();
                    r.bbox.contains(cx as u32, cy as u32)
                })
                .map(|t| t.text.as_str())
                .collect();
            normalize(&words.join(" "))
        })
        .collect();
    let block_texts: Vec<String> = function.blocks.iter().map(|b| normalize(&b.text())).collect();

    let mut closest = vec![usize::MAX; nodes.len()];
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (i, rt) in rect_texts.iter().enumerate() {
        let rl = rt.chars().count();
        for (j, bt) in block_texts.iter().enumerate() {
            let d = levenshtein(rt, bt);
            closest[i] = closest[i].min(d);
            let bound = accept_ratio * rl.max(bt.chars().count()) as f64;
            if !rt.is_empty() && d as f64 <= bound {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_unstable();

    let duplicates_of = |j: usize| -> Vec<usize> {
        (0..block_texts.len()).filter(|&k| k != j && block_texts[k] == block_texts[j]).collect()
    };
    let mut assigned: Vec<Option<(usize, usize)>> = vec![None; nodes.len()];
    let mut used = vec![false; block_texts.len()];
    for &(d, i, j) in &pairs {
        if assigned[i].is_some() {
            continue;
        }
        if used[j] {
            let dups = duplicates_of(j);
            if dups.is_empty() || dups.iter().any(|&k| !used[k]) {
                continue;
            }
        }
        used[j] = true;
        assigned[i] = Some((j, d));
    }

    nodes
        .iter()
        .enumerate()
        .map(|(i, rect)| match assigned[i] {
            Some((j, d)) => BlockMatch {
                rect: **rect,
                block: Some((function.entry_address, function.blocks[j].address)),
                distance: d,
                ambiguous: !duplicates_of(j).is_empty(),
            },
            None => BlockMatch {
                rect: **rect,
                block: None,
                distance: if closest[i] == usize::MAX { rect_texts[i].chars().count() } else { closest[i] },
                ambiguous: false,
            },
        })
        .collect()
}
