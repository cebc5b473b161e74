use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::similarity_score;
use crate::artifacts::{symbols_in, Addr, SymbolIndex};
use crate::ocr::OcrFrame;

pub const DEFAULT_THRESHOLD: u32 = 85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Minimum similarity for a fuzzy symbol match.
    pub threshold: u32,
    /// Fuzzy candidates must be within this many characters of the token length.
    pub length_band: usize,
    /// When matched symbols spread over at least this many functions...
    pub spread_min_functions: usize,
    /// ...and the best function holds less than this share of them, the frame
    /// shows several functions' symbols at once (string tables, function
    /// lists) and is labeled NoFunction. Set to 0.0 to disable.
    pub spread_min_dominance: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            threshold: DEFAULT_THRESHOLD,
            length_band: 3,
            spread_min_functions: 3,
            spread_min_dominance: 0.5,
        }
    }
}

impl MatchConfig {
    pub fn with_threshold(threshold: u32) -> Self {
        MatchConfig {
            threshold,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "label", rename_all = "snake_case")]
pub enum FunctionLabel {
    Function { entry: Addr, score: u32, via_symbol: String },
    NoFunction,
}

impl FunctionLabel {
    pub fn entry(&self) -> Option<Addr> {
        match self {
            FunctionLabel::Function { entry, .. } => Some(*entry),
            FunctionLabel::NoFunction => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionMatch {
    pub frame_index: usize,
    #[serde(flatten)]
    pub label: FunctionLabel,
}

#[derive(Default)]
struct Support<'a> {
    score: u32,
    via: Option<&'a str>,
    tokens: BTreeSet<&'a str>,
}

/// Identifies the single function shown in a frame.
///
/// Any token whose sanitized form is a discriminative symbol decides the
/// frame with a perfect score. Otherwise the best fuzzy match among
/// candidates with the same first character and similar length decides it,
/// provided it reaches the threshold. Ties prefer the higher score, then
/// more distinct matching tokens, then the lowest entry address; token order
/// never matters. Frames whose exact and fuzzy matches together spread over
/// many functions without a dominant one are NoFunction.
pub fn match_function(frame: &OcrFrame, index: &SymbolIndex, cfg: &MatchConfig) -> FunctionMatch {
    let symbols: BTreeSet<String> = frame.tokens.iter().flat_map(|t| symbols_in(&t.text)).collect();

    let mut exact: BTreeMap<Addr, Support<'_>> = BTreeMap::new();
    let mut fuzzy: BTreeMap<Addr, Support<'_>> = BTreeMap::new();
    // One vote per symbol, for the function of its unique best candidate.
    let mut votes: BTreeMap<Addr, usize> = BTreeMap::new();
    for sym in &symbols {
        if let Some(entry) = index.function_of(sym) {
            let s = exact.entry(entry).or_default();
            s.score = 100;
            s.via = Some(s.via.map_or(sym.as_str(), |v: &str| v.min(sym.as_str())));
            s.tokens.insert(sym);
            *votes.entry(entry).or_default() += 1;
            continue;
        }
        let Some(first) = sym.chars().next() else { continue };
        let len = sym.chars().count();
        let mut best: (u32, BTreeSet<Addr>) = (0, BTreeSet::new());
        for cand in index.candidates(first, len, cfg.length_band) {
            let score = similarity_score(sym, cand);
            if score < cfg.threshold {
                continue;
            }
            let entry = index.function_of(cand).expect("candidates are indexed symbols");
            let s = fuzzy.entry(entry).or_default();
            s.tokens.insert(sym);
            if score > s.score || (score == s.score && s.via.is_none_or(|v| cand < v)) {
                s.score = score;
                s.via = Some(cand);
            }
            if score > best.0 {
                best = (score, BTreeSet::from([entry]));
            } else if score == best.0 {
                best.1.insert(entry);
            }
        }
        if let [entry] = best.1.iter().collect::<Vec<_>>()[..] {
            *votes.entry(*entry).or_default() += 1;
        }
    }

    let label = if spread_out(&votes, cfg) {
        FunctionLabel::NoFunction
    } else if !exact.is_empty() {
        decide(&exact)
    } else {
        decide(&fuzzy)
    };
    FunctionMatch {
        frame_index: frame.frame_index,
        label,
    }
}

/// Whether the symbol votes spread over too many functions for any one of them to dominate.
fn spread_out(votes: &BTreeMap<Addr, usize>, cfg: &MatchConfig) -> bool {
    if votes.len() < cfg.spread_min_functions.max(2) {
        return false;
    }
    let total: usize = votes.values().sum();
    let best = votes.values().copied().max().unwrap_or(0);
    (best as f64 / total as f64) < cfg.spread_min_dominance
}

fn decide(per_function: &BTreeMap<Addr, Support<'_>>) -> FunctionLabel {
    // Entries compare reversed so the lowest entry wins full ties.
    let best = per_function.iter().max_by(|(ea, a), (eb, b)| {
        a.score
            .cmp(&b.score)
            .then(a.tokens.len().cmp(&b.tokens.len()))
            .then(eb.cmp(ea))
    });
    match best {
        Some((entry, support)) => FunctionLabel::Function {
            entry: *entry,
            score: support.score,
            via_symbol: support.via.unwrap_or_default().to_string(),
        },
        None => FunctionLabel::NoFunction,
    }
}
