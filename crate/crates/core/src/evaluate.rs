//! Comparison of generated labels with manually labeled ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{Addr, FunctionRecord};
use crate::error::{Error, Result};
use crate::matchers::FunctionMatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "truth", content = "entry", rename_all = "snake_case")]
pub enum Truth {
    Function(Addr),
    NoFunction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub frame_index: usize,
    pub truth: Truth,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<Addr>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvalOutcome {
    CorrectLabel,
    WrongFunction,
    NoFunctionMiss,
    DetectedFunctionFalse,
}

pub fn classify(pred: Option<Addr>, truth: Truth) -> EvalOutcome {
    match (truth, pred) {
        (Truth::Function(f), Some(g)) if f == g => EvalOutcome::CorrectLabel,
        (Truth::Function(_), Some(_)) => EvalOutcome::WrongFunction,
        (Truth::Function(_), None) => EvalOutcome::NoFunctionMiss,
        (Truth::NoFunction, None) => EvalOutcome::CorrectLabel,
        (Truth::NoFunction, Some(_)) => EvalOutcome::DetectedFunctionFalse,
    }
}

pub fn classify_function_outcome(pred: &FunctionMatch, truth: &GroundTruthLabel) -> EvalOutcome {
    classify(pred.label.entry(), truth.truth)
}

/// Outcome counts split by whether the frame shows a function.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub with_function_correct: u64,
    pub wrong_function: u64,
    pub no_function_miss: u64,
    pub without_function_correct: u64,
    pub detected_function_false: u64,
}

impl OutcomeCounts {
    pub fn new(with_correct: u64, wrong: u64, miss: u64, without_correct: u64, detected: u64) -> Self {
        OutcomeCounts {
            with_function_correct: with_correct,
            wrong_function: wrong,
            no_function_miss: miss,
            without_function_correct: without_correct,
            detected_function_false: detected,
        }
    }

    pub fn record(&mut self, truth: Truth, outcome: EvalOutcome) {
        match (truth, outcome) {
            (Truth::Function(_), EvalOutcome::CorrectLabel) => self.with_function_correct += 1,
            (_, EvalOutcome::WrongFunction) => self.wrong_function += 1,
            (_, EvalOutcome::NoFunctionMiss) => self.no_function_miss += 1,
            (Truth::NoFunction, EvalOutcome::CorrectLabel) => self.without_function_correct += 1,
            (_, EvalOutcome::DetectedFunctionFalse) => self.detected_function_false += 1,
        }
    }

    pub fn with_function(&self) -> u64 {
        self.with_function_correct + self.wrong_function + self.no_function_miss
    }

    pub fn without_function(&self) -> u64 {
        self.without_function_correct + self.detected_function_false
    }

    pub fn total(&self) -> u64 {
        self.with_function() + self.without_function()
    }

    pub fn correct(&self) -> u64 {
        self.with_function_correct + self.without_function_correct
    }

    fn add(&mut self, o: &OutcomeCounts) {
        self.with_function_correct += o.with_function_correct;
        self.wrong_function += o.wrong_function;
        self.no_function_miss += o.no_function_miss;
        self.without_function_correct += o.without_function_correct;
        self.detected_function_false += o.detected_function_false;
    }
}

/// A fraction reported as a percentage rounded half-up to one decimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        Ratio { num, den }
    }

    pub fn value(&self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    /// Percentage in tenths of a percent, rounded half-up in exact arithmetic.
    pub fn tenths(&self) -> u64 {
        round_half_up(1000 * u128::from(self.num), u128::from(self.den))
    }

    pub fn percent(&self) -> f64 {
        self.tenths() as f64 / 10.0
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.tenths();
        write!(f, "{}.{}%", t / 10, t % 10)
    }
}

fn round_half_up(num: u128, den: u128) -> u64 {
    if den == 0 {
        return 0;
    }
    ((2 * num + den) / (2 * den)) as u64
}

fn format_tenths(t: u64) -> String {
    format!("{}.{}%", t / 10, t % 10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset: String,
    pub counts: OutcomeCounts,
    pub with_function_total: u64,
    pub without_function_total: u64,
    pub total: u64,
    pub correct: u64,
    pub overall_accuracy: f64,
    pub overall_accuracy_pct: f64,
}

impl DatasetRow {
    fn new(dataset: &str, counts: OutcomeCounts) -> Self {
        let r = Ratio::new(counts.correct(), counts.total());
        DatasetRow {
            dataset: dataset.to_string(),
            counts,
            with_function_total: counts.with_function(),
            without_function_total: counts.without_function(),
            total: counts.total(),
            correct: counts.correct(),
            overall_accuracy: r.value(),
            overall_accuracy_pct: r.percent(),
        }
    }

    pub fn accuracy(&self) -> Ratio {
        Ratio::new(self.correct, self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub datasets: Vec<DatasetRow>,
    pub total: DatasetRow,
}

pub fn summarize_function_eval(groups: &[(String, OutcomeCounts)]) -> EvalReport {
    let mut pooled = OutcomeCounts::default();
    for (_, c) in groups {
        pooled.add(c);
    }
    EvalReport {
        datasets: groups.iter().map(|(n, c)| DatasetRow::new(n, *c)).collect(),
        total: DatasetRow::new("total", pooled),
    }
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>10} {:>8} {:>8} {:>9}",
            "dataset", "w/ fn", "correct", "wrong", "no fn", "w/o fn", "correct", "detect", "accuracy"
        );
        for row in self.datasets.iter().chain(std::iter::once(&self.total)) {
            let c = &row.counts;
            let _ = writeln!(
                s,
                "{:<10} {:>8} {:>8} {:>8} {:>8} {:>10} {:>8} {:>8} {:>9}",
                row.dataset,
                row.with_function_total,
                c.with_function_correct,
                c.wrong_function,
                c.no_function_miss,
                row.without_function_total,
                c.without_function_correct,
                c.detected_function_false,
                row.accuracy().to_string()
            );
        }
        s
    }
}

/// Outcome counts for `matches` against `truth`. Every labeled frame needs a prediction.
pub fn evaluate_matches(matches: &[FunctionMatch], truth: &[GroundTruthLabel]) -> Result<OutcomeCounts> {
    let by_frame: BTreeMap<usize, &FunctionMatch> = matches.iter().map(|m| (m.frame_index, m)).collect();
    let mut counts = OutcomeCounts::default();
    for label in truth {
        let pred = by_frame
            .get(&label.frame_index)
            .ok_or_else(|| Error::schema("groundtruth.csv", format!("no prediction for frame {}", label.frame_index)))?;
        counts.record(label.truth, classify_function_outcome(pred, label));
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSubjectResult {
    pub subject: String,
    pub correct: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRow {
    pub subject: String,
    pub correct: u64,
    pub total: u64,
    pub overall_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub function_accuracy: Ratio,
    pub subjects: Vec<BlockRow>,
    pub total: BlockRow,
    pub note: String,
}

fn block_row(subject: &str, correct: u64, total: u64, fa: Ratio) -> BlockRow {
    let t = round_half_up(
        1000 * u128::from(correct) * u128::from(fa.num),
        u128::from(total) * u128::from(fa.den),
    );
    BlockRow {
        subject: subject.to_string(),
        correct,
        total,
        overall_pct: t as f64 / 10.0,
    }
}

/// Per-subject block accuracy scaled by the dataset's pooled function accuracy.
pub fn summarize_block_eval(results: &[BlockSubjectResult], function_accuracy: Ratio) -> BlockReport {
    let (c, t) = results.iter().fold((0, 0), |(c, t), r| (c + r.correct, t + r.total));
    BlockReport {
        function_accuracy,
        subjects: results.iter().map(|r| block_row(&r.subject, r.correct, r.total, function_accuracy)).collect(),
        total: block_row("total", c, t, function_accuracy),
        note: format!(
            "overall = block ratio x pooled function accuracy {} of the dataset",
            function_accuracy
        ),
    }
}

impl BlockReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>9}", "subject", "correct", "total", "overall");
        for r in self.subjects.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>9}", r.subject, r.correct, r.total, format_tenths((r.overall_pct * 10.0).round() as u64));
        }
        let _ = writeln!(s, "note: {}", self.note);
        s
    }
}

/// Whether a predicted block counts as a correct identification of `expected`.
/// Blocks with identical text are interchangeable.
pub fn block_correct(predicted: Option<Addr>, expected: Option<Addr>, function: &FunctionRecord) -> bool {
    match (predicted, expected) {
        (None, None) => true,
        (Some(p), Some(e)) if p == e => true,
        (Some(p), Some(e)) => {
            let text = |a: Addr| function.blocks.iter().find(|b| b.address == a).map(|b| b.text());
            text(p).is_some() && text(p) == text(e)
        }
        _ => false,
    }
}

pub const GROUNDTRUTH_HEADER: [&str; 3] = ["frame_index", "truth", "blocks"];

/// Reads `frame_index,truth,blocks` rows: truth is `none` or a `0x` address,
/// blocks a `;`-separated address list allowed only for function frames.
pub fn read_groundtruth(text: &str) -> Result<Vec<GroundTruthLabel>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != GROUNDTRUTH_HEADER {
        return Err(Error::schema("groundtruth.csv:1", "expected header frame_index,truth,blocks"));
    }
    let mut out: Vec<GroundTruthLabel> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let loc = format!("groundtruth.csv:{}", i + 2);
        let bad = |m: String| Error::schema(loc.clone(), m);
        let frame_index: usize = rec.get(0).unwrap_or("").parse().map_err(|_| bad("bad frame_index".into()))?;
        let truth = match rec.get(1).unwrap_or("") {
            t if t.eq_ignore_ascii_case("none") => Truth::NoFunction,
            t => Truth::Function(t.parse().map_err(bad)?),
        };
        let blocks_field = rec.get(2).unwrap_or("");
        let blocks = if blocks_field.is_empty() {
            None
        } else {
            if truth == Truth::NoFunction {
                return Err(bad("blocks listed for a frame without a function".into()));
            }
            Some(blocks_field.split(';').map(|a| a.trim().parse()).collect::<std::result::Result<Vec<Addr>, _>>().map_err(bad)?)
        };
        if out.iter().any(|l| l.frame_index == frame_index) {
            return Err(bad(format!("frame {frame_index} labeled twice")));
        }
        out.push(GroundTruthLabel { frame_index, truth, blocks });
    }
    Ok(out)
}

pub fn load_groundtruth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthLabel>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_groundtruth(&text)
}

pub fn write_groundtruth(labels: &[GroundTruthLabel]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(GROUNDTRUTH_HEADER)?;
    for l in labels {
        let truth = match l.truth {
            Truth::Function(a) => a.to_string(),
            Truth::NoFunction => "none".to_string(),
        };
        let blocks = l.blocks.as_ref().map(|b| b.iter().map(Addr::to_string).collect::<Vec<_>>().join(";")).unwrap_or_default();
        w.write_record([l.frame_index.to_string(), truth, blocks])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::schema("groundtruth csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Frames available for sampling from one session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePool {
    pub session_id: String,
    pub subject: String,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleEntry {
    pub subject: String,
    pub session_id: String,
    pub frame_index: usize,
}

/// Per-subject generator: ChaCha8 keyed by SHA-256 of the seed and subject.
fn subject_rng(seed: u64, subject: &str) -> ChaCha8Rng {
    let digest = crate::sha256_hex(format!("{seed}:{subject}").as_bytes());
    let mut key = [0u8; 32];
    hex::decode_to_slice(&digest, &mut key).expect("sha256 hex is 32 bytes");
    ChaCha8Rng::from_seed(key)
}

/// Draws exactly `per_subject_n` frames per subject, skipping excluded
/// `(session_id, frame_index)` pairs. The result depends only on the seed and
/// the set of pools, not on their order.
pub fn stratified_sample(
    pools: &[SamplePool],
    per_subject_n: usize,
    seed: u64,
    exclusions: &BTreeSet<(String, usize)>,
) -> Result<Vec<SampleEntry>> {
    let mut by_subject: BTreeMap<&str, BTreeSet<(&str, usize)>> = BTreeMap::new();
    for p in pools {
        let frames = by_subject.entry(&p.subject).or_default();
        for i in 0..p.frame_count {
            if !exclusions.contains(&(p.session_id.clone(), i)) {
                frames.insert((&p.session_id, i));
            }
        }
    }
    let mut out = Vec::new();
    for (subject, frames) in by_subject {
        if frames.len() < per_subject_n {
            return Err(Error::InsufficientFrames {
                subject: subject.to_string(),
                available: frames.len(),
                requested: per_subject_n,
            });
        }
        let candidates: Vec<(&str, usize)> = frames.into_iter().collect();
        let mut rng = subject_rng(seed, subject);
        let mut picked: Vec<SampleEntry> = rand::seq::index::sample(&mut rng, candidates.len(), per_subject_n)
            .into_iter()
            .map(|k| SampleEntry {
                subject: subject.to_string(),
                session_id: candidates[k].0.to_string(),
                frame_index: candidates[k].1,
            })
            .collect();
        picked.sort();
        out.extend(picked);
    }
    Ok(out)
}

/// Reads a `session_id,frame_index` exclusion listing.
pub fn read_exclusions(text: &str) -> Result<BTreeSet<(String, usize)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let idx = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::schema(format!("exclusions:{}", i + 2), "bad frame_index"))?;
        out.insert((rec.get(0).unwrap_or("").to_string(), idx));
    }
    Ok(out)
}
