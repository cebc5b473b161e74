//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;

use common::*;
use retrace_core::annotate::{consolidate, Annotation, AnnotationBody, ConsolidationConfig, NavMechanism};
use retrace_core::artifacts::{Addr, RenameScope, Stoplist, SymbolIndex};
use retrace_core::codec::{apply_patches, diff_frames};
use retrace_core::demo::{self, at, write_demo_bundle};
use retrace_core::evaluate::{
    block_correct, classify, summarize_block_eval, summarize_function_eval, BlockSubjectResult, EvalOutcome, OutcomeCounts,
    Ratio, Truth,
};
use retrace_core::image::Image;
use retrace_core::input::aggregate_keystrokes;
use retrace_core::matchers::{levenshtein, match_blocks, match_function, similarity_score, FunctionLabel, MatchConfig, DEFAULT_ACCEPT_RATIO};
use retrace_core::ocr::{format_token_table, MockBackend, NoiseConfig, NoisyBackend, OcrBackend, OcrConfig, OcrFrame, OcrRequest};
use retrace_core::pipeline::{run_pipeline, PipelineConfig};
use retrace_core::session::{write_bundle, SessionBundle, SessionManifest, Timestamp};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(actual: f64, expected: f64) -> bool {
    (actual - expected).abs() <= 0.05 + 1e-9
}

fn evaluation_arithmetic() -> Outcome {
    let start = Instant::now();
    let table4 = [
        ("A", OutcomeCounts::new(360, 1, 1, 135, 3), 99.0),
        ("B", OutcomeCounts::new(405, 7, 4, 82, 2), 97.4),
        ("C", OutcomeCounts::new(328, 6, 9, 156, 1), 96.8),
    ];
    let groups: Vec<(String, OutcomeCounts)> = table4.iter().map(|(n, c, _)| (n.to_string(), *c)).collect();
    let report = summarize_function_eval(&groups);
    for (row, (name, _, expected)) in report.datasets.iter().zip(&table4) {
        ensure!(within(row.overall_accuracy_pct, *expected), "dataset {name}: {} vs {expected}", row.overall_accuracy_pct);
    }
    ensure!(within(report.total.overall_accuracy_pct, 97.7), "overall {}", report.total.overall_accuracy_pct);
    ensure!(report.total.total == 1500, "pooled frame count {}", report.total.total);

    let table5 = [(85, 87, 96.7), (76, 78, 96.5), (176, 179, 97.3), (86, 90, 94.6), (80, 85, 93.2)];
    let results: Vec<BlockSubjectResult> = table5
        .iter()
        .enumerate()
        .map(|(i, &(correct, total, _))| BlockSubjectResult {
            subject: format!("subject-{}", i + 1),
            correct,
            total,
        })
        .collect();
    let blocks = summarize_block_eval(&results, Ratio::new(495, 500));
    for (row, (_, _, expected)) in blocks.subjects.iter().zip(&table5) {
        ensure!(within(row.overall_pct, *expected), "{}: {} vs {expected}", row.subject, row.overall_pct);
    }
    ensure!((blocks.total.correct, blocks.total.total) == (503, 519), "pooled blocks {}/{}", blocks.total.correct, blocks.total.total);
    ensure!(within(blocks.total.overall_pct, 95.9), "block total {}", blocks.total.overall_pct);

    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("overall {} / blocks {}%", report.total.accuracy(), blocks.total.overall_pct))
}

fn codec_round_trip() -> Outcome {
    let start = Instant::now();
    let mut r = rng(0xC0DEC);
    for i in 0..1000 {
        let (w, h) = (r.random_range(1..=64), r.random_range(1..=48));
        let a = random_image(&mut r, w, h);
        let b = if i % 3 == 0 { random_image(&mut r, w, h) } else { mutate_image(&mut r, &a) };
        let patches = diff_frames(&a, &b).map_err(|e| e.to_string())?;
        ensure!(apply_patches(&a, &patches).map_err(|e| e.to_string())? == b, "pair {i} ({w}x{h}) differs");
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for s in 0..5 {
        let (w, h) = (r.random_range(40..160), r.random_range(30..120));
        let mut frames: Vec<(Timestamp, Image)> = vec![(Timestamp(1_000), textured_frame(&mut r, w, h))];
        for k in 1..10u64 {
            let next = mutate_image(&mut r, &frames.last().unwrap().1);
            frames.push((Timestamp(1_000 + 1_000 * k), next));
        }
        let manifest = SessionManifest {
            session_id: format!("codec-{s}"),
            subject_pseudonym: "p".into(),
            binary_id: "b".into(),
            tool_hint: None,
            start: Timestamp(1_000),
            end: Timestamp(11_000),
            frame_count: 0,
            capture_interval_ms: 1000,
        };
        let root = dir.path().join(format!("bundle-{s}"));
        write_bundle(&root, manifest, &frames, &[]).map_err(|e| e.to_string())?;
        let bundle = SessionBundle::load(&root).map_err(|e| e.to_string())?;
        let mut reader = bundle.reader();
        for (i, (_, expected)) in frames.iter().enumerate() {
            let sequential = reader.reconstruct(i).map_err(|e| e.to_string())?;
            let independent = bundle.reconstruct_frame(i).map_err(|e| e.to_string())?;
            ensure!(&sequential == expected && &independent == expected, "bundle {s} frame {i} differs");
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("1000 pairs, 5 bundles x 10 frames, {elapsed:.1?}"))
}

fn string_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(0x5781);
    for i in 0..10_000 {
        let (a, b) = (random_string(&mut r, 14), random_string(&mut r, 14));
        ensure!(levenshtein(&a, &b) == oracle_levenshtein(&a, &b), "pair {i}: {a:?} {b:?}");
        ensure!(similarity_score(&a, &b) == oracle_similarity(&a, &b), "score {i}: {a:?} {b:?}");
    }
    for i in 0..10_000 {
        let (a, b, c) = (random_string(&mut r, 10), random_string(&mut r, 10), random_string(&mut r, 10));
        let (ab, ba, bc, ac) = (levenshtein(&a, &b), levenshtein(&b, &a), levenshtein(&b, &c), levenshtein(&a, &c));
        ensure!((ab == 0) == (a == b), "identity {i}");
        ensure!(ab == ba, "symmetry {i}");
        ensure!(ac <= ab + bc, "triangle {i}");
        ensure!(levenshtein(&a, &a) == 0, "reflexive {i}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("10k pairs, 10k triples, {elapsed:.1?}"))
}

fn keystroke_aggregation() -> Outcome {
    let mut r = rng(0x4B45);
    let mut underflows = 0;
    for i in 0..1000 {
        let len = r.random_range(0..120);
        let mut ops = random_key_ops(&mut r, len);
        if i % 10 == 0 {
            // Leading erasures on an empty word.
            let t0 = ops.first().map_or(1_000, |o| o.0);
            for k in 0..3 {
                ops.insert(k, (t0.saturating_sub(10 * (3 - k as u64)), KeyOp::Erase("Backspace")));
            }
        }
        underflows += count_underflows(&ops);
        let events: Vec<_> = ops.iter().map(|(t, op)| op.event(*t)).collect();
        for gap in [0, 250, 2000, 10_000] {
            let got: Vec<(String, u64, u64)> =
                aggregate_keystrokes(&events, gap).into_iter().map(|w| (w.text, w.t_start.0, w.t_end.0)).collect();
            let want = oracle_words(&ops, gap);
            ensure!(got == want, "sequence {i}, gap {gap}: {got:?} vs {want:?}");
        }
    }
    ensure!(underflows > 100, "only {underflows} underflow cases generated");
    Ok(format!("1000 sequences x 4 gaps, {underflows} backspace underflows"))
}

/// Erasures that hit an empty word, with the default gap.
fn count_underflows(ops: &[(u64, KeyOp)]) -> usize {
    let (mut len, mut last, mut n) = (0usize, None::<u64>, 0);
    for (t, op) in ops {
        if let (Some(p), KeyOp::Char(_) | KeyOp::Space | KeyOp::Erase(_)) = (last, op) {
            if t - p > 2000 {
                len = 0;
            }
        }
        match op {
            KeyOp::Char(_) | KeyOp::Space => len += 1,
            KeyOp::Erase(_) if len == 0 => n += 1,
            KeyOp::Erase(_) => len -= 1,
            KeyOp::Boundary(_) | KeyOp::Click => {
                len = 0;
                last = None;
                continue;
            }
            _ => continue,
        }
        last = Some(*t);
    }
    n
}

fn synthetic_corpus() -> Outcome {
    let start = Instant::now();
    let map = corpus_map();
    let index = SymbolIndex::build(&map, &Stoplist::default());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(0xC0C0);
    let mut truths = Vec::new();
    for i in 0..200 {
        let kind = match i % 10 {
            0 => 1,
            1 | 2 => 2,
            _ => 0,
        };
        let (truth, tokens) = corpus_frame(&mut r, &map, kind);
        let path = MockBackend::sidecar_path(dir.path(), i);
        std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| e.to_string())?;
        std::fs::write(&path, format_token_table(&tokens)).map_err(|e| e.to_string())?;
        truths.push(truth);
    }

    let backend = NoisyBackend {
        inner: MockBackend,
        noise: NoiseConfig {
            seed: 7,
            ..NoiseConfig::default()
        },
    };
    let cfg = OcrConfig::identity();
    let blank = Image::filled(1, 1, [0, 0, 0, 255]);
    let mut counts = OutcomeCounts::default();
    let (mut traps, mut trap_false) = (0, 0);
    for (i, truth) in truths.iter().enumerate() {
        let tokens = backend
            .recognize(&OcrRequest {
                bundle_root: dir.path(),
                frame_index: i,
                image: &blank,
                config: &cfg,
            })
            .map_err(|e| e.to_string())?;
        let m = match_function(&OcrFrame::new(i, tokens), &index, &MatchConfig::default());
        let t = match truth {
            FrameTruth::Function(e) => Truth::Function(*e),
            _ => Truth::NoFunction,
        };
        let outcome = classify(m.label.entry(), t);
        counts.record(t, outcome);
        if !matches!(truth, FrameTruth::Function(_)) {
            traps += 1;
            trap_false += usize::from(outcome == EvalOutcome::DetectedFunctionFalse);
        }
    }
    let accuracy = Ratio::new(counts.correct(), counts.total());
    ensure!(counts.total() == 200, "{} frames classified", counts.total());
    ensure!(accuracy.tenths() >= 950, "accuracy {accuracy} ({counts:?})");
    ensure!(trap_false * 50 <= traps, "{trap_false}/{traps} NoFunction frames detected a function");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "accuracy {accuracy}, {trap_false}/{traps} false detections, {} wrong, {} missed",
        counts.wrong_function, counts.no_function_miss
    ))
}

fn describe(a: &Annotation) -> String {
    let t = a.t_start.clock();
    match &a.body {
        AnnotationBody::Navigation { mechanism, from, to } => {
            let m = match mechanism {
                NavMechanism::DoubleClick => "double_click",
                NavMechanism::XrefClick => "xref_click",
                NavMechanism::Search => "search",
            };
            format!("{t} Navigation {m} {} -> {to}", from.map_or("-".to_string(), |f| f.to_string()))
        }
        AnnotationBody::FunctionView { entry, display_name } => {
            format!("{t} FunctionView {entry} {display_name} until {}", a.t_end.map_or("-".into(), |e| e.clock()))
        }
        AnnotationBody::FeatureUse { feature, text } => format!("{t} FeatureUse {} {text:?}", feature.label()),
        AnnotationBody::Rename { scope, old, new } => {
            let s = match scope {
                RenameScope::Function => "function".to_string(),
                RenameScope::Global => "global".to_string(),
                RenameScope::Local { function } => format!("local@{function}"),
            };
            format!("{t} Rename {s} {old} -> {new}")
        }
        other => format!("{t} {:?}", other.kind()),
    }
}

fn rename_causality() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_demo_bundle(dir.path()).map_err(|e| e.to_string())?;
    let out = run_pipeline(&PipelineConfig::new(dir.path(), "mock")).map_err(|e| e.to_string())?;

    let expected = [
        "14:37:48 Navigation double_click - -> 0x10ed40",
        "14:37:48 FunctionView 0x10ed40 FUN_0010ed40 until 14:40:25",
        "14:37:57 FeatureUse Rename Function \"main\"",
        "14:37:57 Rename function FUN_0010ed40 -> main",
        "14:39:54 FeatureUse Edit Label \"keyplus0x1000\"",
        "14:39:54 Rename global DAT_00288bb -> keyplus0x1000",
        "14:40:13 Navigation xref_click 0x10ed40 -> 0x1a3a20",
        "14:40:15 FeatureUse References to \"\"",
        "14:40:26 FunctionView 0x1a3a20 FUN_001a3a20 until 14:40:40",
        "14:40:28 FeatureUse Rename Local Variable \"license key\"",
        "14:40:28 Rename local@0x1a3a20 bVar8 -> license key",
    ];
    let got: Vec<String> = out.annotations.iter().map(describe).collect();
    ensure!(got == expected, "annotation stream differs:\n{}", got.join("\n"));
    ensure!(
        out.annotations.iter().all(|a| a.status == retrace_core::annotate::Status::Suggested),
        "auto annotations must start as suggested"
    );

    let rename = out
        .timeline
        .renames()
        .iter()
        .find(|ev| ev.new_name == "main")
        .ok_or("no RenameEvent for main")?;
    let (mut before, mut after) = (0, 0);
    for l in &out.labels {
        let FunctionLabel::Function { entry, via_symbol, .. } = &l.label else { continue };
        if *entry != demo::MAIN {
            continue;
        }
        if l.t < rename.t {
            ensure!(via_symbol != "main", "frame {} matched under main before the rename", l.frame_index);
            before += 1;
        } else if via_symbol == "main" {
            after += 1;
        }
    }
    let main_after = out
        .labels
        .iter()
        .filter(|l| l.t >= rename.t && l.label.entry() == Some(demo::MAIN))
        .count();
    ensure!(before > 0 && after > 0 && after == main_after, "before {before}, after {after}/{main_after}");
    ensure!(out.timeline.base().function_of("main").is_none(), "base index already knows main");
    ensure!(
        out.timeline.at(at(14, 38, 30, 0)).function_of("main") == Some(demo::MAIN),
        "main does not resolve after the rename"
    );
    Ok(format!("11 annotations; {before} frames before, {after} frames matched via main after"))
}

fn consolidation_properties() -> Outcome {
    let mut r = rng(0x1A7E);
    let gaps = [0, 500, 2_000, 5_000, 10_000, 30_000, 120_000];
    for i in 0..1000 {
        let n = r.random_range(0..80);
        let mut t = 0u64;
        let samples: Vec<(Timestamp, Option<Addr>)> = (0..n)
            .map(|_| {
                t += r.random_range(1..5_000);
                let label = r.random_bool(0.75).then(|| Addr(r.random_range(0..4)));
                (Timestamp(t), label)
            })
            .collect();
        for min_interval in [0, 2_000, 5_000] {
            let mut prev = usize::MAX;
            for gap in gaps {
                let ivs = consolidate(&samples, &ConsolidationConfig { min_interval_ms: min_interval, max_gap_ms: gap });
                ensure!(ivs.len() <= prev, "sequence {i}: count rose to {} at max_gap {gap}", ivs.len());
                prev = ivs.len();
                for w in ivs.windows(2) {
                    ensure!(w[0].t_end < w[1].t_start, "sequence {i}: overlapping intervals at max_gap {gap}");
                }
            }
        }
    }
    Ok("1000 sequences x 3 min intervals x 7 gaps".to_string())
}

/// `(correct, visible)` node counts for one screenshot, checking the
/// duplicate pair and the occluded node along the way.
fn score_shot(shot: &CfgShot, tokens: Vec<retrace_core::ocr::OcrToken>, both_duplicates: bool) -> Result<(u64, u64), String> {
    let rects = generic_node_rects(&shot.image);
    let matches = match_blocks(&OcrFrame::new(0, tokens), &rects, &shot.function, DEFAULT_ACCEPT_RATIO);
    let boxes: Vec<_> = matches.iter().map(|m| m.rect.bbox).collect();
    let dups = [shot.duplicate_pair.0, shot.duplicate_pair.1];
    let (mut correct, mut total, mut dup_flags) = (0, 0, 0);
    for m in &matches {
        if let Some((_, b)) = m.block {
            ensure!(!dups.contains(&b) || m.ambiguous, "duplicate block {b} matched without the ambiguity flag");
            dup_flags += usize::from(dups.contains(&b));
        }
    }
    for node in &shot.nodes {
        if node.occluded {
            ensure!(
                !matches.iter().any(|m| m.block.map(|b| b.1) == Some(node.block)),
                "occluded block {} was matched",
                node.block
            );
            continue;
        }
        total += 1;
        let Some(k) = find_rect(&boxes, node.bbox) else { continue };
        if block_correct(matches[k].block.map(|b| b.1), Some(node.block), &shot.function) {
            correct += 1;
        }
    }
    ensure!(!both_duplicates || dup_flags == 2, "{dup_flags}/2 duplicate nodes matched and flagged");
    Ok((correct, total))
}

fn block_matching() -> Outcome {
    let mut r = rng(0xB10C);
    let noise = NoiseConfig {
        char_error_rate: 0.02,
        confusion_rate: 0.05,
        drop_rate: 0.03,
        seed: 11,
    };
    let shots = 60;
    let (mut clean, mut noisy) = ((0, 0), (0, 0));
    for s in 0..shots {
        let shot = paint_cfg(&mut r, 3 + s % 6);
        let (c, t) = score_shot(&shot, shot.tokens.clone(), true).map_err(|e| format!("shot {s}: {e}"))?;
        clean = (clean.0 + c, clean.1 + t);
        let perturbed = noise.perturb_tokens(shot.tokens.clone(), &mut noise.rng_for_frame(s));
        let (c, t) = score_shot(&shot, perturbed, false).map_err(|e| format!("shot {s} with noise: {e}"))?;
        noisy = (noisy.0 + c, noisy.1 + t);
    }
    let (clean, noisy) = (Ratio::new(clean.0, clean.1), Ratio::new(noisy.0, noisy.1));
    ensure!(clean.tenths() >= 900, "block accuracy {clean}");
    ensure!(noisy.tenths() >= 900, "block accuracy with recognition noise {noisy}");
    Ok(format!("{clean} of visible blocks over {shots} screenshots, {noisy} with noise"))
}

fn run(name: &str, f: fn() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    match result {
        Ok(detail) => {
            println!("PASS  {name:<32} {detail} [{elapsed:.2?}]");
            true
        }
        Err(reason) => {
            println!("FAIL  {name:<32} {reason} [{elapsed:.2?}]");
            false
        }
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 8] = [
        ("evaluation-arithmetic", evaluation_arithmetic),
        ("codec-round-trip", codec_round_trip),
        ("string-matching-oracle", string_oracle),
        ("keystroke-aggregation", keystroke_aggregation),
        ("synthetic-matching-corpus", synthetic_corpus),
        ("rename-causality", rename_causality),
        ("interval-consolidation", consolidation_properties),
        ("block-matching", block_matching),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        if !run(name, f) {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
