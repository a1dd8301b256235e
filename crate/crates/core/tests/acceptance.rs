//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Pass criterion names as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- metric gradient`.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use mmfuse_core::alignment::{allocate_subword_spans, fix_overlaps, word_to_span, FrameSpan, WordTiming};
use mmfuse_core::classifier::{
    ClassifierConfig, LrSchedule, Model, Normalization, Pooling, PositionalEncoding, Sequence,
};
use mmfuse_core::dataset::Dataset;
use mmfuse_core::evaluation::{
    layer_sweep, log_loss, macro_f1, multi_seed_eval, probe_layer, stratified_split, ConfigSet, EvalOptions,
    Partition, Strategy, SweepConfigs, SweepResult, DEFAULT_RATIOS,
};
use mmfuse_core::fusion::{build_fused, ClassPosterior};
use mmfuse_core::rng::stream_rng;
use mmfuse_core::synthgen::{Generator, SynthParams};
use mmfuse_core::{Error, Label};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- alignment

/// Smallest start each word can take after repair; the list is repairable
/// iff the last word still starts inside the recording.
fn repairable(spans: &[FrameSpan], total: usize) -> bool {
    let mut next_free = 0;
    for s in spans {
        let start = s.start.max(next_free);
        if start >= total {
            return false;
        }
        next_free = s.end.max(start + 1);
    }
    true
}

fn random_timings(rng: &mut ChaCha8Rng, total: usize, res: f64) -> Vec<WordTiming> {
    let n = rng.gen_range(1..=(total / 2).clamp(1, 60));
    let limit = total as f64 * res;
    let mut starts: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..limit)).collect();
    starts.sort_by(f64::total_cmp);
    starts
        .into_iter()
        .map(|s| {
            // mostly short words, some long enough to overlap their successors
            let dur = if rng.gen_bool(0.2) {
                rng.gen_range(0.0..limit / 4.0)
            } else {
                rng.gen_range(0.0..0.6)
            };
            WordTiming::new("w", s, s + dur.max(1e-4)).unwrap()
        })
        .collect()
}

fn alignment_properties() -> Verdict {
    let mut rng = stream_rng(2024, 1);
    let started = Instant::now();
    let (mut repaired, mut infeasible) = (0usize, 0usize);
    let mut case = 0;
    while repaired < 10_000 {
        case += 1;
        let total = rng.gen_range(1..=1500);
        let res = 0.02;
        let words = random_timings(&mut rng, total, res);
        let raw: Vec<FrameSpan> = words.iter().map(|w| word_to_span(w, res, total).unwrap()).collect();
        if raw.iter().any(|s| s.is_empty() || s.end > total) {
            return verdict(false, format!("case {case}: word_to_span produced {raw:?}"));
        }
        match fix_overlaps(&raw, total) {
            Ok(fixed) => {
                repaired += 1;
                if fixed.len() != raw.len()
                    || fixed.iter().any(|s| s.start >= s.end || s.end > total)
                    || fixed.windows(2).any(|w| w[0].end > w[1].start)
                {
                    return verdict(false, format!("case {case}: invalid repair {fixed:?}"));
                }
                if fix_overlaps(&fixed, total).unwrap() != fixed {
                    return verdict(false, format!("case {case}: repair is not idempotent"));
                }
            }
            Err(Error::Unrepairable { .. }) if !repairable(&raw, total) => infeasible += 1,
            Err(e) => return verdict(false, format!("case {case}: {e}")),
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        secs < 10.0,
        format!("{repaired} lists repaired and idempotent ({infeasible} unrepairable lists rejected) in {secs:.2}s"),
    )
}

fn subword_allocation() -> Verdict {
    let oracles = [
        ((100, 110), vec![3, 7], vec![(100, 103), (103, 110)]),
        ((0, 8), vec![4, 4], vec![(0, 4), (4, 8)]),
        ((0, 7), vec![1, 1, 1], vec![(0, 2), (2, 5), (5, 7)]),
    ];
    for (span, chars, expected) in &oracles {
        let got = allocate_subword_spans(FrameSpan::new(span.0, span.1), chars).unwrap();
        let got: Vec<(usize, usize)> = got.spans.iter().map(|s| (s.start, s.end)).collect();
        if &got != expected {
            return verdict(false, format!("{span:?} {chars:?}: {got:?}, expected {expected:?}"));
        }
    }
    let mut rng = stream_rng(2024, 2);
    for case in 0..10_000 {
        let start = rng.gen_range(0..1000);
        let len = rng.gen_range(1..40);
        let count = rng.gen_range(1..8);
        let chars: Vec<usize> = (0..count).map(|_| rng.gen_range(1..12)).collect();
        let alloc = allocate_subword_spans(FrameSpan::new(start, start + len), &chars).unwrap();
        let s = &alloc.spans;
        let contiguous = s.len() == count
            && s[0].start == start
            && s[count - 1].end == start + len
            && s.windows(2).all(|w| w[0].end == w[1].start);
        let conserved = s.iter().map(FrameSpan::len).sum::<usize>() == len;
        let widened = len < count || s.iter().all(|x| !x.is_empty());
        if !(contiguous && conserved && widened && alloc.degenerate == (len < count)) {
            return verdict(false, format!("case {case}: [{start},{}) {chars:?} -> {s:?}", start + len));
        }
    }
    verdict(true, "3 worked examples exact; 10000 random cases partition their span")
}

// ------------------------------------------------------------------- fusion

/// Independent per-frame construction of the fused matrix.
fn brute_force_fused(acoustic: &Array2<f32>, tokens: &Array2<f32>, spans: &[FrameSpan]) -> (Array2<f32>, Vec<bool>) {
    let (frames, da) = acoustic.dim();
    let dt = tokens.ncols();
    let mut out = Array2::<f32>::zeros((frames, da + dt));
    let mut mask = vec![false; frames];
    for t in 0..frames {
        for j in 0..da {
            out[[t, j]] = acoustic[[t, j]];
        }
        for (k, span) in spans.iter().enumerate() {
            if span.start <= t && t < span.end {
                for j in 0..dt {
                    out[[t, da + j]] = tokens[[k, j]];
                }
                mask[t] = true;
            }
        }
    }
    (out, mask)
}

fn fusion_exactness() -> Verdict {
    let mut rng = stream_rng(2024, 3);
    for case in 0..2_000 {
        let frames = rng.gen_range(1..40);
        let (da, dt) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let mut spans = Vec::new();
        let mut pos = 0;
        while pos < frames && rng.gen_bool(0.8) {
            let start = pos + rng.gen_range(0..3);
            if start > frames {
                break;
            }
            // empty spans stand for tokens squeezed out by a short word
            let end = (start + rng.gen_range(0..5)).min(frames);
            spans.push(FrameSpan::new(start, end));
            pos = end;
        }
        let acoustic = Array2::from_shape_simple_fn((frames, da), || rng.sample::<f32, _>(StandardNormal));
        let tokens = Array2::from_shape_simple_fn((spans.len(), dt), || rng.sample::<f32, _>(StandardNormal));
        let fused = build_fused(acoustic.view(), tokens.view(), &spans).unwrap();
        let (expected, mask) = brute_force_fused(&acoustic, &tokens, &spans);
        let bits = |m: &Array2<f32>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if fused.matrix.dim() != expected.dim()
            || bits(&fused.matrix) != bits(&expected)
            || fused.text_valid_mask != mask
            || fused.frame_valid_mask != vec![true; frames]
        {
            return verdict(false, format!("case {case}: mismatch for spans {spans:?}"));
        }
    }
    verdict(true, "2000 random cases bit-identical to the per-frame constructor, masks equal")
}

// ------------------------------------------------------------------ metrics

fn labels(ix: &[usize]) -> Vec<Label> {
    ix.iter().map(|&i| Label::from_index(i).unwrap()).collect()
}

fn metric_oracles() -> Verdict {
    let uniform = vec![ClassPosterior::uniform(); 7];
    let ll_uniform = log_loss(&uniform, &labels(&[0, 1, 2, 2, 1, 0, 0])).unwrap();
    let hand = log_loss(
        &[
            ClassPosterior::new([0.5, 0.3, 0.2]).unwrap(),
            ClassPosterior::new([0.1, 0.8, 0.1]).unwrap(),
        ],
        &labels(&[0, 1]),
    )
    .unwrap();
    let mut failures = Vec::new();
    if (ll_uniform - 3f64.ln()).abs() > 1e-9 {
        failures.push(format!("uniform log loss {ll_uniform}"));
    }
    if (hand - 0.458145).abs() > 1e-6 {
        failures.push(format!("hand log loss {hand}"));
    }
    // per-class F1 = 2tp / (2tp + fp + fn), worked by hand from each
    // confusion matrix
    let f1_cases: [(&[usize], &[usize], f64); 5] = [
        (&[0, 0, 1, 2], &[0, 1, 1, 2], (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0),
        (&[0, 1, 2, 0, 1, 2], &[0, 0, 0, 0, 0, 0], 1.0 / 6.0),
        (&[0, 1, 2, 2], &[0, 1, 2, 2], 1.0),
        (&[0, 0, 0, 1, 1, 2], &[0, 0, 1, 1, 2, 2], 59.0 / 90.0),
        (&[0, 1, 0, 1], &[1, 1, 0, 0], 1.0 / 3.0),
    ];
    for (i, (truth, pred, expected)) in f1_cases.iter().enumerate() {
        let got = macro_f1(&labels(pred), &labels(truth)).unwrap();
        if (got - expected).abs() > 1e-6 {
            failures.push(format!("macro F1 case {i}: {got}, expected {expected}"));
        }
    }
    if (macro_f1(&labels(&[0, 1, 1, 2]), &labels(&[0, 0, 1, 2])).unwrap() - 0.7778).abs() > 1e-4 {
        failures.push("macro F1 worked example".into());
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("ln 3 within 1e-9, 0.458145 within 1e-6, {} macro F1 cases", f1_cases.len())
        } else {
            failures.join("; ")
        },
    )
}

// --------------------------------------------------------------- classifier

fn gradient_check() -> Verdict {
    let cfg = ClassifierConfig {
        input_dim: 6,
        use_projection: true,
        projection_dim: 4,
        num_layers: 2,
        num_heads: 2,
        hidden_dim: 8,
        dropout: 0.0,
        weight_decay: 0.0,
        learning_rate: 1e-3,
        batch_size: 1,
        pooling: Pooling::LearnableAttention,
        positional_encoding: PositionalEncoding::Sinusoidal,
        normalization: Normalization::PreNorm,
        lr_schedule: LrSchedule::Constant,
        max_epochs: 1,
        patience: 1,
        seed: 5,
    };
    let mut model = Model::init(&cfg).unwrap();
    let mut rng = stream_rng(2024, 4);
    let x = Array2::from_shape_simple_fn((5, 6), || rng.sample::<f64, _>(StandardNormal));
    let seq = Sequence::with_mask(x, vec![true, true, false, true, true]);
    let label = 2;
    let (_, grads) = model.loss_and_gradient(&seq, label).unwrap();
    let eps = 1e-5;
    let coords = 80;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let t = rng.gen_range(0..model.num_tensors());
        let (rows, cols) = model.tensor(t).dim();
        let (r, c) = (rng.gen_range(0..rows), rng.gen_range(0..cols));
        let orig = model.tensor(t)[[r, c]];
        model.tensor_mut(t)[[r, c]] = orig + eps;
        let up = model.loss_and_gradient(&seq, label).unwrap().0;
        model.tensor_mut(t)[[r, c]] = orig - eps;
        let down = model.loss_and_gradient(&seq, label).unwrap().0;
        model.tensor_mut(t)[[r, c]] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads[t][[r, c]];
        let err = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6);
        worst = worst.max(err);
    }
    verdict(worst <= 1e-3, format!("{coords} coordinates, max relative error {worst:.2e}"))
}

// --------------------------------------------------------------- evaluation

fn split_fidelity() -> Verdict {
    // only demographics matter here, so keep the tensors tiny
    let params = SynthParams {
        n_recordings: 1629,
        frames: 20,
        min_words: 2,
        max_words: 4,
        audio_dim: 2,
        text_dim: 2,
        layers: 1,
        ..SynthParams::default()
    };
    let generator = Generator::new(params).unwrap();
    let mut items = Vec::new();
    let mut counts = [0usize; 3];
    for i in 0..generator.len() {
        let r = generator.recording(i).unwrap();
        counts[r.label.index()] += 1;
        items.push(mmfuse_core::evaluation::SplitItem {
            recording_id: r.recording_id,
            stratum: mmfuse_core::evaluation::StratumKey {
                label: r.label,
                sex: r.sex,
                corpus_id: r.corpus_id,
            },
        });
    }
    if counts != [929, 134, 566] {
        return verdict(false, format!("class counts {counts:?}"));
    }
    let mut strata: BTreeMap<_, Vec<&str>> = BTreeMap::new();
    for it in &items {
        strata.entry(&it.stratum).or_default().push(&it.recording_id);
    }
    let mut worst: f64 = 0.0;
    for seed in 1..=10 {
        let split = stratified_split(&items, DEFAULT_RATIOS, seed).unwrap();
        for ids in strata.values() {
            for (p, ratio) in [Partition::Train, Partition::Validation, Partition::Test].iter().zip(DEFAULT_RATIOS) {
                let n = ids.iter().filter(|id| split.partition(id) == Some(*p)).count();
                worst = worst.max((n as f64 - ratio * ids.len() as f64).abs());
            }
        }
    }
    verdict(
        worst <= 1.0,
        format!(
            "929/134/566 corpus, {} strata, 10 seeds: max deviation {worst:.2} recordings",
            strata.len()
        ),
    )
}

/// Classifier used for the synthetic trend criteria: small enough for the
/// full 12-layer, 10-seed sweep to run on one CPU core.
fn trend_config() -> ClassifierConfig {
    ClassifierConfig {
        input_dim: 0,
        use_projection: true,
        projection_dim: 16,
        num_layers: 1,
        num_heads: 1,
        hidden_dim: 32,
        dropout: 0.1,
        weight_decay: 1e-4,
        learning_rate: 3e-3,
        batch_size: 16,
        pooling: Pooling::MaskWeightedMean,
        positional_encoding: PositionalEncoding::None,
        normalization: Normalization::PreNorm,
        lr_schedule: LrSchedule::Constant,
        max_epochs: 15,
        patience: 4,
        seed: 0,
    }
}

fn trend_corpus() -> Dataset {
    let params = SynthParams {
        n_recordings: 600,
        frames: 150,
        audio_dim: 32,
        text_dim: 32,
        seed: 0,
        ..SynthParams::default()
    };
    let recs = Generator::new(params.clone()).unwrap().generate_all().unwrap();
    Dataset::from_synth(recs, &params).unwrap()
}

fn determinism(ds: &Dataset) -> Verdict {
    let configs = ConfigSet::shared(trend_config());
    let options = EvalOptions::default();
    let run = || multi_seed_eval(&configs, ds, Strategy::EarlyFusion, Some(1), &options).unwrap().to_json().unwrap();
    let (a, b) = (run(), run());
    verdict(
        a == b,
        format!("10-seed early-fusion eval twice: {} bytes, identical = {}", a.len(), a == b),
    )
}

fn mean_f1(r: &SweepResult, s: Strategy, layer: u8) -> f64 {
    r.report(s, Some(layer)).and_then(|x| x.mean_f1).unwrap_or(f64::NAN)
}

fn mean_ll(r: &SweepResult, s: Strategy, layer: u8) -> f64 {
    r.report(s, Some(layer)).and_then(|x| x.mean_log_loss).unwrap_or(f64::NAN)
}

fn ef_trend(r: &SweepResult, secs: f64) -> Verdict {
    let mut detail = Vec::new();
    let mut pass = secs < 1800.0;
    for layer in 1..=4 {
        let best_uni = mean_f1(r, Strategy::AcousticOnly, layer).max(mean_f1(r, Strategy::TextOnly, layer));
        let gain = mean_f1(r, Strategy::EarlyFusion, layer) - best_uni;
        pass &= gain >= 0.03;
        detail.push(format!("L{layer} {gain:+.3}"));
    }
    for layer in [11, 12] {
        let diff = mean_f1(r, Strategy::EarlyFusion, layer) - mean_f1(r, Strategy::AcousticOnly, layer);
        pass &= diff.abs() <= 0.03;
        detail.push(format!("L{layer} EF-A {diff:+.3}"));
    }
    verdict(pass, format!("{}; sweep {:.0}s", detail.join(", "), secs))
}

fn lf_calibration(r: &SweepResult) -> Verdict {
    let mut hits = Vec::new();
    let mut misses = Vec::new();
    for layer in 1..=12u8 {
        let floor = mean_ll(r, Strategy::AcousticOnly, layer).min(mean_ll(r, Strategy::TextOnly, layer));
        let lf = mean_ll(r, Strategy::LateFusion, layer);
        if lf <= floor + 0.01 {
            hits.push(layer);
        } else {
            misses.push(format!("L{layer} {:+.3}", lf - floor));
        }
    }
    let share = hits.len() as f64 / 12.0;
    verdict(
        share >= 0.7,
        format!(
            "{}/12 layers ({:.0}%) within 0.01 of the best unimodal log loss; misses: {}",
            hits.len(),
            share * 100.0,
            if misses.is_empty() { "none".into() } else { misses.join(", ") }
        ),
    )
}

fn cosine_probe(ds: &Dataset) -> Verdict {
    let first = probe_layer(ds, 1).unwrap();
    let last = probe_layer(ds, 12).unwrap();
    let diff = last.mean - first.mean;
    verdict(
        diff > 0.0,
        format!(
            "within-token similarity L1 {:.3} (sd {:.3}), L12 {:.3} (sd {:.3}), difference {diff:+.3}",
            first.mean, first.std, last.mean, last.std
        ),
    )
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut results: Vec<(&str, Verdict)> = Vec::new();

    let quick: [(&str, fn() -> Verdict); 6] = [
        ("alignment_properties", alignment_properties),
        ("subword_allocation", subword_allocation),
        ("fusion_exactness", fusion_exactness),
        ("metric_oracles", metric_oracles),
        ("gradient_check", gradient_check),
        ("split_fidelity", split_fidelity),
    ];
    for (name, check) in quick {
        if wanted(name) {
            results.push((name, check()));
        }
    }

    let corpus_checks = ["determinism", "ef_trend", "lf_calibration", "cosine_probe"];
    if corpus_checks.iter().any(|n| wanted(n)) {
        let ds = trend_corpus();
        if wanted("determinism") {
            results.push(("determinism", determinism(&ds)));
        }
        if wanted("ef_trend") || wanted("lf_calibration") {
            let layers: Vec<u8> = (1..=12).collect();
            let configs = SweepConfigs::shared(ConfigSet::shared(trend_config()));
            let started = Instant::now();
            let sweep = layer_sweep(&ds, &Strategy::ALL, &layers, &configs, &EvalOptions::default()).unwrap();
            let secs = started.elapsed().as_secs_f64();
            eprint!("{}", sweep.table_tsv());
            if wanted("ef_trend") {
                results.push(("ef_trend", ef_trend(&sweep, secs)));
            }
            if wanted("lf_calibration") {
                results.push(("lf_calibration", lf_calibration(&sweep)));
            }
        }
        if wanted("cosine_probe") {
            results.push(("cosine_probe", cosine_probe(&ds)));
        }
    }

    let mut failed = 0;
    for (name, v) in &results {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += !v.pass as usize;
    }
    println!("{} criteria, {failed} failed", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
