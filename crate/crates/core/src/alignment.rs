//! Word timestamps to acoustic frame spans.
//!
//! Conversion uses floor for starts and ceil for ends with a one-frame
//! minimum per word, overlaps are repaired by a forward cascade, and
//! subword tokens split their word's span in proportion to character
//! length using cumulative rounding.
//!
//! # Timing file format
//!
//! UTF-8 text, one word per line, tab separated:
//!
//! ```text
//! word<TAB>start_s<TAB>end_s[<TAB>c1,c2,...]
//! ```
//!
//! The optional fourth column lists the character length of each token the
//! word was split into; when absent the word is a single token whose length
//! is the word's character count. Blank lines and lines starting with `#`
//! are ignored. An empty file is valid and describes a recording with no
//! speech.

use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// Tolerance used when snapping `seconds / resolution` to an integer, so that
/// e.g. `1.5 / 0.02` lands on frame 75 despite binary rounding.
const FRAME_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WordTiming {
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl WordTiming {
    pub fn new(word: impl Into<String>, start_s: f64, end_s: f64) -> Result<Self> {
        let w = WordTiming {
            word: word.into(),
            start_s,
            end_s,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_s.is_finite() && self.end_s.is_finite())
            || self.start_s < 0.0
            || self.start_s >= self.end_s
        {
            return Err(Error::Argument(format!(
                "word {:?} has invalid timing {}–{}",
                self.word, self.start_s, self.end_s
            )));
        }
        Ok(())
    }
}

/// Half-open frame interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameSpan {
    pub start: usize,
    pub end: usize,
}

impl FrameSpan {
    pub fn new(start: usize, end: usize) -> Self {
        FrameSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.start <= frame && frame < self.end
    }
}

/// Seconds per acoustic frame.
pub fn frame_resolution(duration_s: f64, frame_count: usize) -> Result<f64> {
    if !(duration_s > 0.0 && duration_s.is_finite()) || frame_count == 0 {
        return Err(Error::Argument(format!(
            "frame resolution needs positive duration and frame count, got {duration_s}s / {frame_count}"
        )));
    }
    Ok(duration_s / frame_count as f64)
}

fn frames(seconds: f64, res: f64) -> f64 {
    let x = seconds / res;
    let r = x.round();
    if (x - r).abs() < FRAME_SNAP * r.abs().max(1.0) {
        r
    } else {
        x
    }
}

fn floor_frame(seconds: f64, res: f64) -> usize {
    frames(seconds, res).floor().max(0.0) as usize
}

fn ceil_frame(seconds: f64, res: f64) -> usize {
    frames(seconds, res).ceil().max(0.0) as usize
}

pub fn word_to_span(word: &WordTiming, res: f64, total_frames: usize) -> Result<FrameSpan> {
    if !(res > 0.0 && res.is_finite()) {
        return Err(Error::Argument(format!("resolution must be positive, got {res}")));
    }
    word.validate()?;
    let limit_s = total_frames as f64 * res;
    let start = floor_frame(word.start_s, res);
    if start >= total_frames {
        return Err(Error::OutOfRange {
            start_s: word.start_s,
            limit_s,
        });
    }
    let end = ceil_frame(word.end_s, res).max(start + 1).min(total_frames);
    Ok(FrameSpan::new(start, end))
}

/// Makes spans non-overlapping and non-empty while keeping word order.
///
/// Each span's start is clamped to its predecessor's end; a span emptied by
/// the clamp becomes the single frame right after its predecessor, which may
/// in turn push later spans.
pub fn fix_overlaps(spans: &[FrameSpan], total_frames: usize) -> Result<Vec<FrameSpan>> {
    let mut out = Vec::with_capacity(spans.len());
    let mut prev_end = 0usize;
    for (i, span) in spans.iter().enumerate() {
        let start = if i == 0 { span.start } else { span.start.max(prev_end) };
        let end = if span.end > start { span.end } else { start + 1 };
        if start >= total_frames || end > total_frames {
            return Err(Error::Unrepairable {
                words: spans.len(),
                frames: total_frames,
            });
        }
        out.push(FrameSpan::new(start, end));
        prev_end = end;
    }
    Ok(out)
}

/// Result of splitting a word span among its subword tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordAllocation {
    pub spans: Vec<FrameSpan>,
    /// True when the word has fewer frames than tokens, so some spans are
    /// empty (they collapse onto a boundary).
    pub degenerate: bool,
}

pub fn allocate_subword_spans(word_span: FrameSpan, char_lengths: &[usize]) -> Result<SubwordAllocation> {
    if char_lengths.is_empty() {
        return Err(Error::Argument("no subword tokens to allocate".into()));
    }
    if char_lengths.contains(&0) {
        return Err(Error::Argument("subword character lengths must be ≥ 1".into()));
    }
    if word_span.is_empty() {
        return Err(Error::Argument(format!("empty word span {word_span:?}")));
    }
    let len = word_span.len();
    let total: usize = char_lengths.iter().sum();
    let k = char_lengths.len();

    // boundaries[i] .. boundaries[i + 1] is token i, offsets relative to start
    let mut boundaries = Vec::with_capacity(k + 1);
    boundaries.push(0usize);
    let mut cumulative = 0usize;
    for &c in &char_lengths[..k - 1] {
        cumulative += c;
        boundaries.push((len as f64 * cumulative as f64 / total as f64).round() as usize);
    }
    boundaries.push(len);

    let degenerate = len < k;
    if degenerate {
        warn!(
            "span {:?} has {} frames for {} subword tokens; some tokens get no frames",
            word_span, len, k
        );
    } else {
        widen_empty(&mut boundaries);
    }

    let spans = boundaries
        .windows(2)
        .map(|w| FrameSpan::new(word_span.start + w[0], word_span.start + w[1]))
        .collect();
    Ok(SubwordAllocation { spans, degenerate })
}

// Gives every empty piece one frame, taken from the nearest piece with at
// least two frames (the larger one when both sides are equally near). The
// pieces in between shift by one frame and keep their lengths. Requires the
// total length to be at least the number of pieces.
fn widen_empty(boundaries: &mut [usize]) {
    let pieces = boundaries.len() - 1;
    let piece_len = |b: &[usize], i: usize| b[i + 1] - b[i];
    while let Some(empty) = (0..pieces).find(|&i| piece_len(boundaries, i) == 0) {
        let mut donor = None;
        for dist in 1..pieces {
            let left = empty.checked_sub(dist).filter(|&j| piece_len(boundaries, j) >= 2);
            let right = Some(empty + dist).filter(|&j| j < pieces && piece_len(boundaries, j) >= 2);
            donor = match (left, right) {
                (Some(l), Some(r)) => {
                    if piece_len(boundaries, l) > piece_len(boundaries, r) {
                        Some(l)
                    } else {
                        Some(r)
                    }
                }
                (l, r) => l.or(r),
            };
            if donor.is_some() {
                break;
            }
        }
        let Some(donor) = donor else { return };
        if donor > empty {
            for b in &mut boundaries[empty + 1..=donor] {
                *b += 1;
            }
        } else {
            for b in &mut boundaries[donor + 1..=empty] {
                *b -= 1;
            }
        }
    }
}

/// A word together with the character lengths of its tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedWord {
    pub timing: WordTiming,
    pub token_chars: Vec<usize>,
}

impl TimedWord {
    /// A word that is a single token.
    pub fn single(timing: WordTiming) -> Self {
        let chars = timing.word.chars().count().max(1);
        TimedWord {
            timing,
            token_chars: vec![chars],
        }
    }
}

/// Per-token spans for a whole recording, plus bookkeeping for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenAlignment {
    pub word_spans: Vec<FrameSpan>,
    pub token_spans: Vec<FrameSpan>,
    pub degenerate_words: usize,
}

/// Runs word→frame conversion, overlap repair and subword allocation.
pub fn align_tokens(words: &[TimedWord], res: f64, total_frames: usize) -> Result<TokenAlignment> {
    let raw = words
        .iter()
        .map(|w| word_to_span(&w.timing, res, total_frames))
        .collect::<Result<Vec<_>>>()?;
    let word_spans = fix_overlaps(&raw, total_frames)?;
    let mut token_spans = Vec::new();
    let mut degenerate_words = 0;
    for (word, span) in words.iter().zip(&word_spans) {
        let alloc = allocate_subword_spans(*span, &word.token_chars)?;
        degenerate_words += alloc.degenerate as usize;
        token_spans.extend(alloc.spans);
    }
    Ok(TokenAlignment {
        word_spans,
        token_spans,
        degenerate_words,
    })
}

pub fn parse_timing(text: &str) -> Result<Vec<TimedWord>> {
    let mut words = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let ctx = |msg: String| Error::parse("timing file", format!("line {}: {msg}", lineno + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(ctx(format!("expected 3 or 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| ctx(format!("bad number {s:?}")));
        let timing = WordTiming {
            word: fields[0].to_string(),
            start_s: num(fields[1])?,
            end_s: num(fields[2])?,
        };
        timing.validate().map_err(|e| ctx(e.to_string()))?;
        let word = match fields.get(3) {
            None => TimedWord::single(timing),
            Some(list) => {
                let token_chars = list
                    .split(',')
                    .map(|c| c.trim().parse::<usize>().ok().filter(|&n| n >= 1))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| ctx(format!("bad token lengths {list:?}")))?;
                TimedWord {
                    timing,
                    token_chars,
                }
            }
        };
        if let Some(prev) = words.last() {
            let prev: &TimedWord = prev;
            if word.timing.start_s < prev.timing.start_s {
                return Err(ctx("words are not ordered by start time".into()));
            }
        }
        words.push(word);
    }
    Ok(words)
}

pub fn format_timing(words: &[TimedWord]) -> String {
    let mut out = String::new();
    for w in &words[..] {
        let chars: Vec<String> = w.token_chars.iter().map(|c| c.to_string()).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            w.timing.word,
            w.timing.start_s,
            w.timing.end_s,
            chars.join(",")
        ));
    }
    out
}

pub fn read_timing_file(path: impl AsRef<Path>) -> Result<Vec<TimedWord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_timing(&text)
}

pub fn write_timing_file(path: impl AsRef<Path>, words: &[TimedWord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_timing(words)).map_err(|e| Error::io(path, e))
}

/// Tokens with the frame index used in place of their ordinal position.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PositionPlan {
    pub tokens: Vec<String>,
    pub position_index: Vec<usize>,
    pub is_pad: Vec<bool>,
}

impl PositionPlan {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn push(&mut self, token: &str, index: usize, pad: bool) {
        self.tokens.push(token.to_string());
        self.position_index.push(index);
        self.is_pad.push(pad);
    }
}

/// Character length of a subword token, ignoring common continuation and
/// word-boundary markers.
pub fn token_char_len(token: &str) -> usize {
    let stripped = token
        .strip_prefix("##")
        .or_else(|| token.strip_prefix('\u{0120}'))
        .or_else(|| token.strip_prefix('\u{2581}'))
        .unwrap_or(token);
    stripped.chars().count().max(1)
}

fn check_plan_inputs(timings: &[WordTiming], word_tokens: &[Vec<String>], res: f64) -> Result<()> {
    if !(res > 0.0 && res.is_finite()) {
        return Err(Error::Argument(format!("resolution must be positive, got {res}")));
    }
    if timings.len() != word_tokens.len() {
        return Err(Error::Argument(format!(
            "{} words but {} token lists",
            timings.len(),
            word_tokens.len()
        )));
    }
    for (i, (w, toks)) in timings.iter().zip(word_tokens).enumerate() {
        w.validate()?;
        if toks.is_empty() {
            return Err(Error::Argument(format!("word {i} ({:?}) has no tokens", w.word)));
        }
        if i > 0 && w.start_s < timings[i - 1].start_s {
            return Err(Error::Argument("word timings are not ordered".into()));
        }
    }
    Ok(())
}

fn push_word_tokens(plan: &mut PositionPlan, word: &WordTiming, tokens: &[String], res: f64) {
    let lens: Vec<usize> = tokens.iter().map(|t| token_char_len(t)).collect();
    let total: usize = lens.iter().sum();
    let duration = word.end_s - word.start_s;
    let mut before = 0usize;
    for (token, len) in tokens.iter().zip(lens) {
        let start_s = word.start_s + duration * before as f64 / total as f64;
        plan.push(token, floor_frame(start_s, res), false);
        before += len;
    }
}

/// Time-aware positions: each token is indexed by the frame of its start
/// time, with subword start times spread over the word in proportion to
/// character length.
pub fn ta_position_plan(
    timings: &[WordTiming],
    word_tokens: &[Vec<String>],
    res: f64,
) -> Result<PositionPlan> {
    check_plan_inputs(timings, word_tokens, res)?;
    let mut plan = PositionPlan::default();
    for (word, tokens) in timings.iter().zip(word_tokens) {
        push_word_tokens(&mut plan, word, tokens, res);
    }
    Ok(plan)
}

/// Like [`ta_position_plan`], plus one pad token at the onset of every
/// inter-word silence lasting at least one frame.
pub fn ta_pad_position_plan(
    timings: &[WordTiming],
    word_tokens: &[Vec<String>],
    res: f64,
    pad_token: &str,
) -> Result<PositionPlan> {
    check_plan_inputs(timings, word_tokens, res)?;
    let mut plan = PositionPlan::default();
    for (i, (word, tokens)) in timings.iter().zip(word_tokens).enumerate() {
        if i > 0 {
            let prev = &timings[i - 1];
            let gap = frames(word.start_s - prev.end_s, res);
            if gap >= 1.0 {
                plan.push(pad_token, floor_frame(prev.end_s, res), true);
            }
        }
        push_word_tokens(&mut plan, word, tokens, res);
    }
    Ok(plan)
}
