//! Early fusion of frame-level acoustic features with time-aligned token
//! embeddings, and late fusion of class posteriors.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::alignment::FrameSpan;
use crate::error::{Error, Result};
use crate::labels::NUM_CLASSES;

/// Acoustic frames concatenated with the embedding of the token covering
/// each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSequence {
    /// `T × (audio_dim + text_dim)`.
    pub matrix: Array2<f32>,
    pub audio_dim: usize,
    pub text_dim: usize,
    /// Frame lies inside some token span.
    pub text_valid_mask: Vec<bool>,
    /// Frame carries audio content (all true for a single recording; batch
    /// padding marks the rest false).
    pub frame_valid_mask: Vec<bool>,
}

impl FusedSequence {
    pub fn frames(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn width(&self) -> usize {
        self.audio_dim + self.text_dim
    }
}

/// Broadcasts each token embedding over its frame span. Frames covered by no
/// span get a zero text block.
pub fn build_fused(
    acoustic: ArrayView2<f32>,
    token_embs: ArrayView2<f32>,
    spans: &[FrameSpan],
) -> Result<FusedSequence> {
    let (frames, audio_dim) = acoustic.dim();
    let (tokens, text_dim) = token_embs.dim();
    if tokens != spans.len() {
        return Err(Error::Argument(format!(
            "{tokens} token embeddings but {} spans",
            spans.len()
        )));
    }
    let mut prev_end = 0;
    for (k, span) in spans.iter().enumerate() {
        if span.end > frames || span.start > span.end {
            return Err(Error::Argument(format!(
                "span {k} {span:?} lies outside [0, {frames})"
            )));
        }
        if span.start < prev_end {
            return Err(Error::Argument(format!(
                "span {k} {span:?} overlaps or precedes the previous span"
            )));
        }
        if !span.is_empty() {
            prev_end = span.end;
        }
    }

    let mut matrix = Array2::<f32>::zeros((frames, audio_dim + text_dim));
    matrix.slice_mut(s![.., ..audio_dim]).assign(&acoustic);
    let mut text_valid_mask = vec![false; frames];
    for (k, span) in spans.iter().enumerate() {
        if span.is_empty() {
            continue;
        }
        let emb = token_embs.row(k);
        let mut block = matrix.slice_mut(s![span.start..span.end, audio_dim..]);
        for mut row in block.rows_mut() {
            row.assign(&emb);
        }
        text_valid_mask[span.start..span.end].fill(true);
    }
    Ok(FusedSequence {
        matrix,
        audio_dim,
        text_dim,
        text_valid_mask,
        frame_valid_mask: vec![true; frames],
    })
}

/// Probability vector over (CN, MCI, ADRD).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPosterior(pub [f64; NUM_CLASSES]);

impl ClassPosterior {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(p: [f64; NUM_CLASSES]) -> Result<Self> {
        let post = ClassPosterior(p);
        post.check()?;
        Ok(post)
    }

    pub fn uniform() -> Self {
        ClassPosterior([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    pub fn check(&self) -> Result<()> {
        let sum: f64 = self.0.iter().sum();
        if self.0.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Argument(format!("not a probability vector: {:?}", self.0)));
        }
        Ok(())
    }

    /// Most probable class; ties resolve to the lower class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn probs(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }
}

/// Equal-weight average of two posteriors.
pub fn late_fuse(a: &ClassPosterior, b: &ClassPosterior) -> Result<ClassPosterior> {
    a.check()?;
    b.check()?;
    let mut out = [0.0; NUM_CLASSES];
    for (o, (x, y)) in out.iter_mut().zip(a.0.iter().zip(&b.0)) {
        *o = (x + y) / 2.0;
    }
    Ok(ClassPosterior(out))
}
