use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::ClassPosterior;
use crate::labels::{Label, NUM_CLASSES};

pub const PROB_CLIP: f64 = 1e-15;

/// Mean negative log probability of the true class, with probabilities
/// clipped to `[1e-15, 1 − 1e-15]`.
pub fn log_loss(posteriors: &[ClassPosterior], labels: &[Label]) -> Result<f64> {
    check_lengths(posteriors.len(), labels.len())?;
    let mut total = 0.0;
    for (p, y) in posteriors.iter().zip(labels) {
        p.check()?;
        total -= p.0[y.index()].clamp(PROB_CLIP, 1.0 - PROB_CLIP).ln();
    }
    Ok(total / labels.len() as f64)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Argument(format!("{a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(Error::Argument("metrics need at least one example".into()));
    }
    Ok(())
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_matrix(predictions: &[Label], labels: &[Label]) -> Result<[[usize; NUM_CLASSES]; NUM_CLASSES]> {
    check_lengths(predictions.len(), labels.len())?;
    let mut m = [[0; NUM_CLASSES]; NUM_CLASSES];
    for (p, y) in predictions.iter().zip(labels) {
        m[y.index()][p.index()] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Breakdown {
    pub per_class: [f64; NUM_CLASSES],
    pub macro_f1: f64,
    /// Classes that occur in neither predictions nor labels.
    pub absent: Vec<Label>,
}

/// Per-class F1 and their unweighted mean. A class absent from both
/// predictions and labels scores 0 and triggers a warning.
pub fn f1_breakdown(predictions: &[Label], labels: &[Label]) -> Result<F1Breakdown> {
    let m = confusion_matrix(predictions, labels)?;
    let mut per_class = [0.0; NUM_CLASSES];
    let mut absent = Vec::new();
    for c in 0..NUM_CLASSES {
        let tp = m[c][c];
        let actual: usize = m[c].iter().sum();
        let predicted: usize = m.iter().map(|row| row[c]).sum();
        if actual + predicted == 0 {
            absent.push(Label::ALL[c]);
            continue;
        }
        per_class[c] = 2.0 * tp as f64 / (actual + predicted) as f64;
    }
    if !absent.is_empty() {
        warn!("classes {absent:?} absent from predictions and labels; scored as F1 = 0");
    }
    let macro_f1 = per_class.iter().sum::<f64>() / NUM_CLASSES as f64;
    Ok(F1Breakdown {
        per_class,
        macro_f1,
        absent,
    })
}

pub fn macro_f1(predictions: &[Label], labels: &[Label]) -> Result<f64> {
    Ok(f1_breakdown(predictions, labels)?.macro_f1)
}

/// Argmax predictions of a batch of posteriors.
pub fn predictions(posteriors: &[ClassPosterior]) -> Vec<Label> {
    posteriors.iter().map(|p| Label::ALL[p.argmax()]).collect()
}
