use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::alignment::FrameSpan;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CosineMatrix {
    pub matrix: Array2<f64>,
    /// Rows with zero norm; their similarities are 0 (diagonal included).
    pub zero_rows: Vec<usize>,
}

/// Pairwise cosine similarity between the rows of `frames`.
pub fn cosine_similarity_matrix(frames: ArrayView2<f32>) -> Result<CosineMatrix> {
    let t = frames.nrows();
    if t == 0 {
        return Err(Error::Argument("no frames".into()));
    }
    let x = frames.mapv(f64::from);
    Ok(cosine_of(&x))
}

fn cosine_of(x: &Array2<f64>) -> CosineMatrix {
    let t = x.nrows();
    let mut unit = x.clone();
    let mut zero_rows = Vec::new();
    for (i, mut row) in unit.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            zero_rows.push(i);
        } else {
            row /= norm;
        }
    }
    let mut matrix = unit.dot(&unit.t());
    for i in 0..t {
        for j in 0..i {
            // exact symmetry, and clamp rounding beyond ±1
            let v = matrix[[i, j]].clamp(-1.0, 1.0);
            matrix[[i, j]] = v;
            matrix[[j, i]] = v;
        }
        if !zero_rows.contains(&i) {
            matrix[[i, i]] = 1.0;
        }
    }
    CosineMatrix { matrix, zero_rows }
}

/// Subtracts the per-dimension mean over frames.
pub fn center_frames(frames: ArrayView2<f32>) -> Array2<f64> {
    let x = frames.mapv(f64::from);
    match x.mean_axis(Axis(0)) {
        Some(mean) => x - &mean,
        None => x,
    }
}

/// Cosine similarity of frames after per-recording mean-centering, as used
/// by [`probe_layer`].
pub fn centered_cosine_matrix(frames: ArrayView2<f32>) -> Result<CosineMatrix> {
    if frames.nrows() == 0 {
        return Err(Error::Argument("no frames".into()));
    }
    Ok(cosine_of(&center_frames(frames)))
}

/// Mean similarity over ordered pairs of distinct frames that share a
/// token span. `None` when no span covers two frames.
pub fn within_token_similarity(sim: &Array2<f64>, spans: &[FrameSpan]) -> Option<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for span in spans {
        for i in span.start..span.end {
            for j in span.start..span.end {
                if i != j {
                    total += sim[[i, j]];
                    pairs += 1;
                }
            }
        }
    }
    (pairs > 0).then(|| total / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProbe {
    pub layer: u8,
    /// Per-recording within-token similarity, in dataset order, for
    /// recordings that have a multi-frame token.
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Within-token frame similarity per recording at one layer. Frames are
/// mean-centered per recording first, so a component shared by all frames
/// of a recording does not count as token-level similarity.
pub fn probe_layer(dataset: &Dataset, layer: u8) -> Result<LayerProbe> {
    let mut values = Vec::new();
    for r in &dataset.recordings {
        let sim = centered_cosine_matrix(r.layer(layer)?.view())?;
        if let Some(v) = within_token_similarity(&sim.matrix, &r.token_spans) {
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::Argument("no recording has a token spanning two frames".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(LayerProbe {
        layer,
        values,
        mean,
        std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn orthonormal_rows_give_identity() {
        let m = cosine_similarity_matrix(array![[1.0f32, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].view()).unwrap();
        assert_eq!(m.matrix, Array2::<f64>::eye(3));
    }

    #[test]
    fn repeated_and_opposite_rows() {
        let m = cosine_similarity_matrix(array![[1.0f32, 2.0], [1.0, 2.0], [-1.0, -2.0]].view()).unwrap();
        assert!((m.matrix[[0, 1]] - 1.0).abs() < 1e-12);
        assert!((m.matrix[[0, 2]] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rows_are_flagged() {
        let m = cosine_similarity_matrix(array![[0.0f32, 0.0], [1.0, 0.0]].view()).unwrap();
        assert_eq!(m.zero_rows, vec![0]);
        assert_eq!(m.matrix[[0, 0]], 0.0);
        assert_eq!(m.matrix[[0, 1]], 0.0);
        assert!(cosine_similarity_matrix(Array2::<f32>::zeros((0, 3)).view()).is_err());
    }

    #[test]
    fn within_token_pairs() {
        let sim = array![[1.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 1.0]];
        let spans = [FrameSpan::new(0, 2), FrameSpan::new(2, 3)];
        assert_eq!(within_token_similarity(&sim, &spans), Some(0.5));
        assert_eq!(within_token_similarity(&sim, &[FrameSpan::new(1, 2)]), None);
    }

    proptest! {
        #[test]
        fn symmetric_unit_diagonal_bounded(
            rows in 1usize..8,
            values in prop::collection::vec(-5.0f32..5.0, 8 * 4),
        ) {
            let x = Array2::from_shape_vec((rows, 4), values[..rows * 4].to_vec()).unwrap();
            let m = cosine_similarity_matrix(x.view()).unwrap();
            for i in 0..rows {
                if !m.zero_rows.contains(&i) {
                    prop_assert!((m.matrix[[i, i]] - 1.0).abs() < 1e-6);
                }
                for j in 0..rows {
                    prop_assert_eq!(m.matrix[[i, j]], m.matrix[[j, i]]);
                    prop_assert!((-1.0..=1.0).contains(&m.matrix[[i, j]]));
                }
            }
        }
    }
}
