//! Forward and backward passes of the building blocks. Matrices hold one
//! sequence position per row.

use ndarray::{s, Array1, Array2, Axis, Zip};

pub(crate) const LN_EPS: f64 = 1e-5;

/// `x · w + b`, with `b` a `1 × out` row.
pub(crate) fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Adds the column sums of `m` to the `1 × n` row `acc`.
pub(crate) fn add_column_sums(acc: &mut Array2<f64>, m: &Array2<f64>) {
    let n = m.ncols();
    match (acc.as_slice_mut(), m.as_slice()) {
        (Some(a), Some(rows)) if n > 0 => {
            for row in rows.chunks_exact(n) {
                a.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
            }
        }
        _ => *acc += &m.sum_axis(Axis(0)).insert_axis(Axis(0)),
    }
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub(crate) fn linear_backward(
    x: &Array2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    gw: &mut Array2<f64>,
    gb: &mut Array2<f64>,
) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, gw);
    add_column_sums(gb, dy);
    dy.dot(&w.t())
}

pub(crate) struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, gamma: &Array2<f64>, beta: &Array2<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *is = 1.0 / (var + LN_EPS).sqrt();
        row *= *is;
    }
    let mut y = &xhat * gamma;
    y += beta;
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    cache: &NormCache,
    gamma: &Array2<f64>,
    dy: &Array2<f64>,
    ggamma: &mut Array2<f64>,
    gbeta: &mut Array2<f64>,
) -> Array2<f64> {
    add_column_sums(ggamma, &(dy * &cache.xhat));
    add_column_sums(gbeta, dy);
    let dxhat = dy * gamma;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, g), xh), &is) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        Zip::from(&mut out)
            .and(&g)
            .and(&xh)
            .for_each(|o, &gi, &xi| *o = is * (gi - mean_g - xi * mean_gx));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// `1/k!` for `k = 0..=13`.
const INV_FACT: [f64; 14] = [
    1.0,
    1.0,
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5_040.0,
    1.0 / 40_320.0,
    1.0 / 362_880.0,
    1.0 / 3_628_800.0,
    1.0 / 39_916_800.0,
    1.0 / 479_001_600.0,
    1.0 / 6_227_020_800.0,
];

/// `e^x` within a few ulp for `x ≤ 709`, with no library call so loops over
/// it vectorize. Arguments below −708 give 0.
#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_164_9e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_0e-10;
    // adding 1.5·2⁵² rounds to the nearest integer
    const ROUND: f64 = 6_755_399_441_055_744.0;
    let xc = x.clamp(-708.0, 709.0);
    let t = xc * std::f64::consts::LOG2_E + ROUND;
    let n = t - ROUND;
    let r = (xc - n * LN2_HI) - n * LN2_LO;
    // Taylor series of e^r, |r| ≤ ln2/2
    let mut p = INV_FACT[13];
    for c in INV_FACT[..13].iter().rev() {
        p = p * r + c;
    }
    // n sits in the low mantissa bits of t; 2ⁿ is built from it directly
    let scale = f64::from_bits(t.to_bits().wrapping_sub(ROUND.to_bits()).wrapping_add(1023) << 52);
    if x < -708.0 {
        0.0
    } else {
        p * scale
    }
}

/// `tanh` through [`exp`]; absolute error within a few ulp of 1.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / (exp(2.0 * x) + 1.0)
}

/// Tanh approximation of GELU. Also returns the tanh term for the backward
/// pass.
pub(crate) fn gelu(x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let t = x.mapv(|v| tanh(GELU_C * (v + 0.044715 * v * v * v)));
    let mut y = x.clone();
    Zip::from(&mut y).and(&t).for_each(|y, &t| *y = 0.5 * *y * (1.0 + t));
    (y, t)
}

pub(crate) fn gelu_backward(x: &Array2<f64>, t: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).and(t).for_each(|d, &v, &t| {
        let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
        *d *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner;
    });
    dx
}

pub(crate) fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        match row.as_slice_mut() {
            Some(r) => {
                let max = r.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                r.iter_mut().for_each(|v| *v = exp(*v - max));
                let inv = 1.0 / r.iter().sum::<f64>();
                r.iter_mut().for_each(|v| *v *= inv);
            }
            None => {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| exp(v - max));
                let sum = row.sum();
                row /= sum;
            }
        }
    }
}

/// Scaled dot-product attention over all rows, split into `heads` heads.
/// Returns the concatenated head outputs and the per-head attention weights.
pub(crate) fn attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    heads: usize,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (t, d) = q.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = &q.slice(cols) * scale;
        let mut scores = qh.dot(&k.slice(cols).t());
        softmax_rows(&mut scores);
        out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    (out, probs)
}

pub(crate) fn attention_backward(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    probs: &[Array2<f64>],
    dout: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let heads = probs.len();
    let d = q.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (h, a) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let doh = dout.slice(cols);
        dv.slice_mut(cols).assign(&a.t().dot(&doh));
        // softmax backward, row by row: ds = scale · a ⊙ (da − ⟨da, a⟩)
        let mut ds = doh.dot(&v.slice(cols).t());
        if !ds.is_standard_layout() {
            ds = ds.as_standard_layout().into_owned();
        }
        let a = a.as_standard_layout();
        let t = ds.ncols();
        let (ds_rows, a_rows) = (ds.as_slice_mut().expect("standard layout"), a.as_slice().expect("standard layout"));
        for (r, ar) in ds_rows.chunks_exact_mut(t).zip(a_rows.chunks_exact(t)) {
            let rd: f64 = r.iter().zip(ar).map(|(x, p)| x * p).sum();
            r.iter_mut().zip(ar).for_each(|(x, &p)| *x = scale * p * (*x - rd));
        }
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}

/// Sinusoidal encodings for the given absolute positions.
pub(crate) fn sinusoidal(positions: &[usize], width: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((positions.len(), width));
    for (mut row, &pos) in pe.rows_mut().into_iter().zip(positions) {
        for i in 0..width {
            let pair = (i / 2) as f64 * 2.0;
            let angle = pos as f64 / 10000f64.powf(pair / width as f64);
            row[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}
