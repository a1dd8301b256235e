use std::fs;
use std::path::Path;

use log::warn;
use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::config::{ClassifierConfig, Normalization, Pooling, PositionalEncoding};
use super::layers::{
    add_column_sums, attention, attention_backward, gelu, gelu_backward, layer_norm, layer_norm_backward, linear,
    linear_backward, sinusoidal, softmax_rows, NormCache,
};
use super::Sequence;
use crate::error::{Error, Result};
use crate::fusion::ClassPosterior;
use crate::labels::NUM_CLASSES;
use crate::rng::stream_rng;

/// Longest sequence the model accepts; longer inputs are truncated.
pub const MAX_FRAMES: usize = 4096;

const INIT_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy)]
struct LinearIx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIx {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncoderIx {
    q: LinearIx,
    k: LinearIx,
    v: LinearIx,
    o: LinearIx,
    norm1: NormIx,
    norm2: NormIx,
    ff1: LinearIx,
    ff2: LinearIx,
}

#[derive(Debug, Clone)]
struct Layout {
    projection: Option<LinearIx>,
    positions: Option<usize>,
    encoders: Vec<EncoderIx>,
    final_norm: Option<NormIx>,
    query: Option<usize>,
    head1: LinearIx,
    head2: LinearIx,
}

enum Init {
    Xavier,
    Normal(f64),
    Zeros,
    Ones,
    ScaledXavier(f64),
}

#[derive(Default)]
struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols));
        self.inits.push(init);
        self.names.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, init: Init) -> LinearIx {
        LinearIx {
            w: self.add(format!("{name}.weight"), fan_in, fan_out, init),
            b: self.add(format!("{name}.bias"), 1, fan_out, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, width: usize) -> NormIx {
        NormIx {
            gamma: self.add(format!("{name}.gamma"), 1, width, Init::Ones),
            beta: self.add(format!("{name}.beta"), 1, width, Init::Zeros),
        }
    }
}

/// Transformer encoder classifier with a pooled softmax head.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ClassifierConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Array2<f64>>,
}

/// Train-mode dropout masks, or none in evaluation mode.
pub(crate) enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

struct EncoderCache {
    attn_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    heads_out: Array2<f64>,
    drop1: Option<Array2<f64>>,
    norm1: NormCache,
    ffn_in: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ff_tanh: Array2<f64>,
    drop2: Option<Array2<f64>>,
    norm2: NormCache,
}

struct ForwardCache {
    input: Array2<f64>,
    positions: Vec<usize>,
    encoders: Vec<EncoderCache>,
    final_norm: Option<NormCache>,
    encoded: Array2<f64>,
    pool_weights: Option<Array2<f64>>,
    head_in: Array2<f64>,
    head_drop0: Option<Array2<f64>>,
    head_pre: Array2<f64>,
    head_act: Array2<f64>,
    head_tanh: Array2<f64>,
    head_drop1: Option<Array2<f64>>,
    probs: [f64; NUM_CLASSES],
}

fn dropout(x: &mut Array2<f64>, p: f64, mode: &mut Mode<'_>) -> Option<Array2<f64>> {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mask = Array2::from_shape_simple_fn(x.raw_dim(), || if rng.gen::<f64>() < p { 0.0 } else { keep });
            *x *= &mask;
            Some(mask)
        }
        _ => None,
    }
}

fn apply_mask(dy: &Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => dy * m,
        None => dy.clone(),
    }
}

impl Model {
    /// Builds a model with parameters drawn deterministically from `cfg.seed`.
    pub fn init(cfg: &ClassifierConfig) -> Result<Self> {
        cfg.validate()?;
        let width = cfg.model_width();
        let mut b = Builder::default();
        let projection = cfg
            .use_projection
            .then(|| b.linear("input_projection", cfg.input_dim, width, Init::Xavier));
        let positions = (cfg.positional_encoding == PositionalEncoding::Learned)
            .then(|| b.add("positional_embedding".into(), MAX_FRAMES, width, Init::Normal(0.02)));
        let encoders = (0..cfg.num_layers)
            .map(|l| EncoderIx {
                q: b.linear(&format!("encoder{l}.query"), width, width, Init::Xavier),
                k: b.linear(&format!("encoder{l}.key"), width, width, Init::Xavier),
                v: b.linear(&format!("encoder{l}.value"), width, width, Init::Xavier),
                o: b.linear(&format!("encoder{l}.output"), width, width, Init::Xavier),
                norm1: b.norm(&format!("encoder{l}.norm1"), width),
                norm2: b.norm(&format!("encoder{l}.norm2"), width),
                ff1: b.linear(&format!("encoder{l}.ff1"), width, cfg.hidden_dim, Init::Xavier),
                ff2: b.linear(&format!("encoder{l}.ff2"), cfg.hidden_dim, width, Init::Xavier),
            })
            .collect();
        let final_norm = (cfg.normalization == Normalization::PreNorm).then(|| b.norm("final_norm", width));
        let query = (cfg.pooling == Pooling::LearnableAttention)
            .then(|| b.add("pooling_query".into(), 1, width, Init::Normal(0.02)));
        let head1 = b.linear("head.hidden", width, width, Init::Xavier);
        let head2 = b.linear("head.logits", width, NUM_CLASSES, Init::ScaledXavier(0.1));

        let mut rng = stream_rng(cfg.seed, INIT_STREAM);
        let params = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(&(rows, cols), init)| match init {
                Init::Zeros => Array2::zeros((rows, cols)),
                Init::Ones => Array2::ones((rows, cols)),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, *std).expect("positive std");
                    Array2::from_shape_simple_fn((rows, cols), || dist.sample(&mut rng))
                }
                Init::Xavier | Init::ScaledXavier(_) => {
                    let scale = match init {
                        Init::ScaledXavier(s) => *s,
                        _ => 1.0,
                    };
                    let a = (6.0 / (rows + cols) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-a, a);
                    Array2::from_shape_simple_fn((rows, cols), || scale * dist.sample(&mut rng))
                }
            })
            .collect();

        Ok(Model {
            cfg: cfg.clone(),
            layout: Layout {
                projection,
                positions,
                encoders,
                final_norm,
                query,
                head1,
                head2,
            },
            names: b.names,
            params,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    /// Width of the first attention layer.
    pub fn encoder_width(&self) -> usize {
        self.params[self.layout.encoders[0].q.w].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.cfg.input_dim
    }

    pub fn num_tensors(&self) -> usize {
        self.params.len()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Array2::len).sum()
    }

    pub fn tensor_name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn tensor(&self, index: usize) -> &Array2<f64> {
        &self.params[index]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Array2<f64> {
        &mut self.params[index]
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub(crate) fn zero_grads(&self) -> Vec<Array2<f64>> {
        self.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect()
    }

    /// FNV-1a over the bit patterns of every parameter, in layout order.
    pub fn checksum(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for p in &self.params {
            for v in p.iter() {
                for byte in v.to_bits().to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        hash
    }

    fn check_input(&self, seq: &Sequence) -> Result<()> {
        if seq.features.ncols() != self.cfg.input_dim {
            return Err(Error::Argument(format!(
                "sequence has {} features, model expects {}",
                seq.features.ncols(),
                self.cfg.input_dim
            )));
        }
        if seq.mask.len() != seq.features.nrows() {
            return Err(Error::Argument(format!(
                "mask has {} entries for {} frames",
                seq.mask.len(),
                seq.features.nrows()
            )));
        }
        if !seq.mask.iter().take(MAX_FRAMES).any(|&m| m) {
            return Err(Error::Argument("frame mask selects no frames".into()));
        }
        Ok(())
    }

    /// Class posterior in evaluation mode (no dropout).
    pub fn forward(&self, seq: &Sequence) -> Result<ClassPosterior> {
        let cache = self.run(seq, &mut Mode::Eval)?;
        Ok(ClassPosterior(cache.probs))
    }

    /// Log loss of one labelled sequence and its gradient with respect to
    /// every parameter tensor, in evaluation mode.
    pub fn loss_and_gradient(&self, seq: &Sequence, label: usize) -> Result<(f64, Vec<Array2<f64>>)> {
        let mut grads = self.zero_grads();
        let loss = self.accumulate_gradient(seq, label, &mut Mode::Eval, &mut grads)?;
        Ok((loss, grads))
    }

    pub(crate) fn accumulate_gradient(
        &self,
        seq: &Sequence,
        label: usize,
        mode: &mut Mode<'_>,
        grads: &mut [Array2<f64>],
    ) -> Result<f64> {
        if label >= NUM_CLASSES {
            return Err(Error::Argument(format!("label index {label} out of range")));
        }
        let cache = self.run(seq, mode)?;
        let loss = -cache.probs[label].ln();
        self.backward(&cache, label, grads);
        Ok(loss)
    }

    // Masked frames never reach valid outputs (they are excluded as attention
    // keys and from pooling), so the forward pass gathers the valid rows with
    // their original frame positions and runs on those alone.
    fn run(&self, seq: &Sequence, mode: &mut Mode<'_>) -> Result<ForwardCache> {
        self.check_input(seq)?;
        let frames = seq.features.nrows();
        if frames > MAX_FRAMES {
            warn!("sequence of {frames} frames truncated to {MAX_FRAMES}");
        }
        let positions: Vec<usize> = seq
            .mask
            .iter()
            .take(MAX_FRAMES)
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        let input = if positions.len() == frames {
            seq.features.clone()
        } else {
            seq.features.select(Axis(0), &positions)
        };

        let p = &self.params;
        let cfg = &self.cfg;
        let mut h = match self.layout.projection {
            Some(ix) => linear(&input, &p[ix.w], &p[ix.b]),
            None => input.clone(),
        };
        match cfg.positional_encoding {
            PositionalEncoding::Sinusoidal => h += &sinusoidal(&positions, cfg.model_width()),
            PositionalEncoding::Learned => {
                let table = &p[self.layout.positions.expect("learned table")];
                h += &table.select(Axis(0), &positions);
            }
            PositionalEncoding::None => {}
        }

        let mut encoders = Vec::with_capacity(cfg.num_layers);
        for ix in &self.layout.encoders {
            let (out, cache) = self.encoder_forward(ix, h, mode);
            h = out;
            encoders.push(cache);
        }
        let final_norm = self.layout.final_norm.map(|ix| {
            let (y, cache) = layer_norm(&h, &p[ix.gamma], &p[ix.beta]);
            h = y;
            cache
        });
        let encoded = h;

        let (pooled, pool_weights) = match self.layout.query {
            None => (encoded.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0)), None),
            Some(q) => {
                let scale = 1.0 / (cfg.model_width() as f64).sqrt();
                let mut scores = p[q].dot(&encoded.t()) * scale;
                softmax_rows(&mut scores);
                (scores.dot(&encoded), Some(scores))
            }
        };

        let mut head_in = pooled;
        let head_drop0 = dropout(&mut head_in, cfg.dropout, mode);
        let head_pre = linear(&head_in, &p[self.layout.head1.w], &p[self.layout.head1.b]);
        let (mut head_act, head_tanh) = gelu(&head_pre);
        let head_drop1 = dropout(&mut head_act, cfg.dropout, mode);
        let mut logits = linear(&head_act, &p[self.layout.head2.w], &p[self.layout.head2.b]);
        softmax_rows(&mut logits);
        let mut probs = [0.0; NUM_CLASSES];
        for (o, v) in probs.iter_mut().zip(logits.iter()) {
            *o = *v;
        }

        Ok(ForwardCache {
            input,
            positions,
            encoders,
            final_norm,
            encoded,
            pool_weights,
            head_in,
            head_drop0,
            head_pre,
            head_act,
            head_tanh,
            head_drop1,
            probs,
        })
    }

    fn encoder_forward(&self, ix: &EncoderIx, h: Array2<f64>, mode: &mut Mode<'_>) -> (Array2<f64>, EncoderCache) {
        let p = &self.params;
        let pre_norm = self.cfg.normalization == Normalization::PreNorm;

        let (attn_in, pre_cache) = if pre_norm {
            let (a, c) = layer_norm(&h, &p[ix.norm1.gamma], &p[ix.norm1.beta]);
            (a, Some(c))
        } else {
            (h.clone(), None)
        };
        let q = linear(&attn_in, &p[ix.q.w], &p[ix.q.b]);
        let k = linear(&attn_in, &p[ix.k.w], &p[ix.k.b]);
        let v = linear(&attn_in, &p[ix.v.w], &p[ix.v.b]);
        let (heads_out, probs) = attention(&q, &k, &v, self.cfg.num_heads);
        let mut attn_out = linear(&heads_out, &p[ix.o.w], &p[ix.o.b]);
        let drop1 = dropout(&mut attn_out, self.cfg.dropout, mode);
        let residual1 = h + &attn_out;

        let (mid, norm1) = match pre_cache {
            Some(c) => (residual1, c),
            None => layer_norm(&residual1, &p[ix.norm1.gamma], &p[ix.norm1.beta]),
        };

        let (ffn_in, pre_cache2) = if pre_norm {
            let (b, c) = layer_norm(&mid, &p[ix.norm2.gamma], &p[ix.norm2.beta]);
            (b, Some(c))
        } else {
            (mid.clone(), None)
        };
        let ff_pre = linear(&ffn_in, &p[ix.ff1.w], &p[ix.ff1.b]);
        let (ff_act, ff_tanh) = gelu(&ff_pre);
        let mut ff_out = linear(&ff_act, &p[ix.ff2.w], &p[ix.ff2.b]);
        let drop2 = dropout(&mut ff_out, self.cfg.dropout, mode);
        let residual2 = mid + &ff_out;

        let (out, norm2) = match pre_cache2 {
            Some(c) => (residual2, c),
            None => layer_norm(&residual2, &p[ix.norm2.gamma], &p[ix.norm2.beta]),
        };

        (
            out,
            EncoderCache {
                attn_in,
                q,
                k,
                v,
                probs,
                heads_out,
                drop1,
                norm1,
                ffn_in,
                ff_pre,
                ff_act,
                ff_tanh,
                drop2,
                norm2,
            },
        )
    }

    fn backward(&self, cache: &ForwardCache, label: usize, grads: &mut [Array2<f64>]) {
        let p = &self.params;
        let lay = &self.layout;

        let mut dlogits = Array2::zeros((1, NUM_CLASSES));
        for (c, d) in dlogits.iter_mut().enumerate() {
            *d = cache.probs[c] - if c == label { 1.0 } else { 0.0 };
        }
        let (gw, gb) = pair_mut(grads, lay.head2.w, lay.head2.b);
        let dact = linear_backward(&cache.head_act, &p[lay.head2.w], &dlogits, gw, gb);
        let dact = apply_mask(&dact, &cache.head_drop1);
        let dpre = gelu_backward(&cache.head_pre, &cache.head_tanh, &dact);
        let (gw, gb) = pair_mut(grads, lay.head1.w, lay.head1.b);
        let dhead_in = linear_backward(&cache.head_in, &p[lay.head1.w], &dpre, gw, gb);
        let dpooled = apply_mask(&dhead_in, &cache.head_drop0);

        let n = cache.encoded.nrows();
        let mut dh = match (lay.query, &cache.pool_weights) {
            (Some(q), Some(alpha)) => {
                let scale = 1.0 / (self.cfg.model_width() as f64).sqrt();
                // pooled = alpha · H, alpha = softmax(q · Hᵀ · scale)
                let mut dh = alpha.t().dot(&dpooled);
                let dalpha = dpooled.dot(&cache.encoded.t());
                let inner = (&dalpha * alpha).sum();
                let dscores = (dalpha - inner) * alpha * scale;
                dh += &dscores.t().dot(&p[q]);
                grads[q] += &dscores.dot(&cache.encoded);
                dh
            }
            _ => {
                let row = &dpooled / n as f64;
                row.broadcast((n, row.ncols())).expect("broadcast").to_owned()
            }
        };

        if let (Some(ix), Some(c)) = (lay.final_norm, &cache.final_norm) {
            let (gg, gbeta) = pair_mut(grads, ix.gamma, ix.beta);
            dh = layer_norm_backward(c, &p[ix.gamma], &dh, gg, gbeta);
        }

        for (ix, c) in lay.encoders.iter().zip(&cache.encoders).rev() {
            dh = self.encoder_backward(ix, c, dh, grads);
        }

        if let Some(pos) = lay.positions {
            for (row, &t) in dh.rows().into_iter().zip(&cache.positions) {
                let mut target = grads[pos].row_mut(t);
                target += &row;
            }
        }
        if let Some(ix) = lay.projection {
            let (gw, gb) = pair_mut(grads, ix.w, ix.b);
            ndarray::linalg::general_mat_mul(1.0, &cache.input.t(), &dh, 1.0, gw);
            add_column_sums(gb, &dh);
        }
    }

    fn encoder_backward(
        &self,
        ix: &EncoderIx,
        c: &EncoderCache,
        dout: Array2<f64>,
        grads: &mut [Array2<f64>],
    ) -> Array2<f64> {
        let p = &self.params;
        let pre_norm = self.cfg.normalization == Normalization::PreNorm;

        // residual2 = mid + dropout(ffn(ffn_in)); out = residual2 or LN(residual2)
        let dresidual2 = if pre_norm {
            dout
        } else {
            let (gg, gb) = pair_mut(grads, ix.norm2.gamma, ix.norm2.beta);
            layer_norm_backward(&c.norm2, &p[ix.norm2.gamma], &dout, gg, gb)
        };
        let dff_out = apply_mask(&dresidual2, &c.drop2);
        let (gw, gb) = pair_mut(grads, ix.ff2.w, ix.ff2.b);
        let dff_act = linear_backward(&c.ff_act, &p[ix.ff2.w], &dff_out, gw, gb);
        let dff_pre = gelu_backward(&c.ff_pre, &c.ff_tanh, &dff_act);
        let (gw, gb) = pair_mut(grads, ix.ff1.w, ix.ff1.b);
        let dffn_in = linear_backward(&c.ffn_in, &p[ix.ff1.w], &dff_pre, gw, gb);
        let dmid = if pre_norm {
            let (gg, gb) = pair_mut(grads, ix.norm2.gamma, ix.norm2.beta);
            dresidual2 + &layer_norm_backward(&c.norm2, &p[ix.norm2.gamma], &dffn_in, gg, gb)
        } else {
            dresidual2 + &dffn_in
        };

        // residual1 = h + dropout(attn(attn_in)); mid = residual1 or LN(residual1)
        let dresidual1 = if pre_norm {
            dmid
        } else {
            let (gg, gb) = pair_mut(grads, ix.norm1.gamma, ix.norm1.beta);
            layer_norm_backward(&c.norm1, &p[ix.norm1.gamma], &dmid, gg, gb)
        };
        let dattn_out = apply_mask(&dresidual1, &c.drop1);
        let (gw, gb) = pair_mut(grads, ix.o.w, ix.o.b);
        let dheads = linear_backward(&c.heads_out, &p[ix.o.w], &dattn_out, gw, gb);
        let (dq, dk, dv) = attention_backward(&c.q, &c.k, &c.v, &c.probs, &dheads);
        let mut dattn_in = {
            let (gw, gb) = pair_mut(grads, ix.q.w, ix.q.b);
            linear_backward(&c.attn_in, &p[ix.q.w], &dq, gw, gb)
        };
        let (gw, gb) = pair_mut(grads, ix.k.w, ix.k.b);
        dattn_in += &linear_backward(&c.attn_in, &p[ix.k.w], &dk, gw, gb);
        let (gw, gb) = pair_mut(grads, ix.v.w, ix.v.b);
        dattn_in += &linear_backward(&c.attn_in, &p[ix.v.w], &dv, gw, gb);

        if pre_norm {
            let (gg, gb) = pair_mut(grads, ix.norm1.gamma, ix.norm1.beta);
            dresidual1 + &layer_norm_backward(&c.norm1, &p[ix.norm1.gamma], &dattn_in, gg, gb)
        } else {
            dresidual1 + &dattn_in
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            tensors: self
                .names
                .iter()
                .zip(&self.params)
                .map(|(name, t)| TensorRecord {
                    name: name.clone(),
                    rows: t.nrows(),
                    cols: t.ncols(),
                    data: t.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut model = Model::init(&ckpt.config)?;
        if ckpt.tensors.len() != model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, config implies {}",
                ckpt.tensors.len(),
                model.params.len()
            )));
        }
        for (i, rec) in ckpt.tensors.into_iter().enumerate() {
            let expected = model.params[i].dim();
            if rec.name != model.names[i] || (rec.rows, rec.cols) != expected {
                return Err(Error::Format(format!(
                    "tensor {i}: found {} {}×{}, expected {} {}×{}",
                    rec.name, rec.rows, rec.cols, model.names[i], expected.0, expected.1
                )));
            }
            model.params[i] = Array2::from_shape_vec(expected, rec.data)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_checkpoint())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

fn pair_mut(grads: &mut [Array2<f64>], a: usize, b: usize) -> (&mut Array2<f64>, &mut Array2<f64>) {
    assert!(a < b, "weight tensors precede their biases");
    let (lo, hi) = grads.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

pub const CHECKPOINT_FORMAT: &str = "mmfuse-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Serialized model: configuration plus every parameter tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ClassifierConfig,
    pub tensors: Vec<TensorRecord>,
}
