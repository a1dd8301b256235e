use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::labels::Label;
use crate::rng::stream_rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream_rng(seed, 99);
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn tiny_config(input_dim: usize) -> ClassifierConfig {
    ClassifierConfig {
        input_dim,
        use_projection: false,
        projection_dim: 8,
        num_layers: 1,
        num_heads: 1,
        hidden_dim: 8,
        dropout: 0.0,
        weight_decay: 0.0,
        learning_rate: 1e-2,
        batch_size: 4,
        pooling: Pooling::MaskWeightedMean,
        positional_encoding: PositionalEncoding::Sinusoidal,
        normalization: Normalization::PreNorm,
        lr_schedule: LrSchedule::Constant,
        max_epochs: 20,
        patience: 5,
        seed: 11,
    }
}

/// Max relative error between analytic and central-difference gradients over
/// every coordinate of every tensor.
fn gradient_error(model: &Model, seq: &Sequence, label: usize) -> f64 {
    let (_, grads) = model.loss_and_gradient(seq, label).unwrap();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for t in 0..model.num_tensors() {
        for idx in 0..model.tensor(t).len() {
            let (r, c) = (idx / model.tensor(t).ncols(), idx % model.tensor(t).ncols());
            // learned position rows beyond the sequence get no gradient
            if model.tensor_name(t) == "positional_embedding" && r >= seq.features.nrows() {
                continue;
            }
            let orig = probe.tensor(t)[[r, c]];
            probe.tensor_mut(t)[[r, c]] = orig + eps;
            let up = probe.loss_and_gradient(seq, label).unwrap().0;
            probe.tensor_mut(t)[[r, c]] = orig - eps;
            let down = probe.loss_and_gradient(seq, label).unwrap().0;
            probe.tensor_mut(t)[[r, c]] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads[t][[r, c]];
            let err = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences_across_architectures() {
    let variants: Vec<Box<dyn Fn(&mut ClassifierConfig)>> = vec![
        Box::new(|_| {}),
        Box::new(|c| c.normalization = Normalization::PostNorm),
        Box::new(|c| c.pooling = Pooling::LearnableAttention),
        Box::new(|c| {
            c.positional_encoding = PositionalEncoding::Learned;
            c.use_projection = true;
            c.projection_dim = 6;
            c.num_heads = 2;
            c.num_layers = 2;
        }),
    ];
    for (i, tweak) in variants.iter().enumerate() {
        let mut cfg = tiny_config(8);
        tweak(&mut cfg);
        let model = Model::init(&cfg).unwrap();
        let seq = Sequence::with_mask(random_matrix(4, 8, i as u64), vec![true, false, true, true]);
        let err = gradient_error(&model, &seq, i % 3);
        assert!(err < 1e-4, "variant {i}: relative error {err}");
    }
}

#[test]
fn identical_configs_give_identical_parameters() {
    let cfg = ClassifierConfig::new(24);
    let a = Model::init(&cfg).unwrap();
    let b = Model::init(&cfg).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(a.checksum(), Model::init(&other).unwrap().checksum());
}

#[test]
fn width_without_projection_is_input_width() {
    let mut cfg = ClassifierConfig::new(1536);
    cfg.use_projection = false;
    cfg.num_layers = 1;
    cfg.hidden_dim = 8;
    assert_eq!(Model::init(&cfg).unwrap().encoder_width(), 1536);
    cfg.num_heads = 5;
    cfg.input_dim = 768;
    assert!(matches!(Model::init(&cfg), Err(crate::Error::Config(_))));
}

#[test]
fn posterior_is_normalized_and_mask_is_required() {
    let model = Model::init(&ClassifierConfig::new(6)).unwrap();
    let seq = Sequence::new(random_matrix(9, 6, 3));
    let p = model.forward(&seq).unwrap();
    assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    let none = Sequence::with_mask(random_matrix(3, 6, 3), vec![false; 3]);
    assert!(model.forward(&none).is_err());
    let wrong_width = Sequence::new(random_matrix(3, 5, 3));
    assert!(model.forward(&wrong_width).is_err());
}

#[test]
fn masked_padding_does_not_change_the_posterior() {
    for pooling in [Pooling::MaskWeightedMean, Pooling::LearnableAttention] {
        let mut cfg = ClassifierConfig::new(6);
        cfg.pooling = pooling;
        let model = Model::init(&cfg).unwrap();
        let x = random_matrix(7, 6, 4);
        let base = model.forward(&Sequence::new(x.clone())).unwrap();
        let padded = concatenate![Axis(0), x, Array2::zeros((5, 6))];
        let mut mask = vec![true; 7];
        mask.extend([false; 5]);
        let p = model.forward(&Sequence::with_mask(padded, mask)).unwrap();
        assert_eq!(p, base);
    }
}

#[test]
fn duplicating_frames_keeps_the_mean_pooled_posterior() {
    let mut cfg = ClassifierConfig::new(6);
    cfg.positional_encoding = PositionalEncoding::None;
    let model = Model::init(&cfg).unwrap();
    let x = random_matrix(5, 6, 5);
    let doubled = Array2::from_shape_fn((10, 6), |(r, c)| x[[r / 2, c]]);
    let a = model.forward(&Sequence::new(x)).unwrap();
    let b = model.forward(&Sequence::new(doubled)).unwrap();
    for (u, v) in a.0.iter().zip(&b.0) {
        assert!((u - v).abs() < 1e-9, "{a:?} vs {b:?}");
    }
}

fn labelled(n: usize, seed: u64, separation: f64) -> Vec<LabeledSequence> {
    let mut rng = stream_rng(seed, 5);
    (0..n)
        .map(|i| {
            let label = Label::ALL[i % 3];
            let mut x = random_matrix(6, 4, seed * 1000 + i as u64) * 0.5;
            x.column_mut(label.index()).mapv_inplace(|v| v + separation);
            let _: f64 = rng.gen();
            LabeledSequence {
                sequence: Sequence::new(x),
                label,
            }
        })
        .collect()
}

#[test]
fn untrained_loss_is_near_uniform() {
    let data = labelled(60, 1, 1.0);
    let refs: Vec<&LabeledSequence> = data.iter().collect();
    for seed in 0..5 {
        let mut cfg = ClassifierConfig::new(4);
        cfg.seed = seed;
        let model = Model::init(&cfg).unwrap();
        let loss = log_loss_of(&model, &refs).unwrap();
        assert!((loss - 3f64.ln()).abs() < 0.15, "seed {seed}: {loss}");
    }
}

#[test]
fn training_is_deterministic_and_learns() {
    let train_data = labelled(48, 2, 2.0);
    let val_data = labelled(24, 3, 2.0);
    let tr: Vec<&LabeledSequence> = train_data.iter().collect();
    let va: Vec<&LabeledSequence> = val_data.iter().collect();
    let mut cfg = tiny_config(4);
    cfg.dropout = 0.1;
    cfg.hidden_dim = 16;
    cfg.use_projection = true;
    cfg.projection_dim = 8;
    cfg.num_heads = 2;
    cfg.max_epochs = 30;
    let (m1, h1) = train(Model::init(&cfg).unwrap(), &tr, &va).unwrap();
    let (m2, h2) = train(Model::init(&cfg).unwrap(), &tr, &va).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(m1.checksum(), m2.checksum());
    assert!(h1.best_val_loss() < 0.3, "{h1:?}");
    assert!(h1.stopped_epoch - h1.best_epoch <= cfg.patience);
    assert_eq!(h1.val_loss.len(), h1.stopped_epoch);
    let min = h1.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(h1.best_val_loss(), min);
    // the returned parameters are those of the best epoch
    assert!((log_loss_of(&m1, &va).unwrap() - min).abs() < 1e-12);
}

#[test]
fn early_stopping_respects_patience() {
    // labels independent of inputs: validation loss stops improving quickly
    let mut train_data = labelled(30, 4, 0.0);
    for (i, ex) in train_data.iter_mut().enumerate() {
        ex.label = Label::ALL[(i * 7 / 3) % 3];
    }
    let val_data = labelled(15, 5, 0.0);
    let tr: Vec<&LabeledSequence> = train_data.iter().collect();
    let va: Vec<&LabeledSequence> = val_data.iter().collect();
    let mut cfg = tiny_config(4);
    cfg.learning_rate = 3e-2;
    cfg.max_epochs = 200;
    cfg.patience = 3;
    let (_, h) = train(Model::init(&cfg).unwrap(), &tr, &va).unwrap();
    assert!(h.stopped_epoch < 200);
    assert_eq!(h.stopped_epoch - h.best_epoch, 3);
}

#[test]
fn divergence_is_reported_with_epoch() {
    let data = labelled(12, 6, 1.0);
    let refs: Vec<&LabeledSequence> = data.iter().collect();
    let mut cfg = tiny_config(4);
    cfg.learning_rate = 1e300;
    let err = train(Model::init(&cfg).unwrap(), &refs, &refs).unwrap_err();
    assert!(matches!(err, crate::Error::Divergence { epoch: 1 | 2 }), "{err}");
}

#[test]
fn batch_of_one_matches_batched_prediction() {
    let data = labelled(10, 7, 1.0);
    let model = Model::init(&ClassifierConfig::new(4)).unwrap();
    let all = predict(&model, data.iter().map(|d| &d.sequence)).unwrap();
    for (i, d) in data.iter().enumerate() {
        let single = predict(&model, [&d.sequence]).unwrap();
        for (a, b) in single[0].0.iter().zip(&all[i].0) {
            assert!((a - b).abs() < 1e-5);
        }
    }
    assert_eq!(all, predict(&model, data.iter().map(|d| &d.sequence)).unwrap());
}

#[test]
fn checkpoint_round_trip() {
    let mut cfg = ClassifierConfig::new(5);
    cfg.pooling = Pooling::LearnableAttention;
    cfg.positional_encoding = PositionalEncoding::Learned;
    cfg.projection_dim = 8;
    let model = Model::init(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back.checksum(), model.checksum());
    assert_eq!(back.config(), model.config());

    let mut ckpt = model.to_checkpoint();
    ckpt.tensors.pop();
    assert!(Model::from_checkpoint(ckpt).is_err());
}
