use ndarray::{Array2, ArrayViewMut1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{softmax, Network};
use crate::error::{Error, Result};
use crate::tensor::{LabeledExample, Shape};

/// Minibatch SGD settings for softmax cross-entropy training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 gives plain SGD.
    pub momentum: f64,
    /// Random translation of each training image by up to this many pixels
    /// in each direction (zero fill); 0 disables augmentation.
    pub max_shift: usize,
    /// Decay the learning rate linearly to zero over the run.
    pub anneal: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.0,
            max_shift: 0,
            anneal: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub heldout_accuracy: Option<f64>,
}

fn check_data(net: &Network, data: &[LabeledExample]) -> Result<()> {
    for (i, ex) in data.iter().enumerate() {
        if ex.image.shape() != net.input_shape() {
            return Err(Error::shape(net.input_shape(), ex.image.shape()));
        }
        if ex.label >= net.class_count() {
            return Err(Error::invalid(format!(
                "example {i} has label {} but the network has {} classes",
                ex.label,
                net.class_count()
            )));
        }
    }
    Ok(())
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn accuracy(net: &Network, data: &[LabeledExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset"));
    }
    check_data(net, data)?;
    let d = net.input_shape().len();
    let mut correct = 0usize;
    for chunk in data.chunks(256) {
        let mut batch = Array2::zeros((chunk.len(), d));
        for (mut row, ex) in batch.outer_iter_mut().zip(chunk) {
            row.as_slice_mut()
                .expect("contiguous")
                .copy_from_slice(ex.image.as_slice());
        }
        let tape = net.tape_batch(batch.view())?;
        for (row, ex) in tape.output().outer_iter().zip(chunk) {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            correct += usize::from(best == ex.label);
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Writes `src` translated by `(di, dj)` into `dst`, filling with zeros.
fn shifted_copy(src: &[f64], shape: Shape, di: isize, dj: isize, mut dst: ArrayViewMut1<'_, f64>) {
    let (h, w) = (shape.height as isize, shape.width as isize);
    dst.fill(0.0);
    for c in 0..shape.channels {
        let base = c * shape.plane();
        for i in 0..h {
            let si = i - di;
            if si < 0 || si >= h {
                continue;
            }
            for j in 0..w {
                let sj = j - dj;
                if sj < 0 || sj >= w {
                    continue;
                }
                dst[base + (i * w + j) as usize] = src[base + (si * w + sj) as usize];
            }
        }
    }
}

/// Trains a copy of `net`; `net` itself is untouched. Deterministic given
/// `cfg.seed`. `heldout` may be empty.
pub fn train(
    net: &Network,
    data: &[LabeledExample],
    heldout: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::invalid(format!("invalid training configuration {cfg:?}")));
    }
    check_data(net, data)?;
    check_data(net, heldout)?;

    let mut model = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shape = net.input_shape();
    let d = shape.len();
    let classes = net.class_count();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut velocity: Vec<Option<(Vec<f64>, Vec<f64>)>> = model
        .layers()
        .iter()
        .map(|l| l.params().map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()])))
        .collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = if cfg.anneal {
            cfg.learning_rate * (1.0 - epoch as f64 / cfg.epochs as f64)
        } else {
            cfg.learning_rate
        };
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut batch = Array2::zeros((b, d));
            for (row, &idx) in batch.outer_iter_mut().zip(chunk) {
                let src = data[idx].image.as_slice();
                if cfg.max_shift > 0 {
                    let s = cfg.max_shift as isize;
                    let di = rng.gen_range(-s..=s);
                    let dj = rng.gen_range(-s..=s);
                    shifted_copy(src, shape, di, dj, row);
                } else {
                    let mut row = row;
                    row.as_slice_mut().expect("contiguous").copy_from_slice(src);
                }
            }
            let tape = model.tape_batch(batch.view())?;
            let mut grad = Array2::zeros((b, classes));
            for (n, (logits, &idx)) in tape.output().outer_iter().zip(chunk).enumerate() {
                let logits = logits.to_vec();
                let p = softmax(&logits);
                let label = data[idx].label;
                total_loss -= p[label].max(f64::MIN_POSITIVE).ln();
                for (i, &pi) in p.iter().enumerate() {
                    grad[[n, i]] = (pi - f64::from(u8::from(i == label))) / b as f64;
                }
            }
            if !total_loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            let back = model.backward(&tape, grad, true);
            for ((layer, g), v) in model.layers_mut().iter_mut().zip(back.params).zip(velocity.iter_mut()) {
                let (Some(g), Some((vw, vb)), Some((w, bias))) = (g, v.as_mut(), layer.params_mut()) else {
                    continue;
                };
                for ((p, v), g) in w.iter_mut().zip(vw.iter_mut()).zip(&g.weights) {
                    *v = cfg.momentum * *v + g;
                    *p -= lr * *v;
                }
                for ((p, v), g) in bias.iter_mut().zip(vb.iter_mut()).zip(&g.bias) {
                    *v = cfg.momentum * *v + g;
                    *p -= lr * *v;
                }
            }
        }
        let mean = total_loss / data.len() as f64;
        if !mean.is_finite()
            || model
                .layers()
                .iter()
                .filter_map(|l| l.params())
                .any(|(w, b)| w.iter().chain(b).any(|v| !v.is_finite()))
        {
            return Err(Error::TrainingDiverged { epoch });
        }
        epoch_losses.push(mean);
    }

    let report = TrainReport {
        epoch_losses,
        train_accuracy: accuracy(&model, data)?,
        heldout_accuracy: if heldout.is_empty() {
            None
        } else {
            Some(accuracy(&model, heldout)?)
        },
    };
    Ok((model, report))
}
