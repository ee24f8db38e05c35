//! The misclassification margin `F(u)` and the gradient of `-log F(u)`.

use super::{single_row, softmax, LogitVector, Network};
use crate::error::{Error, Result};
use crate::tensor::Image;

/// `F` together with the competing class it was measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSelection {
    pub value: f64,
    /// The class whose score is the `k`-th largest among classes other than
    /// the true one.
    pub index: usize,
}

/// `F = s_(k) - s_y` where `s` are the logits (or their softmax) and `s_(k)`
/// is the `k`-th largest score among classes other than `y`. Ties go to the
/// lower class index. `F > 0` exactly when `y` is not among the top `k`
/// classes.
pub fn barrier_value(z: &LogitVector, y: usize, k: usize, use_softmax: bool) -> Result<BarrierSelection> {
    let c = z.len();
    if y >= c {
        return Err(Error::invalid(format!("label {y} out of range for {c} classes")));
    }
    if k == 0 || k >= c {
        return Err(Error::invalid(format!("top-k must satisfy 1 <= k < {c}, got {k}")));
    }
    let scores = if use_softmax {
        softmax(z.as_slice())
    } else {
        z.0.clone()
    };
    let mut others: Vec<usize> = (0..c).filter(|&i| i != y).collect();
    others.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let index = others[k - 1];
    Ok(BarrierSelection {
        value: scores[index] - scores[y],
        index,
    })
}

/// Evaluates `F` at an image.
pub fn barrier_at(net: &Network, u: &Image, y: usize, k: usize, use_softmax: bool) -> Result<BarrierSelection> {
    barrier_value(&net.forward(u)?, y, k, use_softmax)
}

#[derive(Debug, Clone)]
pub struct BarrierGradient {
    /// `∇_u F(u)` or `∇_u [-log F(u)]`, depending on the producer.
    pub gradient: Image,
    pub selection: BarrierSelection,
    pub logits: LogitVector,
}

/// `F(u)` and its gradient `∇_u F(u)`, backpropagated exactly through the
/// selected score difference. Defined for any sign of `F`.
pub fn barrier_gradient(net: &Network, u: &Image, y: usize, k: usize, use_softmax: bool) -> Result<BarrierGradient> {
    let tape = net.tape(u)?;
    let logits = LogitVector(tape.output().row(0).to_vec());
    let selection = barrier_value(&logits, y, k, use_softmax)?;
    let c = logits.len();
    let j = selection.index;
    let mut dfdz = vec![0.0; c];
    if use_softmax {
        // d p_i / d z = p_i (e_i - p)
        let p = softmax(logits.as_slice());
        for (i, g) in dfdz.iter_mut().enumerate() {
            *g = -(p[j] - p[y]) * p[i];
        }
        dfdz[j] += p[j];
        dfdz[y] -= p[y];
    } else {
        dfdz[j] = 1.0;
        dfdz[y] = -1.0;
    }
    let back = net.backward(&tape, single_row(&dfdz), false);
    let gradient = u.with_data(back.input.into_raw_vec_and_offset().0)?;
    Ok(BarrierGradient {
        gradient,
        selection,
        logits,
    })
}

/// `∇_u [-log F(u)] = -∇F(u) / F(u)`. Fails when `F(u) <= 0`.
pub fn grad_log_barrier(net: &Network, u: &Image, y: usize, k: usize, use_softmax: bool) -> Result<BarrierGradient> {
    let mut g = barrier_gradient(net, u, y, k, use_softmax)?;
    let f = g.selection.value;
    if !(f > 0.0) {
        return Err(Error::BarrierDomain { value: f });
    }
    let scaled = g.gradient.as_slice().iter().map(|v| -v / f).collect();
    g.gradient = u.with_data(scaled)?;
    Ok(g)
}
