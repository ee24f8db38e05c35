//! Feed-forward classifiers: logits, exact backpropagation, training and the
//! PLBW weight format.

mod arch;
mod barrier;
mod io;
mod layers;
mod train;

use ndarray::{Array2, ArrayView2};

pub use arch::{parse_arch, Architecture};
pub use barrier::{barrier_at, barrier_gradient, barrier_value, grad_log_barrier, BarrierGradient, BarrierSelection};
pub use io::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use layers::{ActShape, Conv2d, Dense, Layer, ParamGrad};
pub use train::{accuracy, train, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::tensor::{Image, Shape};

/// Raw class scores before any softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(pub Vec<f64>);

impl LogitVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn softmax(&self) -> Vec<f64> {
        softmax(&self.0)
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Layer inputs recorded during a forward pass; the last entry is the output.
#[derive(Debug, Clone)]
pub struct Tape {
    activations: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("tape holds the input")
    }
}

/// Result of backpropagating a gradient at the logits.
#[derive(Debug, Clone)]
pub struct Backward {
    /// Gradient with respect to the input, one row per sample.
    pub input: Array2<f64>,
    /// Per-layer parameter gradients (summed over the batch); `None` for
    /// parameter-free layers or when not requested.
    pub params: Vec<Option<ParamGrad>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: Shape,
    layers: Vec<Layer>,
    classes: usize,
}

impl Network {
    /// Validates that the layer shapes compose, starting from an image of
    /// shape `input`, and that the output is a flat vector of at least two
    /// classes.
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Self> {
        match layers.first() {
            Some(Layer::Flatten | Layer::Conv2d(_)) => {}
            Some(other) => {
                return Err(Error::invalid(format!(
                    "first layer must consume the image grid (flatten or conv2d), got {}",
                    other.type_name()
                )))
            }
            None => return Err(Error::invalid("network has no layers")),
        }
        let mut shape = ActShape::Grid(input);
        for layer in &layers {
            shape = layer.output_shape(shape)?;
            if let Some((w, b)) = layer.params() {
                if w.iter().chain(b).any(|v| !v.is_finite()) {
                    return Err(Error::invalid("non-finite network parameter"));
                }
            }
        }
        let classes = match shape {
            ActShape::Flat(c) if c >= 2 => c,
            other => {
                return Err(Error::invalid(format!(
                    "network must end in at least two logits, ends in {other:?}"
                )))
            }
        };
        Ok(Self { input, layers, classes })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access for training and gradient checks. Changing a layer's
    /// dimensions through this breaks the network; only values may change.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    fn check_input(&self, u: &Image) -> Result<()> {
        if u.shape() != self.input {
            return Err(Error::shape(self.input, u.shape()));
        }
        Ok(())
    }

    pub fn forward(&self, u: &Image) -> Result<LogitVector> {
        self.check_input(u)?;
        let tape = self.tape_rows(single_row(u.as_slice()));
        Ok(LogitVector(tape.output().row(0).to_vec()))
    }

    pub fn predict(&self, u: &Image) -> Result<usize> {
        Ok(self.forward(u)?.argmax())
    }

    /// Forward pass recording every layer input.
    pub fn tape(&self, u: &Image) -> Result<Tape> {
        self.check_input(u)?;
        Ok(self.tape_rows(single_row(u.as_slice())))
    }

    /// Batch forward; `inputs` has one flattened image per row.
    pub fn tape_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Tape> {
        if inputs.ncols() != self.input.len() {
            return Err(Error::shape(self.input.len(), inputs.ncols()));
        }
        Ok(self.tape_rows(inputs.to_owned()))
    }

    fn tape_rows(&self, input: Array2<f64>) -> Tape {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input);
        for layer in &self.layers {
            let next = layer.forward(activations.last().expect("nonempty"));
            activations.push(next);
        }
        Tape { activations }
    }

    /// Backpropagates `grad_logits` (one row per sample in the tape).
    pub fn backward(&self, tape: &Tape, grad_logits: Array2<f64>, want_params: bool) -> Backward {
        let mut grad = grad_logits;
        let mut params = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (g, p) = layer.backward(&tape.activations[i], &grad, want_params);
            params[i] = p;
            grad = g;
        }
        Backward { input: grad, params }
    }

    /// Vector-Jacobian product `J(u)^T g` of the logits at a single image.
    pub fn input_gradient(&self, u: &Image, grad_logits: &[f64]) -> Result<Vec<f64>> {
        if grad_logits.len() != self.classes {
            return Err(Error::shape(self.classes, grad_logits.len()));
        }
        let tape = self.tape(u)?;
        let back = self.backward(&tape, single_row(grad_logits), false);
        Ok(back.input.into_raw_vec_and_offset().0)
    }
}

pub(crate) fn single_row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_cnn(rng: &mut ChaCha8Rng) -> Network {
        let input = Shape::new(2, 6, 5);
        let conv = Conv2d::new(
            2,
            3,
            3,
            1,
            6,
            5,
            (0..3 * 2 * 9).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            (0..3).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        )
        .unwrap();
        let conv2 = Conv2d::new(
            3,
            2,
            2,
            2,
            4,
            3,
            (0..2 * 3 * 4).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            (0..2).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        )
        .unwrap();
        // conv2 output 2x2x1 = 4
        let dense = Dense::new(
            4,
            3,
            (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..3).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        )
        .unwrap();
        Network::new(
            input,
            vec![
                Layer::Conv2d(conv),
                Layer::Relu,
                Layer::Conv2d(conv2),
                Layer::Relu,
                Layer::Flatten,
                Layer::Dense(dense),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_dense_returns_flattened_input() {
        let n = 4;
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        let net = Network::new(
            Shape::new(1, 2, 2),
            vec![Layer::Flatten, Layer::Dense(Dense::new(n, n, w, vec![0.0; n]).unwrap())],
        )
        .unwrap();
        let u = Image::new(Shape::new(1, 2, 2), vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        assert_eq!(net.forward(&u).unwrap().as_slice(), u.as_slice());
    }

    #[test]
    fn relu_blocks_negative_activations() {
        let first = Dense::new(1, 1, vec![1.0], vec![0.0]).unwrap();
        let second = Dense::new(1, 2, vec![5.0, -5.0], vec![0.0, 0.0]).unwrap();
        let net = Network::new(
            Shape::new(1, 1, 1),
            vec![Layer::Flatten, Layer::Dense(first), Layer::Relu, Layer::Dense(second)],
        )
        .unwrap();
        let neg = Image::new(Shape::new(1, 1, 1), vec![-1.0]).unwrap();
        assert_eq!(net.forward(&neg).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn conv_output_shapes_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_cnn(&mut rng);
        assert_eq!(net.class_count(), 3);
        let z = net.forward(&Image::zeros(net.input_shape())).unwrap();
        assert!(z.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_incompatible_layers() {
        let d = Dense::new(3, 2, vec![0.0; 6], vec![0.0; 2]).unwrap();
        assert!(Network::new(Shape::new(1, 2, 2), vec![Layer::Flatten, Layer::Dense(d.clone())]).is_err());
        assert!(Network::new(Shape::new(1, 1, 3), vec![Layer::Dense(d)]).is_err());
        assert!(Network::new(Shape::new(1, 1, 1), vec![Layer::Flatten]).is_err());
        assert!(Network::new(Shape::new(1, 1, 3), vec![]).is_err());
        let bad = Dense::new(3, 2, vec![f64::NAN; 6], vec![0.0; 2]).unwrap();
        assert!(Network::new(Shape::new(1, 1, 3), vec![Layer::Flatten, Layer::Dense(bad)]).is_err());
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_cnn(&mut rng);
        assert!(matches!(
            net.forward(&Image::zeros(Shape::new(1, 6, 5))),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = parse_arch("mlp:7,5")
            .unwrap()
            .build(Shape::new(1, 3, 4), 3, &mut rng)
            .unwrap();
        let images: Vec<Image> = (0..5)
            .map(|_| Image::from_fn(net.input_shape(), |_, _, _| rng.gen()).unwrap())
            .collect();
        let mut batch = Array2::zeros((5, 12));
        for (i, im) in images.iter().enumerate() {
            batch.row_mut(i).assign(&ndarray::ArrayView1::from(im.as_slice()));
        }
        let tape = net.tape_batch(batch.view()).unwrap();
        for (i, im) in images.iter().enumerate() {
            let single = net.forward(im).unwrap();
            for (a, b) in single.as_slice().iter().zip(tape.output().row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Central differences of `w · logits` against backprop, for inputs and
    /// every parameter.
    fn check_gradients(net: &mut Network, u: &Image, weights: &[f64]) {
        let h = 1e-6;
        let objective = |net: &Network, u: &Image| -> f64 {
            net.forward(u)
                .unwrap()
                .as_slice()
                .iter()
                .zip(weights)
                .map(|(z, w)| z * w)
                .sum()
        };
        let tape = net.tape(u).unwrap();
        let back = net.backward(&tape, single_row(weights), true);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);

        for i in 0..u.len() {
            let mut plus = u.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (objective(net, &u.with_data(plus).unwrap()) - objective(net, &u.with_data(minus).unwrap()))
                / (2.0 * h);
            assert!(
                rel(fd, back.input[[0, i]]) < 1e-6,
                "input {i}: {fd} vs {}",
                back.input[[0, i]]
            );
        }
        for li in 0..net.layers().len() {
            let Some(grad) = back.params[li].clone() else {
                continue;
            };
            let (nw, nb) = {
                let (w, b) = net.layers()[li].params().unwrap();
                (w.len(), b.len())
            };
            for idx in 0..nw + nb {
                let bump = |net: &mut Network, delta: f64| {
                    let (w, b) = net.layers_mut()[li].params_mut().unwrap();
                    if idx < nw {
                        w[idx] += delta;
                    } else {
                        b[idx - nw] += delta;
                    }
                };
                bump(net, h);
                let up = objective(net, u);
                bump(net, -2.0 * h);
                let down = objective(net, u);
                bump(net, h);
                let fd = (up - down) / (2.0 * h);
                let an = if idx < nw {
                    grad.weights[idx]
                } else {
                    grad.bias[idx - nw]
                };
                assert!(rel(fd, an) < 1e-6, "layer {li} param {idx}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn backprop_matches_finite_differences_cnn() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let mut net = random_cnn(&mut rng);
            let u = Image::from_fn(net.input_shape(), |_, _, _| rng.gen()).unwrap();
            let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            check_gradients(&mut net, &u, &w);
        }
    }

    #[test]
    fn backprop_matches_finite_differences_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let mut net = parse_arch("mlp:6,4")
                .unwrap()
                .build(Shape::new(1, 2, 3), 3, &mut rng)
                .unwrap();
            let u = Image::from_fn(net.input_shape(), |_, _, _| rng.gen()).unwrap();
            let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            check_gradients(&mut net, &u, &w);
        }
    }
}
