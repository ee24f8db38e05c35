use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Shape of the activation flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Grid(Shape),
    Flat(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match self {
            ActShape::Grid(s) => s.len(),
            ActShape::Flat(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fully connected layer, `y = W x + b` with `W` stored `outputs × inputs`
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::shape(
                format!("{outputs}x{inputs} weights and {outputs} biases"),
                format!("{} weights and {} biases", weights.len(), bias.len()),
            ));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    fn w(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.outputs, self.inputs), &self.weights).expect("dense shape")
    }
}

/// Valid (unpadded) 2D convolution with square kernels. Weights are stored
/// `out_channels × in_channels × kernel × kernel`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        in_height: usize,
        in_width: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || kernel > in_height || kernel > in_width {
            return Err(Error::invalid(format!(
                "conv kernel {kernel} / stride {stride} incompatible with {in_height}x{in_width} input"
            )));
        }
        let wlen = out_channels * in_channels * kernel * kernel;
        if weights.len() != wlen || bias.len() != out_channels {
            return Err(Error::shape(
                format!("{wlen} weights and {out_channels} biases"),
                format!("{} weights and {} biases", weights.len(), bias.len()),
            ));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            in_height,
            in_width,
            weights,
            bias,
        })
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.in_channels, self.in_height, self.in_width)
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            (self.in_height - self.kernel) / self.stride + 1,
            (self.in_width - self.kernel) / self.stride + 1,
        )
    }

    fn forward_one(&self, input: &[f64], out: &mut [f64]) {
        let os = self.output_shape();
        let k = self.kernel;
        let (ih, iw) = (self.in_height, self.in_width);
        for co in 0..self.out_channels {
            for oi in 0..os.height {
                for oj in 0..os.width {
                    let mut acc = self.bias[co];
                    for ci in 0..self.in_channels {
                        let wbase = (co * self.in_channels + ci) * k * k;
                        let ibase = ci * ih * iw;
                        for ki in 0..k {
                            let row = ibase + (oi * self.stride + ki) * iw + oj * self.stride;
                            let wrow = &self.weights[wbase + ki * k..wbase + (ki + 1) * k];
                            for (kj, wv) in wrow.iter().enumerate() {
                                acc += wv * input[row + kj];
                            }
                        }
                    }
                    out[(co * os.height + oi) * os.width + oj] = acc;
                }
            }
        }
    }

    /// Accumulates input and (optionally) parameter gradients for one sample.
    fn backward_one(
        &self,
        input: &[f64],
        grad_out: &[f64],
        grad_in: &mut [f64],
        params: Option<(&mut [f64], &mut [f64])>,
    ) {
        let os = self.output_shape();
        let k = self.kernel;
        let (ih, iw) = (self.in_height, self.in_width);
        let (mut gw, mut gb) = match params {
            Some((w, b)) => (Some(w), Some(b)),
            None => (None, None),
        };
        for co in 0..self.out_channels {
            for oi in 0..os.height {
                for oj in 0..os.width {
                    let g = grad_out[(co * os.height + oi) * os.width + oj];
                    if g == 0.0 {
                        continue;
                    }
                    if let Some(gb) = gb.as_deref_mut() {
                        gb[co] += g;
                    }
                    for ci in 0..self.in_channels {
                        let wbase = (co * self.in_channels + ci) * k * k;
                        let ibase = ci * ih * iw;
                        for ki in 0..k {
                            let row = ibase + (oi * self.stride + ki) * iw + oj * self.stride;
                            for kj in 0..k {
                                let wi = wbase + ki * k + kj;
                                grad_in[row + kj] += g * self.weights[wi];
                                if let Some(gw) = gw.as_deref_mut() {
                                    gw[wi] += g * input[row + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Relu,
    Conv2d(Conv2d),
    Flatten,
}

/// Gradients of one layer's parameters, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn type_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Relu => "relu",
            Layer::Conv2d(_) => "conv2d",
            Layer::Flatten => "flatten",
        }
    }

    pub fn output_shape(&self, input: ActShape) -> Result<ActShape> {
        match (self, input) {
            (Layer::Dense(d), ActShape::Flat(n)) if n == d.inputs => Ok(ActShape::Flat(d.outputs)),
            (Layer::Dense(d), other) => Err(Error::shape(
                format!("flat input of {} for dense layer", d.inputs),
                format!("{other:?}"),
            )),
            (Layer::Relu, s) => Ok(s),
            (Layer::Conv2d(c), ActShape::Grid(s)) if s == c.input_shape() => Ok(ActShape::Grid(c.output_shape())),
            (Layer::Conv2d(c), other) => Err(Error::shape(
                format!("grid input {} for conv2d layer", c.input_shape()),
                format!("{other:?}"),
            )),
            (Layer::Flatten, s) => Ok(ActShape::Flat(s.len())),
        }
    }

    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            Layer::Conv2d(c) => Some((&c.weights, &c.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut [f64], &mut [f64])> {
        match self {
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            Layer::Conv2d(c) => Some((&mut c.weights, &mut c.bias)),
            _ => None,
        }
    }

    /// Batch forward; rows are samples, columns the flattened activation.
    pub(crate) fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Dense(d) => {
                let w = d.w();
                let bias = ArrayView1::from(&d.bias[..]);
                if x.nrows() == 1 {
                    let y = w.dot(&x.row(0)) + bias;
                    y.insert_axis(Axis(0))
                } else {
                    x.dot(&w.t()) + bias
                }
            }
            Layer::Relu => x.mapv(|v| v.max(0.0)),
            Layer::Conv2d(c) => {
                let olen = c.output_shape().len();
                let mut out = Array2::zeros((x.nrows(), olen));
                for (row, mut orow) in x.outer_iter().zip(out.outer_iter_mut()) {
                    let input = row.as_slice().expect("contiguous activations");
                    c.forward_one(input, orow.as_slice_mut().expect("contiguous output"));
                }
                out
            }
            Layer::Flatten => x.clone(),
        }
    }

    /// Batch backward given the layer input and the gradient at its output.
    /// Returns the input gradient and, if requested, the parameter gradient
    /// summed over the batch.
    pub(crate) fn backward(
        &self,
        input: &Array2<f64>,
        grad_out: &Array2<f64>,
        want_params: bool,
    ) -> (Array2<f64>, Option<ParamGrad>) {
        match self {
            Layer::Dense(d) => {
                let w = d.w();
                let grad_in = if grad_out.nrows() == 1 {
                    let mut g = ndarray::Array1::<f64>::zeros(d.inputs);
                    for (o, &go) in grad_out.row(0).iter().enumerate() {
                        if go != 0.0 {
                            g.scaled_add(go, &w.row(o));
                        }
                    }
                    g.insert_axis(Axis(0))
                } else {
                    grad_out.dot(&w)
                };
                let params = want_params.then(|| {
                    let gw = grad_out.t().dot(input);
                    let gb = grad_out.sum_axis(Axis(0));
                    ParamGrad {
                        weights: gw.iter().copied().collect(),
                        bias: gb.to_vec(),
                    }
                });
                (grad_in, params)
            }
            Layer::Relu => {
                let mut g = grad_out.clone();
                ndarray::Zip::from(&mut g).and(input).for_each(|g, &x| {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                });
                (g, None)
            }
            Layer::Conv2d(c) => {
                let mut grad_in = Array2::zeros(input.raw_dim());
                let mut pg = want_params.then(|| ParamGrad {
                    weights: vec![0.0; c.weights.len()],
                    bias: vec![0.0; c.bias.len()],
                });
                for n in 0..input.nrows() {
                    let inp = input.slice(s![n, ..]);
                    let go = grad_out.slice(s![n, ..]);
                    let mut gi = grad_in.slice_mut(s![n, ..]);
                    let params = pg.as_mut().map(|p| (&mut p.weights[..], &mut p.bias[..]));
                    c.backward_one(
                        inp.as_slice().expect("contiguous"),
                        go.as_slice().expect("contiguous"),
                        gi.as_slice_mut().expect("contiguous"),
                        params,
                    );
                }
                (grad_in, pg)
            }
            Layer::Flatten => (grad_out.clone(), None),
        }
    }
}
