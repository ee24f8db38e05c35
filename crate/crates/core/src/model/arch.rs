use rand::Rng;

use super::layers::{ActShape, Conv2d, Dense, Layer};
use super::Network;
use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Convolution stage of a [`Architecture::Cnn`]: output channels, kernel size
/// and stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Network layout, independent of input shape and class count.
///
/// Textual forms:
/// - `mlp:256,128` hidden dense widths (`mlp:` or `linear` for none)
/// - `cnn:16x5s2,32x5s2;100` conv stages `<channels>x<kernel>s<stride>`,
///   then optional hidden dense widths after `;`
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    Mlp { hidden: Vec<usize> },
    Cnn { convs: Vec<ConvSpec>, hidden: Vec<usize> },
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| Error::invalid(format!("bad layer width '{t}'")))
        })
        .collect()
}

fn parse_conv(t: &str) -> Result<ConvSpec> {
    let bad = || Error::invalid(format!("bad conv stage '{t}', expected <channels>x<kernel>s<stride>"));
    let (channels, rest) = t.split_once('x').ok_or_else(bad)?;
    let (kernel, stride) = rest.split_once('s').unwrap_or((rest, "1"));
    let num = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad);
    Ok(ConvSpec {
        channels: num(channels)?,
        kernel: num(kernel)?,
        stride: num(stride)?,
    })
}

pub fn parse_arch(spec: &str) -> Result<Architecture> {
    let spec = spec.trim();
    if spec == "linear" {
        return Ok(Architecture::Mlp { hidden: vec![] });
    }
    if let Some(rest) = spec.strip_prefix("mlp:") {
        return Ok(Architecture::Mlp {
            hidden: parse_widths(rest)?,
        });
    }
    if let Some(rest) = spec.strip_prefix("cnn:") {
        let (convs, hidden) = rest.split_once(';').unwrap_or((rest, ""));
        let convs = convs
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(parse_conv)
            .collect::<Result<Vec<_>>>()?;
        if convs.is_empty() {
            return Err(Error::invalid("cnn architecture needs at least one conv stage"));
        }
        return Ok(Architecture::Cnn {
            convs,
            hidden: parse_widths(hidden)?,
        });
    }
    Err(Error::invalid(format!(
        "unknown architecture '{spec}', expected mlp:<dims>, cnn:<spec> or linear"
    )))
}

fn uniform(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

fn dense(rng: &mut impl Rng, inputs: usize, outputs: usize) -> Result<Layer> {
    let bound = 1.0 / (inputs as f64).sqrt();
    Ok(Layer::Dense(Dense::new(
        inputs,
        outputs,
        uniform(rng, inputs * outputs, bound),
        uniform(rng, outputs, bound),
    )?))
}

impl Architecture {
    /// Instantiates the layout with weights and biases drawn uniformly from
    /// `±1/sqrt(fan_in)`.
    pub fn build(&self, input: Shape, classes: usize, rng: &mut impl Rng) -> Result<Network> {
        let mut layers = Vec::new();
        let mut grid = input;
        let hidden = match self {
            Architecture::Mlp { hidden } => hidden,
            Architecture::Cnn { convs, hidden } => {
                for c in convs {
                    if c.kernel > grid.height || c.kernel > grid.width {
                        return Err(Error::invalid(format!(
                            "conv kernel {} does not fit a {grid} activation",
                            c.kernel
                        )));
                    }
                    let fan_in = grid.channels * c.kernel * c.kernel;
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let conv = Conv2d::new(
                        grid.channels,
                        c.channels,
                        c.kernel,
                        c.stride,
                        grid.height,
                        grid.width,
                        uniform(rng, c.channels * fan_in, bound),
                        uniform(rng, c.channels, bound),
                    )?;
                    grid = conv.output_shape();
                    layers.push(Layer::Conv2d(conv));
                    layers.push(Layer::Relu);
                }
                hidden
            }
        };
        layers.push(Layer::Flatten);
        let mut width = ActShape::Grid(grid).len();
        for &h in hidden {
            layers.push(dense(rng, width, h)?);
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(dense(rng, width, classes)?);
        Network::new(input, layers)
    }
}
