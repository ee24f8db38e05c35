//! Binary little-endian weight files.
//!
//! Layout: magic `PLBW`, `u32` version, `u32` layer count, then per layer a
//! `u8` type code, a `u32` dimension count, the `u32` dimensions and, for
//! layers with parameters, the `f64` weights followed by the biases.
//!
//! | code | layer   | dimensions                                   |
//! |------|---------|----------------------------------------------|
//! | 0    | dense   | `inputs, outputs`                            |
//! | 1    | relu    | none                                         |
//! | 2    | conv2d  | `in_ch, out_ch, kernel, stride, in_h, in_w`  |
//! | 3    | flatten | `channels, height, width` of its input grid  |

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::layers::{ActShape, Conv2d, Dense, Layer};
use super::Network;
use crate::error::{Error, Result};
use crate::tensor::Shape;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"PLBW";
pub const WEIGHTS_VERSION: u32 = 1;

const DENSE: u8 = 0;
const RELU: u8 = 1;
const CONV2D: u8 = 2;
const FLATTEN: u8 = 3;

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("dimension {v} does not fit in u32")))
}

pub fn write_weights<W: Write>(net: &Network, mut w: W) -> Result<()> {
    w.write_all(&WEIGHTS_MAGIC)?;
    w.write_u32::<LittleEndian>(WEIGHTS_VERSION)?;
    w.write_u32::<LittleEndian>(to_u32(net.layers().len())?)?;
    let mut shape = ActShape::Grid(net.input_shape());
    for layer in net.layers() {
        let (code, dims) = match layer {
            Layer::Dense(d) => (DENSE, vec![d.inputs, d.outputs]),
            Layer::Relu => (RELU, vec![]),
            Layer::Conv2d(c) => (
                CONV2D,
                vec![
                    c.in_channels,
                    c.out_channels,
                    c.kernel,
                    c.stride,
                    c.in_height,
                    c.in_width,
                ],
            ),
            Layer::Flatten => match shape {
                ActShape::Grid(s) => (FLATTEN, vec![s.channels, s.height, s.width]),
                ActShape::Flat(n) => (FLATTEN, vec![1, 1, n]),
            },
        };
        w.write_u8(code)?;
        w.write_u32::<LittleEndian>(to_u32(dims.len())?)?;
        for d in dims {
            w.write_u32::<LittleEndian>(to_u32(d)?)?;
        }
        if let Some((weights, bias)) = layer.params() {
            for &v in weights.iter().chain(bias) {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        shape = layer.output_shape(shape)?;
    }
    w.flush()?;
    Ok(())
}

fn truncated(e: std::io::Error, what: &str) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::Truncated(format!("weight file ended while reading {what}"))
    } else {
        Error::Io(e)
    }
}

fn read_reals<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)
        .map_err(|e| truncated(e, what))?;
    Ok(out)
}

pub fn read_weights<R: Read>(mut r: R) -> Result<Network> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| truncated(e, "the magic"))?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::Format(format!("bad weight file magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|e| truncated(e, "the version"))?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported weight file version {version}")));
    }
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|e| truncated(e, "the layer count"))?;
    let mut layers = Vec::new();
    let mut input = None;
    for index in 0..count {
        let what = format!("layer {index}");
        let code = r.read_u8().map_err(|e| truncated(e, &what))?;
        let ndims = r.read_u32::<LittleEndian>().map_err(|e| truncated(e, &what))? as usize;
        let expected = match code {
            DENSE => 2,
            RELU => 0,
            CONV2D => 6,
            FLATTEN => 3,
            other => return Err(Error::Format(format!("{what} has unknown type code {other}"))),
        };
        if ndims != expected {
            return Err(Error::shape(
                format!("{expected} dimensions for {what}"),
                format!("{ndims}"),
            ));
        }
        let mut dims = [0usize; 6];
        for d in dims.iter_mut().take(ndims) {
            *d = r.read_u32::<LittleEndian>().map_err(|e| truncated(e, &what))? as usize;
        }
        let layer = match code {
            DENSE => {
                let [i, o, ..] = dims;
                let weights = read_reals(&mut r, i * o, &what)?;
                let bias = read_reals(&mut r, o, &what)?;
                Layer::Dense(Dense::new(i, o, weights, bias)?)
            }
            RELU => Layer::Relu,
            CONV2D => {
                let [ci, co, k, s, h, w] = dims;
                let weights = read_reals(&mut r, co * ci * k * k, &what)?;
                let bias = read_reals(&mut r, co, &what)?;
                let conv = Conv2d::new(ci, co, k, s, h, w, weights, bias)?;
                if index == 0 {
                    input = Some(conv.input_shape());
                }
                Layer::Conv2d(conv)
            }
            _ => {
                if index == 0 {
                    input = Some(Shape::new(dims[0], dims[1], dims[2]));
                }
                Layer::Flatten
            }
        };
        layers.push(layer);
    }
    let input = input.ok_or_else(|| Error::Format("first layer must be flatten or conv2d".into()))?;
    let mut rest = Vec::new();
    if r.read_to_end(&mut rest)? > 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last layer",
            rest.len()
        )));
    }
    Network::new(input, layers)
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    write_weights(net, BufWriter::new(File::create(path)?))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Network> {
    read_weights(BufReader::new(File::open(path)?))
}
