//! Dense image grids, the box-constrained image space and the dissimilarity
//! metrics the attack minimizes.
//!
//! Pixel data is stored flat in channel-major order, row-major within each
//! channel. Every serialized artifact in this crate relies on that order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tv;

/// Components with `|u - x|` at or below this count as unchanged for ℓ0.
pub const L0_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A `channels × height × width` grid of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f64>,
}

impl Image {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values for {shape}", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite pixel at index {i}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Single-channel, single-row image; convenient for vectors.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(Shape::new(1, 1, data.len()), data)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for i in 0..shape.height {
                for j in 0..shape.width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(c, i, j)]
    }

    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.shape.height + i) * self.shape.width + j
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Replaces the pixel data, keeping the shape. Fails on length mismatch or
    /// non-finite values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.shape, data)
    }

    pub(crate) fn from_parts_unchecked(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        Ok(())
    }

    /// `self - other`, componentwise.
    pub fn sub(&self, other: &Image) -> Result<Vec<f64>> {
        self.ensure_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect())
    }

    /// `self + delta`, componentwise; `delta` must have `self.len()` entries.
    pub fn offset(&self, delta: &[f64]) -> Result<Image> {
        if delta.len() != self.len() {
            return Err(Error::shape(self.len(), delta.len()));
        }
        let data = self.data.iter().zip(delta).map(|(a, d)| a + d).collect();
        Image::new(self.shape, data)
    }

    pub fn in_unit_box(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// An image with its true class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image: Image,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(image: Image, label: usize) -> Self {
        Self { image, label }
    }
}

/// Euclidean projection onto the image space `[0, 1]^n`.
pub fn box_project(z: &Image) -> Result<Image> {
    box_project_slice(z.as_slice()).map(|data| Image::from_parts_unchecked(z.shape(), data))
}

pub(crate) fn box_project_slice(z: &[f64]) -> Result<Vec<f64>> {
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v.is_finite() {
                Ok(v.clamp(0.0, 1.0))
            } else {
                Err(Error::invalid(format!("non-finite value {v} at index {i}")))
            }
        })
        .collect()
}

/// The dissimilarity `m(u; x)` the attack minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    L0,
    L1,
    L2,
    Linf,
    Tv,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::L0, Metric::L1, Metric::L2, Metric::Linf, Metric::Tv];

    pub fn name(self) -> &'static str {
        match self {
            Metric::L0 => "l0",
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::Linf => "linf",
            Metric::Tv => "tv",
        }
    }

    pub fn eval(self, u: &Image, x: &Image) -> Result<f64> {
        metric_eval(self, u, x)
    }

    /// Evaluates the metric on a difference `u - x` given as flat data.
    pub fn eval_diff(self, diff: &[f64], shape: Shape) -> f64 {
        match self {
            Metric::L0 => diff.iter().filter(|d| d.abs() > L0_TOLERANCE).count() as f64,
            Metric::L1 => diff.iter().map(|d| d.abs()).sum(),
            Metric::L2 => diff.iter().map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Linf => diff.iter().fold(0.0, |m, d| f64::max(m, d.abs())),
            Metric::Tv => tv::tv_seminorm_slice(diff, shape),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l0" => Ok(Metric::L0),
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            "linf" | "l_inf" | "inf" => Ok(Metric::Linf),
            "tv" => Ok(Metric::Tv),
            other => Err(Error::invalid(format!("unknown metric '{other}'"))),
        }
    }
}

/// `m(u; x)` for the chosen metric. ℓ0 counts scalar components.
pub fn metric_eval(metric: Metric, u: &Image, x: &Image) -> Result<f64> {
    let diff = u.sub(x)?;
    Ok(metric.eval_diff(&diff, u.shape()))
}

/// ℓ0 counted over spatial pixels: a pixel counts once if any of its channels
/// changed. Equals the componentwise count for single-channel images.
pub fn l0_pixels(u: &Image, x: &Image) -> Result<f64> {
    let diff = u.sub(x)?;
    let shape = u.shape();
    let plane = shape.plane();
    let count = (0..plane)
        .filter(|&p| (0..shape.channels).any(|c| diff[c * plane + p].abs() > L0_TOLERANCE))
        .count();
    Ok(count as f64)
}
