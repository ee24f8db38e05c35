use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Image, LabeledExample, Shape};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Parameters of a synthetic Gaussian-cluster dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub seed: u64,
    pub n: usize,
    pub classes: usize,
    pub sigma: f64,
    pub dim: usize,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 200,
            classes: 2,
            sigma: 0.05,
            dim: 2,
        }
    }
}

impl BlobSpec {
    /// Parses `n=200,classes=2,sigma=0.05,dim=2,seed=0`; omitted keys keep
    /// their defaults.
    pub fn parse(s: &str) -> Result<Self> {
        let mut spec = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value in blob spec, got '{part}'")))?;
            let bad = || Error::invalid(format!("bad value '{v}' for blob key '{k}'"));
            match k.trim() {
                "n" => spec.n = v.trim().parse().map_err(|_| bad())?,
                "classes" => spec.classes = v.trim().parse().map_err(|_| bad())?,
                "sigma" => spec.sigma = v.trim().parse().map_err(|_| bad())?,
                "dim" => spec.dim = v.trim().parse().map_err(|_| bad())?,
                "seed" => spec.seed = v.trim().parse().map_err(|_| bad())?,
                other => return Err(Error::invalid(format!("unknown blob key '{other}'"))),
            }
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Idx { images: PathBuf, labels: PathBuf },
    Blobs(BlobSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<LabeledExample>,
    pub classes: usize,
    pub source: DataSource,
}

impl Dataset {
    /// Validates the invariants: non-empty, one image shape, labels below
    /// `classes`.
    pub fn new(
        name: impl Into<String>,
        examples: Vec<LabeledExample>,
        classes: usize,
        source: DataSource,
    ) -> Result<Self> {
        let first = examples.first().ok_or_else(|| Error::invalid("dataset is empty"))?;
        let shape = first.image.shape();
        for (i, ex) in examples.iter().enumerate() {
            if ex.image.shape() != shape {
                return Err(Error::shape(shape, ex.image.shape()));
            }
            if ex.label >= classes {
                return Err(Error::invalid(format!(
                    "example {i} has label {} >= {classes}",
                    ex.label
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            examples,
            classes,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.examples[0].image.shape()
    }

    /// The first `n` examples (all of them if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            examples: self.examples[..n.min(self.len())].to_vec(),
            ..self.clone()
        }
    }
}

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Truncated(format!("{what} header")))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, &path.display().to_string())?;
    if magic != expected {
        return Err(Error::Format(format!(
            "{}: magic {magic:#010x}, expected {expected:#010x}",
            path.display()
        )));
    }
    Ok(())
}

/// Parses an IDX image/label file pair (optionally gzip-compressed). Pixel
/// bytes are scaled to `[0, 1]` by `/255`.
pub fn parse_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_maybe_gz(images_path)?;
    let labels = read_maybe_gz(labels_path)?;
    check_magic(&images, IDX_IMAGES_MAGIC, images_path)?;
    check_magic(&labels, IDX_LABELS_MAGIC, labels_path)?;
    let count = be_u32(&images, 4, "image")? as usize;
    let rows = be_u32(&images, 8, "image")? as usize;
    let cols = be_u32(&images, 12, "image")? as usize;
    let label_count = be_u32(&labels, 4, "label")? as usize;
    if count != label_count {
        return Err(Error::Format(format!("{count} images but {label_count} labels")));
    }
    let plane = rows * cols;
    let pixels = images.get(16..16 + count * plane).ok_or_else(|| {
        Error::Truncated(format!(
            "{}: expected {count} images of {rows}x{cols}",
            images_path.display()
        ))
    })?;
    let label_bytes = labels
        .get(8..8 + count)
        .ok_or_else(|| Error::Truncated(format!("{}: expected {count} labels", labels_path.display())))?;
    let shape = Shape::new(1, rows, cols);
    let examples: Vec<LabeledExample> = pixels
        .chunks_exact(plane.max(1))
        .take(count)
        .zip(label_bytes)
        .map(|(px, &l)| {
            let data = px.iter().map(|&b| f64::from(b) / 255.0).collect();
            LabeledExample::new(Image::from_parts_unchecked(shape, data), usize::from(l))
        })
        .collect();
    let classes = examples.iter().map(|e| e.label + 1).max().unwrap_or(0).max(2);
    Dataset::new(
        images_path
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        examples,
        classes,
        DataSource::Idx {
            images: images_path.to_path_buf(),
            labels: labels_path.to_path_buf(),
        },
    )
}

fn idx_file(dir: &Path, split: &str, kind: &str, ndim: u8) -> Result<PathBuf> {
    let base = format!("{split}-{kind}-idx{ndim}-ubyte");
    for name in [base.clone(), format!("{base}.gz")] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::invalid(format!("no {base}[.gz] in {}", dir.display())))
}

/// Loads `<dir>/<split>-{images-idx3,labels-idx1}-ubyte[.gz]`.
pub fn load_idx_split(dir: impl AsRef<Path>, split: &str) -> Result<Dataset> {
    let dir = dir.as_ref();
    parse_idx(idx_file(dir, split, "images", 3)?, idx_file(dir, split, "labels", 1)?)
}

/// Resolves a dataset argument: `blobs:<spec>`, `<images>,<labels>`, or a
/// directory holding `<split>-*-ubyte[.gz]` files.
pub fn load_dataset(spec: &str, split: &str) -> Result<Dataset> {
    if let Some(rest) = spec.strip_prefix("blobs:") {
        let mut b = BlobSpec::parse(rest)?;
        if split == "test" {
            b.seed = b.seed.wrapping_add(1);
        }
        return generate_blobs(b.seed, b.n, b.classes, b.sigma, b.dim);
    }
    if let Some((images, labels)) = spec.split_once(',') {
        return parse_idx(images.trim(), labels.trim());
    }
    load_idx_split(spec, split)
}

/// Centre of class `k` of `classes`: spread along a line for `dim = 1`,
/// otherwise on a circle of radius 0.3 around 0.5 in the first two
/// coordinates with the remaining coordinates at 0.5.
pub fn blob_center(k: usize, classes: usize, dim: usize) -> Vec<f64> {
    let mut c = vec![0.5; dim];
    if dim == 1 {
        c[0] = 0.2 + 0.6 * k as f64 / (classes - 1) as f64;
    } else {
        let theta = std::f64::consts::TAU * k as f64 / classes as f64;
        c[0] = 0.5 + 0.3 * theta.cos();
        c[1] = 0.5 + 0.3 * theta.sin();
    }
    c
}

/// `n` points, labels cycling through the classes, drawn from isotropic
/// Gaussians around [`blob_center`] and clipped to `[0, 1]`.
pub fn generate_blobs(seed: u64, n: usize, classes: usize, sigma: f64, dim: usize) -> Result<Dataset> {
    if classes < 2 || n == 0 || dim == 0 || !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "blobs need classes >= 2, n >= 1, dim >= 1 and sigma >= 0 (got {classes}, {n}, {dim}, {sigma})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let centers: Vec<Vec<f64>> = (0..classes).map(|k| blob_center(k, classes, dim)).collect();
    let examples = (0..n)
        .map(|i| {
            let label = i % classes;
            let v = centers[label]
                .iter()
                .map(|c| (c + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            Ok(LabeledExample::new(Image::new(Shape::new(1, 1, dim), v)?, label))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        format!("blobs-{classes}x{dim}"),
        examples,
        classes,
        DataSource::Blobs(BlobSpec {
            seed,
            n,
            classes,
            sigma,
            dim,
        }),
    )
}
