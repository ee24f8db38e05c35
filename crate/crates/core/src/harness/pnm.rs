use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Image, Shape};

/// Encodes a 1-channel image as binary PGM (`P5`) or a 3-channel image as
/// binary PPM (`P6`), maxval 255, each value mapped to `floor(255 v + 0.5)`.
pub fn encode_pnm(img: &Image) -> Result<Vec<u8>> {
    let s = img.shape();
    let magic = match s.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::invalid(format!("cannot write a {c}-channel image as PGM/PPM"))),
    };
    if !img.in_unit_box() {
        return Err(Error::invalid("image values must lie in [0, 1]"));
    }
    let mut out = format!("{magic}\n{} {}\n255\n", s.width, s.height).into_bytes();
    let byte = |v: f64| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8;
    // interleave channels per pixel
    for i in 0..s.height {
        for j in 0..s.width {
            for c in 0..s.channels {
                out.push(byte(img.get(c, i, j)));
            }
        }
    }
    Ok(out)
}

pub fn write_image_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pnm(img)?)?;
    Ok(())
}

/// Decodes binary `P5`/`P6` data with maxval up to 255, including `#`
/// comments in the header, into an image scaled by `/maxval`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated("PNM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Format(format!("unsupported PNM magic '{m}'"))),
    };
    let num = |t: String| {
        t.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PNM header field '{t}'")))
    };
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = bytes.get(pos + 1..).unwrap_or(&[]);
    let shape = Shape::new(channels, height, width);
    if raster.len() < shape.len() {
        return Err(Error::Truncated(format!(
            "PNM raster: {} of {} bytes",
            raster.len(),
            shape.len()
        )));
    }
    let mut data = vec![0.0; shape.len()];
    for (k, &b) in raster[..shape.len()].iter().enumerate() {
        let (pixel, c) = (k / channels, k % channels);
        data[c * shape.plane() + pixel] = f64::from(b) / maxval as f64;
    }
    Image::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_grayscale_layout() {
        let bytes = encode_pnm(&Image::zeros(Shape::new(1, 2, 2))).unwrap();
        assert_eq!(bytes, b"P5\n2 2\n255\n\0\0\0\0");
    }

    #[test]
    fn rounding_half_up() {
        let img = Image::new(Shape::new(1, 1, 4), vec![1.0, 0.5, 0.5 / 255.0, 0.49 / 255.0]).unwrap();
        let bytes = encode_pnm(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[255, 128, 1, 0]);
    }

    #[test]
    fn round_trip_within_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for shape in [Shape::new(1, 5, 7), Shape::new(3, 4, 2)] {
            let img = Image::from_fn(shape, |_, _, _| rng.gen()).unwrap();
            let back = decode_pnm(&encode_pnm(&img).unwrap()).unwrap();
            assert_eq!(back.shape(), shape);
            let err = img
                .as_slice()
                .iter()
                .zip(back.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1.0 / 510.0 + 1e-15, "{err}");
        }
    }

    #[test]
    fn color_is_interleaved() {
        let img = Image::from_fn(Shape::new(3, 1, 2), |c, _, j| if c == j { 1.0 } else { 0.0 }).unwrap();
        let bytes = encode_pnm(&img).unwrap();
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[255, 0, 0, 0, 255, 0]);
    }

    #[test]
    fn rejects_other_channel_counts_and_bad_data() {
        assert!(encode_pnm(&Image::zeros(Shape::new(2, 2, 2))).is_err());
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n0"), Err(Error::Format(_))));
        assert!(matches!(decode_pnm(b"P5\n2 2\n255\n\0"), Err(Error::Truncated(_))));
        let parsed = decode_pnm(b"P5\n# comment\n1 1\n255\n\xff").unwrap();
        assert_eq!(parsed.as_slice(), &[1.0]);
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let img = Image::filled(Shape::new(1, 3, 3), 0.25);
        write_image_ppm(&img, &p).unwrap();
        let back = decode_pnm(&fs::read(&p).unwrap()).unwrap();
        assert!((back.as_slice()[0] - 0.25).abs() <= 1.0 / 510.0);
    }
}
