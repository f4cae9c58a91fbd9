//! File formats.
//!
//! * RAWF: one ASCII header line `RAWF d k1 ... kd` terminated by `\n`,
//!   followed by `k1 * ... * kd` little-endian `f64` values in row-major
//!   order. Round trips are bit-exact.
//! * PGM (P5): 8- or 16-bit greyscale. Intensities are mapped to `[0, 1]`
//!   on load by dividing by `maxval`; on save they are clamped to `[0, 1]`.
//! * PPM (P6): write-only, used for RGB visualizations.

use std::fs;
use std::path::Path;

use super::ScalarImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Rawf,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => Ok(Self::Pgm),
            Some("rawf") => Ok(Self::Rawf),
            other => Err(Error::InvalidArgument(format!(
                "cannot infer image format from extension {other:?} of {}",
                path.display()
            ))),
        }
    }
}

/// An n-dimensional array of `f64`, the payload of a RAWF file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RawArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }
}

pub fn encode_rawf(array: &RawArray) -> Vec<u8> {
    let mut header = format!("RAWF {}", array.shape.len());
    for k in &array.shape {
        header.push_str(&format!(" {k}"));
    }
    header.push('\n');
    let mut out = Vec::with_capacity(header.len() + 8 * array.data.len());
    out.extend_from_slice(header.as_bytes());
    for v in &array.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_rawf(bytes: &[u8]) -> Result<RawArray> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("RAWF header has no newline".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::MalformedHeader("RAWF header is not ASCII".into()))?;
    let mut fields = header.split_ascii_whitespace();
    if fields.next() != Some("RAWF") {
        return Err(Error::MalformedHeader(format!("bad magic in {header:?}")));
    }
    let parse = |s: Option<&str>| -> Result<usize> {
        s.and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedHeader(format!("bad integer in {header:?}")))
    };
    let ndim = parse(fields.next())?;
    if ndim == 0 {
        return Err(Error::MalformedHeader("zero-dimensional RAWF".into()));
    }
    let shape = (0..ndim)
        .map(|_| parse(fields.next()))
        .collect::<Result<Vec<_>>>()?;
    if fields.next().is_some() {
        return Err(Error::MalformedHeader(format!(
            "trailing fields in {header:?}"
        )));
    }
    let payload = &bytes[newline + 1..];
    let expected: usize = shape.iter().product();
    if payload.len() != 8 * expected {
        return Err(Error::SizeMismatch {
            expected,
            found: payload.len() / 8,
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    RawArray::new(shape, data)
}

pub fn read_rawf(path: &Path) -> Result<RawArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rawf(&bytes)
}

pub fn write_rawf(path: &Path, array: &RawArray) -> Result<()> {
    fs::write(path, encode_rawf(array)).map_err(|e| Error::io(path, e))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<ScalarImage> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::MalformedHeader("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::MalformedHeader("expected PGM magic P5".into()));
    }
    let mut number = || -> Result<usize> {
        let t = token()?;
        t.parse()
            .map_err(|_| Error::MalformedHeader(format!("bad PGM field {t:?}")))
    };
    let width = number()?;
    let height = number()?;
    let maxval = number()?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!(
            "unsupported PGM geometry {width}x{height} maxval {maxval}"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    let payload = bytes.get(pos + 1..).unwrap_or(&[]);
    let n = width * height;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    if payload.len() != n * bytes_per {
        return Err(Error::SizeMismatch {
            expected: n,
            found: payload.len() / bytes_per,
        });
    }
    let scale = maxval as f64;
    let data = if bytes_per == 1 {
        payload.iter().map(|&b| b as f64 / scale).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    ScalarImage::new(vec![height, width], data)
}

/// Encodes a 2D image as P5 with the given `maxval` (255 or 65535 typically).
pub fn encode_pgm(img: &ScalarImage, maxval: u16) -> Result<Vec<u8>> {
    if img.ndim() != 2 {
        return Err(Error::InvalidArgument("PGM holds 2D images only".into()));
    }
    if maxval == 0 {
        return Err(Error::InvalidArgument("PGM maxval must be positive".into()));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    let scale = maxval as f64;
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * scale).round() as u16;
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn load_image(path: &Path, format: ImageFormat) -> Result<ScalarImage> {
    match format {
        ImageFormat::Pgm => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_pgm(&bytes)
        }
        ImageFormat::Rawf => {
            let raw = read_rawf(path)?;
            ScalarImage::new(raw.shape, raw.data)
        }
    }
}

pub fn save_image(img: &ScalarImage, path: &Path, format: ImageFormat) -> Result<()> {
    let bytes = match format {
        ImageFormat::Pgm => encode_pgm(img, 255)?,
        ImageFormat::Rawf => encode_rawf(&RawArray {
            shape: img.shape().to_vec(),
            data: img.data().to_vec(),
        }),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes an RGB raster as binary PPM (P6), `height` rows of `width` pixels.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[[u8; 3]]) -> Result<()> {
    if rgb.len() != width * height {
        return Err(Error::SizeMismatch {
            expected: width * height,
            found: rgb.len(),
        });
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for px in rgb {
        out.extend_from_slice(px);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rawf_round_trip_is_bit_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..35).map(|_| rng.gen::<f64>() * 1e3 - 17.0).collect();
        let img = ScalarImage::new(vec![7, 5], data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.rawf");
        save_image(&img, &path, ImageFormat::Rawf).unwrap();
        let back = load_image(&path, ImageFormat::Rawf).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rawf_size_mismatch() {
        let mut bytes = b"RAWF 2 3 4\n".to_vec();
        for i in 0..11 {
            bytes.extend_from_slice(&(i as f64).to_le_bytes());
        }
        assert!(matches!(
            decode_rawf(&bytes),
            Err(Error::SizeMismatch { expected: 12, found: 11 })
        ));
    }

    #[test]
    fn rawf_malformed_headers() {
        assert!(matches!(decode_rawf(b"RAWX 2 3 4\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_rawf(b"RAWF 2 3\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_rawf(b"RAWF 2 3 4"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_rawf(b"RAWF 2 3 x\n"), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn pgm_normalizes_to_unit_range() {
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.shape(), &[1, 2]);
        assert_eq!(img.data(), &[1.0, 0.0]);
    }

    #[test]
    fn pgm_sixteen_bit() {
        let mut bytes = b"P5 1 2 65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x80, 0x00]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.data()[0], 1.0);
        assert!((img.data()[1] - 32768.0 / 65535.0).abs() < 1e-15);
        let again = decode_pgm(&encode_pgm(&img, 65535).unwrap()).unwrap();
        assert_eq!(again, img);
    }

    #[test]
    fn pgm_errors() {
        assert!(decode_pgm(b"P2 1 1 255\n\x00").is_err());
        assert!(matches!(
            decode_pgm(b"P5 2 2 255\n\x00\x00\x00"),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(ImageFormat::from_path(Path::new("a/b.pgm")).unwrap(), ImageFormat::Pgm);
        assert_eq!(ImageFormat::from_path(Path::new("c.rawf")).unwrap(), ImageFormat::Rawf);
        assert!(ImageFormat::from_path(Path::new("c.png")).is_err());
    }

    proptest! {
        #[test]
        fn rawf_round_trip_any_finite(shape in proptest::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| f64::from_bits(rng.gen::<u64>() >> 2)).collect();
            let arr = RawArray::new(shape, data).unwrap();
            let back = decode_rawf(&encode_rawf(&arr)).unwrap();
            prop_assert_eq!(back.shape, arr.shape);
            prop_assert!(back.data.iter().zip(&arr.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
