//! Binary netpbm codecs for frames, masks and depth.
//!
//! * Frames: P6, maxval 255.
//! * Masks: P5, maxval 255, written as 0/255 and read back with `>= 128 -> 1`.
//! * Depth: P5, maxval 65535, big-endian samples. Sample `q` stands for the
//!   relative depth `q / 65535` over the frame's own value range; that range
//!   is kept in a small text sidecar (`<stem>.range`) so raw values can be
//!   recovered as `min + q / 65535 * (max - min)`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use crate::error::CodecError;
use crate::raster::{DepthMap, Dims, Image, Mask};

const DEPTH_MAX: f64 = 65535.0;

struct Header {
    magic: [u8; 2],
    dims: Dims,
    maxval: u32,
    /// Offset of the first sample byte.
    offset: usize,
}

fn parse_header(data: &[u8], format: &'static str) -> Result<Header, CodecError> {
    if data.len() < 2 {
        return Err(CodecError::corrupt(format, "missing magic number"));
    }
    let magic = [data[0], data[1]];
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match data.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while data.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(CodecError::corrupt(format, "truncated header")),
            }
        }
        let start = pos;
        while data.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(CodecError::corrupt(format, format!("expected a number at byte {start}")));
        }
        let text = std::str::from_utf8(&data[start..pos]).expect("ascii digits");
        *field =
            text.parse().map_err(|_| CodecError::corrupt(format, format!("header value '{text}' out of range")))?;
    }
    // exactly one whitespace byte separates the header from the samples
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(CodecError::corrupt(format, "missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(CodecError::corrupt(format, format!("empty raster {width}x{height}")));
    }
    Ok(Header { magic, dims: Dims::new(width as usize, height as usize), maxval, offset: pos })
}

fn payload<'a>(data: &'a [u8], header: &Header, bytes: usize, format: &'static str) -> Result<&'a [u8], CodecError> {
    let body = &data[header.offset..];
    if body.len() < bytes {
        return Err(CodecError::corrupt(format, format!("expected {bytes} sample bytes, found {}", body.len())));
    }
    if body.len() > bytes {
        return Err(CodecError::corrupt(format, format!("{} trailing bytes", body.len() - bytes)));
    }
    Ok(body)
}

fn write_header(magic: &str, dims: Dims, maxval: u32, extra: usize) -> Vec<u8> {
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", dims.width, dims.height).into_bytes();
    out.reserve(extra);
    out
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = write_header("P6", image.dims(), 255, image.as_bytes().len());
    out.extend_from_slice(image.as_bytes());
    out
}

pub fn decode_ppm(data: &[u8]) -> Result<Image, CodecError> {
    let h = parse_header(data, "PPM")?;
    if &h.magic != b"P6" {
        return Err(CodecError::corrupt("PPM", "magic is not P6"));
    }
    if h.maxval != 255 {
        return Err(CodecError::corrupt("PPM", format!("maxval {} unsupported (need 255)", h.maxval)));
    }
    let body = payload(data, &h, h.dims.len() * 3, "PPM")?;
    Ok(Image::new(h.dims.width, h.dims.height, body.to_vec())?)
}

pub fn encode_mask_pgm(mask: &Mask) -> Vec<u8> {
    let mut out = write_header("P5", mask.dims(), 255, mask.dims().len());
    out.extend(mask.iter().map(|b| if b { 255u8 } else { 0 }));
    out
}

pub fn decode_mask_pgm(data: &[u8]) -> Result<Mask, CodecError> {
    let h = parse_header(data, "mask PGM")?;
    if &h.magic != b"P5" {
        return Err(CodecError::corrupt("mask PGM", "magic is not P5"));
    }
    if h.maxval != 255 {
        return Err(CodecError::corrupt("mask PGM", format!("maxval {} unsupported (need 255)", h.maxval)));
    }
    let body = payload(data, &h, h.dims.len(), "mask PGM")?;
    Ok(Mask::from_bools(h.dims.width, h.dims.height, body.iter().map(|&v| v >= 128))?)
}

/// Value range of a depth map before 16-bit quantization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl DepthRange {
    pub fn to_sidecar(self) -> String {
        format!("min {}\nmax {}\n", self.min, self.max)
    }

    pub fn from_sidecar(text: &str) -> Result<Self, CodecError> {
        let mut min = None;
        let mut max = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| CodecError::corrupt("depth sidecar", format!("bad line '{line}'")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| CodecError::corrupt("depth sidecar", format!("bad number in '{line}'")))?;
            match key {
                "min" => min = Some(value),
                "max" => max = Some(value),
                _ => return Err(CodecError::corrupt("depth sidecar", format!("unknown key '{key}'"))),
            }
        }
        match (min, max) {
            (Some(min), Some(max)) if min.is_finite() && max.is_finite() && min <= max && min >= 0.0 => {
                Ok(Self { min, max })
            }
            _ => Err(CodecError::corrupt("depth sidecar", "need finite 0 <= min <= max")),
        }
    }
}

/// 16-bit depth samples as stored on disk or on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedDepth {
    pub dims: Dims,
    pub samples: Vec<u16>,
}

impl QuantizedDepth {
    /// Quantizes against the map's own range.
    pub fn from_depth(depth: &DepthMap) -> (Self, DepthRange) {
        let (min, max) = depth.range();
        let span = max - min;
        let samples = depth
            .values()
            .iter()
            .map(|&v| if span > 0.0 { ((v - min) / span * DEPTH_MAX).round() as u16 } else { 0 })
            .collect();
        (Self { dims: depth.dims(), samples }, DepthRange { min, max })
    }

    /// Relative depth `q / 65535` in `[0, 1]`.
    pub fn relative(&self) -> DepthMap {
        let values = self.samples.iter().map(|&q| q as f64 / DEPTH_MAX).collect();
        DepthMap::new(self.dims.width, self.dims.height, values).expect("dims and range valid by construction")
    }

    /// Raw depth recovered through the recorded range.
    pub fn raw(&self, range: DepthRange) -> DepthMap {
        let span = range.max - range.min;
        let values = self.samples.iter().map(|&q| range.min + q as f64 / DEPTH_MAX * span).collect();
        DepthMap::new(self.dims.width, self.dims.height, values).expect("range validated")
    }
}

pub fn encode_depth_pgm(depth: &QuantizedDepth) -> Vec<u8> {
    let mut out = write_header("P5", depth.dims, 65535, depth.samples.len() * 2);
    for q in &depth.samples {
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn decode_depth_pgm(data: &[u8]) -> Result<QuantizedDepth, CodecError> {
    let h = parse_header(data, "depth PGM")?;
    if &h.magic != b"P5" {
        return Err(CodecError::corrupt("depth PGM", "magic is not P5"));
    }
    if h.maxval != 65535 {
        return Err(CodecError::corrupt("depth PGM", format!("maxval {} unsupported (need 65535)", h.maxval)));
    }
    let body = payload(data, &h, h.dims.len() * 2, "depth PGM")?;
    let samples = body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok(QuantizedDepth { dims: h.dims, samples })
}

/// Sidecar path for a depth file: same stem, `.range` extension.
pub fn sidecar_path(depth_path: &Path) -> PathBuf {
    depth_path.with_extension("range")
}

fn read(path: &Path) -> Result<Vec<u8>, CodecError> {
    fs::read(path).map_err(|source| CodecError::Io { path: path.to_owned(), source })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CodecError> {
    fs::write(path, bytes).map_err(|source| CodecError::Io { path: path.to_owned(), source })
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<(), CodecError> {
    write(path, &encode_ppm(image))
}

pub fn read_ppm(path: &Path) -> Result<Image, CodecError> {
    decode_ppm(&read(path)?)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), CodecError> {
    write(path, &encode_mask_pgm(mask))
}

pub fn read_mask(path: &Path) -> Result<Mask, CodecError> {
    decode_mask_pgm(&read(path)?)
}

/// Writes the 16-bit depth file and its range sidecar.
pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<DepthRange, CodecError> {
    let (q, range) = QuantizedDepth::from_depth(depth);
    write(path, &encode_depth_pgm(&q))?;
    write(&sidecar_path(path), range.to_sidecar().as_bytes())?;
    Ok(range)
}

/// Reads the 16-bit samples only; the sidecar is not needed for relative depth.
pub fn read_depth(path: &Path) -> Result<QuantizedDepth, CodecError> {
    decode_depth_pgm(&read(path)?)
}

pub fn read_depth_range(path: &Path) -> Result<DepthRange, CodecError> {
    let bytes = read(&sidecar_path(path))?;
    let text = String::from_utf8(bytes).map_err(|_| CodecError::corrupt("depth sidecar", "not UTF-8"))?;
    DepthRange::from_sidecar(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ppm_header_layout() {
        let img = Image::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(encode_ppm(&img), b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06".to_vec());
    }

    #[test]
    fn ppm_accepts_comments() {
        let data = b"P6 # made by hand\n# another\n1 1 255\n\x07\x08\x09";
        assert_eq!(decode_ppm(data).unwrap().as_bytes(), &[7, 8, 9]);
    }

    #[test]
    fn truncated_and_trailing_are_corrupt() {
        assert!(matches!(decode_ppm(b"P6\n2 1\n255\n\x01\x02"), Err(CodecError::Corrupt { .. })));
        assert!(matches!(decode_ppm(b"P6\n1 1\n255\n\x01\x02\x03\x04"), Err(CodecError::Corrupt { .. })));
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\x01"), Err(CodecError::Corrupt { .. })));
        assert!(matches!(decode_mask_pgm(b"P5\n1 1\n"), Err(CodecError::Corrupt { .. })));
    }

    #[test]
    fn mask_threshold() {
        let m = decode_mask_pgm(b"P5\n4 1\n255\n\x00\x7f\x80\xff").unwrap();
        assert_eq!(m.as_bytes(), &[0, 0, 1, 1]);
    }

    #[test]
    fn depth_samples_are_big_endian() {
        let q = QuantizedDepth { dims: Dims::new(1, 1), samples: vec![0x0102] };
        assert!(encode_depth_pgm(&q).ends_with(&[0x01, 0x02]));
    }

    #[test]
    fn constant_depth_quantizes_to_zero() {
        let d = DepthMap::new(2, 1, vec![0.4, 0.4]).unwrap();
        let (q, range) = QuantizedDepth::from_depth(&d);
        assert_eq!(q.samples, vec![0, 0]);
        assert_eq!(q.raw(range).values(), &[0.4, 0.4]);
    }

    #[test]
    fn sidecar_round_trip_and_errors() {
        let r = DepthRange { min: 0.1234567890123, max: 1.0 / 3.0 };
        assert_eq!(DepthRange::from_sidecar(&r.to_sidecar()).unwrap(), r);
        assert!(DepthRange::from_sidecar("min 2\nmax 1\n").is_err());
        assert!(DepthRange::from_sidecar("min 2\n").is_err());
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h * 3).prop_map(move |d| Image::new(w, h, d).unwrap())
        })
    }

    fn arb_mask() -> impl Strategy<Value = Mask> {
        (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h).prop_map(move |b| Mask::from_bools(w, h, b).unwrap())
        })
    }

    proptest! {
        #[test]
        fn ppm_round_trip(img in arb_image()) {
            prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
        }

        #[test]
        fn mask_round_trip(m in arb_mask()) {
            prop_assert_eq!(decode_mask_pgm(&encode_mask_pgm(&m)).unwrap(), m);
        }

        #[test]
        fn depth_recovery_within_one_step(values in proptest::collection::vec(0.0f64..50.0, 1..40)) {
            let n = values.len();
            let d = DepthMap::new(n, 1, values).unwrap();
            let (q, range) = QuantizedDepth::from_depth(&d);
            let decoded = decode_depth_pgm(&encode_depth_pgm(&q)).unwrap();
            prop_assert_eq!(&decoded, &q);
            let bound = (range.max - range.min) / 65535.0;
            for (a, b) in d.values().iter().zip(decoded.raw(range).values()) {
                prop_assert!((a - b).abs() <= bound + 1e-12, "{} vs {} (bound {})", a, b, bound);
            }
        }
    }
}
