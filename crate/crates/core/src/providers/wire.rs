//! Binary request/response protocol for remote perception.
//!
//! All integers are big-endian. Messages are self-delimiting: every
//! variable-length field is preceded by the length (or the dimensions) that
//! determine its size.
//!
//! Request:
//!
//! | field        | size                    |
//! |--------------|-------------------------|
//! | magic `COBS` | 4                       |
//! | version = 1  | u8                      |
//! | frame_id     | u64                     |
//! | width        | u16                     |
//! | height       | u16                     |
//! | RGB payload  | width * height * 3      |
//! | object_label | u16 length + UTF-8      |
//! | robot_label  | u16 length + UTF-8      |
//! | flags        | u8, bit 0 = want_depth  |
//!
//! Response: magic, version, frame_id (u64), status (u8, 0 = ok). When the
//! status is 0 it is followed by the robot mask bitmap and the object mask
//! bitmap (`ceil(w * h / 8)` bytes each, row-major, most significant bit
//! first) and, if depth was requested, `w * h` u16 depth samples. Non-zero
//! statuses carry no body.

use std::io::{self, Read};

use crate::raster::{Dims, Mask};

pub const MAGIC: [u8; 4] = *b"COBS";
pub const VERSION: u8 = 1;
pub const FLAG_WANT_DEPTH: u8 = 0x01;

pub const STATUS_OK: u8 = 0;
pub const STATUS_MALFORMED: u8 = 1;
pub const STATUS_NOT_FOUND: u8 = 2;
pub const STATUS_DIMENSIONS: u8 = 3;
pub const STATUS_NO_DEPTH: u8 = 4;
pub const STATUS_INTERNAL: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireRequest {
    pub frame_id: u64,
    pub width: u16,
    pub height: u16,
    pub rgb: Vec<u8>,
    pub object_label: String,
    pub robot_label: String,
    pub want_depth: bool,
}

impl WireRequest {
    pub fn dims(&self) -> Dims {
        Dims::new(self.width as usize, self.height as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseBody {
    pub robot: Mask,
    pub object: Mask,
    pub depth: Option<Vec<u16>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireResponse {
    pub frame_id: u64,
    pub status: u8,
    pub body: Option<ResponseBody>,
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("invalid field: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn bitmap_len(dims: Dims) -> usize {
    dims.len().div_ceil(8)
}

/// Packs a mask row-major, most significant bit first; padding bits are 0.
pub fn pack_bits(mask: &Mask) -> Vec<u8> {
    let mut out = vec![0u8; bitmap_len(mask.dims())];
    for (i, on) in mask.iter().enumerate() {
        if on {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], dims: Dims) -> Result<Mask, WireError> {
    if bytes.len() != bitmap_len(dims) {
        return Err(WireError::Invalid(format!("bitmap of {} bytes for {dims}", bytes.len())));
    }
    Mask::from_bools(dims.width, dims.height, (0..dims.len()).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0))
        .map_err(|e| WireError::Invalid(e.to_string()))
}

fn put_label(out: &mut Vec<u8>, label: &str) {
    let bytes = label.as_bytes();
    let len = u16::try_from(bytes.len()).expect("label shorter than 64 KiB");
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(bytes);
}

pub fn encode_request(req: &WireRequest) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + req.rgb.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&req.frame_id.to_be_bytes());
    out.extend_from_slice(&req.width.to_be_bytes());
    out.extend_from_slice(&req.height.to_be_bytes());
    out.extend_from_slice(&req.rgb);
    put_label(&mut out, &req.object_label);
    put_label(&mut out, &req.robot_label);
    out.push(if req.want_depth { FLAG_WANT_DEPTH } else { 0 });
    out
}

fn read_array<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_vec(r: &mut impl Read, len: usize) -> io::Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_label(r: &mut impl Read) -> Result<String, WireError> {
    let len = u16::from_be_bytes(read_array(r)?) as usize;
    String::from_utf8(read_vec(r, len)?).map_err(|_| WireError::Invalid("label is not UTF-8".into()))
}

fn read_preamble(r: &mut impl Read) -> Result<u64, WireError> {
    let magic: [u8; 4] = read_array(r)?;
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let version = read_array::<1>(r)?[0];
    if version != VERSION {
        return Err(WireError::BadVersion(version));
    }
    Ok(u64::from_be_bytes(read_array(r)?))
}

pub fn read_request(r: &mut impl Read) -> Result<WireRequest, WireError> {
    let frame_id = read_preamble(r)?;
    let width = u16::from_be_bytes(read_array(r)?);
    let height = u16::from_be_bytes(read_array(r)?);
    if width == 0 || height == 0 {
        return Err(WireError::Invalid(format!("empty frame {width}x{height}")));
    }
    let rgb = read_vec(r, width as usize * height as usize * 3)?;
    let object_label = read_label(r)?;
    let robot_label = read_label(r)?;
    let flags = read_array::<1>(r)?[0];
    Ok(WireRequest {
        frame_id,
        width,
        height,
        rgb,
        object_label,
        robot_label,
        want_depth: flags & FLAG_WANT_DEPTH != 0,
    })
}

pub fn encode_response(resp: &WireResponse) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&resp.frame_id.to_be_bytes());
    out.push(resp.status);
    if let Some(body) = &resp.body {
        out.extend(pack_bits(&body.robot));
        out.extend(pack_bits(&body.object));
        if let Some(depth) = &body.depth {
            for q in depth {
                out.extend_from_slice(&q.to_be_bytes());
            }
        }
    }
    out
}

/// Reads a response to a request of size `dims`. The body layout depends on
/// what was asked for, so the caller supplies `want_depth`.
pub fn read_response(r: &mut impl Read, dims: Dims, want_depth: bool) -> Result<WireResponse, WireError> {
    let frame_id = read_preamble(r)?;
    let status = read_array::<1>(r)?[0];
    if status != STATUS_OK {
        return Ok(WireResponse { frame_id, status, body: None });
    }
    let robot = unpack_bits(&read_vec(r, bitmap_len(dims))?, dims)?;
    let object = unpack_bits(&read_vec(r, bitmap_len(dims))?, dims)?;
    let depth = if want_depth {
        let raw = read_vec(r, dims.len() * 2)?;
        Some(raw.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect())
    } else {
        None
    };
    Ok(WireResponse { frame_id, status, body: Some(ResponseBody { robot, object, depth }) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn request() -> WireRequest {
        WireRequest {
            frame_id: 0x0102_0304_0506_0708,
            width: 2,
            height: 1,
            rgb: vec![1, 2, 3, 4, 5, 6],
            object_label: "cube".into(),
            robot_label: "robot gripper".into(),
            want_depth: true,
        }
    }

    #[test]
    fn request_layout_is_exact() {
        let bytes = encode_request(&request());
        let mut expected = b"COBS\x01".to_vec();
        expected.extend_from_slice(&[1, 2, 3, 4, 5, 6, 7, 8]);
        expected.extend_from_slice(&[0, 2, 0, 1]);
        expected.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        expected.extend_from_slice(&[0, 4]);
        expected.extend_from_slice(b"cube");
        expected.extend_from_slice(&[0, 13]);
        expected.extend_from_slice(b"robot gripper");
        expected.push(1);
        assert_eq!(bytes, expected);
        assert_eq!(read_request(&mut bytes.as_slice()).unwrap(), request());
    }

    #[test]
    fn bits_are_msb_first() {
        let m = Mask::new(3, 3, vec![1, 0, 0, 0, 0, 0, 0, 0, 1]).unwrap();
        assert_eq!(pack_bits(&m), vec![0x80, 0x80]);
    }

    #[test]
    fn error_status_has_no_body() {
        let resp = WireResponse { frame_id: 9, status: STATUS_NOT_FOUND, body: None };
        let bytes = encode_response(&resp);
        assert_eq!(bytes.len(), 4 + 1 + 8 + 1);
        assert_eq!(read_response(&mut bytes.as_slice(), Dims::new(4, 4), true).unwrap(), resp);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode_request(&request());
        assert!(matches!(read_request(&mut &bytes[..bytes.len() - 1]), Err(WireError::Io(_))));
        bytes[0] = b'X';
        assert!(matches!(read_request(&mut bytes.as_slice()), Err(WireError::BadMagic(_))));
    }

    proptest! {
        #[test]
        fn response_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>(), want_depth in any::<bool>()) {
            let dims = Dims::new(w, h);
            let bit = |i: usize, salt: u64| (seed.rotate_left((i as u32 + salt as u32) % 64) & 1) == 1;
            let body = ResponseBody {
                robot: Mask::from_bools(w, h, (0..w * h).map(|i| bit(i, 0))).unwrap(),
                object: Mask::from_bools(w, h, (0..w * h).map(|i| bit(i, 7))).unwrap(),
                depth: want_depth.then(|| (0..w * h).map(|i| (seed as usize ^ i) as u16).collect()),
            };
            let resp = WireResponse { frame_id: seed, status: STATUS_OK, body: Some(body) };
            let bytes = encode_response(&resp);
            prop_assert_eq!(read_response(&mut bytes.as_slice(), dims, want_depth).unwrap(), resp);
        }
    }
}
