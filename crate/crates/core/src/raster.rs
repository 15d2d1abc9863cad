//! Row-major rasters: RGB images, binary masks, scalar depth maps and the
//! two-plane mask/depth raster used by the S2-style observation.

use serde::{Deserialize, Serialize};

use crate::error::ObsError;

/// Width and height in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub const fn len(self) -> usize {
        self.width * self.height
    }

    pub const fn is_empty(self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub(crate) fn check(self, other: Dims) -> Result<(), ObsError> {
        if self == other {
            Ok(())
        } else {
            Err(ObsError::DimensionMismatch { left: self, right: other })
        }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

fn check_nonempty(dims: Dims) -> Result<(), ObsError> {
    if dims.is_empty() {
        Err(ObsError::InvalidRaster(format!("raster must be at least 1x1, got {dims}")))
    } else {
        Ok(())
    }
}

/// An 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    dims: Dims,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ObsError> {
        let dims = Dims::new(width, height);
        check_nonempty(dims)?;
        if data.len() != dims.len() * 3 {
            return Err(ObsError::InvalidRaster(format!("RGB data length {} does not match {dims} x 3", data.len())));
        }
        Ok(Self { dims, data })
    }

    /// An image filled with one color.
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let dims = Dims::new(width.max(1), height.max(1));
        let data = color.0.repeat(dims.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixel_at(y * self.dims.width + x)
    }

    /// Pixel by row-major index.
    pub fn pixel_at(&self, i: usize) -> Rgb {
        Rgb([self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]])
    }

    pub fn set_pixel_at(&mut self, i: usize, color: Rgb) {
        self.data[3 * i..3 * i + 3].copy_from_slice(&color.0);
    }

    pub fn pixels(&self) -> impl Iterator<Item = Rgb> + '_ {
        self.data.chunks_exact(3).map(|c| Rgb([c[0], c[1], c[2]]))
    }
}

/// An RGB triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);

    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Rgb([r, g, b])
    }
}

impl std::str::FromStr for Rgb {
    type Err = String;

    /// Parses `r,g,b` or `#rrggbb`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(hex) = s.strip_prefix('#') {
            if hex.len() != 6 {
                return Err(format!("bad hex color '{s}'"));
            }
            let v = u32::from_str_radix(hex, 16).map_err(|e| format!("bad hex color '{s}': {e}"))?;
            return Ok(Rgb([(v >> 16) as u8, (v >> 8) as u8, v as u8]));
        }
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(format!("expected r,g,b but got '{s}'"));
        }
        let mut out = [0u8; 3];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = p.trim().parse().map_err(|e| format!("bad channel '{p}': {e}"))?;
        }
        Ok(Rgb(out))
    }
}

/// A binary raster. Stored as one byte per pixel holding 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    dims: Dims,
    bits: Vec<u8>,
}

impl Mask {
    /// Builds a mask from 0/1 values; any other value is rejected.
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self, ObsError> {
        let dims = Dims::new(width, height);
        check_nonempty(dims)?;
        if bits.len() != dims.len() {
            return Err(ObsError::InvalidRaster(format!("mask length {} does not match {dims}", bits.len())));
        }
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(ObsError::InvalidRaster(format!("mask value {} at index {i} is not 0/1", bits[i])));
        }
        Ok(Self { dims, bits })
    }

    pub fn from_bools(width: usize, height: usize, bits: impl IntoIterator<Item = bool>) -> Result<Self, ObsError> {
        Self::new(width, height, bits.into_iter().map(u8::from).collect())
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        let dims = Dims::new(width.max(1), height.max(1));
        Self { dims, bits: vec![0; dims.len()] }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        let dims = Dims::new(width.max(1), height.max(1));
        Self { dims, bits: vec![1; dims.len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i] != 0
    }

    pub fn at(&self, x: usize, y: usize) -> bool {
        self.get(y * self.dims.width + x)
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.bits[i] = u8::from(on);
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().map(|&b| b != 0)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn complement(&self) -> Mask {
        Mask { dims: self.dims, bits: self.bits.iter().map(|&b| 1 - b).collect() }
    }
}

/// A scalar relative-depth raster. Values are finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    dims: Dims,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ObsError> {
        let dims = Dims::new(width, height);
        check_nonempty(dims)?;
        if values.len() != dims.len() {
            return Err(ObsError::InvalidRaster(format!("depth length {} does not match {dims}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(ObsError::InvalidRaster(format!(
                "depth value {} at index {i} is not finite and non-negative",
                values[i]
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        let dims = Dims::new(width.max(1), height.max(1));
        Self { dims, values: vec![0.0; dims.len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Smallest and largest value.
    pub fn range(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Two co-registered real planes: binary object mask and normalized depth.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDepthPlanes {
    dims: Dims,
    mask: Vec<f64>,
    depth: Vec<f64>,
}

impl MaskDepthPlanes {
    pub(crate) fn from_parts(mask: &Mask, depth: &DepthMap) -> Self {
        Self {
            dims: mask.dims(),
            mask: mask.iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
            depth: depth.values().to_vec(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn mask_plane(&self) -> &[f64] {
        &self.mask
    }

    pub fn depth_plane(&self) -> &[f64] {
        &self.depth
    }
}
