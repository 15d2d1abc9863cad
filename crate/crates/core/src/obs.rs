//! Canonical observation construction.
//!
//! A raw RGB frame plus two binary masks (robot/gripper and target object)
//! and an optional relative depth map are turned into one of four policy
//! inputs:
//!
//! * [`Variant::Org`]: the raw frame, untouched.
//! * [`Variant::L0`]: a label-colored canvas. Background pixels take the
//!   palette background color, robot pixels the robot color and object
//!   pixels the object color. Where the two masks overlap the object wins.
//! * [`Variant::L1`]: the L0 canvas with the object region overwritten by
//!   depth normalized inside the object mask and tiled to three channels.
//! * [`Variant::S2`]: two real planes (object mask, normalized depth), to be
//!   mixed into three channels by a learned 1x1 adapter in the policy.
//!
//! Every function here is pure and deterministic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ObsError;
use crate::raster::{DepthMap, Dims, Image, Mask, MaskDepthPlanes, Rgb};

/// Default `epsilon` in the masked depth normalization.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// The observation variants a policy can be trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "ORG")]
    Org,
    L0,
    L1,
    S2,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Org, Variant::L0, Variant::L1, Variant::S2];

    /// Whether building this variant needs a depth map.
    pub fn needs_depth(self) -> bool {
        matches!(self, Variant::L1 | Variant::S2)
    }

    /// Whether building this variant needs the segmentation masks.
    pub fn needs_masks(self) -> bool {
        self != Variant::Org
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::Org => 0,
            Variant::L0 => 1,
            Variant::L1 => 2,
            Variant::S2 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Variant::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Org => "ORG",
            Variant::L0 => "L0",
            Variant::L1 => "L1",
            Variant::S2 => "S2",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ORG" => Ok(Variant::Org),
            "L0" => Ok(Variant::L0),
            "L1" => Ok(Variant::L1),
            "S2" => Ok(Variant::S2),
            _ => Err(format!("unknown variant '{s}' (expected ORG, L0, L1 or S2)")),
        }
    }
}

/// Canonical colors for background, robot and target object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityPalette {
    pub background: Rgb,
    pub robot: Rgb,
    pub object: Rgb,
}

impl Default for EntityPalette {
    fn default() -> Self {
        Self { background: Rgb::new(0, 0, 0), robot: Rgb::new(255, 0, 0), object: Rgb::new(0, 255, 0) }
    }
}

impl EntityPalette {
    pub fn validate(&self) -> Result<(), ObsError> {
        if self.background == self.robot || self.background == self.object || self.robot == self.object {
            return Err(ObsError::InvalidPalette(format!(
                "colors must be pairwise distinct, got background {:?}, robot {:?}, object {:?}",
                self.background.0, self.robot.0, self.object.0
            )));
        }
        Ok(())
    }
}

impl FromStr for EntityPalette {
    type Err = String;

    /// Parses `background;robot;object`, each color as `r,g,b` or `#rrggbb`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(';').collect();
        if parts.len() != 3 {
            return Err(format!("palette needs three ';'-separated colors, got '{s}'"));
        }
        let palette =
            EntityPalette { background: parts[0].parse()?, robot: parts[1].parse()?, object: parts[2].parse()? };
        palette.validate().map_err(|e| e.to_string())?;
        Ok(palette)
    }
}

/// What to segment and how to render it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub object_label: String,
    pub robot_label: String,
    /// When false the robot mask is dropped before repainting ("target-only").
    pub include_robot_mask: bool,
    pub palette: EntityPalette,
    pub epsilon: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            object_label: "target object".to_owned(),
            robot_label: "robot gripper".to_owned(),
            include_robot_mask: true,
            palette: EntityPalette::default(),
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), ObsError> {
        if self.object_label.trim().is_empty() || self.robot_label.trim().is_empty() {
            return Err(ObsError::InvalidTaskSpec("labels must be non-empty".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ObsError::InvalidTaskSpec(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        self.palette.validate()
    }
}

/// A policy input.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Org(Image),
    L0(Image),
    L1(Image),
    S2(MaskDepthPlanes),
}

impl Observation {
    pub fn variant(&self) -> Variant {
        match self {
            Observation::Org(_) => Variant::Org,
            Observation::L0(_) => Variant::L0,
            Observation::L1(_) => Variant::L1,
            Observation::S2(_) => Variant::S2,
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            Observation::Org(i) | Observation::L0(i) | Observation::L1(i) => i.dims(),
            Observation::S2(p) => p.dims(),
        }
    }

    /// The 3-channel image for ORG/L0/L1, `None` for S2.
    pub fn image(&self) -> Option<&Image> {
        match self {
            Observation::Org(i) | Observation::L0(i) | Observation::L1(i) => Some(i),
            Observation::S2(_) => None,
        }
    }

    pub fn planes(&self) -> Option<&MaskDepthPlanes> {
        match self {
            Observation::S2(p) => Some(p),
            _ => None,
        }
    }
}

/// Pixelwise OR of one or more masks.
pub fn mask_union(masks: &[&Mask]) -> Result<Mask, ObsError> {
    let (first, rest) = masks.split_first().ok_or(ObsError::EmptyMaskList)?;
    let mut out = (*first).clone();
    for m in rest {
        first.dims().check(m.dims())?;
        for i in 0..out.dims().len() {
            if m.get(i) {
                out.set(i, true);
            }
        }
    }
    Ok(out)
}

/// Pixels covered by neither the robot nor the object.
pub fn background_mask(robot: &Mask, object: &Mask) -> Result<Mask, ObsError> {
    Ok(mask_union(&[robot, object])?.complement())
}

/// Paints the label-colored L0 canvas.
///
/// Layers are applied background, then robot, then object, so a pixel in
/// both masks gets the object color and no blended color can appear.
pub fn repaint_l0(robot: &Mask, object: &Mask, palette: &EntityPalette) -> Result<Image, ObsError> {
    robot.dims().check(object.dims())?;
    palette.validate()?;
    let dims = robot.dims();
    let mut out = Image::filled(dims.width, dims.height, palette.background);
    for i in 0..dims.len() {
        if object.get(i) {
            out.set_pixel_at(i, palette.object);
        } else if robot.get(i) {
            out.set_pixel_at(i, palette.robot);
        }
    }
    Ok(out)
}

/// Whether the region a depth map was normalized over had any pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionStatus {
    Populated,
    /// The object mask was empty; the returned map is all zeros.
    Empty,
}

/// Min-max normalizes `depth` over the pixels of `object`, zero elsewhere.
///
/// Inside the mask the value is `(d - d_min) / (d_max - d_min + epsilon)`
/// with the extrema taken over masked pixels only, so the masked minimum
/// maps to exactly 0 and every output is strictly below 1.
pub fn normalize_depth_in_mask(
    depth: &DepthMap,
    object: &Mask,
    epsilon: f64,
) -> Result<(DepthMap, RegionStatus), ObsError> {
    depth.dims().check(object.dims())?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(ObsError::InvalidTaskSpec(format!("epsilon must be positive, got {epsilon}")));
    }
    let dims = depth.dims();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in (0..dims.len()).filter(|&i| object.get(i)) {
        lo = lo.min(depth.get(i));
        hi = hi.max(depth.get(i));
    }
    if lo > hi {
        return Ok((DepthMap::zeros(dims.width, dims.height), RegionStatus::Empty));
    }
    let denom = hi - lo + epsilon;
    let values = (0..dims.len()).map(|i| if object.get(i) { (depth.get(i) - lo) / denom } else { 0.0 }).collect();
    let map = DepthMap::new(dims.width, dims.height, values)?;
    Ok((map, RegionStatus::Populated))
}

/// Quantizes a unit-interval value to a byte, rounding half away from zero.
pub fn quantize_unit(x: f64) -> u8 {
    (255.0 * x).round() as u8
}

/// Overwrites the object region of an L0 canvas with tiled normalized depth.
///
/// Pixels outside `object` are copied from `l0` unchanged.
pub fn fuse_l1(l0: &Image, object: &Mask, depth_norm: &DepthMap) -> Result<Image, ObsError> {
    l0.dims().check(object.dims())?;
    l0.dims().check(depth_norm.dims())?;
    let mut out = l0.clone();
    for i in 0..l0.dims().len() {
        let v = depth_norm.get(i);
        if !(0.0..=1.0).contains(&v) {
            return Err(ObsError::DepthOutOfRange { index: i, value: v });
        }
        if object.get(i) {
            let q = quantize_unit(v);
            out.set_pixel_at(i, Rgb([q, q, q]));
        }
    }
    Ok(out)
}

/// Builds the policy input for one frame.
///
/// `depth` is required for L1 and S2 and ignored otherwise. ORG ignores the
/// masks entirely. An empty object mask under L1/S2 is not an error: the
/// depth region is left empty and a warning is logged.
pub fn build_observation(
    frame: &Image,
    robot: &Mask,
    object: &Mask,
    depth: Option<&DepthMap>,
    spec: &TaskSpec,
    variant: Variant,
) -> Result<Observation, ObsError> {
    if variant == Variant::Org {
        return Ok(Observation::Org(frame.clone()));
    }
    frame.dims().check(robot.dims())?;
    frame.dims().check(object.dims())?;
    let depth = match (variant.needs_depth(), depth) {
        (true, None) => return Err(ObsError::MissingDepth(variant)),
        (true, Some(d)) => {
            frame.dims().check(d.dims())?;
            Some(d)
        }
        (false, _) => None,
    };

    let normalized = match depth {
        Some(d) => {
            let (norm, status) = normalize_depth_in_mask(d, object, spec.epsilon)?;
            if status == RegionStatus::Empty {
                log::warn!("empty object mask; {variant} depth region left empty");
            }
            Some(norm)
        }
        None => None,
    };

    if variant == Variant::S2 {
        let norm = normalized.expect("S2 always has depth here");
        return Ok(Observation::S2(MaskDepthPlanes::from_parts(object, &norm)));
    }

    let dims = frame.dims();
    let no_robot;
    let robot = if spec.include_robot_mask {
        robot
    } else {
        no_robot = Mask::zeros(dims.width, dims.height);
        &no_robot
    };
    let l0 = repaint_l0(robot, object, &spec.palette)?;
    match normalized {
        Some(norm) => Ok(Observation::L1(fuse_l1(&l0, object, &norm)?)),
        None => Ok(Observation::L0(l0)),
    }
}

/// Intersection over union. Two empty masks agree perfectly and score 1.
pub fn mask_iou(predicted: &Mask, truth: &Mask) -> Result<f64, ObsError> {
    predicted.dims().check(truth.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, t) in predicted.iter().zip(truth.iter()) {
        inter += usize::from(p && t);
        union += usize::from(p || t);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}
