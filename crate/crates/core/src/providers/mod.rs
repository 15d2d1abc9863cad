//! Where masks and depth come from.
//!
//! The observation math only needs a robot mask, an object mask and
//! (for L1/S2) a depth map per frame. Providers supply those from the
//! simulator's ground truth, from pre-computed files in the episode layout,
//! or from a remote service speaking the binary wire protocol in [`wire`].

mod degrade;
mod remote;
pub mod wire;

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::error::ObsError;
use crate::obs::TaskSpec;
use crate::raster::{DepthMap, Image, Mask};
use crate::sim::{self, episode, SceneState};

pub use degrade::{degrade_masks, MaskDegradation};
pub use remote::{remote_provide, EchoServer, RemoteProvider, ServerHandle};

/// One frame to perceive.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionRequest {
    /// Unique within an episode; the file and echo providers use it as the
    /// time index.
    pub frame_id: u64,
    pub frame: Image,
    pub spec: TaskSpec,
}

/// Wall-clock seconds spent per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Latency {
    pub segmentation: f64,
    pub depth: f64,
}

impl Latency {
    pub fn total(&self) -> f64 {
        self.segmentation + self.depth
    }
}

#[derive(Debug, Clone)]
pub struct PerceptionResult {
    pub robot: Mask,
    pub object: Mask,
    pub depth: Option<DepthMap>,
    pub latency: Latency,
}

impl PerceptionResult {
    /// Equal masks and depth; latency is ignored.
    pub fn same_rasters(&self, other: &PerceptionResult) -> bool {
        self.robot == other.robot && self.object == other.object && self.depth == other.depth
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("missing input file {}", .0.display())]
    MissingFile(PathBuf),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error("frame does not match scene: {0}")]
    FrameMismatch(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("server returned status {status} for frame {frame_id}")]
    Status { status: u8, frame_id: u64 },
    #[error("connection error: {0}")]
    Io(std::io::Error),
}

/// Common interface over the providers.
pub trait PerceptionProvider: Send + Sync {
    fn provide(&self, request: &PerceptionRequest) -> Result<PerceptionResult, ProviderError>;
}

/// Ground-truth perception for a simulator frame.
///
/// The frame must be the render of `scene` at its own resolution.
pub fn oracle_provide(request: &PerceptionRequest, scene: &SceneState) -> Result<PerceptionResult, ProviderError> {
    let dims = request.frame.dims();
    if dims.width != dims.height {
        return Err(ProviderError::FrameMismatch(format!("simulator frames are square, got {dims}")));
    }
    let start = Instant::now();
    if sim::render(scene, dims.width) != request.frame {
        return Err(ProviderError::FrameMismatch(format!(
            "frame {} is not a render of the given scene",
            request.frame_id
        )));
    }
    let mut result = sim::ground_truth(scene, dims.width);
    result.latency.segmentation = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Reads masks (and depth, when present) for frame `frame_id` from an
/// episode directory. A missing depth file yields `depth: None`; missing
/// masks are an error.
pub fn file_provide(request: &PerceptionRequest, root: &Path) -> Result<PerceptionResult, ProviderError> {
    let t = request.frame_id as usize;
    let start = Instant::now();
    let read_mask = |path: PathBuf| -> Result<Mask, ProviderError> {
        if !path.exists() {
            return Err(ProviderError::MissingFile(path));
        }
        let m = codec::read_mask(&path)?;
        request.frame.dims().check(m.dims())?;
        Ok(m)
    };
    let robot = read_mask(episode::robot_mask_path(root, t))?;
    let object = read_mask(episode::object_mask_path(root, t))?;
    let segmentation = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let depth_path = episode::depth_path(root, t);
    let depth = if depth_path.exists() {
        let q = codec::read_depth(&depth_path)?;
        request.frame.dims().check(q.dims)?;
        Some(q.relative())
    } else {
        None
    };
    Ok(PerceptionResult {
        robot,
        object,
        depth,
        latency: Latency { segmentation, depth: start.elapsed().as_secs_f64() },
    })
}

/// File-backed provider rooted at one episode directory.
#[derive(Debug, Clone)]
pub struct FileProvider {
    pub root: PathBuf,
}

impl PerceptionProvider for FileProvider {
    fn provide(&self, request: &PerceptionRequest) -> Result<PerceptionResult, ProviderError> {
        file_provide(request, &self.root)
    }
}
