//! Policy checkpoints.
//!
//! Binary layout, little-endian: magic `FMP1`, variant tag (u8), then u32
//! fields history, grid, encoder_hidden, feature_dim, hidden, action_dim,
//! ode_steps and parameter count, then every parameter as an f32 in layout
//! order, then the input standardization (all shifts, then all scales) as
//! f32. Metadata goes to a JSON sidecar next to it (`<file>.json`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Architecture, FlowPolicy, InputNorm, LossPoint, PolicyError, TrainConfig};
use crate::obs::{TaskSpec, Variant};

const MAGIC: &[u8; 4] = b"FMP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variant: Variant,
    pub architecture: Architecture,
    pub param_count: usize,
    pub config: TrainConfig,
    pub spec: TaskSpec,
    pub loss_curve: Vec<LossPoint>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PolicyError + '_ {
    move |source| PolicyError::Io { path: path.to_owned(), source }
}

pub fn encode_checkpoint(policy: &FlowPolicy) -> Vec<u8> {
    let a = policy.architecture();
    let mut out = Vec::with_capacity(37 + 4 * policy.param_count());
    out.extend_from_slice(MAGIC);
    out.push(policy.variant().tag());
    for v in [
        a.history,
        a.grid,
        a.encoder_hidden,
        a.feature_dim,
        a.hidden,
        a.action_dim,
        policy.ode_steps(),
        policy.param_count(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let norm = policy.input_norm();
    for p in policy.params().iter().chain(&norm.shift).chain(&norm.scale) {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<FlowPolicy, PolicyError> {
    let bad = |m: &str| PolicyError::Checkpoint(m.to_owned());
    if bytes.len() < 37 || &bytes[..4] != MAGIC {
        return Err(bad("not an FMP1 checkpoint"));
    }
    let variant = Variant::from_tag(bytes[4]).ok_or_else(|| bad("unknown variant tag"))?;
    let field = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().expect("4 bytes")) as usize;
    let arch = Architecture {
        history: field(0),
        grid: field(1),
        encoder_hidden: field(2),
        feature_dim: field(3),
        hidden: field(4),
        action_dim: field(5),
    };
    let (ode_steps, count) = (field(6), field(7));
    if arch.action_dim != 3 || arch.history == 0 || arch.grid == 0 || ode_steps == 0 {
        return Err(bad("unsupported dimensions"));
    }
    let inputs = arch.raw_inputs(if variant == Variant::S2 { 2 } else { 3 });
    let body = &bytes[37..];
    if body.len() != (count + 2 * inputs) * 4 {
        return Err(bad(&format!("{} body bytes for {count} parameters and {inputs} inputs", body.len())));
    }
    let mut values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let params = values.by_ref().take(count).collect();
    let shift = values.by_ref().take(inputs).collect();
    let scale = values.collect();
    FlowPolicy::from_params(variant, arch, ode_steps, params, InputNorm { shift, scale })
}

/// Writes the checkpoint and its metadata sidecar.
pub fn save_checkpoint(path: &Path, policy: &FlowPolicy, meta: &CheckpointMeta) -> Result<(), PolicyError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, encode_checkpoint(policy)).map_err(io_err(path))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).expect("serializable");
    std::fs::write(&side, json + "\n").map_err(io_err(&side))
}

/// Reads a checkpoint; the sidecar is optional.
pub fn load_checkpoint(path: &Path) -> Result<(FlowPolicy, Option<CheckpointMeta>), PolicyError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let policy = decode_checkpoint(&bytes)?;
    let side = sidecar_path(path);
    let meta = match std::fs::read_to_string(&side) {
        Ok(text) => {
            Some(serde_json::from_str(&text).map_err(|e| PolicyError::Checkpoint(format!("{}: {e}", side.display())))?)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(io_err(&side)(e)),
    };
    Ok((policy, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_after_f32_rounding() {
        for v in Variant::ALL {
            let mut p = FlowPolicy::init(v, &TrainConfig::default()).unwrap();
            p.round_to_f32();
            let bytes = encode_checkpoint(&p);
            assert_eq!(&bytes[..4], b"FMP1");
            let inputs = 2 * p.input_norm().len();
            assert_eq!(bytes.len(), 37 + 4 * (p.param_count() + inputs));
            assert_eq!(decode_checkpoint(&bytes).unwrap(), p);
        }
    }

    #[test]
    fn rejects_corruption() {
        let p = FlowPolicy::init(Variant::L0, &TrainConfig::default()).unwrap();
        let mut bytes = encode_checkpoint(&p);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes).is_err());
    }

    #[test]
    fn files_and_sidecar() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ckpt/policy.fmp");
        let mut p = FlowPolicy::init(Variant::S2, &TrainConfig::default()).unwrap();
        p.round_to_f32();
        let meta = CheckpointMeta {
            variant: Variant::S2,
            architecture: p.architecture(),
            param_count: p.param_count(),
            config: TrainConfig::default(),
            spec: TaskSpec::default(),
            loss_curve: vec![LossPoint { step: 0, loss: 1.5 }],
        };
        save_checkpoint(&path, &p, &meta).unwrap();
        let (q, m) = load_checkpoint(&path).unwrap();
        assert_eq!(q, p);
        assert_eq!(m.unwrap(), meta);
    }
}
