//! On-disk episode layout.
//!
//! ```text
//! episode_<seed>/
//!   frame_<t>.ppm          RGB frame
//!   mask_robot_<t>.pgm     robot/gripper mask
//!   mask_object_<t>.pgm    target-object mask
//!   depth_<t>.pgm          16-bit relative depth
//!   depth_<t>.range        depth range sidecar
//!   actions.jsonl          {"t", "dx", "dy", "grip"} per step
//!   meta.json              {"condition", "seed", "success", "resolution"}
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Action, Condition, Episode};
use crate::codec;
use crate::obs::TaskSpec;
use crate::providers::{file_provide, PerceptionRequest, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub condition: Condition,
    pub seed: u64,
    pub success: bool,
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub t: usize,
    pub dx: f64,
    pub dy: f64,
    pub grip: f64,
}

pub fn episode_dir_name(seed: u64) -> String {
    format!("episode_{seed}")
}

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{t}.ppm"))
}

pub fn robot_mask_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("mask_robot_{t}.pgm"))
}

pub fn object_mask_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("mask_object_{t}.pgm"))
}

pub fn depth_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("depth_{t}.pgm"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ProviderError + '_ {
    move |source| ProviderError::Codec(codec::CodecError::Io { path: path.to_owned(), source })
}

/// Writes `episode` under `root/episode_<seed>/` and returns that directory.
pub fn write_episode(root: &Path, episode: &Episode) -> Result<PathBuf, ProviderError> {
    let dir = root.join(episode_dir_name(episode.seed));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for (t, (frame, p)) in episode.frames.iter().zip(&episode.perception).enumerate() {
        codec::write_ppm(&frame_path(&dir, t), frame)?;
        codec::write_mask(&robot_mask_path(&dir, t), &p.robot)?;
        codec::write_mask(&object_mask_path(&dir, t), &p.object)?;
        if let Some(depth) = &p.depth {
            codec::write_depth(&depth_path(&dir, t), depth)?;
        }
    }

    let actions_path = dir.join("actions.jsonl");
    let mut out = Vec::new();
    for (t, a) in episode.actions.iter().enumerate() {
        let rec = ActionRecord { t, dx: a.delta[0], dy: a.delta[1], grip: a.grip };
        serde_json::to_writer(&mut out, &rec).expect("plain struct serializes");
        out.push(b'\n');
    }
    fs::write(&actions_path, out).map_err(io_err(&actions_path))?;

    let meta = EpisodeMeta {
        condition: episode.condition,
        seed: episode.seed,
        success: episode.success,
        resolution: episode.resolution,
    };
    let meta_path = dir.join("meta.json");
    let mut f = fs::File::create(&meta_path).map_err(io_err(&meta_path))?;
    serde_json::to_writer_pretty(&mut f, &meta).expect("plain struct serializes");
    f.write_all(b"\n").map_err(io_err(&meta_path))?;
    Ok(dir)
}

pub fn read_meta(dir: &Path) -> Result<EpisodeMeta, ProviderError> {
    let path = dir.join("meta.json");
    if !path.exists() {
        return Err(ProviderError::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(format!("{}: {e}", path.display())))
}

pub fn read_actions(dir: &Path) -> Result<Vec<Action>, ProviderError> {
    let path = dir.join("actions.jsonl");
    if !path.exists() {
        return Err(ProviderError::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let rec: ActionRecord = serde_json::from_str(line)
                .map_err(|e| ProviderError::Malformed(format!("{} line {}: {e}", path.display(), i + 1)))?;
            if rec.t != i {
                return Err(ProviderError::Malformed(format!(
                    "{} line {}: expected t = {i}, found {}",
                    path.display(),
                    i + 1,
                    rec.t
                )));
            }
            Ok(Action::new(rec.dx, rec.dy, rec.grip))
        })
        .collect()
}

/// Loads an episode directory, taking perception from its mask/depth files.
pub fn read_episode(dir: &Path, spec: &TaskSpec) -> Result<Episode, ProviderError> {
    let meta = read_meta(dir)?;
    let actions = read_actions(dir)?;
    let mut frames = Vec::with_capacity(actions.len() + 1);
    let mut perception = Vec::with_capacity(actions.len() + 1);
    for t in 0..=actions.len() {
        let path = frame_path(dir, t);
        if !path.exists() {
            return Err(ProviderError::MissingFile(path));
        }
        let frame = codec::read_ppm(&path)?;
        let request = PerceptionRequest { frame_id: t as u64, frame, spec: spec.clone() };
        perception.push(file_provide(&request, dir)?);
        frames.push(request.frame);
    }
    Ok(Episode {
        seed: meta.seed,
        condition: meta.condition,
        resolution: meta.resolution,
        frames,
        perception,
        actions,
        success: meta.success,
        failure: None,
        mask_iou: Vec::new(),
    })
}

/// Episode directories under `root`, ordered by seed.
pub fn list_episodes(root: &Path) -> Result<Vec<PathBuf>, ProviderError> {
    let mut dirs: Vec<(u64, PathBuf)> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let seed = name.strip_prefix("episode_")?.parse().ok()?;
            e.path().is_dir().then(|| (seed, e.path()))
        })
        .collect();
    dirs.sort();
    Ok(dirs.into_iter().map(|(_, p)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::Variant;
    use crate::sim::{rollout, RolloutOptions, ScriptedExpert};

    #[test]
    fn write_then_read_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let expert = ScriptedExpert { variant: Variant::Org };
        let ep = rollout(&expert, Variant::Org, Condition::Id, 21, 200, &RolloutOptions::default()).unwrap();
        let dir = write_episode(tmp.path(), &ep).unwrap();
        assert!(dir.ends_with("episode_21"));
        let back = read_episode(&dir, &TaskSpec::default()).unwrap();
        assert_eq!(back.frames, ep.frames);
        assert_eq!(back.actions, ep.actions);
        assert_eq!(back.success, ep.success);
        for (a, b) in back.perception.iter().zip(&ep.perception) {
            assert_eq!(a.robot, b.robot);
            assert_eq!(a.object, b.object);
        }
        let lines = fs::read_to_string(dir.join("actions.jsonl")).unwrap().lines().count();
        assert_eq!(lines, ep.frames.len() - 1);
        assert_eq!(list_episodes(tmp.path()).unwrap(), vec![dir]);
    }
}
