//! A procedural 2D tabletop lift task.
//!
//! The world is the unit square with `y` pointing up. A U-shaped gripper
//! must reach a disc-shaped object resting on the table, close on it and
//! carry it above the lift line. Appearance (table, object and distractor
//! colors, pixel noise) lives in an [`AppearanceTheme`] that the dynamics
//! never read, so appearance shifts change pixels without changing the task.

mod dynamics;
pub mod episode;
mod render;
mod rollout;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::raster::Rgb;
use crate::seeds;

pub use dynamics::{scripted_expert, step, ScriptedExpert};
pub use episode::{list_episodes, read_episode, write_episode, ActionRecord, EpisodeMeta};
pub use render::{ground_truth, render, Entity};
pub use rollout::{rollout, Controller, ControllerError, Episode, RolloutError, RolloutOptions};

/// Default square render resolution.
pub const DEFAULT_RESOLUTION: usize = 64;
/// Largest per-step displacement along each axis.
pub const MAX_STEP: f64 = 0.05;
/// Closing within this distance of the object center attaches it.
pub const GRASP_RADIUS: f64 = 0.04;
/// The expert closes once it is this close to the object.
pub const EXPERT_CLOSE_DISTANCE: f64 = 0.03;
/// An attached object counts as lifted once the gripper reaches this height.
pub const LIFT_LINE: f64 = 0.8;
pub const OBJECT_RADIUS: f64 = 0.07;
/// Fraction of start states with the gripper already closed, so
/// demonstrations include reopening.
pub const CLOSED_START_PROBABILITY: f64 = 0.3;
/// Step budget within which the scripted expert always succeeds.
pub const EXPERT_HORIZON: usize = 200;

/// Gripper color; robot appearance is never shifted.
pub const GRIPPER_COLOR: Rgb = Rgb::new(70, 70, 84);

pub type Vec2 = [f64; 2];

pub fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Colors and noise for one visual condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppearanceTheme {
    pub name: String,
    pub version: u32,
    pub table_color: Rgb,
    pub object_color: Rgb,
    pub distractor_palette: Vec<Rgb>,
    /// Per-channel uniform noise amplitude in 8-bit levels.
    pub noise_amplitude: u8,
}

impl AppearanceTheme {
    pub fn with_noise(mut self, amplitude: u8) -> Self {
        self.noise_amplitude = amplitude;
        self
    }
}

/// A flat square clutter item lying on the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub pos: Vec2,
    /// Half the side length.
    pub radius: f64,
    pub color: Rgb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub gripper_pos: Vec2,
    pub gripper_closed: bool,
    pub object_pos: Vec2,
    pub object_lifted: bool,
    /// Object offset from the gripper while grasped.
    pub grasp: Option<Vec2>,
    pub distractors: Vec<Distractor>,
    pub appearance: AppearanceTheme,
    /// Seed of the per-pixel render noise.
    pub noise_seed: u64,
    /// Number of steps taken; varies the render noise between frames.
    pub tick: u64,
}

impl SceneState {
    pub fn attached(&self) -> bool {
        self.grasp.is_some()
    }

    /// Same task state, ignoring appearance and the frame counter.
    pub fn same_physics(&self, other: &SceneState) -> bool {
        self.gripper_pos == other.gripper_pos
            && self.gripper_closed == other.gripper_closed
            && self.object_pos == other.object_pos
            && self.object_lifted == other.object_lifted
            && self.grasp == other.grasp
            && self
                .distractors
                .iter()
                .map(|d| (d.pos, d.radius))
                .eq(other.distractors.iter().map(|d| (d.pos, d.radius)))
    }
}

/// One environment step: a clipped planar displacement and a grip command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta: Vec2,
    /// Positive closes the gripper, zero or negative opens it.
    pub grip: f64,
}

impl Action {
    /// Builds an action, clipping each displacement to `MAX_STEP` and the
    /// grip to `[-1, 1]`.
    pub fn new(dx: f64, dy: f64, grip: f64) -> Self {
        Self { delta: [dx.clamp(-MAX_STEP, MAX_STEP), dy.clamp(-MAX_STEP, MAX_STEP)], grip: grip.clamp(-1.0, 1.0) }
    }

    pub fn closes(&self) -> bool {
        self.grip > 0.0
    }

    /// The action in unit-box coordinates used by the policy.
    pub fn to_normalized(self) -> [f64; 3] {
        [self.delta[0] / MAX_STEP, self.delta[1] / MAX_STEP, self.grip]
    }

    pub fn from_normalized(v: [f64; 3]) -> Self {
        Self::new(v[0] * MAX_STEP, v[1] * MAX_STEP, v[2])
    }
}

/// Which visual condition a scene is drawn under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Id,
    /// Unseen object color (1..=3).
    OodObj(u8),
    /// Unseen table color plus `k + 1` distractors (1..=3).
    OodBg(u8),
}

impl Condition {
    pub const ALL: [Condition; 7] = [
        Condition::Id,
        Condition::OodObj(1),
        Condition::OodObj(2),
        Condition::OodObj(3),
        Condition::OodBg(1),
        Condition::OodBg(2),
        Condition::OodBg(3),
    ];

    pub fn is_ood(self) -> bool {
        self != Condition::Id
    }

    pub fn axis(self) -> &'static str {
        match self {
            Condition::Id => "ID",
            Condition::OodObj(_) => "OOD_OBJ",
            Condition::OodBg(_) => "OOD_BG",
        }
    }

    pub fn theme(self) -> AppearanceTheme {
        let train = training_theme();
        match self {
            Condition::Id => train,
            Condition::OodObj(k) => {
                AppearanceTheme { name: self.to_string(), object_color: OOD_OBJECT_COLORS[k as usize - 1], ..train }
            }
            Condition::OodBg(k) => {
                AppearanceTheme { name: self.to_string(), table_color: OOD_TABLE_COLORS[k as usize - 1], ..train }
            }
        }
    }

    pub fn distractor_count(self) -> usize {
        match self {
            Condition::OodBg(k) => k as usize + 1,
            _ => 0,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Id => f.write_str("ID"),
            Condition::OodObj(k) => write!(f, "OOD_OBJ_{k}"),
            Condition::OodBg(k) => write!(f, "OOD_BG_{k}"),
        }
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown condition '{s}'"))
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const OOD_OBJECT_COLORS: [Rgb; 3] = [Rgb::new(232, 140, 32), Rgb::new(200, 40, 160), Rgb::new(236, 226, 58)];
const OOD_TABLE_COLORS: [Rgb; 3] = [Rgb::new(62, 112, 72), Rgb::new(72, 70, 150), Rgb::new(236, 236, 232)];

/// The appearance all demonstrations are rendered with.
pub fn training_theme() -> AppearanceTheme {
    AppearanceTheme {
        name: "ID".into(),
        version: 1,
        table_color: Rgb::new(196, 174, 140),
        object_color: Rgb::new(40, 90, 200),
        distractor_palette: vec![
            Rgb::new(150, 60, 40),
            Rgb::new(120, 124, 40),
            Rgb::new(40, 160, 160),
            Rgb::new(210, 120, 172),
        ],
        noise_amplitude: 4,
    }
}

/// Draws a scene for `condition`.
///
/// Geometry comes from its own stream of `seed`, so every condition shares
/// gripper and object placement for a given seed; distractors come from a
/// second stream and are placed clear of the object.
pub fn sample_scene(condition: Condition, seed: u64) -> SceneState {
    let mut geo = seeds::rng(seed, "scene-geometry", 0);
    let object_pos = [geo.random_range(0.15..0.85), geo.random_range(0.12..0.35)];
    let gripper_pos = [geo.random_range(0.1..0.9), geo.random_range(0.45..0.9)];
    let gripper_closed = geo.random_bool(CLOSED_START_PROBABILITY);

    let theme = condition.theme();
    let mut clutter = seeds::rng(seed, "scene-distractors", 0);
    let mut distractors = Vec::new();
    while distractors.len() < condition.distractor_count() {
        let radius = clutter.random_range(0.04..0.08);
        let pos = [clutter.random_range(0.08..0.92), clutter.random_range(0.08..0.92)];
        let color = theme.distractor_palette[clutter.random_range(0..theme.distractor_palette.len())];
        // a square of half-side r stays inside a disc of radius r*sqrt(2)
        if dist(pos, object_pos) > OBJECT_RADIUS + radius * std::f64::consts::SQRT_2 + 0.01 {
            distractors.push(Distractor { pos, radius, color });
        }
    }

    SceneState {
        gripper_pos,
        gripper_closed,
        object_pos,
        object_lifted: false,
        grasp: None,
        distractors,
        appearance: theme,
        noise_seed: seeds::derive(seed, "render-noise", 0),
        tick: 0,
    }
}
