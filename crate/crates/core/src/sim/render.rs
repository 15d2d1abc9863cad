use crate::providers::{Latency, PerceptionResult};
use crate::raster::{DepthMap, Image, Mask, Rgb};
use crate::seeds::splitmix64;

use super::{SceneState, Vec2, GRIPPER_COLOR, OBJECT_RADIUS};

const TABLE_DEPTH: f64 = 1.0;
const GRIPPER_DEPTH: f64 = 0.6;
/// How far the top of the object dome sits above the table.
const OBJECT_HEIGHT: f64 = 0.2;

const FINGER_WIDTH: f64 = 0.03;
const FINGER_GAP_OPEN: f64 = 0.10;
const FINGER_GAP_CLOSED: f64 = 0.05;
const FINGER_BELOW: f64 = 0.07;
const FINGER_ABOVE: f64 = 0.05;
const PALM_HEIGHT: f64 = 0.03;

/// What is visible at a pixel after painter's-order compositing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entity {
    Table,
    Distractor(usize),
    Object,
    Gripper,
}

struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Rect {
    fn contains(&self, p: Vec2) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

/// The gripper as three rectangles forming a downward-facing U.
fn gripper_parts(pos: Vec2, closed: bool) -> [Rect; 3] {
    let gap = if closed { FINGER_GAP_CLOSED } else { FINGER_GAP_OPEN };
    let [x, y] = pos;
    let (lo, hi) = (y - FINGER_BELOW, y + FINGER_ABOVE);
    [
        Rect { x0: x - gap - FINGER_WIDTH, x1: x - gap, y0: lo, y1: hi },
        Rect { x0: x + gap, x1: x + gap + FINGER_WIDTH, y0: lo, y1: hi },
        Rect { x0: x - gap - FINGER_WIDTH, x1: x + gap + FINGER_WIDTH, y0: hi, y1: hi + PALM_HEIGHT },
    ]
}

fn pixel_center(i: usize, res: usize) -> Vec2 {
    let (row, col) = (i / res, i % res);
    [(col as f64 + 0.5) / res as f64, 1.0 - (row as f64 + 0.5) / res as f64]
}

/// Composites the scene back to front: table, distractors, object, gripper.
pub fn rasterize_entities(scene: &SceneState, resolution: usize) -> Vec<Entity> {
    let res = resolution.max(1);
    let gripper = gripper_parts(scene.gripper_pos, scene.gripper_closed);
    let r2 = OBJECT_RADIUS * OBJECT_RADIUS;
    (0..res * res)
        .map(|i| {
            let p = pixel_center(i, res);
            if gripper.iter().any(|r| r.contains(p)) {
                return Entity::Gripper;
            }
            let o = scene.object_pos;
            if (p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2) <= r2 {
                return Entity::Object;
            }
            // later distractors are drawn on top of earlier ones
            scene
                .distractors
                .iter()
                .enumerate()
                .rev()
                .find(|(_, d)| (p[0] - d.pos[0]).abs() <= d.radius && (p[1] - d.pos[1]).abs() <= d.radius)
                .map_or(Entity::Table, |(k, _)| Entity::Distractor(k))
        })
        .collect()
}

fn noisy(c: Rgb, amplitude: u8, key: u64) -> Rgb {
    if amplitude == 0 {
        return c;
    }
    let span = 2 * amplitude as u64 + 1;
    let mut out = c.0;
    for (ch, v) in out.iter_mut().enumerate() {
        let n = (splitmix64(key ^ (ch as u64).wrapping_mul(0xA24B_AED4_963E_E407)) % span) as i32 - amplitude as i32;
        *v = (*v as i32 + n).clamp(0, 255) as u8;
    }
    Rgb(out)
}

/// Renders the RGB frame a camera would see.
pub fn render(scene: &SceneState, resolution: usize) -> Image {
    let res = resolution.max(1);
    let theme = &scene.appearance;
    let frame_key = splitmix64(scene.noise_seed ^ splitmix64(scene.tick));
    let mut img = Image::filled(res, res, theme.table_color);
    for (i, e) in rasterize_entities(scene, res).into_iter().enumerate() {
        let color = match e {
            Entity::Table => theme.table_color,
            Entity::Distractor(k) => scene.distractors[k].color,
            Entity::Object => theme.object_color,
            Entity::Gripper => GRIPPER_COLOR,
        };
        let key = splitmix64(frame_key ^ (i as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25));
        img.set_pixel_at(i, noisy(color, theme.noise_amplitude, key));
    }
    img
}

/// Exact robot/object masks and the relative depth of the scene.
///
/// Depth is flat for the table (and the flat distractors on it), constant for
/// the gripper, and a dome over the object whose center is nearest to the
/// camera. Only geometry is read, never the appearance theme.
pub fn ground_truth(scene: &SceneState, resolution: usize) -> PerceptionResult {
    let res = resolution.max(1);
    let labels = rasterize_entities(scene, res);
    let robot = Mask::from_bools(res, res, labels.iter().map(|&e| e == Entity::Gripper)).expect("square raster");
    let object = Mask::from_bools(res, res, labels.iter().map(|&e| e == Entity::Object)).expect("square raster");
    let depth = labels
        .iter()
        .enumerate()
        .map(|(i, e)| match e {
            Entity::Table | Entity::Distractor(_) => TABLE_DEPTH,
            Entity::Gripper => GRIPPER_DEPTH,
            Entity::Object => {
                let p = pixel_center(i, res);
                let o = scene.object_pos;
                let rho2 = ((p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2)) / (OBJECT_RADIUS * OBJECT_RADIUS);
                TABLE_DEPTH - OBJECT_HEIGHT * (1.0 - rho2).max(0.0).sqrt()
            }
        })
        .collect();
    PerceptionResult {
        robot,
        object,
        depth: Some(DepthMap::new(res, res, depth).expect("finite positive depth")),
        latency: Latency::default(),
    }
}
