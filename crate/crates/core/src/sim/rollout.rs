use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{render, sample_scene, step, Action, Condition, SceneState, DEFAULT_RESOLUTION};
use crate::obs::{build_observation, mask_iou, Observation, TaskSpec, Variant};
use crate::providers::{degrade_masks, MaskDegradation, PerceptionResult};
use crate::raster::Image;
use crate::seeds;
use crate::sim::ground_truth;

/// Anything that maps a short observation history to an action.
pub trait Controller {
    /// The observation variant this controller consumes.
    fn variant(&self) -> Variant;

    /// How many frames (oldest first, current last) `act` expects.
    fn history(&self) -> usize;

    /// `scene` is the privileged simulator state; learned policies must not
    /// read it.
    fn act(
        &self,
        observations: &[Observation],
        scene: &SceneState,
        rng: &mut ChaCha8Rng,
    ) -> Result<Action, ControllerError>;
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ControllerError(pub String);

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("controller consumes {controller} observations but rollout asked for {requested}")]
    VariantMismatch { controller: Variant, requested: Variant },
    #[error(transparent)]
    Obs(#[from] crate::error::ObsError),
}

#[derive(Debug, Clone)]
pub struct RolloutOptions {
    pub resolution: usize,
    pub spec: TaskSpec,
    /// Degrade ground-truth masks before building observations.
    pub degradation: Option<MaskDegradation>,
    /// Selects the policy-sampling stream; vary it to re-roll the same scene.
    pub sample_stream: u64,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self { resolution: DEFAULT_RESOLUTION, spec: TaskSpec::default(), degradation: None, sample_stream: 0 }
    }
}

/// One recorded trajectory.
#[derive(Debug, Clone)]
pub struct Episode {
    pub seed: u64,
    pub condition: Condition,
    pub resolution: usize,
    /// One more frame than actions: the final frame follows the last action.
    pub frames: Vec<Image>,
    /// Perception the observations were built from, one per frame.
    pub perception: Vec<PerceptionResult>,
    pub actions: Vec<Action>,
    pub success: bool,
    /// Set when the rollout was aborted by an error.
    pub failure: Option<String>,
    /// `[robot, object]` IoU of the perception against ground truth, per
    /// frame; only filled when masks were degraded.
    pub mask_iou: Vec<[f64; 2]>,
}

impl Episode {
    /// Regenerates the frames from the seed and the recorded actions.
    pub fn replay_frames(&self) -> Vec<Image> {
        let mut scene = sample_scene(self.condition, self.seed);
        let mut frames = vec![render(&scene, self.resolution)];
        for a in &self.actions {
            scene = step(&scene, a);
            frames.push(render(&scene, self.resolution));
        }
        frames
    }
}

fn perceive(scene: &SceneState, seed: u64, t: usize, opts: &RolloutOptions) -> (PerceptionResult, Option<[f64; 2]>) {
    let truth = ground_truth(scene, opts.resolution);
    match &opts.degradation {
        None => (truth, None),
        Some(d) => {
            let per_frame =
                MaskDegradation { seed: seeds::derive(d.seed, "frame-degradation", seed ^ ((t as u64) << 40)), ..*d };
            let degraded = degrade_masks(&truth, &per_frame);
            let iou = [
                mask_iou(&degraded.robot, &truth.robot).expect("same dims"),
                mask_iou(&degraded.object, &truth.object).expect("same dims"),
            ];
            (degraded, Some(iou))
        }
    }
}

/// Runs `controller` from the scene drawn for `(condition, seed)` until the
/// object is lifted or `max_steps` actions have been taken.
///
/// Observation and controller failures end the episode early with
/// `success = false` and a diagnostic in `failure`.
pub fn rollout<C: Controller + ?Sized>(
    controller: &C,
    variant: Variant,
    condition: Condition,
    seed: u64,
    max_steps: usize,
    opts: &RolloutOptions,
) -> Result<Episode, RolloutError> {
    if controller.variant() != variant {
        return Err(RolloutError::VariantMismatch { controller: controller.variant(), requested: variant });
    }
    opts.spec.validate()?;
    let mut rng = seeds::rng(seed, "policy-sampling", opts.sample_stream);
    let mut scene = sample_scene(condition, seed);
    let history = controller.history().max(1);
    let mut stack: VecDeque<Observation> = VecDeque::with_capacity(history);

    let mut ep = Episode {
        seed,
        condition,
        resolution: opts.resolution,
        frames: Vec::new(),
        perception: Vec::new(),
        actions: Vec::new(),
        success: false,
        failure: None,
        mask_iou: Vec::new(),
    };

    for t in 0..=max_steps {
        let frame = render(&scene, opts.resolution);
        let (perception, iou) = perceive(&scene, seed, t, opts);
        if let Some(iou) = iou {
            ep.mask_iou.push(iou);
        }
        let done = scene.object_lifted || t == max_steps;
        if done {
            ep.frames.push(frame);
            ep.perception.push(perception);
            ep.success = scene.object_lifted;
            break;
        }

        let obs = build_observation(
            &frame,
            &perception.robot,
            &perception.object,
            perception.depth.as_ref(),
            &opts.spec,
            variant,
        );
        ep.frames.push(frame);
        ep.perception.push(perception);
        let obs = match obs {
            Ok(o) => o,
            Err(e) => {
                ep.failure = Some(format!("observation failed at step {t}: {e}"));
                break;
            }
        };
        if stack.is_empty() {
            stack.extend(std::iter::repeat_n(obs, history));
        } else {
            stack.pop_front();
            stack.push_back(obs);
        }
        let action = match controller.act(stack.make_contiguous(), &scene, &mut rng) {
            Ok(a) => a,
            Err(e) => {
                ep.failure = Some(format!("controller failed at step {t}: {e}"));
                break;
            }
        };
        ep.actions.push(action);
        scene = step(&scene, &action);
    }
    if ep.failure.is_some() {
        // keep |frames| = |actions| + 1 on aborted episodes
        ep.frames.truncate(ep.actions.len() + 1);
        ep.perception.truncate(ep.actions.len() + 1);
    }
    Ok(ep)
}
