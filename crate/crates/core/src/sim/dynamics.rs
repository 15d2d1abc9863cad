use super::rollout::Controller;
use super::{dist, Action, SceneState, EXPERT_CLOSE_DISTANCE, GRASP_RADIUS, LIFT_LINE, MAX_STEP};
use crate::obs::{Observation, Variant};
use crate::sim::rollout::ControllerError;

/// Advances the world by one action.
///
/// The grip command is applied first: closing within `GRASP_RADIUS` of the
/// object attaches it, opening releases it where it is. Then the gripper
/// moves by the clipped displacement (clamped to the unit square) and a
/// grasped object follows at its grasp offset. Appearance is never read.
pub fn step(scene: &SceneState, action: &Action) -> SceneState {
    let action = Action::new(action.delta[0], action.delta[1], action.grip);
    let mut next = scene.clone();
    next.gripper_closed = action.closes();
    if next.gripper_closed {
        if next.grasp.is_none() && dist(scene.gripper_pos, scene.object_pos) <= GRASP_RADIUS {
            let g = scene.gripper_pos;
            next.grasp = Some([scene.object_pos[0] - g[0], scene.object_pos[1] - g[1]]);
        }
    } else {
        next.grasp = None;
    }

    next.gripper_pos = [
        (scene.gripper_pos[0] + action.delta[0]).clamp(0.0, 1.0),
        (scene.gripper_pos[1] + action.delta[1]).clamp(0.0, 1.0),
    ];
    if let Some(offset) = next.grasp {
        next.object_pos =
            [(next.gripper_pos[0] + offset[0]).clamp(0.0, 1.0), (next.gripper_pos[1] + offset[1]).clamp(0.0, 1.0)];
    }
    next.object_lifted = next.grasp.is_some() && next.gripper_pos[1] >= LIFT_LINE;
    next.tick += 1;
    next
}

const EXPERT_GAIN: f64 = 1.0;

/// Proportional reach, close, lift.
pub fn scripted_expert(scene: &SceneState) -> Action {
    if scene.attached() {
        return Action::new(0.0, MAX_STEP, 1.0);
    }
    let err = [scene.object_pos[0] - scene.gripper_pos[0], scene.object_pos[1] - scene.gripper_pos[1]];
    let grip = if dist(scene.gripper_pos, scene.object_pos) <= EXPERT_CLOSE_DISTANCE { 1.0 } else { -1.0 };
    Action::new(EXPERT_GAIN * err[0], EXPERT_GAIN * err[1], grip)
}

/// The scripted expert as a rollout controller. It reads the privileged
/// scene state and ignores observations.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedExpert {
    pub variant: Variant,
}

impl Controller for ScriptedExpert {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn history(&self) -> usize {
        1
    }

    fn act(
        &self,
        _observations: &[Observation],
        scene: &SceneState,
        _rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Action, ControllerError> {
        Ok(scripted_expert(scene))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{render, sample_scene, Condition, EXPERT_HORIZON};

    #[test]
    fn zero_action_keeps_physics() {
        let s = sample_scene(Condition::Id, 1);
        let next = step(&s, &Action::new(0.0, 0.0, 0.0));
        assert!(next.same_physics(&s));
        assert_eq!(next.tick, s.tick + 1);
    }

    #[test]
    fn closing_out_of_reach_does_not_attach() {
        let mut s = sample_scene(Condition::Id, 2);
        s.gripper_pos = [s.object_pos[0] + 0.1, s.object_pos[1]];
        let next = step(&s, &Action::new(0.0, 0.0, 1.0));
        assert!(next.gripper_closed);
        assert!(!next.attached());
    }

    #[test]
    fn grasp_then_lift() {
        let mut s = sample_scene(Condition::Id, 2);
        s.gripper_pos = [s.object_pos[0] + 0.02, s.object_pos[1]];
        s = step(&s, &Action::new(0.0, 0.0, 1.0));
        assert!(s.attached());
        let before = s.object_pos;
        s = step(&s, &Action::new(0.0, 0.05, 1.0));
        assert!((s.object_pos[1] - before[1] - 0.05).abs() < 1e-12);
        // opening releases
        let dropped = step(&s, &Action::new(0.0, 0.05, -1.0));
        assert!(!dropped.attached());
        assert_eq!(dropped.object_pos, s.object_pos);
    }

    #[test]
    fn expert_closes_at_object_and_lifts_when_attached() {
        let mut s = sample_scene(Condition::Id, 5);
        s.gripper_pos = s.object_pos;
        let a = scripted_expert(&s);
        assert!(a.closes());
        s = step(&s, &a);
        let a = scripted_expert(&s);
        assert!(a.delta[1] > 0.0 && a.closes());
    }

    #[test]
    fn expert_succeeds_from_every_start() {
        for seed in 0..100 {
            let mut s = sample_scene(Condition::Id, seed);
            let mut steps = 0;
            while !s.object_lifted && steps < EXPERT_HORIZON {
                s = step(&s, &scripted_expert(&s));
                steps += 1;
            }
            assert!(s.object_lifted, "seed {seed} failed");
        }
    }

    #[test]
    fn dynamics_ignore_appearance() {
        for seed in 0..20 {
            let a = sample_scene(Condition::Id, seed);
            let mut b = a.clone();
            b.appearance = Condition::OodBg(2).theme();
            let act = scripted_expert(&a);
            let (na, nb) = (step(&a, &act), step(&b, &act));
            assert!(na.same_physics(&nb));
            assert_ne!(render(&na, 32), render(&nb, 32));
        }
    }
}
