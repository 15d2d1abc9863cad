//! Task-aware canonical observations for visuomotor imitation learning.
//!
//! Raw RGB frames are replaced by label-colored renderings built from robot
//! and target-object masks ([`Variant::L0`]), optionally with the object
//! region overwritten by mask-normalized depth ([`Variant::L1`]). The crate
//! also contains a small planar pick-and-lift simulator, a flow-matching
//! policy and an evaluation harness that compares observation variants
//! under appearance shifts.
//!
//! ```
//! use canobs::obs::{build_observation, TaskSpec, Variant};
//! use canobs::sim::{ground_truth, render, sample_scene, Condition};
//!
//! let scene = sample_scene(Condition::Id, 7);
//! let frame = render(&scene, 64);
//! let truth = ground_truth(&scene, 64);
//! let obs = build_observation(&frame, &truth.robot, &truth.object, truth.depth.as_ref(), &TaskSpec::default(), Variant::L1)?;
//! assert_eq!(obs.variant(), Variant::L1);
//! # Ok::<(), canobs::error::ObsError>(())
//! ```

pub mod codec;
pub mod error;
pub mod eval;
pub mod obs;
pub mod policy;
pub mod providers;
pub mod raster;
pub mod seeds;
pub mod sim;

pub use obs::{Observation, TaskSpec, Variant};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/observations.md")]
    mod observations {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/providers.md")]
    mod providers {}
    #[doc = include_str!("../../../book/src/policy.md")]
    mod policy {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
