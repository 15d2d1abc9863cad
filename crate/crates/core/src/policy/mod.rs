//! Flow-matching imitation policy.
//!
//! Observations are average-pooled onto a fixed grid, encoded by a two-layer
//! MLP, and condition a velocity field `v(x, s; feat)` over normalized
//! actions. Training regresses `v` onto `a - x_0` along the straight path
//! `x_s = (1 - s) x_0 + s a` with `x_0 ~ N(0, I)`; sampling integrates the
//! field from a fresh `x_0` with explicit Euler steps.

mod checkpoint;
mod net;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ObsError;
use crate::obs::{build_observation, Observation, TaskSpec, Variant};
use crate::seeds;
use crate::sim::{Action, Controller, ControllerError, Episode, SceneState};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use net::{Architecture, Dense, FlowBatch, Layout};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy consumes {expected} observations, got {got}")]
    VariantMismatch { expected: Variant, got: Variant },
    #[error("expected {expected} stacked observations, got {got}")]
    HistoryMismatch { expected: usize, got: usize },
    #[error("observation is {got} pixels, smaller than the {grid}x{grid} pooling grid")]
    TooSmall { got: String, grid: usize },
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("no training samples")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("episode {seed}: {source}")]
    Episode { seed: u64, source: ObsError },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// The 2-to-3 channel mix applied to S2 planes, `out = W [mask, depth] + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelAdapter {
    pub weight: [[f64; 2]; 3],
    pub bias: [f64; 3],
}

impl Default for ChannelAdapter {
    /// Mask, depth and a zero channel.
    fn default() -> Self {
        Self { weight: [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], bias: [0.0; 3] }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the peak to zero over the run.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Peak learning rate.
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub seed: u64,
    /// Euler steps at inference.
    pub ode_steps: usize,
    pub obs_history: usize,
    /// Initial adapter for S2 policies; ignored for other variants.
    pub adapter_1x1: Option<ChannelAdapter>,
    /// Record the loss every this many steps (and at the last step).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch: 64,
            learning_rate: 2e-2,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            seed: 0,
            ode_steps: 10,
            obs_history: 2,
            adapter_1x1: None,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.to_owned()));
        if self.batch == 0 || self.ode_steps == 0 || self.obs_history == 0 || self.log_every == 0 {
            return bad("batch, ode_steps, obs_history and log_every must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let progress = step as f64 / self.steps.max(1) as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture { history: self.obs_history, ..Architecture::default() }
    }
}

/// Average-pools one observation onto a `grid x grid` lattice, channel-major.
/// Image channels are scaled to `[0, 1]`; S2 planes are used as they are.
pub fn pool_observation(obs: &Observation, grid: usize) -> Result<Vec<f64>, PolicyError> {
    let dims = obs.dims();
    if dims.width < grid || dims.height < grid {
        return Err(PolicyError::TooSmall { got: dims.to_string(), grid });
    }
    let planes: Vec<Box<dyn Fn(usize) -> f64 + '_>> = match obs {
        Observation::S2(p) => vec![Box::new(|i| p.mask_plane()[i]), Box::new(|i| p.depth_plane()[i])],
        _ => {
            let img = obs.image().expect("image variant");
            let bytes = img.as_bytes();
            (0..3)
                .map(|c| Box::new(move |i: usize| bytes[3 * i + c] as f64 / 255.0) as Box<dyn Fn(usize) -> f64>)
                .collect()
        }
    };
    let mut out = Vec::with_capacity(planes.len() * grid * grid);
    for plane in &planes {
        for gy in 0..grid {
            let (y0, y1) = (gy * dims.height / grid, (gy + 1) * dims.height / grid);
            for gx in 0..grid {
                let (x0, x1) = (gx * dims.width / grid, (gx + 1) * dims.width / grid);
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += plane(y * dims.width + x);
                    }
                }
                out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Ok(out)
}

/// Explicit Euler from `x0` over `s in [0, 1]` with `steps` equal steps.
///
/// The iterate is kept as `x0 + (k / steps) * mean(v_0..v_k)`, which is the
/// Euler recurrence rearranged; a constant field then lands on `x0 + c`
/// exactly for every step count.
pub fn euler_integrate<const D: usize>(
    x0: [f64; D],
    steps: usize,
    mut field: impl FnMut(&[f64; D], f64) -> [f64; D],
) -> [f64; D] {
    let n = steps as f64;
    let mut mean = [0.0; D];
    let mut x = x0;
    for k in 0..steps {
        let v = field(&x, k as f64 / n);
        let done = (k + 1) as f64;
        for d in 0..D {
            mean[d] += (v[d] - mean[d]) / done;
            x[d] = x0[d] + mean[d] * (done / n);
        }
    }
    x
}

/// Flow-matching loss of an arbitrary field on explicit samples
/// `(a, x_0, s)`: the mean of `|v(x_s, s) - (a - x_0)|^2`.
pub fn flow_matching_loss<const D: usize>(
    samples: &[([f64; D], [f64; D], f64)],
    mut field: impl FnMut(usize, &[f64; D], f64) -> [f64; D],
) -> f64 {
    let total: f64 = samples
        .iter()
        .enumerate()
        .map(|(i, (a, x0, s))| {
            let xs: [f64; D] = std::array::from_fn(|d| (1.0 - s) * x0[d] + s * a[d]);
            let v = field(i, &xs, *s);
            (0..D).map(|d| (v[d] - (a[d] - x0[d])).powi(2)).sum::<f64>()
        })
        .sum();
    total / samples.len() as f64
}

/// Fixed per-input standardization `(x - shift) * scale`, fitted on the
/// training inputs and not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Lower bound on the standard deviation used for scaling, so inputs that
/// barely vary in the demonstrations are not blown up.
pub const NORM_STD_FLOOR: f64 = 0.1;

impl InputNorm {
    pub fn identity(n: usize) -> Self {
        Self { shift: vec![0.0; n], scale: vec![1.0; n] }
    }

    /// Column means and inverse (floored) standard deviations.
    pub fn fit(inputs: &Array2<f64>) -> Self {
        let mean = inputs.mean_axis(ndarray::Axis(0)).expect("non-empty");
        let std = inputs.std_axis(ndarray::Axis(0), 0.0);
        Self { shift: mean.to_vec(), scale: std.iter().map(|s| 1.0 / s.max(NORM_STD_FLOOR)).collect() }
    }

    pub fn len(&self) -> usize {
        self.shift.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shift.is_empty()
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((x, m), k) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
            *x = (*x - m) * k;
        }
    }
}

/// A trained (or freshly initialized) policy. Immutable once built, so it
/// can be shared across evaluation threads.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPolicy {
    variant: Variant,
    layout: Layout,
    params: Vec<f64>,
    norm: InputNorm,
    ode_steps: usize,
}

impl FlowPolicy {
    /// Fresh parameters: weights `N(0, 1/fan_in)`, zero biases, adapter from
    /// the config (S2 only).
    pub fn init(variant: Variant, config: &TrainConfig) -> Result<Self, PolicyError> {
        config.validate()?;
        let layout = Layout::new(config.architecture(), variant == Variant::S2);
        let mut rng = seeds::rng(config.seed, "policy-init", 0);
        let mut params = vec![0.0; layout.len];
        for (_, d) in layout.blocks() {
            let scale = (1.0 / d.inputs as f64).sqrt();
            for p in &mut params[d.offset..d.offset + d.outputs * d.inputs] {
                *p = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if let Some(a) = layout.adapter {
            let init = config.adapter_1x1.unwrap_or_default();
            let flat: Vec<f64> = init.weight.iter().flatten().chain(init.bias.iter()).copied().collect();
            params[a.offset..a.offset + a.len()].copy_from_slice(&flat);
        }
        let norm = InputNorm::identity(layout.arch.raw_inputs(layout.raw_planes()));
        Ok(Self { variant, layout, params, norm, ode_steps: config.ode_steps })
    }

    pub fn from_params(
        variant: Variant,
        arch: Architecture,
        ode_steps: usize,
        params: Vec<f64>,
        norm: InputNorm,
    ) -> Result<Self, PolicyError> {
        let layout = Layout::new(arch, variant == Variant::S2);
        if params.len() != layout.len {
            return Err(PolicyError::Checkpoint(format!("{} parameters, layout needs {}", params.len(), layout.len)));
        }
        let inputs = arch.raw_inputs(layout.raw_planes());
        if norm.shift.len() != inputs || norm.scale.len() != inputs {
            return Err(PolicyError::Checkpoint(format!(
                "input statistics for {} inputs, layout needs {inputs}",
                norm.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(PolicyError::NonFinite { what: "parameter", index: i });
        }
        if let Some(i) = norm.shift.iter().chain(&norm.scale).position(|p| !p.is_finite()) {
            return Err(PolicyError::NonFinite { what: "input statistic", index: i });
        }
        Ok(Self { variant, layout, params, norm, ode_steps })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn architecture(&self) -> Architecture {
        self.layout.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn input_norm(&self) -> &InputNorm {
        &self.norm
    }

    /// Number of trained parameters (input statistics excluded).
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn ode_steps(&self) -> usize {
        self.ode_steps
    }

    /// Concatenated pooled inputs of an observation stack, oldest first.
    pub fn stack_inputs(&self, stack: &[Observation]) -> Result<Vec<f64>, PolicyError> {
        let arch = self.layout.arch;
        if stack.len() != arch.history {
            return Err(PolicyError::HistoryMismatch { expected: arch.history, got: stack.len() });
        }
        let mut out = Vec::with_capacity(arch.raw_inputs(self.layout.raw_planes()));
        for obs in stack {
            if obs.variant() != self.variant {
                return Err(PolicyError::VariantMismatch { expected: self.variant, got: obs.variant() });
            }
            out.extend(pool_observation(obs, arch.grid)?);
        }
        Ok(out)
    }

    /// Feature vector of an observation stack.
    pub fn encode(&self, stack: &[Observation]) -> Result<Vec<f64>, PolicyError> {
        let raw = self.stack_inputs(stack)?;
        Ok(self.encode_inputs(&raw))
    }

    fn encode_inputs(&self, raw: &[f64]) -> Vec<f64> {
        let mut raw = raw.to_vec();
        self.norm.apply(&mut raw);
        let raw = ndarray::ArrayView2::from_shape((1, raw.len()), &raw[..]).expect("one row");
        net::encode(&self.layout, &self.params, &raw).0.into_raw_vec_and_offset().0
    }

    /// `v(x, s; feat)` for one point.
    pub fn velocity(&self, feat: &[f64], x: &[f64; 3], s: f64) -> [f64; 3] {
        let f = ndarray::ArrayView2::from_shape((1, feat.len()), feat).expect("one row");
        let xv = ndarray::ArrayView2::from_shape((1, 3), &x[..]).expect("one row");
        let sv = [s];
        let (v, _) = net::velocity(&self.layout, &self.params, &f, &xv, &ndarray::ArrayView1::from(&sv[..]));
        [v[[0, 0]], v[[0, 1]], v[[0, 2]]]
    }

    /// Draws `x_0 ~ N(0, I)`, integrates the field and maps the result back
    /// to a clipped action.
    pub fn sample_action(&self, stack: &[Observation], rng: &mut ChaCha8Rng) -> Result<Action, PolicyError> {
        let feat = self.encode(stack)?;
        let x0: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let x = euler_integrate(x0, self.ode_steps, |x, s| self.velocity(&feat, x, s));
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite { what: "integrated action", index: i });
        }
        Ok(Action::from_normalized(x))
    }

    /// Loss on explicit noise, for checks that must not depend on an rng.
    /// `batch.inputs` must already be standardized.
    pub fn loss(&self, batch: &FlowBatch) -> f64 {
        net::loss_and_grad(&self.layout, &self.params, batch, false).0
    }

    pub fn loss_and_grad(&self, batch: &FlowBatch) -> (f64, Vec<f64>) {
        let (l, g) = net::loss_and_grad(&self.layout, &self.params, batch, true);
        (l, g.expect("requested"))
    }

    /// Replaces one parameter; for finite-difference probes.
    pub fn with_param(&self, index: usize, value: f64) -> Self {
        let mut p = self.clone();
        p.params[index] = value;
        p
    }

    /// Rounds every parameter to the nearest `f32` so checkpoints are exact.
    fn round_to_f32(&mut self) {
        for p in self.params.iter_mut().chain(&mut self.norm.shift).chain(&mut self.norm.scale) {
            *p = *p as f32 as f64;
        }
    }
}

impl Controller for FlowPolicy {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn history(&self) -> usize {
        self.layout.arch.history
    }

    fn act(
        &self,
        observations: &[Observation],
        _scene: &SceneState,
        rng: &mut ChaCha8Rng,
    ) -> Result<Action, ControllerError> {
        self.sample_action(observations, rng).map_err(|e| ControllerError(e.to_string()))
    }
}

/// Demonstration samples flattened to pooled inputs and normalized actions.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub actions: Array2<f64>,
}

impl Dataset {
    /// Builds observation stacks for every step of every episode, padding
    /// the first steps with the first frame as rollouts do.
    pub fn from_episodes(
        episodes: &[Episode],
        variant: Variant,
        arch: &Architecture,
        spec: &TaskSpec,
    ) -> Result<Self, PolicyError> {
        let planes = if variant == Variant::S2 { 2 } else { 3 };
        let width = arch.raw_inputs(planes);
        let per_frame = planes * arch.cells();
        let mut inputs = Vec::new();
        let mut actions = Vec::new();
        for ep in episodes {
            let mut pooled = Vec::with_capacity(ep.actions.len());
            for t in 0..ep.actions.len() {
                let p = &ep.perception[t];
                let obs = build_observation(&ep.frames[t], &p.robot, &p.object, p.depth.as_ref(), spec, variant)
                    .map_err(|source| PolicyError::Episode { seed: ep.seed, source })?;
                pooled.push(pool_observation(&obs, arch.grid)?);
            }
            for (t, a) in ep.actions.iter().enumerate() {
                for k in 0..arch.history {
                    let back = arch.history - 1 - k;
                    inputs.extend_from_slice(&pooled[t.saturating_sub(back)]);
                }
                actions.extend_from_slice(&a.to_normalized());
            }
        }
        let n = actions.len() / 3;
        if n == 0 {
            return Err(PolicyError::EmptyDataset);
        }
        debug_assert_eq!(inputs.len(), n * width);
        debug_assert_eq!(per_frame * arch.history, width);
        Ok(Self {
            inputs: Array2::from_shape_vec((n, width), inputs).expect("shape"),
            actions: Array2::from_shape_vec((n, 3), actions).expect("shape"),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Standardizes every input row in place.
    pub fn standardize(&mut self, norm: &InputNorm) {
        for mut row in self.inputs.outer_iter_mut() {
            norm.apply(row.as_slice_mut().expect("contiguous rows"));
        }
    }

    /// A minibatch of `size` rows drawn with replacement, with fresh flow noise.
    pub fn sample_batch(&self, size: usize, rng: &mut ChaCha8Rng) -> FlowBatch {
        let rows: Vec<usize> = (0..size).map(|_| rng.random_range(0..self.len())).collect();
        FlowBatch {
            inputs: self.inputs.select(ndarray::Axis(0), &rows),
            actions: self.actions.select(ndarray::Axis(0), &rows),
            noise: Array2::from_shape_simple_fn((size, 3), || rng.sample(StandardNormal)),
            times: Array1::from_shape_simple_fn(size, || rng.random::<f64>()),
        }
    }
}

/// Stochastic-gradient training state: SGD with heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Trainer {
    policy: FlowPolicy,
    velocity: Vec<f64>,
    learning_rate: f64,
    momentum: f64,
}

impl Trainer {
    pub fn new(policy: FlowPolicy, config: &TrainConfig) -> Self {
        let velocity = vec![0.0; policy.param_count()];
        Self { policy, velocity, learning_rate: config.learning_rate, momentum: config.momentum }
    }

    pub fn policy(&self) -> &FlowPolicy {
        &self.policy
    }

    pub fn into_policy(self) -> FlowPolicy {
        self.policy
    }

    /// One update `u <- m u + g; theta <- theta - lr u`. Returns the loss
    /// before the update.
    pub fn grad_step(&mut self, batch: &FlowBatch) -> Result<f64, PolicyError> {
        let (loss, grad) = self.policy.loss_and_grad(batch);
        if !loss.is_finite() {
            return Err(PolicyError::NonFinite { what: "loss", index: 0 });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(PolicyError::NonFinite { what: "gradient", index: i });
        }
        for ((p, u), g) in self.policy.params.iter_mut().zip(&mut self.velocity).zip(&grad) {
            *u = self.momentum * *u + g;
            *p -= self.learning_rate * *u;
        }
        Ok(loss)
    }
}

/// Loss recorded during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

/// Trains a policy for `variant` on `episodes`. Deterministic given
/// `config.seed`; the returned parameters are rounded to `f32`.
pub fn train(
    episodes: &[Episode],
    variant: Variant,
    config: &TrainConfig,
    spec: &TaskSpec,
) -> Result<(FlowPolicy, Vec<LossPoint>), PolicyError> {
    config.validate()?;
    let mut data = Dataset::from_episodes(episodes, variant, &config.architecture(), spec)?;
    let mut policy = FlowPolicy::init(variant, config)?;
    policy.norm = InputNorm::fit(&data.inputs);
    for s in policy.norm.shift.iter_mut().chain(&mut policy.norm.scale) {
        *s = *s as f32 as f64;
    }
    data.standardize(&policy.norm);
    let mut trainer = Trainer::new(policy, config);
    let mut rng = seeds::rng(config.seed, "train", 0);
    let mut curve = Vec::new();
    for step in 0..config.steps {
        let batch = data.sample_batch(config.batch, &mut rng);
        trainer.learning_rate = config.learning_rate_at(step);
        let loss = trainer.grad_step(&batch)?;
        if step % config.log_every == 0 || step + 1 == config.steps {
            log::debug!("{variant} step {step}: loss {loss:.5}");
            curve.push(LossPoint { step, loss });
        }
    }
    let mut policy = trainer.into_policy();
    policy.round_to_f32();
    Ok((policy, curve))
}
