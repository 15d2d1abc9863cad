//! Experiment orchestration.
//!
//! An experiment trains one policy per (variant, seed) on expert
//! demonstrations from the training appearance, evaluates it under each
//! requested condition and aggregates success into a [`ResultTable`].
//! Randomness comes from three named streams of each seed: `demos`
//! (demonstration scenes), `train` (minibatches and flow noise) and `eval`
//! (evaluation scenes), so changing the rollout count never changes what is
//! trained.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::obs::{TaskSpec, Variant};
use crate::policy::{train, FlowPolicy, PolicyError, TrainConfig};
use crate::providers::MaskDegradation;
use crate::seeds;
use crate::sim::{rollout, Condition, Episode, RolloutOptions, ScriptedExpert, DEFAULT_RESOLUTION, EXPERT_HORIZON};

mod table;

pub use table::{Cell, ReportFormat, ResultRow, ResultTable, SeedResult, StageFailure};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("expert failed on demonstration scene {seed}")]
    ExpertFailure { seed: u64 },
    #[error("malformed results: {0}")]
    Malformed(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_owned(), source }
}

/// Everything needed to reproduce a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Results go to `results/<name>/`.
    pub name: String,
    pub variants: Vec<Variant>,
    pub conditions: Vec<Condition>,
    /// Base seeds; each one gets its own demonstrations, training run and
    /// evaluation scenes.
    pub seeds: Vec<u64>,
    pub rollouts_per_seed: usize,
    /// Demonstrations per seed, always from the training appearance.
    pub demos: usize,
    /// Action budget per evaluation rollout.
    pub max_steps: usize,
    pub resolution: usize,
    /// False drops the robot mask before repainting ("target-only").
    pub include_robot_mask: bool,
    /// Mask errors applied to perception at evaluation time.
    pub degradation: Option<MaskDegradation>,
    /// `train.seed` is replaced by each experiment seed.
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            variants: vec![Variant::Org, Variant::L0, Variant::L1],
            conditions: Condition::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            rollouts_per_seed: 50,
            demos: 50,
            max_steps: EXPERT_HORIZON,
            resolution: DEFAULT_RESOLUTION,
            include_robot_mask: true,
            degradation: None,
            train: TrainConfig::default(),
        }
    }
}

fn has_duplicates<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(i, x)| v[..i].contains(x))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidConfig(m.to_owned()));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad("name must be a plain directory name");
        }
        if self.variants.is_empty() || self.conditions.is_empty() || self.seeds.is_empty() {
            return bad("variants, conditions and seeds must be non-empty");
        }
        if has_duplicates(&self.variants) || has_duplicates(&self.conditions) || has_duplicates(&self.seeds) {
            return bad("variants, conditions and seeds must not repeat");
        }
        if self.rollouts_per_seed == 0 || self.demos == 0 || self.max_steps == 0 {
            return bad("rollouts_per_seed, demos and max_steps must be positive");
        }
        if self.resolution < self.train.architecture().grid {
            return bad("resolution is smaller than the pooling grid");
        }
        self.train.validate().map_err(|e| EvalError::InvalidConfig(e.to_string()))
    }

    pub fn spec(&self) -> TaskSpec {
        TaskSpec { include_robot_mask: self.include_robot_mask, ..TaskSpec::default() }
    }

    pub fn rollout_options(&self) -> RolloutOptions {
        RolloutOptions {
            resolution: self.resolution,
            spec: self.spec(),
            degradation: self.degradation,
            sample_stream: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Demos,
    Train,
    Rollout,
}

/// One line of `raw.jsonl`: a rollout outcome, or a stage failure that
/// prevented a (row, seed) from being evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub label: String,
    pub variant: Variant,
    pub seed: u64,
    pub stage: Stage,
    #[serde(default)]
    pub condition: Option<Condition>,
    #[serde(default)]
    pub rollout: Option<usize>,
    /// Scene seed of the rollout.
    #[serde(default)]
    pub episode_seed: Option<u64>,
    pub success: bool,
    pub steps: usize,
    /// Mean per-frame IoU of the perceived masks; only with degradation.
    #[serde(default)]
    pub robot_iou: Option<f64>,
    #[serde(default)]
    pub object_iou: Option<f64>,
    #[serde(default)]
    pub failure: Option<String>,
}

impl RawRecord {
    fn stage_failure(label: &str, variant: Variant, seed: u64, stage: Stage, message: String) -> Self {
        Self {
            label: label.to_owned(),
            variant,
            seed,
            stage,
            condition: None,
            rollout: None,
            episode_seed: None,
            success: false,
            steps: 0,
            robot_iou: None,
            object_iou: None,
            failure: Some(message),
        }
    }
}

/// Records, the table built from them and the configs that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub configs: Vec<ExperimentConfig>,
    pub records: Vec<RawRecord>,
    pub table: ResultTable,
}

/// Scene seed of demonstration `index` under base `seed`.
pub fn demo_seed(seed: u64, index: usize) -> u64 {
    seeds::derive(seed, "demos", index as u64)
}

/// Scene seed of evaluation rollout `index` under base `seed`. The same
/// scene geometry is used for every condition.
pub fn eval_seed(seed: u64, index: usize) -> u64 {
    seeds::derive(seed, "eval", index as u64)
}

/// Runs the scripted expert on `count` scenes of `condition`.
pub fn generate_demos(
    count: usize,
    condition: Condition,
    seed: u64,
    resolution: usize,
) -> Result<Vec<Episode>, EvalError> {
    let expert = ScriptedExpert { variant: Variant::Org };
    let opts = RolloutOptions { resolution, ..RolloutOptions::default() };
    (0..count)
        .into_par_iter()
        .map(|i| {
            let scene_seed = demo_seed(seed, i);
            let ep = rollout(&expert, Variant::Org, condition, scene_seed, EXPERT_HORIZON, &opts)
                .map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
            if ep.success {
                Ok(ep)
            } else {
                Err(EvalError::ExpertFailure { seed: scene_seed })
            }
        })
        .collect()
}

/// Evaluates `policy` for one base seed over `config.conditions`.
pub fn evaluate_policy(policy: &FlowPolicy, label: &str, seed: u64, config: &ExperimentConfig) -> Vec<RawRecord> {
    let opts = config.rollout_options();
    let variant = policy.variant();
    let mut out = Vec::with_capacity(config.conditions.len() * config.rollouts_per_seed);
    for &condition in &config.conditions {
        let cell: Vec<RawRecord> = (0..config.rollouts_per_seed)
            .into_par_iter()
            .map(|r| {
                let episode_seed = eval_seed(seed, r);
                let mut rec = RawRecord {
                    label: label.to_owned(),
                    variant,
                    seed,
                    stage: Stage::Rollout,
                    condition: Some(condition),
                    rollout: Some(r),
                    episode_seed: Some(episode_seed),
                    success: false,
                    steps: 0,
                    robot_iou: None,
                    object_iou: None,
                    failure: None,
                };
                match rollout(policy, variant, condition, episode_seed, config.max_steps, &opts) {
                    Ok(ep) => {
                        rec.success = ep.success;
                        rec.steps = ep.actions.len();
                        rec.failure = ep.failure;
                        if !ep.mask_iou.is_empty() {
                            let n = ep.mask_iou.len() as f64;
                            rec.robot_iou = Some(ep.mask_iou.iter().map(|i| i[0]).sum::<f64>() / n);
                            rec.object_iou = Some(ep.mask_iou.iter().map(|i| i[1]).sum::<f64>() / n);
                        }
                    }
                    Err(e) => rec.failure = Some(e.to_string()),
                }
                rec
            })
            .collect();
        let ok = cell.iter().filter(|r| r.success).count();
        log::info!("{label} seed {seed} {condition}: {ok}/{}", cell.len());
        out.extend(cell);
    }
    out
}

/// One table row: a label, the policy it trains and how it is evaluated.
struct Arm {
    label: String,
    variant: Variant,
    config: ExperimentConfig,
}

fn train_config(config: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..config.train.clone() }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Arms sharing a variant and a task spec share the trained policy.
fn run_arms(base: &ExperimentConfig, arms: &[Arm], jobs: usize) -> Result<ExperimentRun, EvalError> {
    for arm in arms {
        arm.config.validate()?;
    }
    let records = with_pool(jobs, || {
        let mut records = Vec::new();
        for &seed in &base.seeds {
            let demos = generate_demos(base.demos, Condition::Id, seed, base.resolution);
            let mut trained: Vec<((Variant, TaskSpec), Result<FlowPolicy, String>)> = Vec::new();
            for arm in arms {
                let demos = match &demos {
                    Ok(d) => d,
                    Err(e) => {
                        records.push(RawRecord::stage_failure(
                            &arm.label,
                            arm.variant,
                            seed,
                            Stage::Demos,
                            e.to_string(),
                        ));
                        continue;
                    }
                };
                let key = (arm.variant, arm.config.spec());
                let slot = match trained.iter().position(|(k, _)| *k == key) {
                    Some(i) => i,
                    None => {
                        let started = std::time::Instant::now();
                        let result = train(demos, arm.variant, &train_config(&arm.config, seed), &key.1)
                            .map(|(policy, _)| policy)
                            .map_err(|e| e.to_string());
                        log::info!("trained {} seed {seed} in {:.1?}", arm.variant, started.elapsed());
                        trained.push((key, result));
                        trained.len() - 1
                    }
                };
                match &trained[slot].1 {
                    Ok(policy) => records.extend(evaluate_policy(policy, &arm.label, seed, &arm.config)),
                    Err(e) => {
                        records.push(RawRecord::stage_failure(&arm.label, arm.variant, seed, Stage::Train, e.clone()))
                    }
                }
            }
        }
        records
    })?;
    let table = ResultTable::from_records(&records)?;
    Ok(ExperimentRun { configs: arms.iter().map(|a| a.config.clone()).collect(), records, table })
}

/// Trains and evaluates every variant in `config` and aggregates success.
/// Stage failures are recorded in the table rather than returned.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentRun, EvalError> {
    config.validate()?;
    let arms: Vec<Arm> = config
        .variants
        .iter()
        .map(|&v| Arm { label: v.name().to_owned(), variant: v, config: config.clone() })
        .collect();
    let mut run = run_arms(config, &arms, jobs)?;
    run.configs = vec![config.clone()];
    Ok(run)
}

pub const TARGET_AND_ROBOT: &str = "Target+Robot";
pub const TARGET_ONLY: &str = "Target-only";

/// L0 with and without the robot mask, on the same seeds.
pub fn robot_mask_ablation(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentRun, EvalError> {
    if config.variants != [Variant::L0] {
        return Err(EvalError::InvalidConfig("the robot-mask ablation runs on L0 only".into()));
    }
    let arms: Vec<Arm> = [(TARGET_AND_ROBOT, true), (TARGET_ONLY, false)]
        .into_iter()
        .map(|(label, include)| Arm {
            label: label.to_owned(),
            variant: Variant::L0,
            config: ExperimentConfig { include_robot_mask: include, ..config.clone() },
        })
        .collect();
    run_arms(config, &arms, jobs)
}

/// Row label of a degradation level.
pub fn level_label(variant: Variant, level: &MaskDegradation) -> String {
    if level.is_identity() {
        variant.name().to_owned()
    } else {
        format!("{variant} d{}e{}f{}", level.dilation_radius, level.erosion_radius, level.flip_rate)
    }
}

/// Evaluates each variant under each mask degradation level. Policies are
/// trained once on clean demonstrations and shared across levels.
pub fn mask_quality_sweep(
    config: &ExperimentConfig,
    levels: &[MaskDegradation],
    jobs: usize,
) -> Result<ExperimentRun, EvalError> {
    if levels.len() < 2 || !levels.iter().any(MaskDegradation::is_identity) {
        return Err(EvalError::InvalidConfig("the sweep needs at least two levels including the zero level".into()));
    }
    let mut arms = Vec::new();
    for &variant in &config.variants {
        for level in levels {
            arms.push(Arm {
                label: level_label(variant, level),
                variant,
                config: ExperimentConfig { degradation: Some(*level), ..config.clone() },
            });
        }
    }
    if has_duplicates(&arms.iter().map(|a| &a.label).collect::<Vec<_>>()) {
        return Err(EvalError::InvalidConfig("degradation levels must be distinct".into()));
    }
    run_arms(config, &arms, jobs)
}

pub const TABLE_TXT: &str = "table.txt";
pub const TABLE_CSV: &str = "table.csv";
pub const RAW_JSONL: &str = "raw.jsonl";
pub const CONFIGS_JSON: &str = "configs.json";

/// Writes `table.txt`, `table.csv`, `raw.jsonl` and `configs.json` to `dir`.
pub fn persist_run(dir: &Path, run: &ExperimentRun) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))
    };
    write(TABLE_TXT, run.table.to_text())?;
    write(TABLE_CSV, run.table.to_csv())?;
    let mut raw = String::new();
    for r in &run.records {
        raw.push_str(&serde_json::to_string(r).expect("serializable"));
        raw.push('\n');
    }
    write(RAW_JSONL, raw)?;
    write(CONFIGS_JSON, serde_json::to_string_pretty(&run.configs).expect("serializable") + "\n")
}

/// Reads `raw.jsonl` from a results directory and rebuilds the table.
pub fn load_results(dir: &Path) -> Result<(Vec<RawRecord>, ResultTable), EvalError> {
    let path = dir.join(RAW_JSONL);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Malformed(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect::<Result<Vec<RawRecord>, _>>()?;
    if records.is_empty() {
        return Err(EvalError::Malformed(format!("{} holds no records", path.display())));
    }
    let table = ResultTable::from_records(&records)?;
    Ok((records, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            name: "tiny".into(),
            variants: vec![Variant::L0],
            conditions: vec![Condition::Id],
            seeds: vec![3],
            rollouts_per_seed: 2,
            demos: 2,
            max_steps: 30,
            train: TrainConfig { steps: 20, batch: 8, ..TrainConfig::default() },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        for broken in [
            ExperimentConfig { variants: vec![], ..tiny() },
            ExperimentConfig { seeds: vec![1, 1], ..tiny() },
            ExperimentConfig { rollouts_per_seed: 0, ..tiny() },
            ExperimentConfig { name: "../x".into(), ..tiny() },
            ExperimentConfig { resolution: 4, ..tiny() },
        ] {
            assert!(matches!(broken.validate(), Err(EvalError::InvalidConfig(_))), "{broken:?}");
        }
    }

    #[test]
    fn config_json_uses_defaults_and_rejects_unknown_fields() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"name":"x","conditions":["ID","OOD_BG_2"]}"#).unwrap();
        assert_eq!(c.conditions, vec![Condition::Id, Condition::OodBg(2)]);
        assert_eq!(c.rollouts_per_seed, 50);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"rollouts":3}"#).is_err());
    }

    #[test]
    fn one_cell_table_counts_rollouts() {
        let run = run_experiment(&tiny(), 1).unwrap();
        assert_eq!(run.table.rows.len(), 1);
        assert_eq!(run.records.len(), 2);
        let rate = run.table.rate("L0", Condition::Id).unwrap();
        assert!([0.0, 50.0, 100.0].contains(&rate));
        assert_eq!(run_experiment(&tiny(), 2).unwrap(), run);
    }

    #[test]
    fn demos_come_from_the_training_appearance() {
        let demos = generate_demos(3, Condition::Id, 5, 32).unwrap();
        assert!(demos.iter().all(|d| d.condition == Condition::Id && d.success));
        assert_eq!(demos[1].seed, demo_seed(5, 1));
    }

    #[test]
    fn failures_are_recorded_not_returned() {
        let mut cfg = tiny();
        cfg.train.learning_rate = 1e300;
        let run = run_experiment(&cfg, 1).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.table.failures.len(), 1);
        assert_eq!(run.table.failures[0].stage, Stage::Train);
        assert_eq!(run.table.rate("L0", Condition::Id), None);
    }

    #[test]
    fn sweep_and_ablation_preconditions() {
        let none = MaskDegradation::default();
        let flip = MaskDegradation { flip_rate: 0.1, ..none };
        assert!(mask_quality_sweep(&tiny(), &[flip], 1).is_err());
        assert!(mask_quality_sweep(&tiny(), &[flip, flip], 1).is_err());
        assert!(robot_mask_ablation(&ExperimentConfig { variants: vec![Variant::L1], ..tiny() }, 1).is_err());
        assert_eq!(level_label(Variant::L0, &none), "L0");
        assert_eq!(level_label(Variant::L0, &flip), "L0 d0e0f0.1");
    }

    #[test]
    fn persisted_results_reload_to_the_same_table() {
        let run = run_experiment(&tiny(), 1).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        persist_run(tmp.path(), &run).unwrap();
        let (records, table) = load_results(tmp.path()).unwrap();
        assert_eq!(records, run.records);
        assert_eq!(table, run.table);
        let configs: Vec<ExperimentConfig> =
            serde_json::from_str(&fs::read_to_string(tmp.path().join(CONFIGS_JSON)).unwrap()).unwrap();
        assert_eq!(configs, run.configs);
        let empty = tempfile::tempdir().unwrap();
        assert!(load_results(empty.path()).is_err());
    }
}
