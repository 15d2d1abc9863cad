use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use canobs::codec::{self, QuantizedDepth};
use canobs::eval::{
    evaluate_policy, generate_demos, load_results, persist_run, ExperimentConfig, ExperimentRun, ReportFormat,
    ResultTable,
};
use canobs::obs::{build_observation, EntityPalette, Observation, TaskSpec, Variant, DEFAULT_EPSILON};
use canobs::policy::{load_checkpoint, save_checkpoint, train, CheckpointMeta, TrainConfig};
use canobs::providers::{
    file_provide, EchoServer, PerceptionProvider, PerceptionRequest, PerceptionResult, RemoteProvider,
};
use canobs::raster::Mask;
use canobs::sim::{episode, write_episode, Condition, DEFAULT_RESOLUTION, EXPERT_HORIZON};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

/// Task-aware canonical observations: canonicalize episodes, generate
/// demonstrations, train and evaluate flow-matching policies.
///
/// Exit codes: 0 success, 1 environment or configuration error, 2 data error.
#[derive(Debug, Parser)]
#[command(name = "canobs", version)]
struct Cli {
    /// Root that relative paths are resolved against.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    workdir: PathBuf,
    /// Worker threads for frame and rollout parallelism.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    jobs: usize,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Files,
    Remote,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build canonical observations for every frame of an episode.
    Canonize {
        /// Episode directory, or a directory of episode_<seed> directories.
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// Where to write the canonical rasters [default: next to the inputs].
        #[arg(long, value_name = "DIR")]
        output: Option<PathBuf>,
        /// ORG, L0, L1 or S2.
        #[arg(long)]
        variant: Variant,
        /// Background, robot and object colors as `r,g,b;r,g,b;r,g,b`.
        #[arg(long, value_name = "COLORS")]
        palette: Option<EntityPalette>,
        /// Stabilizer of the masked depth normalization.
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        /// Drop the robot mask before repainting.
        #[arg(long)]
        target_only: bool,
        /// Where masks and depth come from.
        #[arg(long, value_enum, default_value_t = ProviderKind::Files)]
        provider: ProviderKind,
        /// host:port of the perception server for `--provider remote`.
        #[arg(long, value_name = "ADDR", required_if_eq("provider", "remote"))]
        endpoint: Option<String>,
    },
    /// Record scripted-expert demonstrations in the episode layout.
    GenDemos {
        #[arg(long, value_name = "N")]
        episodes: usize,
        /// ID, OOD_OBJ_<k> or OOD_BG_<k>.
        #[arg(long, default_value = "ID")]
        condition: Condition,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Square render size in pixels.
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train a flow-matching policy on recorded demonstrations.
    Train {
        /// Directory of episode_<seed> directories.
        #[arg(long, value_name = "DIR")]
        demos: PathBuf,
        #[arg(long)]
        variant: Variant,
        /// JSON training config; missing fields take their defaults.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Train on target-only observations (no robot mask).
        #[arg(long)]
        target_only: bool,
        /// Checkpoint path; metadata goes to `<FILE>.json`.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Roll out a checkpoint and persist per-rollout results.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Comma-separated condition names.
        #[arg(long, value_delimiter = ',', default_value = "ID,OOD_BG_1,OOD_BG_2,OOD_BG_3")]
        conditions: Vec<Condition>,
        /// Rollouts per seed and condition.
        #[arg(long, default_value_t = 20)]
        rollouts: usize,
        /// Comma-separated evaluation seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Action budget per rollout.
        #[arg(long, default_value_t = EXPERT_HORIZON)]
        max_steps: usize,
        /// Results directory (table.txt, table.csv, raw.jsonl, configs.json).
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Print the table of a results directory.
    Report {
        #[arg(long, value_name = "DIR")]
        results: PathBuf,
        #[arg(long, default_value = "text", value_parser = ["text", "csv", "json"])]
        format: String,
    },
    /// Serve masks and depth of an episode directory over the wire protocol.
    ServeEcho {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Episode directory to answer from.
        #[arg(long, value_name = "DIR")]
        source: PathBuf,
    },
}

/// An error and the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    /// Invalid configuration or environment (exit 1).
    fn config(self) -> Result<T, Failure>;
    /// Missing or malformed data (exit 2).
    fn data(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }

    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }
}

struct Ctx {
    workdir: PathBuf,
    jobs: usize,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.workdir.join(p)
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool, Failure> {
        rayon::ThreadPoolBuilder::new().num_threads(self.jobs.max(1)).build().config()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let ctx = Ctx { workdir: cli.workdir, jobs: cli.jobs };
    match run(&ctx, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(ctx: &Ctx, command: Command) -> Result<(), Failure> {
    if ctx.jobs == 0 {
        return Err(anyhow!("--jobs must be at least 1")).config();
    }
    if !ctx.workdir.is_dir() {
        return Err(anyhow!("workdir {} is not a directory", ctx.workdir.display())).config();
    }
    match command {
        Command::Canonize { input, output, variant, palette, epsilon, target_only, provider, endpoint } => {
            let spec = TaskSpec {
                include_robot_mask: !target_only,
                palette: palette.unwrap_or_default(),
                epsilon,
                ..TaskSpec::default()
            };
            spec.validate().config()?;
            let input = ctx.path(&input);
            let output = output.map(|o| ctx.path(&o)).unwrap_or_else(|| input.clone());
            let remote = match provider {
                ProviderKind::Files => None,
                ProviderKind::Remote => {
                    let endpoint = endpoint.expect("required by clap");
                    Some(RemoteProvider::new(endpoint.as_str()).config()?.with_depth(variant.needs_depth()))
                }
            };
            canonize(ctx, &input, &output, variant, &spec, remote.as_ref())
        }
        Command::GenDemos { episodes, condition, seed, resolution, out } => {
            if episodes == 0 {
                return Err(anyhow!("--episodes must be at least 1")).config();
            }
            if resolution < 8 {
                return Err(anyhow!("--resolution must be at least 8")).config();
            }
            let out = ctx.path(&out);
            let demos = ctx.pool()?.install(|| generate_demos(episodes, condition, seed, resolution)).data()?;
            for ep in &demos {
                write_episode(&out, ep).data()?;
            }
            println!(
                "wrote {} episodes ({} frames) to {}",
                demos.len(),
                demos.iter().map(|d| d.frames.len()).sum::<usize>(),
                out.display()
            );
            Ok(())
        }
        Command::Train { demos, variant, config, target_only, out } => {
            let config: TrainConfig = match config {
                Some(path) => {
                    let path = ctx.path(&path);
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))
                        .config()?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).config()?
                }
                None => TrainConfig::default(),
            };
            config.validate().config()?;
            let spec = TaskSpec { include_robot_mask: !target_only, ..TaskSpec::default() };
            let root = ctx.path(&demos);
            let dirs = episode_dirs(&root).data()?;
            let episodes = ctx
                .pool()?
                .install(|| dirs.par_iter().map(|d| episode::read_episode(d, &spec)).collect::<Result<Vec<_>, _>>())
                .data()?;
            let started = Instant::now();
            let (policy, curve) = train(&episodes, variant, &config, &spec).data()?;
            let meta = CheckpointMeta {
                variant,
                architecture: policy.architecture(),
                param_count: policy.param_count(),
                config,
                spec,
                loss_curve: curve.clone(),
            };
            let out = ctx.path(&out);
            save_checkpoint(&out, &policy, &meta).data()?;
            let last = curve.last().map_or(f64::NAN, |p| p.loss);
            println!(
                "trained {variant} on {} episodes in {:.1?}; {} parameters; final loss {last:.6}",
                episodes.len(),
                started.elapsed(),
                policy.param_count()
            );
            println!("checkpoint: {}", out.display());
            Ok(())
        }
        Command::Eval { checkpoint, conditions, rollouts, seeds, max_steps, out } => {
            if rollouts == 0 || max_steps == 0 || seeds.is_empty() || conditions.is_empty() {
                return Err(anyhow!("--rollouts, --max-steps, --seeds and --conditions must be non-empty")).config();
            }
            let path = ctx.path(&checkpoint);
            if !path.exists() {
                return Err(anyhow!("checkpoint {} not found", path.display())).data();
            }
            let (policy, meta) = load_checkpoint(&path).data()?;
            let out = ctx.path(&out);
            let name = out.file_name().and_then(|n| n.to_str()).unwrap_or("eval").to_owned();
            let mut config = ExperimentConfig {
                name,
                variants: vec![policy.variant()],
                conditions,
                seeds,
                rollouts_per_seed: rollouts,
                max_steps,
                ..ExperimentConfig::default()
            };
            if let Some(meta) = meta {
                config.include_robot_mask = meta.spec.include_robot_mask;
                config.train = meta.config;
            }
            config.validate().config()?;
            let label = policy.variant().name();
            let records: Vec<_> = ctx
                .pool()?
                .install(|| config.seeds.iter().flat_map(|&s| evaluate_policy(&policy, label, s, &config)).collect());
            let table = ResultTable::from_records(&records).data()?;
            let run = ExperimentRun { configs: vec![config], records, table };
            persist_run(&out, &run).data()?;
            print!("{}", run.table.to_text());
            Ok(())
        }
        Command::Report { results, format } => {
            let format: ReportFormat = format.parse().map_err(|e: String| anyhow!(e)).config()?;
            let dir = ctx.path(&results);
            let (_, table) = load_results(&dir).data()?;
            print!("{}", table.emit(format));
            Ok(())
        }
        Command::ServeEcho { port, host, source } => {
            let source = ctx.path(&source);
            episode::read_meta(&source).data()?;
            let server = EchoServer::bind((host.as_str(), port), &source)
                .with_context(|| format!("binding {host}:{port}"))
                .config()?;
            let addr = server.local_addr().config()?;
            println!("serving {} on {addr}", source.display());
            use std::io::Write as _;
            let _ = std::io::stdout().flush();
            server.serve().config()
        }
    }
}

/// A single episode directory or the episode directories under `root`.
fn episode_dirs(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if !root.is_dir() {
        bail!("{} is not a directory", root.display());
    }
    if root.join("meta.json").exists() {
        return Ok(vec![root.to_owned()]);
    }
    let dirs = episode::list_episodes(root)?;
    if dirs.is_empty() {
        bail!("no episode_<seed> directories under {}", root.display());
    }
    Ok(dirs)
}

fn canonical_paths(dir: &Path, variant: Variant, t: usize) -> Vec<PathBuf> {
    match variant {
        Variant::S2 => vec![dir.join(format!("s2_mask_{t}.pgm")), dir.join(format!("s2_depth_{t}.pgm"))],
        v => vec![dir.join(format!("{}_{t}.ppm", v.name().to_ascii_lowercase()))],
    }
}

fn write_observation(dir: &Path, t: usize, obs: &Observation) -> anyhow::Result<()> {
    let paths = canonical_paths(dir, obs.variant(), t);
    match obs {
        Observation::S2(planes) => {
            let d = planes.dims();
            let mask = Mask::from_bools(d.width, d.height, planes.mask_plane().iter().map(|&v| v > 0.5))?;
            codec::write_mask(&paths[0], &mask)?;
            let samples = planes.depth_plane().iter().map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
            let q = QuantizedDepth { dims: d, samples };
            std::fs::write(&paths[1], codec::encode_depth_pgm(&q)).with_context(|| paths[1].display().to_string())?;
        }
        _ => codec::write_ppm(&paths[0], obs.image().expect("image variants"))?,
    }
    Ok(())
}

fn canonize_frame(
    dir: &Path,
    out: &Path,
    t: usize,
    variant: Variant,
    spec: &TaskSpec,
    remote: Option<&RemoteProvider>,
) -> anyhow::Result<f64> {
    let frame_path = episode::frame_path(dir, t);
    if !frame_path.exists() {
        bail!("missing input file {}", frame_path.display());
    }
    let frame = codec::read_ppm(&frame_path)?;
    let request = PerceptionRequest { frame_id: t as u64, frame, spec: spec.clone() };
    let perception: PerceptionResult = match remote {
        Some(r) => r.provide(&request)?,
        None => {
            if variant.needs_depth() {
                let depth = episode::depth_path(dir, t);
                if !depth.exists() {
                    bail!("missing input file {}", depth.display());
                }
            }
            file_provide(&request, dir)?
        }
    };
    let obs = build_observation(
        &request.frame,
        &perception.robot,
        &perception.object,
        perception.depth.as_ref(),
        spec,
        variant,
    )?;
    write_observation(out, t, &obs)?;
    Ok(perception.latency.total())
}

fn canonize(
    ctx: &Ctx,
    input: &Path,
    output: &Path,
    variant: Variant,
    spec: &TaskSpec,
    remote: Option<&RemoteProvider>,
) -> Result<(), Failure> {
    let dirs = episode_dirs(input).data()?;
    let single = dirs.len() == 1 && dirs[0] == input;
    let pool = ctx.pool()?;
    let mut latencies = Vec::new();
    for dir in &dirs {
        let frames = episode::read_actions(dir).data()?.len() + 1;
        let out = if single { output.to_owned() } else { output.join(dir.file_name().expect("episode dir name")) };
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display())).data()?;
        let results: Vec<anyhow::Result<f64>> = pool.install(|| {
            (0..frames).into_par_iter().map(|t| canonize_frame(dir, &out, t, variant, spec, remote)).collect()
        });
        for (t, r) in results.into_iter().enumerate() {
            latencies.push(r.with_context(|| format!("{} frame {t}", dir.display())).data()?);
        }
    }
    let n = latencies.len() as f64;
    let mean = latencies.iter().sum::<f64>() / n;
    let max = latencies.iter().cloned().fold(0.0, f64::max);
    println!(
        "canonized {} frames to {variant} in {}; perception latency per frame: mean {:.3} ms, max {:.3} ms",
        latencies.len(),
        output.display(),
        mean * 1e3,
        max * 1e3
    );
    Ok(())
}
