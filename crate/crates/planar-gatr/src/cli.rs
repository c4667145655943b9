//! The `pgatr` command line.
//!
//! Configuration is resolved in three layers: built-in defaults, then the
//! JSON file given by `--config`, then individual flags. The resolved
//! configuration and its hash are printed and embedded in every output.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use planar_gatr_core::model::{Model, TokenBatch};
use planar_gatr_core::scene::{
    build_kdisk_vocab, generate_synthetic_scene, recenter_scene, select_radius, transitions_by_class, ActionVocab, Scene,
};
use planar_gatr_core::DType;

use crate::config::{DTypeDto, RunConfig};
use crate::harness::{
    bench_csv, bench_scaling, constant_velocity, equivariance_audit, min_ade, rollout, train_parallel, truth_positions, AuditOptions,
    BenchOptions, HarnessError, RolloutConfig, SamplingMode,
};
use crate::io::{
    atomic_write, checkpoint_from_bytes, checkpoint_to_bytes, loss_csv, read_file, read_scene, read_scene_dir, scene_to_json,
    vocab_from_json, vocab_hash, vocab_to_json, IoError, SceneDto,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pgatr", version, about = "SE(2)-equivariant traffic simulation with planar geometric algebra")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Element type for model arithmetic.
    #[arg(long, global = true, value_parser = ["f32", "f64"])]
    pub dtype: Option<String>,
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores). Training is bitwise reproducible only for a fixed count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes.
    Gen(GenArgs),
    /// Build the k-disk action vocabulary from a scene directory.
    Vocab(VocabArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Audit equivariance of a checkpoint or of random parameters.
    Check(CheckArgs),
    /// Simulate closed-loop rollouts of one scene.
    Rollout(RolloutArgs),
    /// Count FLOPs and time forward passes as the agent count grows.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub cap: Option<usize>,
    /// One radius for every class, or three comma-separated (vehicle, pedestrian, cyclist).
    #[arg(long, value_delimiter = ',')]
    pub k_r: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, conflicts_with = "random")]
    pub checkpoint: Option<PathBuf>,
    /// Audit freshly initialized parameters.
    #[arg(long)]
    pub random: bool,
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Feed global poses into the model's scalar inputs. The audit must fail.
    #[arg(long, requires = "random")]
    pub negative_control: bool,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub history: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, value_parser = ["greedy", "sample"])]
    pub mode: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    pub agents: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Io(IoError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::File { .. } => CliError::Io(e),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<planar_gatr_core::model::ModelError> for CliError {
    fn from(e: planar_gatr_core::model::ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<planar_gatr_core::scene::SceneError> for CliError {
    fn from(e: planar_gatr_core::scene::SceneError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_json(&read_file(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.dtype {
        cfg.dtype = if d == "f32" { DTypeDto::F32 } else { DTypeDto::F64 };
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        cfg.threads = Some(t);
    }
    match &cli.command {
        Command::Gen(a) => {
            if let Some(v) = a.agents {
                cfg.gen.agents = v;
            }
            if let Some(v) = a.horizon {
                cfg.gen.horizon = v;
            }
        }
        Command::Vocab(a) => {
            if let Some(v) = a.cap {
                cfg.vocab.cap = v;
            }
            match a.k_r.as_deref() {
                None => {}
                Some([r]) => cfg.vocab.k_r = Some([*r; 3]),
                Some([a, b, c]) => cfg.vocab.k_r = Some([*a, *b, *c]),
                Some(_) => return Err(CliError::Usage("--k-r takes one or three radii".into())),
            }
        }
        Command::Train(a) => {
            if let Some(v) = a.steps {
                cfg.train.steps = v;
            }
            if let Some(v) = a.batch_size {
                cfg.train.batch_size = v;
            }
            if let Some(v) = a.lr {
                cfg.train.lr = v;
            }
        }
        Command::Check(a) => {
            if let Some(v) = a.trials {
                cfg.check.trials = v;
            }
            if a.negative_control {
                cfg.model.raw_pose_scalars = true;
            }
        }
        Command::Rollout(a) => {
            if let Some(v) = a.history {
                cfg.rollout.history = v;
            }
            if let Some(v) = a.horizon {
                cfg.rollout.horizon = v;
            }
            if let Some(m) = &a.mode {
                cfg.rollout.mode = if m == "greedy" { SamplingMode::Greedy } else { SamplingMode::Sample };
            }
            if let Some(v) = a.temperature {
                cfg.rollout.temperature = v;
            }
            if let Some(v) = a.n {
                cfg.rollout.n = v;
            }
        }
        Command::Bench(a) => {
            if let Some(v) = &a.agents {
                cfg.bench.agents = v.clone();
            }
            if let Some(v) = a.reps {
                cfg.bench.reps = v;
            }
        }
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    println!("seed: {}", cfg.seed);
    println!("config_hash: {}", cfg.hash());
    println!("config: {}", cfg.to_json());
    let out = cli.out.as_path();
    match &cli.command {
        Command::Gen(a) => cmd_gen(&cfg, a, out),
        Command::Vocab(a) => cmd_vocab(&cfg, a, out),
        Command::Train(a) => cmd_train(&cfg, a, out),
        Command::Check(a) => cmd_check(&cfg, a, out),
        Command::Rollout(a) => cmd_rollout(&cfg, a, out),
        Command::Bench(_) => cmd_bench(&cfg, out),
    }
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("json values serialize");
    bytes.push(b'\n');
    atomic_write(path, &bytes)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    atomic_write(path, bytes)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn scene_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

fn cmd_gen(cfg: &RunConfig, a: &GenArgs, out: &Path) -> Result<(), CliError> {
    let gen = cfg.gen.to_config();
    gen.validate()?;
    let mut files = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let seed = scene_seed(cfg.seed, i);
        let scene = generate_synthetic_scene(&gen, seed)?;
        let name = format!("scene_{i:05}.json");
        atomic_write(&out.join(&name), &scene_to_json(&scene))?;
        files.push(json!({ "file": name, "seed": seed }));
    }
    println!("wrote {} scenes to {}", a.count, out.display());
    write_json(
        &out.join("manifest.json"),
        &json!({ "provenance": cfg.provenance(), "count": a.count, "generator": cfg.gen, "scenes": files }),
    )
}

fn load_scenes(dir: &Path) -> Result<Vec<Scene>, CliError> {
    let scenes = read_scene_dir(dir)?;
    if scenes.is_empty() {
        return Err(CliError::Validation(format!("no scenes in {}", dir.display())));
    }
    Ok(scenes)
}

pub fn build_vocab(cfg: &RunConfig, scenes: &[Scene]) -> Result<ActionVocab, CliError> {
    let t = transitions_by_class(scenes);
    let r = match cfg.vocab.k_r {
        Some(r) => r,
        None => select_radius(&t, cfg.vocab.cap, cfg.vocab.w_theta, cfg.seed)?,
    };
    Ok(build_kdisk_vocab(&t, r, cfg.vocab.cap, cfg.vocab.w_theta, cfg.seed)?)
}

fn cmd_vocab(cfg: &RunConfig, a: &VocabArgs, out: &Path) -> Result<(), CliError> {
    let scenes = load_scenes(&a.scenes)?;
    let v = build_vocab(cfg, &scenes)?;
    println!("vocabulary sizes {:?}, k_r {:?}", v.sizes(), v.k_r);
    write_bytes(&out.join("vocab.json"), &vocab_to_json(&v, cfg.provenance()))
}

fn load_vocab(path: &Path) -> Result<ActionVocab, CliError> {
    Ok(vocab_from_json(&read_file(path)?)?)
}

/// One training window per scene, covering its whole horizon. Scenes are
/// recentered on the ego first; the model does not need it, but it keeps
/// coordinates small.
pub fn training_batches(scenes: &[Scene], vocab: &ActionVocab, raw_pose: bool) -> Result<Vec<TokenBatch>, CliError> {
    scenes
        .iter()
        .map(|s| {
            let (c, _) = recenter_scene(s)?;
            Ok(TokenBatch::from_scene(&c, vocab, 0, c.horizon, raw_pose)?)
        })
        .collect()
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs, out: &Path) -> Result<(), CliError> {
    let scenes = load_scenes(&a.scenes)?;
    let vocab = load_vocab(&a.vocab)?;
    let mut mc = cfg.model_config();
    mc.vocab_sizes = vocab.sizes();
    let data = training_batches(&scenes, &vocab, mc.raw_pose_scalars)?;
    let tc = cfg.train_config();
    let threads = cfg.threads();
    let every = cfg.train.log_every.max(1);
    let log = |r: &planar_gatr_core::model::LossRecord| {
        if r.step.is_multiple_of(100) || r.step + 1 == tc.steps {
            eprintln!("step {:>6}  lr {:.3e}  loss {:.5}", r.step, r.lr, r.loss);
        }
    };
    let (ckpt, curve) = match mc.dtype {
        DType::F64 => {
            let (m, c) = train_parallel(Model::<f64>::new(mc)?, &data, tc, threads, log)?;
            (checkpoint_to_bytes(&m, &vocab_hash(&vocab), cfg.provenance()), c)
        }
        DType::F32 => {
            let (m, c) = train_parallel(Model::<f32>::new(mc)?, &data, tc, threads, log)?;
            (checkpoint_to_bytes(&m, &vocab_hash(&vocab), cfg.provenance()), c)
        }
    };
    let logged: Vec<_> = curve.into_iter().filter(|r| r.step % every == 0).collect();
    write_bytes(&out.join("loss.csv"), &loss_csv(&logged, &cfg.provenance()))?;
    write_bytes(&out.join("checkpoint.pgatr"), &ckpt)
}

fn load_model(path: &Path, vocab: &ActionVocab) -> Result<Model<f64>, CliError> {
    let ck = checkpoint_from_bytes(&read_file(path)?)?;
    let h = vocab_hash(vocab);
    if ck.manifest.vocab_hash != h {
        return Err(CliError::Validation(format!("checkpoint was trained with vocabulary {} but {} was given", ck.manifest.vocab_hash, h)));
    }
    Ok(ck.model)
}

fn cmd_check(cfg: &RunConfig, a: &CheckArgs, out: &Path) -> Result<(), CliError> {
    let scenes: Vec<Scene> = load_scenes(&a.scenes)?.into_iter().take(cfg.check.scenes.max(1)).collect();
    let vocab = load_vocab(&a.vocab)?;
    let model = match (&a.checkpoint, a.random) {
        (Some(p), _) => load_model(p, &vocab)?,
        (None, true) => {
            let mut mc = cfg.model_config();
            mc.vocab_sizes = vocab.sizes();
            Model::new(mc)?
        }
        (None, false) => return Err(CliError::Usage("give --checkpoint or --random".into())),
    };
    let opts = AuditOptions {
        trials: cfg.check.trials,
        seed: cfg.seed,
        dtype: cfg.dtype.into(),
        history: cfg.rollout.history,
        rollout_horizon: cfg.check.rollout_horizon,
        context: cfg.rollout.context,
        threads: cfg.threads(),
    };
    let mut report = equivariance_audit(&model, &scenes, &vocab, &opts)?;
    report.provenance = Some(cfg.provenance());
    for e in &report.entries {
        println!("{:<30} {:>12.3e}  tol {:>8.1e}  {}", e.name, e.max_deviation, e.tolerance, if e.passed { "pass" } else { "FAIL" });
    }
    println!("greedy rollout agreement {}/{}", report.rollout_agreements, report.rollout_scenes);
    write_json(&out.join("audit.json"), &serde_json::to_value(&report).expect("report serializes"))?;
    write_bytes(&out.join("audit.csv"), &report.to_csv())?;
    if report.passed {
        println!("audit passed");
        Ok(())
    } else {
        Err(CliError::Validation("equivariance audit failed".into()))
    }
}

fn cmd_rollout(cfg: &RunConfig, a: &RolloutArgs, out: &Path) -> Result<(), CliError> {
    let vocab = load_vocab(&a.vocab)?;
    let model = load_model(&a.checkpoint, &vocab)?;
    let scene = read_scene(&a.scene)?;
    let r = &cfg.rollout;
    let rc = RolloutConfig { history: r.history, horizon: r.horizon, context: r.context, mode: r.mode.to_core(r.temperature) };
    let n = if r.mode == SamplingMode::Greedy { 1 } else { r.n.max(1) };
    let rolls = match cfg.dtype.into() {
        DType::F64 => rollout(&model, &scene, &vocab, &rc, n, cfg.seed)?,
        DType::F32 => rollout(&model.cast::<f32>(), &scene, &vocab, &rc, n, cfg.seed)?,
    };
    let items: Vec<_> = rolls
        .iter()
        .map(|ro| json!({ "seed": ro.seed, "active": ro.active, "tokens": ro.tokens, "scene": SceneDto::from(&ro.scene) }))
        .collect();
    write_json(
        &out.join("rollouts.json"),
        &json!({ "provenance": cfg.provenance(), "mode": r.mode, "temperature": r.temperature, "history": r.history, "horizon": r.horizon, "rollouts": items }),
    )?;

    let active = &rolls[0].active;
    let truth = truth_positions(&scene, active, r.history, r.horizon);
    let mut w = csv::Writer::from_writer(cfg.provenance().csv_comment().into_bytes());
    w.write_record(["policy", "rollouts", "min_ade_m"]).expect("in-memory write");
    if truth.iter().flatten().any(Option::is_some) {
        let positions: Vec<_> = rolls.iter().map(|ro| ro.future_positions()).collect();
        let model_ade = min_ade(&positions, &truth)?;
        let cv_ade = min_ade(&[constant_velocity(&scene, active, r.history, r.horizon)?], &truth)?;
        println!("minADE model {model_ade:.4} m over {n} rollouts, constant velocity {cv_ade:.4} m");
        w.write_record(["model".to_string(), n.to_string(), model_ade.to_string()]).expect("in-memory write");
        w.write_record(["constant_velocity".to_string(), "1".into(), cv_ade.to_string()]).expect("in-memory write");
    } else {
        println!("scene has no ground truth after step {}; minADE skipped", r.history);
    }
    write_bytes(&out.join("min_ade.csv"), &w.into_inner().expect("in-memory write"))
}

fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let b = &cfg.bench;
    let opts = BenchOptions { map_nodes: b.map_nodes, steps: b.steps, reps: b.reps, seed: cfg.seed };
    let rows = bench_scaling(&cfg.model_config(), &b.agents, &opts)?;
    for r in &rows {
        println!("A={:<4} {:<10} flops {:>14}  x{:.3} vs vanilla", r.agents, r.variant.as_str(), r.flops.total(), r.ratio_to_vanilla);
    }
    let table: Vec<_> = rows
        .iter()
        .map(|r| {
            let terms: serde_json::Map<String, serde_json::Value> =
                r.flops.terms().iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
            json!({
                "agents": r.agents, "map_nodes": r.map_nodes, "steps": r.steps, "variant": r.variant.as_str(),
                "total_flops": r.flops.total(), "ratio_to_vanilla": r.ratio_to_vanilla, "wall_ms": r.wall_ms, "terms": terms,
            })
        })
        .collect();
    write_bytes(&out.join("bench.csv"), &bench_csv(&rows, &cfg.provenance()))?;
    write_json(&out.join("bench.json"), &json!({ "provenance": cfg.provenance(), "rows": table }))
}

/// Seeds used by `gen` for scene `i`.
pub fn gen_scene_seed(cfg: &RunConfig, i: usize) -> u64 {
    scene_seed(cfg.seed, i)
}
