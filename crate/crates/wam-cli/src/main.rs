//! Command-line pipeline: generate data, train, roll out, evaluate,
//! benchmark the executor, and inspect artifacts.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wam_core::config::RunConfig;
use wam_core::data::{compute_norm_stats, filter_idle, read_trajectory, write_dataset, Dataset};
use wam_core::env::{generate_episode, GenConfig, GenMode, Instruction, HELD_OUT_VERB, SEEN_VERBS};
use wam_core::eval::{
    config_fingerprint, drift_experiment, engine_source_factory, eval_cell, run_rollout,
    sample_task, stepcount_experiment, teacher_forced_mse, write_cells_csv, write_ndjson,
    RandomSource, Suite, SuiteSpec,
};
use wam_core::exec::{ExecConfig, HandoffPolicy, LatencyModel};
use wam_core::infer::{CachePolicy, DenoiseConfig, Engine};
use wam_core::model::checkpoint::load_checkpoint;
use wam_core::train::{LossMode, NoiseSchedule, Trainer};

#[derive(Parser)]
#[command(name = "wam", about = "Desk-scale world-action-model pipeline", version)]
struct Cli {
    /// Optional TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an episode corpus and its index.
    GenData(GenDataArgs),
    /// Train a checkpoint (optionally continuing from another).
    Train(TrainArgs),
    /// Run one closed-loop rollout and print the report JSON.
    Rollout(RolloutArgs),
    /// Evaluate suites and experiments; write NDJSON + CSV.
    Eval(EvalArgs),
    /// Sweep the latency contract with a stub policy.
    BenchExecutor(BenchArgs),
    /// Dump headers of a trajectory, dataset index, or checkpoint.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    episodes: usize,
    #[arg(long, default_value = "diverse")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    n_tasks: usize,
    /// Mark every episode as video-only (no action labels used in training).
    #[arg(long, default_value_t = false)]
    video_only: bool,
    /// Generate goals for the held-out verb instead of the seen set.
    #[arg(long, default_value_t = false)]
    held_out_verb: bool,
    /// Idle-action filter threshold; negative disables filtering.
    #[arg(long, default_value_t = 1e-3)]
    eps_idle: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from an existing checkpoint (e.g. the flash stage).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Noise schedule: coupled or flash.
    #[arg(long)]
    schedule: Option<String>,
    /// Loss mode: joint or video-only.
    #[arg(long)]
    loss: Option<String>,
    /// Metrics log (newline-delimited JSON), one record per log interval.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    log_every: usize,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    latency_ticks: u64,
    /// Denoising steps N.
    #[arg(long, default_value_t = 16)]
    steps: usize,
    #[arg(long, default_value_t = false)]
    flash: bool,
    #[arg(long, default_value_t = false)]
    no_cache_policy: bool,
    #[arg(long, default_value_t = false)]
    no_cfg: bool,
    #[arg(long, default_value_t = 3.0)]
    cfg_scale: f64,
    #[arg(long, default_value_t = 200)]
    ticks: u64,
    /// Explicit instruction text; a seeded task otherwise.
    #[arg(long)]
    task: Option<String>,
    #[arg(long, default_value = "seen")]
    suite: String,
    /// Chunk handoff: per-tick or boundary.
    #[arg(long, default_value = "per-tick")]
    handoff: String,
}

#[derive(Args)]
struct EvalArgs {
    #[command(subcommand)]
    what: EvalWhat,
}

#[derive(Subcommand)]
enum EvalWhat {
    /// Mean task progress over a suite for one checkpoint.
    Suite {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "seen")]
        suite: String,
        #[arg(long, default_value_t = 50)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        #[arg(long, default_value_t = false)]
        flash: bool,
        #[arg(long, default_value_t = 160)]
        ticks: u64,
        #[arg(long, default_value_t = 0)]
        latency_ticks: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the random-action floor.
        #[arg(long, default_value_t = false)]
        with_random_floor: bool,
    },
    /// Ground-truth-injection vs open-loop drift curves.
    Drift {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        ticks: u64,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Step-count table across checkpoints.
    Stepcount {
        #[arg(long)]
        coupled: PathBuf,
        #[arg(long)]
        flash: PathBuf,
        #[arg(long, default_value_t = 50)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 160)]
        ticks: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Teacher-forced one-chunk-ahead MSE vs the copy-last-frame baseline.
    Mse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        episodes: usize,
        #[arg(long, default_value_t = 10_000)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        steps: usize,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Horizon of the stub chunks.
    #[arg(long, default_value_t = 4)]
    horizon: usize,
    #[arg(long, default_value_t = 400)]
    ticks: u64,
    /// Latencies to sweep, inclusive.
    #[arg(long, default_value_t = 8)]
    max_latency: u64,
}

fn parse_suite(s: &str) -> Result<Suite> {
    match s {
        "seen" => Ok(Suite::Seen),
        "unseen-verb" | "unseen" => Ok(Suite::UnseenVerb),
        other => bail!("unknown suite {other}"),
    }
}

fn denoise_config(steps: usize, flash: bool, no_cache: bool, no_cfg: bool, scale: f64) -> DenoiseConfig {
    DenoiseConfig {
        steps,
        flash,
        cfg_enabled: !no_cfg,
        cfg_scale: scale,
        cache_policy: CachePolicy {
            enabled: !no_cache,
            ..CachePolicy::default()
        },
        ..DenoiseConfig::default()
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let run_cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };

    match cli.command {
        Command::GenData(a) => gen_data(a, run_cfg),
        Command::Train(a) => train(a, run_cfg),
        Command::Rollout(a) => rollout(a, run_cfg),
        Command::Eval(a) => eval(a, run_cfg),
        Command::BenchExecutor(a) => bench_executor(a, run_cfg),
        Command::Inspect { path } => inspect(&path),
    }
}

fn gen_data(a: GenDataArgs, run_cfg: RunConfig) -> Result<()> {
    let env = run_cfg.env;
    let mode = match a.mode.as_str() {
        "diverse" => GenMode::Diverse,
        "repetitive" => GenMode::Repetitive,
        other => bail!("unknown mode {other}"),
    };
    let gen = GenConfig {
        n_tasks: a.n_tasks,
        verbs: if a.held_out_verb {
            vec![HELD_OUT_VERB]
        } else {
            SEEN_VERBS.to_vec()
        },
        ..GenConfig::default()
    };
    let k = run_cfg.model.k;
    let mut records = Vec::with_capacity(a.episodes);
    for i in 0..a.episodes {
        let raw = generate_episode(&env, a.seed + i as u64, mode, &gen)?;
        let rec = if a.eps_idle >= 0.0 {
            match filter_idle(&raw, a.eps_idle as f32, 1, k) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("episode {i}: {e}; keeping unfiltered");
                    raw
                }
            }
        } else {
            raw
        };
        records.push((rec, a.video_only));
    }
    let norm = compute_norm_stats(records.iter().map(|(r, _)| r))?;
    write_dataset(&a.out, &records, norm, env, &a.mode)?;
    println!(
        "wrote {} episodes to {} (mode {})",
        records.len(),
        a.out.display(),
        a.mode
    );
    Ok(())
}

fn train(a: TrainArgs, run_cfg: RunConfig) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let mut model_cfg = run_cfg.model.clone();
    if let Some(w) = a.width {
        model_cfg.width = w;
    }
    if let Some(l) = a.layers {
        model_cfg.layers = l;
    }
    let mut cfg = run_cfg.train.clone();
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(b) = a.batch {
        cfg.batch = b;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(s) = &a.schedule {
        cfg.schedule = match s.as_str() {
            "coupled" => NoiseSchedule::default(),
            "flash" => NoiseSchedule::flash(7.0, 1.0),
            other => bail!("unknown schedule {other}"),
        };
    }
    if let Some(l) = &a.loss {
        cfg.loss_mode = match l.as_str() {
            "joint" => LossMode::Joint,
            "video-only" | "video_only" => LossMode::VideoOnly,
            other => bail!("unknown loss mode {other}"),
        };
    }

    let mut trainer = match &a.init {
        Some(p) => Trainer::<f32>::from_checkpoint(p, cfg.clone())?,
        None => Trainer::<f32>::new(model_cfg, cfg.clone(), ds.index.norm.clone()),
    };
    let mut metrics_file = match &a.metrics {
        Some(p) => Some(std::fs::File::create(p)?),
        None => None,
    };
    let losses = trainer.run(
        &ds,
        metrics_file.as_mut().map(|f| f as &mut dyn std::io::Write),
        a.log_every,
    )?;
    trainer.save(&a.out)?;
    let last = losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} steps (schedule {:?}, loss {:?}); final loss {last:.4}; saved {}",
        trainer.step,
        cfg.schedule.mode,
        cfg.loss_mode,
        a.out.display()
    );
    Ok(())
}

fn rollout(a: RolloutArgs, run_cfg: RunConfig) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let env = run_cfg.env;
    let dn = denoise_config(a.steps, a.flash, a.no_cache_policy, a.no_cfg, a.cfg_scale);
    let exec_cfg = ExecConfig {
        latency: LatencyModel::FixedTicks(a.latency_ticks),
        handoff: match a.handoff.as_str() {
            "per-tick" => HandoffPolicy::PerTick,
            "boundary" => HandoffPolicy::AtChunkBoundary,
            other => bail!("unknown handoff {other}"),
        },
        tick_budget: a.ticks,
    };
    let mut task = sample_task(&env, parse_suite(&a.suite)?, a.seed);
    if let Some(text) = &a.task {
        let instr = Instruction::parse(text)
            .with_context(|| format!("instruction {text:?} does not parse"))?;
        // Re-sample a scene containing the referenced block color.
        let mut seed = a.seed;
        loop {
            let t = sample_task(&env, Suite::Seen, seed);
            if !instr.uses_color()
                || t.initial.block_of_color(instr.color).is_some()
            {
                task = t;
                task.instruction = instr;
                break;
            }
            seed += 1;
        }
    }
    let mut engine: Engine<f32> = Engine::from_checkpoint(&ck, task.instruction, dn.clone());
    let fp = config_fingerprint(&(&dn, &exec_cfg, &ck.config));
    let report = run_rollout(&env, &task, &mut engine, &exec_cfg, fp)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn eval(a: EvalArgs, run_cfg: RunConfig) -> Result<()> {
    let env = run_cfg.env;
    match a.what {
        EvalWhat::Suite {
            checkpoint,
            suite,
            rollouts,
            seed,
            steps,
            flash,
            ticks,
            latency_ticks,
            out,
            with_random_floor,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let dn = denoise_config(steps, flash, false, true, 3.0);
            let exec_cfg = ExecConfig {
                latency: LatencyModel::FixedTicks(latency_ticks),
                tick_budget: ticks,
                ..ExecConfig::default()
            };
            let spec = SuiteSpec {
                suite: parse_suite(&suite)?,
                rollouts,
                base_seed: seed,
            };
            let fp = config_fingerprint(&(&dn, &exec_cfg, &ck.config));
            let (stats, reports) = eval_cell(
                &env,
                &spec,
                &exec_cfg,
                &format!("{}/{}", checkpoint.display(), suite),
                fp.clone(),
                engine_source_factory(&ck, &dn),
            )?;
            let mut cells = vec![stats];
            if with_random_floor {
                let h = ck.config.h;
                let a_max = env.a_max;
                let (floor, _) = eval_cell(
                    &env,
                    &spec,
                    &exec_cfg,
                    "random-floor",
                    fp,
                    move |_t| Ok(Box::new(RandomSource { h, a_max }) as _),
                )?;
                cells.push(floor);
            }
            for c in &cells {
                println!(
                    "{}: progress {:.3} +- {:.3} (success {:.2}, n {})",
                    c.label, c.mean_progress, c.stderr, c.success_rate, c.n
                );
            }
            if let Some(out) = out {
                std::fs::create_dir_all(&out)?;
                write_ndjson(&out.join("rollouts.ndjson"), &reports)?;
                write_cells_csv(&out.join("cells.csv"), &cells)?;
            }
        }
        EvalWhat::Drift {
            checkpoint,
            pairs,
            seed,
            ticks,
            steps,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let dn = denoise_config(steps, false, false, true, 3.0);
            let report = drift_experiment(&ck, &env, &dn, pairs, seed, ticks)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_vec_pretty(&report)?)?;
            }
        }
        EvalWhat::Stepcount {
            coupled,
            flash,
            rollouts,
            seed,
            ticks,
            out,
        } => {
            let ck_c = load_checkpoint(&coupled)?;
            let ck_f = load_checkpoint(&flash)?;
            let cells = vec![
                ("coupled".to_string(), &ck_c, denoise_config(16, false, false, true, 3.0)),
                ("coupled".to_string(), &ck_c, denoise_config(4, false, false, true, 3.0)),
                ("coupled".to_string(), &ck_c, denoise_config(1, false, false, true, 3.0)),
                ("flash".to_string(), &ck_f, denoise_config(1, true, false, true, 3.0)),
            ];
            let spec = SuiteSpec {
                suite: Suite::Seen,
                rollouts,
                base_seed: seed,
            };
            let exec_cfg = ExecConfig {
                latency: LatencyModel::FixedTicks(0),
                tick_budget: ticks,
                ..ExecConfig::default()
            };
            let rows = stepcount_experiment(&cells, &env, &spec, &exec_cfg)?;
            for r in &rows {
                println!(
                    "{} N={}{}: progress {:.3} +- {:.3}",
                    r.checkpoint,
                    r.steps,
                    if r.flash { " (flash)" } else { "" },
                    r.stats.mean_progress,
                    r.stats.stderr
                );
            }
            if let Some(out) = out {
                std::fs::create_dir_all(&out)?;
                write_ndjson(&out.join("stepcount.ndjson"), &rows)?;
                let stats: Vec<_> = rows.iter().map(|r| r.stats.clone()).collect();
                write_cells_csv(&out.join("stepcount.csv"), &stats)?;
            }
        }
        EvalWhat::Mse {
            checkpoint,
            episodes,
            seed,
            steps,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let gen = GenConfig::default();
            let eps: Vec<_> = (0..episodes)
                .map(|i| generate_episode(&env, seed + i as u64, GenMode::Diverse, &gen))
                .collect::<Result<_, _>>()?;
            let dn = denoise_config(steps, false, false, true, 3.0);
            let (model_mse, copy_mse) = teacher_forced_mse(&ck, &env, &dn, &eps, 4, seed)?;
            println!(
                "one-chunk-ahead MSE: model {model_mse:.6} vs copy-last-frame {copy_mse:.6}"
            );
        }
    }
    Ok(())
}

fn bench_executor(a: BenchArgs, run_cfg: RunConfig) -> Result<()> {
    use wam_core::env::{Action, EnvState, Frame};
    use wam_core::exec::{run_closed_loop, ChunkSource, PredictedChunk};
    use wam_core::infer::InferError;

    struct Stub {
        h: usize,
    }
    impl ChunkSource for Stub {
        fn observe(&mut self, _: usize, _: &Frame) -> Result<(), InferError> {
            Ok(())
        }
        fn predict(
            &mut self,
            _: [f32; 3],
            _: &mut ChaCha8Rng,
        ) -> Result<PredictedChunk, InferError> {
            Ok(PredictedChunk {
                actions: vec![Action::new(0.01, 0.0, 0.0); self.h],
                predicted_frames: Vec::new(),
                network_evals: 1,
                wall_s: 0.0,
            })
        }
        fn horizon(&self) -> usize {
            self.h
        }
    }

    println!("latency_ticks,starved,warmup,ticks");
    for l in 0..=a.max_latency {
        let mut src = Stub { h: a.horizon };
        let cfg = ExecConfig {
            latency: LatencyModel::FixedTicks(l),
            tick_budget: a.ticks,
            ..ExecConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = run_closed_loop(
            &run_cfg.env,
            EnvState::new([0.5, 0.5], vec![]),
            &mut src,
            &cfg,
            &mut rng,
            |_| false,
        )?;
        println!(
            "{l},{},{},{}",
            trace.starved_ticks.len(),
            trace.warmup_ticks,
            trace.ticks_run
        );
    }
    Ok(())
}

fn inspect(path: &std::path::Path) -> Result<()> {
    if path.is_dir() {
        let raw = std::fs::read_to_string(path.join("index.json"))?;
        let v: serde_json::Value = serde_json::from_str(&raw)?;
        let files = v["files"].as_array().map(|a| a.len()).unwrap_or(0);
        println!("dataset: {files} episodes");
        println!("norm: {}", v["norm"]);
        return Ok(());
    }
    let mut magic = [0u8; 4];
    use std::io::Read;
    std::fs::File::open(path)?.read_exact(&mut magic)?;
    match &magic {
        b"WAMT" => {
            let t = read_trajectory(path)?;
            println!(
                "trajectory: {} frames, {} actions, instruction {:?}, seed {}, segments {}",
                t.frames.len(),
                t.actions.len(),
                t.instruction.text(),
                t.seed,
                t.segments.len()
            );
        }
        b"WAMC" => {
            let ck = load_checkpoint(path)?;
            println!(
                "checkpoint: step {}, seed {}, width {}, layers {}, params {}",
                ck.step,
                ck.seed,
                ck.config.width,
                ck.config.layers,
                ck.store.data.len()
            );
            println!("norm lo {:?} hi {:?}", ck.norm.lo, ck.norm.hi);
        }
        _ => bail!("unrecognized file magic {magic:?}"),
    }
    Ok(())
}
