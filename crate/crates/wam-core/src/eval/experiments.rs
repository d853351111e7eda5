//! Suite evaluation, the ground-truth-injection drift study, and the
//! denoising-step-count comparison.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rollout::{run_rollout, score_trace, RolloutReport};
use super::suite::{sample_task, EvalTask, Suite};
use super::EvalError;
use crate::env::EnvConfig;
use crate::exec::{run_closed_loop, ChunkSource, ExecConfig, LatencyModel};
use crate::infer::{DenoiseConfig, Engine, InjectionMode};
use crate::model::checkpoint::Checkpoint;

/// Aggregate statistics for one (policy, suite, config) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellStats {
    pub label: String,
    pub n: usize,
    pub mean_progress: f64,
    pub stderr: f64,
    pub success_rate: f64,
    pub mean_starvation: f64,
    pub mean_network_evals: f64,
}

pub fn aggregate(label: &str, reports: &[RolloutReport]) -> CellStats {
    let n = reports.len().max(1);
    let mean = reports.iter().map(|r| r.task_progress).sum::<f64>() / n as f64;
    let var = reports
        .iter()
        .map(|r| (r.task_progress - mean).powi(2))
        .sum::<f64>()
        / (n.saturating_sub(1).max(1)) as f64;
    CellStats {
        label: label.to_string(),
        n: reports.len(),
        mean_progress: mean,
        stderr: (var / n as f64).sqrt(),
        success_rate: reports.iter().filter(|r| r.success).count() as f64 / n as f64,
        mean_starvation: reports.iter().map(|r| r.starvation as f64).sum::<f64>() / n as f64,
        mean_network_evals: reports.iter().map(|r| r.network_evals as f64).sum::<f64>()
            / n as f64,
    }
}

/// Pooled standard error of the difference between two cell means.
pub fn pooled_stderr(a: &CellStats, b: &CellStats) -> f64 {
    (a.stderr * a.stderr + b.stderr * b.stderr).sqrt()
}

/// Which rollouts a cell runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub suite: Suite,
    pub rollouts: usize,
    pub base_seed: u64,
}

/// Evaluate a source factory over a suite of seeded tasks.
pub fn eval_cell(
    env_cfg: &EnvConfig,
    spec: &SuiteSpec,
    exec_cfg: &ExecConfig,
    label: &str,
    fingerprint: String,
    mut make_source: impl FnMut(&EvalTask) -> Result<Box<dyn ChunkSource>, EvalError>,
) -> Result<(CellStats, Vec<RolloutReport>), EvalError> {
    let mut reports = Vec::with_capacity(spec.rollouts);
    for i in 0..spec.rollouts {
        let task = sample_task(env_cfg, spec.suite, spec.base_seed + i as u64);
        let mut source = make_source(&task)?;
        reports.push(run_rollout(
            env_cfg,
            &task,
            source.as_mut(),
            exec_cfg,
            fingerprint.clone(),
        )?);
    }
    Ok((aggregate(label, &reports), reports))
}

/// Engine factory bound to a checkpoint and a denoise configuration.
pub fn engine_source_factory<'a>(
    ck: &'a Checkpoint,
    denoise: &'a DenoiseConfig,
) -> impl FnMut(&EvalTask) -> Result<Box<dyn ChunkSource>, EvalError> + 'a {
    move |task: &EvalTask| {
        let engine: Engine<f32> = Engine::from_checkpoint(ck, task.instruction, denoise.clone());
        Ok(Box::new(engine) as Box<dyn ChunkSource>)
    }
}

/// Paired curves from the drift study: mean frame MSE per chunk index under
/// ground-truth injection vs. open-loop predicted-latent injection, with a
/// copy-last-frame baseline for scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftReport {
    pub n_pairs: usize,
    pub chunks: usize,
    pub gt_mean_mse: Vec<f64>,
    pub ol_mean_mse: Vec<f64>,
    pub baseline_mean_mse: Vec<f64>,
    /// Per-seed first-chunk MSE pairs (identical contexts by construction).
    pub first_chunk_pairs: Vec<(f64, f64)>,
}

/// Run paired synchronous rollouts (L = 0, full budget, no early stop) with
/// the two injection modes over `n_pairs` seeds.
pub fn drift_experiment(
    ck: &Checkpoint,
    env_cfg: &EnvConfig,
    denoise: &DenoiseConfig,
    n_pairs: usize,
    base_seed: u64,
    tick_budget: u64,
) -> Result<DriftReport, EvalError> {
    let exec_cfg = ExecConfig {
        latency: LatencyModel::FixedTicks(0),
        tick_budget,
        ..ExecConfig::default()
    };
    let mut gt_all: Vec<Vec<f64>> = Vec::new();
    let mut ol_all: Vec<Vec<f64>> = Vec::new();
    let mut base_all: Vec<Vec<f64>> = Vec::new();
    let mut first_pairs = Vec::new();

    for i in 0..n_pairs {
        let task = sample_task(env_cfg, Suite::Seen, base_seed + i as u64);
        let mut curves = Vec::new();
        for mode in [InjectionMode::GroundTruth, InjectionMode::Predicted] {
            let mut engine: Engine<f32> =
                Engine::from_checkpoint(ck, task.instruction, denoise.clone());
            engine.injection = mode;
            let mut rng = ChaCha8Rng::seed_from_u64(task.seed ^ 0x9e37_79b9);
            let trace = run_closed_loop(
                env_cfg,
                task.initial.clone(),
                &mut engine,
                &exec_cfg,
                &mut rng,
                |_| false,
            )?;
            let report = score_trace(env_cfg, &task, &trace, String::new())?;
            curves.push((report.chunk_mse, report.baseline_mse));
        }
        let (gt, base) = curves[0].clone();
        let (ol, _) = curves[1].clone();
        if !gt.is_empty() && !ol.is_empty() {
            first_pairs.push((gt[0], ol[0]));
        }
        gt_all.push(gt);
        ol_all.push(ol);
        base_all.push(base);
    }

    let chunks = gt_all
        .iter()
        .chain(ol_all.iter())
        .map(|c| c.len())
        .min()
        .unwrap_or(0);
    let mean_at = |all: &[Vec<f64>], k: usize| {
        all.iter().map(|c| c[k]).sum::<f64>() / all.len() as f64
    };
    Ok(DriftReport {
        n_pairs,
        chunks,
        gt_mean_mse: (0..chunks).map(|k| mean_at(&gt_all, k)).collect(),
        ol_mean_mse: (0..chunks).map(|k| mean_at(&ol_all, k)).collect(),
        baseline_mean_mse: (0..chunks).map(|k| mean_at(&base_all, k)).collect(),
        first_chunk_pairs: first_pairs,
    })
}

/// One row of the step-count table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepCountRow {
    pub checkpoint: String,
    pub steps: usize,
    pub flash: bool,
    pub stats: CellStats,
}

/// Task progress per (checkpoint, denoising step count) over a shared suite.
pub fn stepcount_experiment(
    cells: &[(String, &Checkpoint, DenoiseConfig)],
    env_cfg: &EnvConfig,
    spec: &SuiteSpec,
    exec_cfg: &ExecConfig,
) -> Result<Vec<StepCountRow>, EvalError> {
    let mut rows = Vec::new();
    for (name, ck, dn) in cells {
        let label = format!("{name}/N={}", dn.effective_steps());
        let fp = super::rollout::config_fingerprint(&(dn, exec_cfg));
        let (stats, _) = eval_cell(
            env_cfg,
            spec,
            exec_cfg,
            &label,
            fp,
            engine_source_factory(ck, dn),
        )?;
        rows.push(StepCountRow {
            checkpoint: name.clone(),
            steps: dn.effective_steps(),
            flash: dn.flash,
            stats,
        });
    }
    Ok(rows)
}

/// Newline-delimited JSON report sink.
pub fn write_ndjson<S: Serialize>(path: &Path, items: &[S]) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| EvalError::Report(e.to_string()))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Plot-ready CSV of cell statistics.
pub fn write_cells_csv(path: &Path, cells: &[CellStats]) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "label,n,mean_progress,stderr,success_rate,mean_starvation,mean_network_evals"
    )?;
    for c in cells {
        writeln!(
            f,
            "{},{},{:.6},{:.6},{:.4},{:.3},{:.2}",
            c.label, c.n, c.mean_progress, c.stderr, c.success_rate, c.mean_starvation,
            c.mean_network_evals
        )?;
    }
    Ok(())
}

/// Teacher-forced one-chunk-ahead prediction error on held-out episodes:
/// prefill the cache with ground-truth context, denoise the next chunk, and
/// compare predicted frames against the real ones. Returns mean MSE for the
/// model and for the copy-last-frame baseline over the same chunks.
pub fn teacher_forced_mse(
    ck: &Checkpoint,
    env_cfg: &EnvConfig,
    denoise: &DenoiseConfig,
    episodes: &[crate::data::TrajectoryRecord],
    windows_per_episode: usize,
    base_seed: u64,
) -> Result<(f64, f64), EvalError> {
    use crate::infer::KvCacheState;
    use crate::model::{build_layout, Cond};

    let cfg = &ck.config;
    let (_, handles) = build_layout(cfg);
    let store: crate::model::ParamStore<f32> = ck.store.cast();
    let mut model_sum = 0.0;
    let mut copy_sum = 0.0;
    let mut n = 0usize;

    for (ei, ep) in episodes.iter().enumerate() {
        let t_v = ep.frames.len();
        let context_chunks = cfg.max_cached_chunks();
        let span = (context_chunks + 1) * cfg.k;
        if t_v < span + 1 {
            continue;
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(ei as u64).wrapping_mul(0x9e37));
        for w in 0..windows_per_episode {
            let max_l = t_v - 1 - span;
            let l = if max_l == 0 {
                0
            } else {
                (w * 977 + 131) % (max_l + 1)
            };
            let instr = ep.instruction_at_tick((l * env_cfg.ticks_per_frame()) as u64);
            let mut cond = KvCacheState::new(&store, &handles, cfg, Cond::Instr(instr));
            let mut uncond = denoise
                .cfg_enabled
                .then(|| KvCacheState::new(&store, &handles, cfg, Cond::Null));
            for c in 0..context_chunks {
                let f0 = l + c * cfg.k;
                let mut rows = Vec::new();
                for f in f0..f0 + cfg.k {
                    rows.push(crate::model::patchify_frame::<f32>(&ep.frames[f], cfg.patch));
                }
                let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
                let lat = ndarray::concatenate(ndarray::Axis(0), &views).expect("widths");
                cond.prefill(&store, &handles, cfg, &lat, f0)?;
                if let Some(u) = uncond.as_mut() {
                    u.prefill(&store, &handles, cfg, &lat, f0)?;
                }
            }
            let target_start = l + context_chunks * cfg.k;
            // Proprioception at the target chunk's first control tick.
            let q = ep.states[target_start * env_cfg.ticks_per_frame()];
            let pred = crate::infer::denoise_chunk(
                &store,
                &handles,
                cfg,
                &ck.norm,
                &cond,
                uncond.as_ref(),
                &q,
                denoise,
                &mut rng,
            )?;
            let last_context = &ep.frames[target_start - 1];
            for (f, pf) in pred.frames.iter().enumerate() {
                let actual = &ep.frames[target_start + f];
                model_sum += crate::model::frame_mse(pf, actual);
                copy_sum += crate::model::frame_mse(last_context, actual);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(EvalError::Report(
            "no held-out window long enough for teacher-forced evaluation".into(),
        ));
    }
    Ok((model_sum / n as f64, copy_sum / n as f64))
}
