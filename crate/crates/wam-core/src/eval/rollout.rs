//! Rollout scoring: a closed-loop run reduced to one report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::progress::ProgressTracker;
use super::suite::EvalTask;
use super::EvalError;
use crate::env::{step, Action, EnvConfig, EnvState, Frame};
use crate::exec::{run_closed_loop, ChunkSource, ExecConfig, ExecutionTrace, PredictedChunk};
use crate::infer::InferError;
use crate::model::frame_mse;

/// Closed-loop metrics for one rollout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutReport {
    /// Rendered instruction text.
    pub task: String,
    pub verb: u8,
    pub seed: u64,
    pub success: bool,
    pub task_progress: f64,
    /// Predicted-vs-actual frame MSE per prediction, in delivery order.
    pub chunk_mse: Vec<f64>,
    /// Copy-last-frame baseline MSE for the same chunks.
    pub baseline_mse: Vec<f64>,
    pub starvation: u64,
    pub warmup_ticks: u64,
    pub network_evals: usize,
    pub latency_ticks: Vec<u64>,
    /// Wall-clock seconds per prediction; excluded from the deterministic
    /// digest.
    pub wall_s: Vec<f64>,
    pub ticks: u64,
    pub config_fingerprint: String,
}

impl RolloutReport {
    /// Hash of every deterministic field (wall times excluded).
    pub fn deterministic_digest(&self) -> String {
        let mut h = crc32fast::Hasher::new();
        let scrubbed = RolloutReport {
            wall_s: Vec::new(),
            ..self.clone()
        };
        h.update(&serde_json::to_vec(&scrubbed).expect("report serializes"));
        format!("{:08x}", h.finalize())
    }
}

/// Fingerprint of any serializable configuration bundle.
pub fn config_fingerprint<S: Serialize>(cfg: &S) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    format!("{:08x}", crc32fast::hash(&bytes))
}

/// Score an execution trace against the task rubric.
pub fn score_trace(
    env_cfg: &EnvConfig,
    task: &EvalTask,
    trace: &ExecutionTrace,
    fingerprint: String,
) -> Result<RolloutReport, EvalError> {
    let mut tracker = ProgressTracker::new(task.instruction, &task.initial, env_cfg)?;
    for s in &trace.states[1..] {
        tracker.update(s);
    }

    let r = env_cfg.ticks_per_frame();
    let mut chunk_mse = Vec::new();
    let mut baseline_mse = Vec::new();
    let mut latency_ticks = Vec::new();
    let mut wall_s = Vec::new();
    let mut network_evals = 0;
    for entry in &trace.chunk_log {
        network_evals += entry.network_evals;
        wall_s.push(entry.wall_s);
        if entry.delivery_tick != u64::MAX {
            latency_ticks.push(entry.delivery_tick - entry.launch_tick);
        }
        // Score only predictions whose frames all materialized.
        if entry.predicted_frames.is_empty() {
            continue;
        }
        let all_there = entry
            .predicted_frames
            .iter()
            .all(|(idx, _)| *idx < trace.frames.len());
        if !all_there {
            continue;
        }
        let first = entry.predicted_frames[0].0;
        if first == 0 {
            continue;
        }
        let last_context: &Frame = &trace.frames[first - 1];
        let mut mse = 0.0;
        let mut base = 0.0;
        for (idx, pf) in &entry.predicted_frames {
            mse += frame_mse(pf, &trace.frames[*idx]);
            base += frame_mse(last_context, &trace.frames[*idx]);
        }
        let n = entry.predicted_frames.len() as f64;
        chunk_mse.push(mse / n);
        baseline_mse.push(base / n);
    }
    let _ = r;

    Ok(RolloutReport {
        task: task.instruction.text(),
        verb: task.instruction.verb,
        seed: task.seed,
        success: tracker.success(),
        task_progress: tracker.progress(),
        chunk_mse,
        baseline_mse,
        starvation: trace.starved_ticks.len() as u64,
        warmup_ticks: trace.warmup_ticks,
        network_evals,
        latency_ticks,
        wall_s,
        ticks: trace.ticks_run,
        config_fingerprint: fingerprint,
    })
}

/// Run one task closed-loop through a chunk source and score it.
pub fn run_rollout(
    env_cfg: &EnvConfig,
    task: &EvalTask,
    source: &mut dyn ChunkSource,
    exec_cfg: &ExecConfig,
    fingerprint: String,
) -> Result<RolloutReport, EvalError> {
    let mut tracker = ProgressTracker::new(task.instruction, &task.initial, env_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed ^ 0x9e37_79b9);
    let trace = run_closed_loop(
        env_cfg,
        task.initial.clone(),
        source,
        exec_cfg,
        &mut rng,
        |s| {
            tracker.update(s);
            tracker.success()
        },
    )?;
    score_trace(env_cfg, task, &trace, fingerprint)
}

/// Run a per-tick policy with direct state access synchronously (used by
/// the scripted oracle and analytic baselines) and score it with the same
/// rubric as engine rollouts.
pub fn run_direct_policy(
    env_cfg: &EnvConfig,
    task: &EvalTask,
    mut policy: impl FnMut(&EnvState) -> Action,
    tick_budget: u64,
    fingerprint: String,
) -> Result<RolloutReport, EvalError> {
    let mut tracker = ProgressTracker::new(task.instruction, &task.initial, env_cfg)?;
    let mut state = task.initial.clone();
    let mut ticks = 0;
    for _ in 0..tick_budget {
        let a = policy(&state);
        state = step(&state, &a, env_cfg);
        ticks += 1;
        tracker.update(&state);
        if tracker.success() {
            break;
        }
    }
    Ok(RolloutReport {
        task: task.instruction.text(),
        verb: task.instruction.verb,
        seed: task.seed,
        success: tracker.success(),
        task_progress: tracker.progress(),
        chunk_mse: Vec::new(),
        baseline_mse: Vec::new(),
        starvation: 0,
        warmup_ticks: 0,
        network_evals: 0,
        latency_ticks: Vec::new(),
        wall_s: Vec::new(),
        ticks,
        config_fingerprint: fingerprint,
    })
}

/// Uniform random actions: the evaluation floor.
pub struct RandomSource {
    pub h: usize,
    pub a_max: f32,
}

impl ChunkSource for RandomSource {
    fn observe(&mut self, _: usize, _: &Frame) -> Result<(), InferError> {
        Ok(())
    }
    fn predict(
        &mut self,
        _: [f32; 3],
        rng: &mut ChaCha8Rng,
    ) -> Result<PredictedChunk, InferError> {
        let actions = (0..self.h)
            .map(|_| {
                Action::new(
                    rng.random_range(-self.a_max..self.a_max),
                    rng.random_range(-self.a_max..self.a_max),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        Ok(PredictedChunk {
            actions,
            predicted_frames: Vec::new(),
            network_evals: 0,
            wall_s: 0.0,
        })
    }
    fn horizon(&self) -> usize {
        self.h
    }
}
