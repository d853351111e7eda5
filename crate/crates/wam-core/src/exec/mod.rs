//! Asynchronous closed-loop execution on a simulated clock.
//!
//! Two logical activities share the tick loop: the inference worker
//! (launches on the freshest observation, delivers an action chunk after
//! the modeled latency, relaunches immediately) and the motion controller
//! (consumes one action per control tick, always taking the most recent
//! chunk scheduled for the current timestamp). They communicate only
//! through the [`ChunkSchedule`] and by-value state snapshots, so the
//! interleaving is deterministic and the latency contract is testable
//! exactly: with chunk horizon `H`, any fixed latency `L < H` leaves no
//! starved ticks once the first chunk has arrived.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{render, step, Action, EnvConfig, EnvState, Frame};
use crate::infer::InferError;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("inference engine failed at tick {tick}: {source}")]
    Engine {
        tick: u64,
        #[source]
        source: InferError,
    },
    #[error("chunk schedule must be monotone in valid_from_tick")]
    NonMonotoneSchedule,
}

/// Latency model for the inference worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyModel {
    /// Deterministic latency in control ticks; the default, and the only
    /// mode used by tests.
    FixedTicks(u64),
    /// Wall-clock benchmarking: measured compute time mapped to ticks.
    Measured { ticks_per_second: f64 },
}

impl LatencyModel {
    fn ticks(&self, wall_s: f64) -> u64 {
        match self {
            LatencyModel::FixedTicks(t) => *t,
            LatencyModel::Measured { ticks_per_second } => {
                (wall_s * ticks_per_second).ceil() as u64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoffPolicy {
    /// A fresher overlapping chunk takes over at any tick (the default).
    PerTick,
    /// Switch only when the currently executing chunk ends.
    AtChunkBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecConfig {
    pub latency: LatencyModel,
    pub handoff: HandoffPolicy,
    pub tick_budget: u64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            latency: LatencyModel::FixedTicks(2),
            handoff: HandoffPolicy::PerTick,
            tick_budget: 200,
        }
    }
}

/// One scheduled action chunk.
#[derive(Debug, Clone)]
pub struct ChunkScheduleEntry {
    pub valid_from_tick: u64,
    pub actions: Vec<Action>,
    pub source_observation_tick: u64,
}

impl ChunkScheduleEntry {
    pub fn covers(&self, tick: u64) -> bool {
        tick >= self.valid_from_tick && tick < self.valid_from_tick + self.actions.len() as u64
    }
}

/// Chunks ordered by `valid_from_tick`.
#[derive(Debug, Clone, Default)]
pub struct ChunkSchedule {
    pub entries: Vec<ChunkScheduleEntry>,
}

impl ChunkSchedule {
    pub fn push(&mut self, entry: ChunkScheduleEntry) -> Result<(), ExecError> {
        if let Some(last) = self.entries.last() {
            if entry.valid_from_tick < last.valid_from_tick {
                return Err(ExecError::NonMonotoneSchedule);
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Among chunks covering `tick`, execute the one with the freshest source
/// observation; with no coverage, repeat the last executed action and flag
/// starvation.
pub fn select_action(
    schedule: &ChunkSchedule,
    tick: u64,
    last_executed: Action,
) -> (Action, bool) {
    let mut best: Option<&ChunkScheduleEntry> = None;
    for e in &schedule.entries {
        if e.covers(tick) {
            let better = match best {
                None => true,
                Some(b) => {
                    (e.source_observation_tick, e.valid_from_tick)
                        >= (b.source_observation_tick, b.valid_from_tick)
                }
            };
            if better {
                best = Some(e);
            }
        }
    }
    match best {
        Some(e) => (e.actions[(tick - e.valid_from_tick) as usize], false),
        None => (last_executed, true),
    }
}

/// One predicted chunk handed from the inference worker to the controller.
#[derive(Debug, Clone)]
pub struct PredictedChunk {
    pub actions: Vec<Action>,
    /// Predicted frames with their latent-frame indices, for alignment
    /// reporting. Never fed back into the policy.
    pub predicted_frames: Vec<(usize, Frame)>,
    pub network_evals: usize,
    pub wall_s: f64,
}

/// A policy that consumes observations and produces action chunks. The
/// closed-loop runner drives it; implementations include the denoising
/// engine, the scripted oracle, and trivial baselines.
pub trait ChunkSource {
    fn observe(&mut self, frame_index: usize, frame: &Frame) -> Result<(), InferError>;
    fn predict(
        &mut self,
        proprio: [f32; 3],
        rng: &mut ChaCha8Rng,
    ) -> Result<PredictedChunk, InferError>;
    /// Actions per chunk.
    fn horizon(&self) -> usize;
}

/// Everything the rollout produced, for metric computation downstream.
#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    /// State at every tick boundary; `states[t]` is the state entering tick `t`.
    pub states: Vec<EnvState>,
    pub executed: Vec<Action>,
    pub starved_ticks: Vec<u64>,
    /// Ticks before the first chunk delivery (agent holds zero action).
    pub warmup_ticks: u64,
    /// Frames rendered at the video rate; `frames[i]` at tick `i * r`.
    pub frames: Vec<Frame>,
    pub chunk_log: Vec<ChunkLogEntry>,
    pub ticks_run: u64,
}

#[derive(Debug, Clone)]
pub struct ChunkLogEntry {
    pub launch_tick: u64,
    pub delivery_tick: u64,
    pub latency_ticks: u64,
    pub predicted_frames: Vec<(usize, Frame)>,
    pub network_evals: usize,
    pub wall_s: f64,
}

struct PendingJob {
    launch_tick: u64,
    ready_tick: u64,
    chunk: PredictedChunk,
    log_index: usize,
}

/// Run the closed loop: snapshot, launch, deliver after the modeled
/// latency, consume one action per tick, inject post-execution frames.
/// Terminates on `done` or the tick budget.
pub fn run_closed_loop(
    env_cfg: &EnvConfig,
    initial: EnvState,
    source: &mut dyn ChunkSource,
    cfg: &ExecConfig,
    rng: &mut ChaCha8Rng,
    mut done: impl FnMut(&EnvState) -> bool,
) -> Result<ExecutionTrace, ExecError> {
    let r = env_cfg.ticks_per_frame() as u64;
    let mut state = initial;
    let mut schedule = ChunkSchedule::default();
    let mut trace = ExecutionTrace {
        states: vec![state.clone()],
        executed: Vec::new(),
        starved_ticks: Vec::new(),
        warmup_ticks: 0,
        frames: Vec::new(),
        chunk_log: Vec::new(),
        ticks_run: 0,
    };

    let frame0 = render(&state, &env_cfg.view, env_cfg);
    source
        .observe(0, &frame0)
        .map_err(|source| ExecError::Engine { tick: 0, source })?;
    trace.frames.push(frame0);

    let mut pending: Option<PendingJob> = None;
    let mut last_action = Action::ZERO;
    let mut sticky: Option<(u64, u64)> = None; // active chunk under boundary handoff

    for tick in 0..cfg.tick_budget {
        // Deliver a matured chunk.
        if pending.as_ref().is_some_and(|j| j.ready_tick <= tick) {
            let job = pending.take().unwrap();
            trace.chunk_log[job.log_index].delivery_tick = tick;
            schedule.push(ChunkScheduleEntry {
                valid_from_tick: tick,
                actions: job.chunk.actions.clone(),
                source_observation_tick: job.launch_tick,
            })?;
        }

        // Launch on the freshest observation whenever the worker is idle.
        if pending.is_none() {
            let chunk = source
                .predict(state.proprio(), rng)
                .map_err(|source| ExecError::Engine { tick, source })?;
            let latency = cfg.latency.ticks(chunk.wall_s);
            trace.chunk_log.push(ChunkLogEntry {
                launch_tick: tick,
                delivery_tick: u64::MAX,
                latency_ticks: latency,
                predicted_frames: chunk.predicted_frames.clone(),
                network_evals: chunk.network_evals,
                wall_s: chunk.wall_s,
            });
            let log_index = trace.chunk_log.len() - 1;
            if latency == 0 {
                trace.chunk_log[log_index].delivery_tick = tick;
                schedule.push(ChunkScheduleEntry {
                    valid_from_tick: tick,
                    actions: chunk.actions.clone(),
                    source_observation_tick: tick,
                })?;
            } else {
                pending = Some(PendingJob {
                    launch_tick: tick,
                    ready_tick: tick + latency,
                    chunk,
                    log_index,
                });
            }
        }

        // Controller: one action per tick.
        let action = if schedule.is_empty() {
            trace.warmup_ticks += 1;
            Action::ZERO
        } else {
            let (action, starved) = match cfg.handoff {
                HandoffPolicy::PerTick => select_action(&schedule, tick, last_action),
                HandoffPolicy::AtChunkBoundary => {
                    let active = sticky.and_then(|(vf, st)| {
                        schedule
                            .entries
                            .iter()
                            .find(|e| {
                                e.valid_from_tick == vf
                                    && e.source_observation_tick == st
                                    && e.covers(tick)
                            })
                            .map(|e| (e.actions[(tick - vf) as usize], false))
                    });
                    match active {
                        Some(hit) => hit,
                        None => {
                            let (a, s) = select_action(&schedule, tick, last_action);
                            sticky = if s {
                                None
                            } else {
                                schedule
                                    .entries
                                    .iter()
                                    .filter(|e| e.covers(tick))
                                    .max_by_key(|e| (e.source_observation_tick, e.valid_from_tick))
                                    .map(|e| (e.valid_from_tick, e.source_observation_tick))
                            };
                            (a, s)
                        }
                    }
                }
            };
            if starved {
                trace.starved_ticks.push(tick);
            }
            action
        };

        state = step(&state, &action, env_cfg);
        last_action = action;
        trace.executed.push(action);
        trace.states.push(state.clone());
        trace.ticks_run = tick + 1;

        // Render at video-rate boundaries and inject the observation.
        if (tick + 1) % r == 0 {
            let idx = ((tick + 1) / r) as usize;
            let frame = render(&state, &env_cfg.view, env_cfg);
            source
                .observe(idx, &frame)
                .map_err(|source| ExecError::Engine { tick, source })?;
            trace.frames.push(frame);
        }

        if done(&state) {
            break;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Stub policy emitting constant chunks; frames ignored.
    struct ConstSource {
        h: usize,
        value: f32,
    }

    impl ChunkSource for ConstSource {
        fn observe(&mut self, _: usize, _: &Frame) -> Result<(), InferError> {
            Ok(())
        }
        fn predict(
            &mut self,
            _: [f32; 3],
            _: &mut ChaCha8Rng,
        ) -> Result<PredictedChunk, InferError> {
            Ok(PredictedChunk {
                actions: vec![Action::new(self.value, 0.0, 0.0); self.h],
                predicted_frames: Vec::new(),
                network_evals: 1,
                wall_s: 0.0,
            })
        }
        fn horizon(&self) -> usize {
            self.h
        }
    }

    fn one_chunk(valid_from: u64, src: u64, vals: &[f32]) -> ChunkScheduleEntry {
        ChunkScheduleEntry {
            valid_from_tick: valid_from,
            actions: vals.iter().map(|&v| Action::new(v, 0.0, 0.0)).collect(),
            source_observation_tick: src,
        }
    }

    #[test]
    fn select_action_indexing_and_recency() {
        let mut s = ChunkSchedule::default();
        s.push(one_chunk(0, 0, &[0.01, 0.02, 0.03, 0.04])).unwrap();
        let (a, starved) = select_action(&s, 2, Action::ZERO);
        assert!(!starved);
        assert_eq!(a.vx, 0.03);

        // Overlapping fresher chunk wins at tick 5.
        s.push(one_chunk(3, 1, &[0.1, 0.11, 0.12, 0.13])).unwrap();
        s.push(one_chunk(5, 4, &[0.2, 0.21, 0.22, 0.23])).unwrap();
        let (a, starved) = select_action(&s, 5, Action::ZERO);
        assert!(!starved);
        assert_eq!(a.vx, 0.2);

        // Gap: repeat the last action, starved.
        let (a, starved) = select_action(&s, 9, Action::new(0.5, 0.0, 0.0));
        assert!(starved);
        assert_eq!(a.vx, 0.5);
    }

    #[test]
    fn monotone_schedule_enforced() {
        let mut s = ChunkSchedule::default();
        s.push(one_chunk(4, 0, &[0.0])).unwrap();
        assert!(matches!(
            s.push(one_chunk(3, 0, &[0.0])),
            Err(ExecError::NonMonotoneSchedule)
        ));
    }

    fn run_latency(l: u64, budget: u64) -> ExecutionTrace {
        let env_cfg = EnvConfig::default();
        let state = EnvState::new([0.5, 0.5], vec![]);
        let mut src = ConstSource { h: 4, value: 0.001 };
        let cfg = ExecConfig {
            latency: LatencyModel::FixedTicks(l),
            handoff: HandoffPolicy::PerTick,
            tick_budget: budget,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        run_closed_loop(&env_cfg, state, &mut src, &cfg, &mut rng, |_| false).unwrap()
    }

    #[test]
    fn zero_latency_behaves_synchronously() {
        let t = run_latency(0, 40);
        assert_eq!(t.starved_ticks.len(), 0);
        assert_eq!(t.warmup_ticks, 0);
        // Every tick executes the policy action, never the warmup fallback.
        assert!(t.executed.iter().all(|a| a.vx == 0.001));
    }

    #[test]
    fn latency_below_horizon_never_starves() {
        for l in 0..4u64 {
            let t = run_latency(l, 80);
            assert_eq!(
                t.starved_ticks.len(),
                0,
                "latency {l} starved at {:?}",
                t.starved_ticks
            );
            assert_eq!(t.warmup_ticks, l);
        }
    }

    #[test]
    fn latency_beyond_horizon_starves_by_the_closed_form() {
        // H = 4, L = H + 2 = 6: deliveries at 6, 12, 18, ... each covering
        // [d, d + 4), leaving exactly L - H = 2 starved ticks per cycle.
        let h = 4u64;
        let l = h + 2;
        let budget = 80u64;
        let t = run_latency(l, budget);
        let expected: Vec<u64> = (l..budget).filter(|&tick| (tick - l) % l >= h).collect();
        assert_eq!(t.starved_ticks, expected);
        // Per steady-state cycle of length L: exactly two starved ticks.
        let one_cycle = t
            .starved_ticks
            .iter()
            .filter(|&&tk| tk >= l && tk < 2 * l)
            .count();
        assert_eq!(one_cycle, (l - h) as usize);
    }

    #[test]
    fn recency_matches_brute_force_scan() {
        let mut s = ChunkSchedule::default();
        let chunks = [
            one_chunk(0, 0, &[0.1, 0.1, 0.1, 0.1]),
            one_chunk(2, 1, &[0.2, 0.2, 0.2, 0.2]),
            one_chunk(3, 3, &[0.3, 0.3, 0.3, 0.3]),
            one_chunk(6, 2, &[0.4, 0.4, 0.4, 0.4]),
        ];
        for c in chunks.iter().cloned() {
            s.push(c).unwrap();
        }
        for tick in 0..12u64 {
            let (got, starved) = select_action(&s, tick, Action::ZERO);
            let best = chunks
                .iter()
                .filter(|e| e.covers(tick))
                .max_by_key(|e| (e.source_observation_tick, e.valid_from_tick));
            match best {
                Some(e) => {
                    assert!(!starved);
                    assert_eq!(got, e.actions[(tick - e.valid_from_tick) as usize]);
                }
                None => assert!(starved),
            }
        }
    }

    #[test]
    fn boundary_handoff_sticks_to_one_chunk() {
        // Two overlapping chunks; per-tick handoff switches mid-chunk,
        // boundary handoff keeps the first until it expires.
        struct TwoChunk {
            h: usize,
            n: usize,
        }
        impl ChunkSource for TwoChunk {
            fn observe(&mut self, _: usize, _: &Frame) -> Result<(), InferError> {
                Ok(())
            }
            fn predict(
                &mut self,
                _: [f32; 3],
                _: &mut ChaCha8Rng,
            ) -> Result<PredictedChunk, InferError> {
                self.n += 1;
                Ok(PredictedChunk {
                    actions: vec![Action::new(self.n as f32 * 0.001, 0.0, 0.0); self.h],
                    predicted_frames: Vec::new(),
                    network_evals: 1,
                    wall_s: 0.0,
                })
            }
            fn horizon(&self) -> usize {
                self.h
            }
        }
        let env_cfg = EnvConfig::default();
        for handoff in [HandoffPolicy::PerTick, HandoffPolicy::AtChunkBoundary] {
            let mut src = TwoChunk { h: 6, n: 0 };
            let cfg = ExecConfig {
                latency: LatencyModel::FixedTicks(3),
                handoff,
                tick_budget: 24,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let t = run_closed_loop(
                &env_cfg,
                EnvState::new([0.5, 0.5], vec![]),
                &mut src,
                &cfg,
                &mut rng,
                |_| false,
            )
            .unwrap();
            // Chunk i (value i/1000) is delivered at tick 3i covering 6
            // ticks. At tick 7 both chunk 1 (3..9) and the fresher chunk 2
            // (6..12) cover: per-tick switches to chunk 2 immediately while
            // boundary handoff finishes chunk 1 first.
            let v7 = t.executed[7].vx;
            match cfg.handoff {
                HandoffPolicy::PerTick => assert!((v7 - 0.002).abs() < 1e-9, "got {v7}"),
                HandoffPolicy::AtChunkBoundary => {
                    assert!((v7 - 0.001).abs() < 1e-9, "got {v7}")
                }
            }
            assert!(t.starved_ticks.is_empty());
        }
    }

    #[test]
    fn rollouts_are_bit_reproducible() {
        let a = run_latency(2, 60);
        let b = run_latency(2, 60);
        assert_eq!(a.states.last(), b.states.last());
        assert_eq!(a.executed, b.executed);
        assert_eq!(a.starved_ticks, b.starved_ticks);
    }
}
