//! Idle-action filtering.
//!
//! A control tick is idle when both velocity components are below
//! `eps_idle` in magnitude and the grip command has not changed since the
//! previous tick. Removal is restricted to whole frame intervals that lie
//! entirely inside a maximal idle run, so the `T_a = r * (T_v - 1)`
//! alignment survives and the operation is idempotent: the idle fragments
//! left at run boundaries never again cover a full interval.

use super::{DataError, TrajectoryRecord};

fn idle_mask(traj: &TrajectoryRecord, eps_idle: f32) -> Vec<bool> {
    let mut mask = Vec::with_capacity(traj.actions.len());
    for (i, a) in traj.actions.iter().enumerate() {
        let prev_grip = if i == 0 {
            a.grip_cmd
        } else {
            traj.actions[i - 1].grip_cmd
        };
        let idle = a.vx.abs() < eps_idle
            && a.vy.abs() < eps_idle
            && (a.grip_cmd - prev_grip).abs() <= eps_idle;
        mask.push(idle);
    }
    mask
}

/// Remove idle stretches from a trajectory. Fails when fewer than
/// `min_chunks` chunks of `k` latent frames would remain.
pub fn filter_idle(
    traj: &TrajectoryRecord,
    eps_idle: f32,
    min_chunks: usize,
    k: usize,
) -> Result<TrajectoryRecord, DataError> {
    traj.validate_alignment()?;
    let r = traj.ticks_per_frame();
    let n_intervals = traj.frames.len().saturating_sub(1);
    let idle = idle_mask(traj, eps_idle);

    // An interval is dropped when all of its r ticks are idle.
    let drop_interval: Vec<bool> = (0..n_intervals)
        .map(|i| idle[i * r..(i + 1) * r].iter().all(|&b| b))
        .collect();

    let kept_frames = 1 + drop_interval.iter().filter(|&&d| !d).count();
    if kept_frames < min_chunks * k {
        return Err(DataError::TooShortAfterFilter {
            frames: kept_frames,
            min_frames: min_chunks * k,
        });
    }

    let mut frames = vec![traj.frames[0].clone()];
    let mut actions = Vec::new();
    let mut states = Vec::new();
    // Remap old control ticks to new ones for segment boundaries.
    let mut new_tick_of = vec![0u64; traj.actions.len() + 1];
    let mut new_t = 0u64;
    for (i, dropped) in drop_interval.iter().enumerate() {
        for t in i * r..(i + 1) * r {
            new_tick_of[t] = new_t;
            if !dropped {
                actions.push(traj.actions[t]);
                states.push(traj.states[t]);
                new_t += 1;
            }
        }
        if !dropped {
            frames.push(traj.frames[i + 1].clone());
        }
    }
    new_tick_of[traj.actions.len()] = new_t;

    let mut segments = Vec::new();
    for s in &traj.segments {
        let tick = new_tick_of[(s.tick as usize).min(traj.actions.len())];
        // Boundaries collapsing onto the same tick keep the latest segment.
        if let Some(last) = segments.last_mut() {
            let last: &mut super::SegmentBoundary = last;
            if last.tick == tick {
                last.instruction = s.instruction;
                continue;
            }
        }
        segments.push(super::SegmentBoundary {
            tick,
            instruction: s.instruction,
        });
    }

    let out = TrajectoryRecord {
        frames,
        actions,
        states,
        instruction: traj.instruction,
        control_hz: traj.control_hz,
        video_hz: traj.video_hz,
        segments,
        env: traj.env.clone(),
        seed: traj.seed,
    };
    out.validate_alignment()?;
    Ok(out)
}
