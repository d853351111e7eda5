//! Deterministic 2D push-world: the data-collection world and the
//! closed-loop evaluation world.
//!
//! The arena is the unit square. A disk agent moves by per-tick displacement
//! commands and can attach at most one disk block at a time; an attached
//! block follows the agent rigidly. All dynamics are pure functions of
//! `(state, action)` — no hidden globals, no wall clock — so episodes are
//! reproducible byte-for-byte from a seed.

mod episode;
pub(crate) mod instruction;
mod render;
mod script;

pub use episode::{generate_episode, sample_scene, GenConfig, GenMode, REPETITIVE_CATALOG_LEN};
pub use instruction::{
    region_contains, region_rect, region_target, Instruction, COLOR_NAMES, HELD_OUT_VERB,
    N_COLORS, N_REGIONS, N_VERBS, SEEN_VERBS,
};
pub use render::{render, Frame, ViewConfig};
pub use script::{resolve_goal, ControlStatus, Goal, ScriptedController};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("goal references color {color} but no block of that color exists")]
    MissingBlock { color: u8 },
    #[error("invalid rates: control_hz {control_hz} must be a positive multiple of video_hz {video_hz}")]
    BadRates { control_hz: u32, video_hz: u32 },
    #[error("could not place {wanted} non-overlapping blocks")]
    Placement { wanted: usize },
}

/// Physics and observation constants for the push-world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Width of one rendered view in pixels.
    pub img_w: usize,
    /// Height of one rendered view in pixels.
    pub img_h: usize,
    pub view: ViewConfig,
    pub agent_radius: f32,
    pub block_radius: f32,
    /// Per-axis displacement bound, arena units per control tick.
    pub a_max: f32,
    /// Control rate in ticks per second.
    pub control_hz: u32,
    /// Video rate in frames per second. Must divide `control_hz`.
    pub video_hz: u32,
    pub max_blocks: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            img_w: 32,
            img_h: 32,
            view: ViewConfig::default(),
            agent_radius: 0.05,
            block_radius: 0.04,
            a_max: 0.05,
            control_hz: 10,
            video_hz: 5,
            max_blocks: 3,
        }
    }
}

impl EnvConfig {
    /// Control ticks per video frame (`r`). Panics if the rates do not divide.
    pub fn ticks_per_frame(&self) -> usize {
        assert!(
            self.video_hz > 0 && self.control_hz % self.video_hz == 0,
            "control_hz must be a positive multiple of video_hz"
        );
        (self.control_hz / self.video_hz) as usize
    }

    /// Total rendered frame width across all views.
    pub fn frame_width(&self) -> usize {
        self.img_w * self.view.n_views
    }
}

/// One block in the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub color: u8,
    pub pos: [f32; 2],
    pub attached: bool,
}

/// Full simulator state. A pure value: cloning it snapshots the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub agent_pos: [f32; 2],
    /// 0.0 or 1.0; mirrors the last executed grip command thresholded at 0.5.
    pub grip: f32,
    pub blocks: Vec<Block>,
    pub tick: u64,
    /// Rigid offset of the attached block relative to the agent, captured at
    /// attach time. Meaningless when nothing is attached.
    pub attach_offset: [f32; 2],
}

impl EnvState {
    pub fn new(agent_pos: [f32; 2], blocks: Vec<Block>) -> Self {
        Self {
            agent_pos,
            grip: 0.0,
            blocks,
            tick: 0,
            attach_offset: [0.0, 0.0],
        }
    }

    /// Proprioceptive observation: agent position and grip state.
    pub fn proprio(&self) -> [f32; 3] {
        [self.agent_pos[0], self.agent_pos[1], self.grip]
    }

    pub fn attached_index(&self) -> Option<usize> {
        self.blocks.iter().position(|b| b.attached)
    }

    /// First block of the given color, if any.
    pub fn block_of_color(&self, color: u8) -> Option<usize> {
        self.blocks.iter().position(|b| b.color == color)
    }
}

/// Displacement command plus grip command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub vx: f32,
    pub vy: f32,
    pub grip_cmd: f32,
}

impl Action {
    pub const ZERO: Action = Action {
        vx: 0.0,
        vy: 0.0,
        grip_cmd: 0.0,
    };

    pub fn new(vx: f32, vy: f32, grip_cmd: f32) -> Self {
        Self { vx, vy, grip_cmd }
    }

    /// Clip into the admissible box: velocities to `[-a_max, a_max]`,
    /// grip to `[0, 1]`. Non-finite components clip to zero.
    pub fn clipped(&self, a_max: f32) -> Action {
        let clip = |v: f32, lo: f32, hi: f32| {
            if v.is_finite() {
                v.clamp(lo, hi)
            } else {
                0.0
            }
        };
        Action {
            vx: clip(self.vx, -a_max, a_max),
            vy: clip(self.vy, -a_max, a_max),
            grip_cmd: clip(self.grip_cmd, 0.0, 1.0),
        }
    }

    pub fn as_array(&self) -> [f32; 3] {
        [self.vx, self.vy, self.grip_cmd]
    }

    pub fn from_array(a: [f32; 3]) -> Self {
        Self {
            vx: a[0],
            vy: a[1],
            grip_cmd: a[2],
        }
    }
}

fn clamp01(p: [f32; 2]) -> [f32; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

pub fn dist(a: [f32; 2], b: [f32; 2]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Advance the world by one control tick. Total function: out-of-range
/// actions are clipped, positions are clamped to the arena.
///
/// Order of effects: the agent moves, an attached block follows rigidly,
/// then the grip command is applied (attach on overlap when raising,
/// detach when releasing).
pub fn step(state: &EnvState, action: &Action, cfg: &EnvConfig) -> EnvState {
    let a = action.clipped(cfg.a_max);
    let mut next = state.clone();

    next.agent_pos = clamp01([state.agent_pos[0] + a.vx, state.agent_pos[1] + a.vy]);

    if let Some(i) = next.attached_index() {
        let follow = [
            next.agent_pos[0] + next.attach_offset[0],
            next.agent_pos[1] + next.attach_offset[1],
        ];
        next.blocks[i].pos = clamp01(follow);
    }

    if a.grip_cmd > 0.5 {
        next.grip = 1.0;
        if next.attached_index().is_none() {
            // Attach the nearest overlapping block, if any.
            let reach = cfg.agent_radius + cfg.block_radius;
            let mut best: Option<(usize, f32)> = None;
            for (i, b) in next.blocks.iter().enumerate() {
                let d = dist(next.agent_pos, b.pos);
                if d < reach && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            if let Some((i, _)) = best {
                next.blocks[i].attached = true;
                next.attach_offset = [
                    next.blocks[i].pos[0] - next.agent_pos[0],
                    next.blocks[i].pos[1] - next.agent_pos[1],
                ];
            }
        }
    } else {
        next.grip = 0.0;
        if let Some(i) = next.attached_index() {
            next.blocks[i].attached = false;
        }
        next.attach_offset = [0.0, 0.0];
    }

    next.tick = state.tick + 1;
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_state() -> EnvState {
        EnvState::new(
            [0.5, 0.5],
            vec![Block {
                color: 0,
                pos: [0.8, 0.8],
                attached: false,
            }],
        )
    }

    #[test]
    fn zero_action_is_fixed_point() {
        let cfg = EnvConfig::default();
        let s = base_state();
        let s2 = step(&s, &Action::ZERO, &cfg);
        assert_eq!(s2.agent_pos, s.agent_pos);
        assert_eq!(s2.blocks, s.blocks);
        assert_eq!(s2.grip, s.grip);
        assert_eq!(s2.tick, s.tick + 1);
    }

    #[test]
    fn pure_translation() {
        let cfg = EnvConfig::default();
        let s = base_state();
        let s2 = step(&s, &Action::new(0.05, 0.0, 0.0), &cfg);
        assert!((s2.agent_pos[0] - 0.55).abs() < 1e-7);
        assert_eq!(s2.agent_pos[1], 0.5);
    }

    #[test]
    fn clamp_at_boundary() {
        let cfg = EnvConfig::default();
        let mut s = base_state();
        s.agent_pos = [0.99, 0.5];
        let s2 = step(&s, &Action::new(0.05, 0.0, 0.0), &cfg);
        assert_eq!(s2.agent_pos, [1.0, 0.5]);
    }

    #[test]
    fn action_clipping_bounds() {
        let cfg = EnvConfig::default();
        let s = base_state();
        let s2 = step(&s, &Action::new(10.0, -10.0, 5.0), &cfg);
        assert!((s2.agent_pos[0] - 0.55).abs() < 1e-7);
        assert!((s2.agent_pos[1] - 0.45).abs() < 1e-7);
        let s3 = step(&s, &Action::new(f32::NAN, f32::INFINITY, 0.0), &cfg);
        assert_eq!(s3.agent_pos, s.agent_pos);
    }

    #[test]
    fn attach_follow_detach() {
        let cfg = EnvConfig::default();
        let mut s = base_state();
        s.blocks[0].pos = [0.53, 0.5];
        // Overlapping and gripping attaches.
        let s = step(&s, &Action::new(0.0, 0.0, 1.0), &cfg);
        assert!(s.blocks[0].attached);
        assert_eq!(s.grip, 1.0);
        // Attached block follows rigidly.
        let s = step(&s, &Action::new(0.04, 0.0, 1.0), &cfg);
        assert!((s.blocks[0].pos[0] - 0.57).abs() < 1e-6);
        // Release detaches.
        let s = step(&s, &Action::new(0.0, 0.0, 0.0), &cfg);
        assert!(!s.blocks[0].attached);
        assert_eq!(s.grip, 0.0);
    }

    #[test]
    fn attachment_exclusive_over_grip_overlap_combinations() {
        // Brute-force 2-block scenes: every combination of (grip command,
        // which blocks overlap the agent) yields at most one attachment.
        let cfg = EnvConfig::default();
        let near = [0.52, 0.5];
        let far = [0.9, 0.9];
        for grip in [0.0, 1.0] {
            for b0_near in [false, true] {
                for b1_near in [false, true] {
                    let s = EnvState::new(
                        [0.5, 0.5],
                        vec![
                            Block {
                                color: 0,
                                pos: if b0_near { near } else { far },
                                attached: false,
                            },
                            Block {
                                color: 1,
                                pos: if b1_near { [0.5, 0.52] } else { [0.1, 0.1] },
                                attached: false,
                            },
                        ],
                    );
                    let mut cur = s;
                    for _ in 0..3 {
                        cur = step(&cur, &Action::new(0.0, 0.0, grip), &cfg);
                        let attached = cur.blocks.iter().filter(|b| b.attached).count();
                        assert!(attached <= 1, "more than one block attached");
                    }
                }
            }
        }
    }

    #[test]
    fn tick_strictly_increases() {
        let cfg = EnvConfig::default();
        let mut s = base_state();
        for i in 1..10u64 {
            s = step(&s, &Action::new(0.01, -0.02, 0.0), &cfg);
            assert_eq!(s.tick, i);
            assert!(s.agent_pos[0] >= 0.0 && s.agent_pos[0] <= 1.0);
            assert!(s.agent_pos[1] >= 0.0 && s.agent_pos[1] <= 1.0);
        }
    }
}
