//! Task-progress rubrics for the push-world instruction grammar.
//!
//! Progress is the fraction of the initial goal distance closed by episode
//! end, clamped to `[0, 1]`; reaching the goal condition pins progress at 1.
//! Per verb:
//!
//! - `move c r`:  distance from the block to the region rectangle.
//! - `carry c r and back`: staged; the outbound leg (block to region) is
//!   worth 0.5, the return leg (block back to its starting point, within
//!   0.04) the other 0.5.
//! - `touch c`:   agent-block surface distance.
//! - `go to r`:   distance from the agent to the region rectangle.
//! - `circle around c`: fraction of a full revolution swept around the
//!   block (only while within 0.45 of it).

use crate::env::instruction::region_distance;
use crate::env::{dist, EnvConfig, EnvError, EnvState, Instruction};

const CARRY_RETURN_TOL: f32 = 0.04;
const CIRCLE_GATE_RADIUS: f32 = 0.45;

#[derive(Debug, Clone)]
pub struct ProgressTracker {
    pub instruction: Instruction,
    block: Option<usize>,
    agent_r: f32,
    block_r: f32,
    d0: f32,
    origin: [f32; 2],
    reached_region: bool,
    d0_back: f32,
    prev_angle: Option<f32>,
    swept: f32,
    progress: f32,
    success: bool,
}

fn frac_closed(d0: f32, d: f32) -> f32 {
    if d0 <= 1e-6 {
        return 1.0;
    }
    (1.0 - d / d0).clamp(0.0, 1.0)
}

impl ProgressTracker {
    pub fn new(
        instruction: Instruction,
        state: &EnvState,
        env: &EnvConfig,
    ) -> Result<Self, EnvError> {
        let block = if instruction.uses_color() {
            Some(
                state
                    .block_of_color(instruction.color)
                    .ok_or(EnvError::MissingBlock {
                        color: instruction.color,
                    })?,
            )
        } else {
            None
        };
        let origin = block.map(|b| state.blocks[b].pos).unwrap_or([0.5, 0.5]);
        let d0 = match instruction.verb {
            0 | 1 => region_distance(instruction.region, origin),
            2 => {
                let d = dist(state.agent_pos, origin) - (env.agent_radius + env.block_radius);
                d.max(0.0)
            }
            3 => region_distance(instruction.region, state.agent_pos),
            4 => 1.0, // angular rubric; distance unused
            v => unreachable!("unknown verb {v}"),
        };
        let mut t = Self {
            instruction,
            block,
            agent_r: env.agent_radius,
            block_r: env.block_radius,
            d0,
            origin,
            reached_region: false,
            d0_back: 0.0,
            prev_angle: None,
            swept: 0.0,
            progress: 0.0,
            success: false,
        };
        t.update(state);
        Ok(t)
    }

    /// Observe the state after a tick (or the initial state).
    pub fn update(&mut self, state: &EnvState) {
        if self.success {
            return;
        }
        let instr = self.instruction;
        match instr.verb {
            0 => {
                let b = &state.blocks[self.block.unwrap()];
                let d = region_distance(instr.region, b.pos);
                self.progress = frac_closed(self.d0, d);
                if d == 0.0 && !b.attached {
                    self.progress = 1.0;
                    self.success = true;
                }
            }
            1 => {
                let b = &state.blocks[self.block.unwrap()];
                if !self.reached_region {
                    let d = region_distance(instr.region, b.pos);
                    self.progress = 0.5 * frac_closed(self.d0, d);
                    if d == 0.0 {
                        self.reached_region = true;
                        self.d0_back = dist(b.pos, self.origin);
                        self.progress = 0.5;
                    }
                } else {
                    let d = (dist(b.pos, self.origin) - CARRY_RETURN_TOL).max(0.0);
                    self.progress = 0.5 + 0.5 * frac_closed(self.d0_back, d);
                    if d == 0.0 && !b.attached {
                        self.progress = 1.0;
                        self.success = true;
                    }
                }
            }
            2 => {
                let b = &state.blocks[self.block.unwrap()];
                let d = (dist(state.agent_pos, b.pos) - (self.agent_r + self.block_r)).max(0.0);
                self.progress = frac_closed(self.d0, d);
                if d == 0.0 {
                    self.progress = 1.0;
                    self.success = true;
                }
            }
            3 => {
                let d = region_distance(instr.region, state.agent_pos);
                self.progress = frac_closed(self.d0, d);
                if d == 0.0 {
                    self.progress = 1.0;
                    self.success = true;
                }
            }
            4 => {
                let b = &state.blocks[self.block.unwrap()];
                let dx = state.agent_pos[0] - b.pos[0];
                let dy = state.agent_pos[1] - b.pos[1];
                let r = (dx * dx + dy * dy).sqrt();
                let angle = dy.atan2(dx);
                if let Some(prev) = self.prev_angle {
                    let mut d = angle - prev;
                    while d > std::f32::consts::PI {
                        d -= std::f32::consts::TAU;
                    }
                    while d < -std::f32::consts::PI {
                        d += std::f32::consts::TAU;
                    }
                    if r <= CIRCLE_GATE_RADIUS && r > 1e-4 {
                        self.swept += d;
                    }
                }
                self.prev_angle = Some(angle);
                self.progress = (self.swept.abs() / std::f32::consts::TAU).min(1.0);
                if self.swept.abs() >= std::f32::consts::TAU {
                    self.progress = 1.0;
                    self.success = true;
                }
            }
            v => unreachable!("unknown verb {v}"),
        }
    }

    pub fn progress(&self) -> f64 {
        self.progress as f64
    }

    pub fn success(&self) -> bool {
        self.success
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{step, Action, Block};

    fn scene(block_pos: [f32; 2]) -> EnvState {
        EnvState::new(
            [0.5, 0.5],
            vec![Block {
                color: 0,
                pos: block_pos,
                attached: false,
            }],
        )
    }

    #[test]
    fn solved_at_reset_scores_one_for_holding_still() {
        let env = EnvConfig::default();
        let state = scene([0.1, 0.5]); // already in the left region
        let mut t = ProgressTracker::new(Instruction::new(0, 0, 0), &state, &env).unwrap();
        let mut s = state;
        for _ in 0..10 {
            s = step(&s, &Action::ZERO, &env);
            t.update(&s);
        }
        assert_eq!(t.progress(), 1.0);
        assert!(t.success());
    }

    #[test]
    fn success_implies_progress_one() {
        let env = EnvConfig::default();
        let state = scene([0.6, 0.5]);
        let mut t = ProgressTracker::new(Instruction::new(2, 0, 0), &state, &env).unwrap();
        let mut s = state;
        // Drive the agent straight at the block.
        for _ in 0..20 {
            s = step(&s, &Action::new(0.05, 0.0, 0.0), &env);
            t.update(&s);
            if t.success() {
                break;
            }
        }
        assert!(t.success());
        assert_eq!(t.progress(), 1.0);
    }

    #[test]
    fn halfway_there_scores_about_half() {
        let env = EnvConfig::default();
        let state = scene([0.9, 0.5]);
        let mut t = ProgressTracker::new(Instruction::new(3, 0, 0), &state, &env).unwrap();
        // Agent from x=0.5 toward the left region (x <= 0.25): d0 = 0.25.
        let mut s = state;
        for _ in 0..3 {
            s = step(&s, &Action::new(-0.05, 0.0, 0.0), &env);
            t.update(&s);
        }
        // Moved 0.15 of 0.25.
        assert!((t.progress() - 0.6).abs() < 0.05, "got {}", t.progress());
    }

    #[test]
    fn missing_block_is_an_error() {
        let env = EnvConfig::default();
        let state = EnvState::new([0.5, 0.5], vec![]);
        assert!(ProgressTracker::new(Instruction::new(0, 2, 0), &state, &env).is_err());
    }
}
