//! Scripted teleoperator stand-in: a proportional controller that achieves
//! template-grammar goals on open arenas within a step budget.
//!
//! The controller re-derives its phase from the current state on every tick
//! (approach / grasp / transport / release), so it recovers gracefully when
//! spliced into an episode mid-way. A small seeded perpendicular wobble is
//! mixed into travel segments so that repeated goals do not produce
//! identical paths unless the wobble seed repeats.

use super::instruction::{region_contains, region_distance, region_target, Instruction};
use super::{dist, Action, EnvConfig, EnvError, EnvState};

/// A resolved task: the instruction plus the index of the referenced block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Goal {
    pub instruction: Instruction,
    pub block_index: Option<usize>,
}

/// Bind an instruction to the current scene.
pub fn resolve_goal(instruction: Instruction, state: &EnvState) -> Result<Goal, EnvError> {
    let block_index = if instruction.uses_color() {
        match state.block_of_color(instruction.color) {
            Some(i) => Some(i),
            None => {
                return Err(EnvError::MissingBlock {
                    color: instruction.color,
                })
            }
        }
    } else {
        None
    };
    Ok(Goal {
        instruction,
        block_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlStatus {
    InProgress,
    Done,
    /// Step budget exceeded before the goal condition held.
    Unreachable,
}

#[derive(Debug, Clone)]
pub struct ScriptedController {
    pub goal: Goal,
    budget: u32,
    ticks: u32,
    /// Block origin recorded at construction; used by the carry-and-back verb.
    origin: [f32; 2],
    /// Winding accumulator for the circling verb, radians.
    swept: f32,
    prev_angle: Option<f32>,
    /// For carry-and-back: whether the outbound leg has been completed.
    reached_region: bool,
    wobble_phase: f32,
    wobble_gain: f32,
}

const GRASP_SLACK: f32 = 0.7;
const CIRCLE_RADIUS: f32 = 0.16;

impl ScriptedController {
    pub fn new(goal: Goal, state: &EnvState, budget: u32, wobble_seed: u64) -> Self {
        let origin = goal
            .block_index
            .map(|i| state.blocks[i].pos)
            .unwrap_or([0.5, 0.5]);
        // Cheap hash of the seed into a phase and gain.
        let h = wobble_seed.wrapping_mul(0x9e3779b97f4a7c15);
        let wobble_phase = (h >> 40) as f32 / 16_777_216.0 * std::f32::consts::TAU;
        let wobble_gain = 0.15 + ((h >> 16) & 0xff) as f32 / 255.0 * 0.3;
        Self {
            goal,
            budget,
            ticks: 0,
            origin,
            swept: 0.0,
            prev_angle: None,
            reached_region: false,
            wobble_phase,
            wobble_gain,
        }
    }

    /// Travel action toward `target` with wobble, clipped per axis.
    fn go(&self, from: [f32; 2], target: [f32; 2], cfg: &EnvConfig, wobble: bool) -> Action {
        let dx = target[0] - from[0];
        let dy = target[1] - from[1];
        let d = (dx * dx + dy * dy).sqrt();
        if d < 1e-6 {
            return Action::ZERO;
        }
        let (ux, uy) = (dx / d, dy / d);
        let speed = d.min(cfg.a_max);
        let mut vx = ux * speed;
        let mut vy = uy * speed;
        if wobble && d > 3.0 * cfg.a_max {
            let w = (self.ticks as f32 * 0.35 + self.wobble_phase).sin()
                * self.wobble_gain
                * cfg.a_max;
            vx += -uy * w;
            vy += ux * w;
        }
        Action::new(
            vx.clamp(-cfg.a_max, cfg.a_max),
            vy.clamp(-cfg.a_max, cfg.a_max),
            0.0,
        )
    }

    /// Decide the next action from the current state.
    pub fn action(&mut self, state: &EnvState, cfg: &EnvConfig) -> (Action, ControlStatus) {
        if self.ticks >= self.budget {
            return (Action::ZERO, ControlStatus::Unreachable);
        }
        self.ticks += 1;
        let instr = self.goal.instruction;
        let reach = (cfg.agent_radius + cfg.block_radius) * GRASP_SLACK;

        let out = match instr.verb {
            // move <color> block to <region>
            0 => {
                let b = self.goal.block_index.expect("resolved goal");
                let bpos = state.blocks[b].pos;
                if region_contains(instr.region, bpos) && !state.blocks[b].attached {
                    (Action::ZERO, ControlStatus::Done)
                } else if region_contains(instr.region, bpos) {
                    // Release inside the region.
                    (Action::ZERO, ControlStatus::InProgress)
                } else if state.blocks[b].attached {
                    let target = region_target(instr.region, bpos, cfg.block_radius + 0.03);
                    let mut a = self.go(bpos, target, cfg, true);
                    a.grip_cmd = 1.0;
                    (a, ControlStatus::InProgress)
                } else if dist(state.agent_pos, bpos) <= reach {
                    (Action::new(0.0, 0.0, 1.0), ControlStatus::InProgress)
                } else {
                    (self.go(state.agent_pos, bpos, cfg, true), ControlStatus::InProgress)
                }
            }
            // carry <color> block to <region> and back
            1 => {
                let b = self.goal.block_index.expect("resolved goal");
                let bpos = state.blocks[b].pos;
                if self.reached_region && dist(bpos, self.origin) <= 0.04 {
                    if state.blocks[b].attached {
                        (Action::ZERO, ControlStatus::InProgress)
                    } else {
                        (Action::ZERO, ControlStatus::Done)
                    }
                } else if state.blocks[b].attached {
                    if region_contains(instr.region, bpos) {
                        self.reached_region = true;
                    }
                    let target = if self.reached_region {
                        self.origin
                    } else {
                        region_target(instr.region, bpos, cfg.block_radius + 0.03)
                    };
                    let mut a = self.go(bpos, target, cfg, true);
                    a.grip_cmd = 1.0;
                    (a, ControlStatus::InProgress)
                } else if dist(state.agent_pos, bpos) <= reach {
                    (Action::new(0.0, 0.0, 1.0), ControlStatus::InProgress)
                } else {
                    (self.go(state.agent_pos, bpos, cfg, true), ControlStatus::InProgress)
                }
            }
            // touch <color> block
            2 => {
                let b = self.goal.block_index.expect("resolved goal");
                let bpos = state.blocks[b].pos;
                if dist(state.agent_pos, bpos) <= cfg.agent_radius + cfg.block_radius {
                    (Action::ZERO, ControlStatus::Done)
                } else {
                    (self.go(state.agent_pos, bpos, cfg, true), ControlStatus::InProgress)
                }
            }
            // go to <region>
            3 => {
                if region_distance(instr.region, state.agent_pos) == 0.0 {
                    (Action::ZERO, ControlStatus::Done)
                } else {
                    let target =
                        region_target(instr.region, state.agent_pos, cfg.agent_radius + 0.02);
                    (self.go(state.agent_pos, target, cfg, true), ControlStatus::InProgress)
                }
            }
            // circle around <color> block
            4 => {
                let b = self.goal.block_index.expect("resolved goal");
                let bpos = state.blocks[b].pos;
                let dx = state.agent_pos[0] - bpos[0];
                let dy = state.agent_pos[1] - bpos[1];
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
                    if (r - CIRCLE_RADIUS).abs() < 0.1 {
                        self.swept += d;
                    }
                }
                self.prev_angle = Some(angle);
                if self.swept.abs() >= std::f32::consts::TAU {
                    (Action::ZERO, ControlStatus::Done)
                } else if r < 1e-4 {
                    (Action::new(cfg.a_max, 0.0, 0.0), ControlStatus::InProgress)
                } else {
                    // Tangential motion plus a radial correction toward the ring.
                    let (ux, uy) = (dx / r, dy / r);
                    let radial = (CIRCLE_RADIUS - r).clamp(-cfg.a_max, cfg.a_max);
                    let tangential = if (r - CIRCLE_RADIUS).abs() < 0.05 {
                        cfg.a_max
                    } else {
                        0.4 * cfg.a_max
                    };
                    let vx = ux * radial + -uy * tangential;
                    let vy = uy * radial + ux * tangential;
                    (
                        Action::new(
                            vx.clamp(-cfg.a_max, cfg.a_max),
                            vy.clamp(-cfg.a_max, cfg.a_max),
                            0.0,
                        ),
                        ControlStatus::InProgress,
                    )
                }
            }
            v => unreachable!("unknown verb id {v}"),
        };
        out
    }
}
