//! Template instruction grammar: verbs over colored blocks and arena regions.

use serde::{Deserialize, Serialize};

pub const N_VERBS: usize = 5;
pub const N_COLORS: usize = 4;
pub const N_REGIONS: usize = 4;

/// Verb reserved for the unseen-task evaluation split. Episodes carrying it
/// never enter the action-labeled training corpus.
pub const HELD_OUT_VERB: u8 = 4;

/// Verbs eligible for action-labeled data generation.
pub const SEEN_VERBS: [u8; 4] = [0, 1, 2, 3];

pub const COLOR_NAMES: [&str; N_COLORS] = ["red", "green", "blue", "yellow"];

pub const REGION_NAMES: [&str; N_REGIONS] = [
    "the left side",
    "the right side",
    "the top side",
    "the bottom side",
];

const VERB_USES_COLOR: [bool; N_VERBS] = [true, true, true, false, true];
const VERB_USES_REGION: [bool; N_VERBS] = [true, true, false, true, false];

/// One language instruction, identified by `(template, color, region)`.
///
/// Some templates do not render every slot; `text` is still a total function
/// of the id triple and `parse(text(i))` recovers an instruction with the
/// same rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub verb: u8,
    pub color: u8,
    pub region: u8,
}

impl Instruction {
    pub fn new(verb: u8, color: u8, region: u8) -> Self {
        debug_assert!((verb as usize) < N_VERBS);
        debug_assert!((color as usize) < N_COLORS);
        debug_assert!((region as usize) < N_REGIONS);
        Self {
            verb,
            color,
            region,
        }
    }

    pub fn uses_color(&self) -> bool {
        VERB_USES_COLOR[self.verb as usize]
    }

    pub fn uses_region(&self) -> bool {
        VERB_USES_REGION[self.verb as usize]
    }

    /// Render to text through the template grammar.
    pub fn text(&self) -> String {
        let c = COLOR_NAMES[self.color as usize];
        let r = REGION_NAMES[self.region as usize];
        match self.verb {
            0 => format!("move {c} block to {r}"),
            1 => format!("carry {c} block to {r} and back"),
            2 => format!("touch {c} block"),
            3 => format!("go to {r}"),
            4 => format!("circle around {c} block"),
            v => unreachable!("unknown verb id {v}"),
        }
    }

    /// Parse text produced by [`Instruction::text`]. Slots a template does
    /// not render come back as 0.
    pub fn parse(text: &str) -> Option<Instruction> {
        let color_id = |name: &str| COLOR_NAMES.iter().position(|c| *c == name).map(|i| i as u8);
        let region_id = |name: &str| {
            REGION_NAMES
                .iter()
                .position(|r| *r == name)
                .map(|i| i as u8)
        };
        if let Some(rest) = text.strip_prefix("move ") {
            let (c, r) = rest.split_once(" block to ")?;
            return Some(Instruction::new(0, color_id(c)?, region_id(r)?));
        }
        if let Some(rest) = text.strip_prefix("carry ") {
            let (c, r) = rest.split_once(" block to ")?;
            let r = r.strip_suffix(" and back")?;
            return Some(Instruction::new(1, color_id(c)?, region_id(r)?));
        }
        if let Some(rest) = text.strip_prefix("touch ") {
            let c = rest.strip_suffix(" block")?;
            return Some(Instruction::new(2, color_id(c)?, 0));
        }
        if let Some(rest) = text.strip_prefix("go to ") {
            return Some(Instruction::new(3, 0, region_id(rest)?));
        }
        if let Some(rest) = text.strip_prefix("circle around ") {
            let c = rest.strip_suffix(" block")?;
            return Some(Instruction::new(4, color_id(c)?, 0));
        }
        None
    }
}

/// Axis-aligned rectangle `(min, max)` of a named region.
pub fn region_rect(region: u8) -> ([f32; 2], [f32; 2]) {
    match region {
        0 => ([0.0, 0.0], [0.25, 1.0]),
        1 => ([0.75, 0.0], [1.0, 1.0]),
        2 => ([0.0, 0.0], [1.0, 0.25]),
        3 => ([0.0, 0.75], [1.0, 1.0]),
        r => unreachable!("unknown region id {r}"),
    }
}

pub fn region_contains(region: u8, p: [f32; 2]) -> bool {
    let (lo, hi) = region_rect(region);
    p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1]
}

/// A comfortable interior point of the region to steer toward: the region's
/// nearest point to `p`, pulled `margin` inside the region boundary.
pub fn region_target(region: u8, p: [f32; 2], margin: f32) -> [f32; 2] {
    let (lo, hi) = region_rect(region);
    let lo = [
        (lo[0] + margin).min(hi[0]),
        (lo[1] + margin).min(hi[1]),
    ];
    let hi = [
        (hi[0] - margin).max(lo[0]),
        (hi[1] - margin).max(lo[1]),
    ];
    [p[0].clamp(lo[0], hi[0]), p[1].clamp(lo[1], hi[1])]
}

/// Shortest distance from `p` to the region rectangle (0 when inside).
pub fn region_distance(region: u8, p: [f32; 2]) -> f32 {
    let (lo, hi) = region_rect(region);
    let dx = (lo[0] - p[0]).max(0.0).max(p[0] - hi[0]);
    let dy = (lo[1] - p[1]).max(0.0).max(p[1] - hi[1]);
    (dx * dx + dy * dy).sqrt()
}
