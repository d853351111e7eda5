//! Deterministic rasterization of push-world states.

use serde::{Deserialize, Serialize};

use super::{EnvConfig, EnvState};

pub const BLOCK_RGB: [[u8; 3]; super::instruction::N_COLORS] = [
    [220, 60, 60],
    [70, 200, 90],
    [80, 120, 235],
    [235, 205, 70],
];
const BACKGROUND_RGB: [u8; 3] = [24, 24, 28];
const AGENT_RGB: [u8; 3] = [245, 245, 245];
const GRIP_RING_RGB: [u8; 3] = [150, 150, 150];
const GRIP_RING_WIDTH: f32 = 0.045;

/// One rendered observation, 8-bit RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }
}

/// One camera: a square window over the arena, axis-aligned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub center: [f32; 2],
    pub half_extent: f32,
}

/// View selection. One full-arena view by default; a second, 2x-zoom center
/// view can be enabled, in which case views are concatenated side by side
/// into a single frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub n_views: usize,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self { n_views: 1 }
    }
}

impl ViewConfig {
    pub fn viewports(&self) -> Vec<Viewport> {
        let mut v = vec![Viewport {
            center: [0.5, 0.5],
            half_extent: 0.5,
        }];
        if self.n_views >= 2 {
            v.push(Viewport {
                center: [0.5, 0.5],
                half_extent: 0.25,
            });
        }
        v.truncate(self.n_views.max(1));
        v
    }
}

fn render_view(state: &EnvState, vp: &Viewport, cfg: &EnvConfig) -> Frame {
    let (w, h) = (cfg.img_w, cfg.img_h);
    let mut frame = Frame::filled(w, h, BACKGROUND_RGB);
    let scale = 2.0 * vp.half_extent;
    let origin = [vp.center[0] - vp.half_extent, vp.center[1] - vp.half_extent];

    // Paint a disk by scanning only its bounding box; later calls overwrite
    // earlier ones, fixing the z-order.
    let disk = |center: [f32; 2], radius: f32, rgb: [u8; 3], frame: &mut Frame| {
        let px_of = |a: f32, o: f32, n: usize| ((a - o) / scale * n as f32 - 0.5).round();
        let x0 = px_of(center[0] - radius, origin[0], w).floor().max(0.0) as usize;
        let x1 = (px_of(center[0] + radius, origin[0], w).ceil() as i64).clamp(0, w as i64 - 1)
            as usize;
        let y0 = px_of(center[1] - radius, origin[1], h).floor().max(0.0) as usize;
        let y1 = (px_of(center[1] + radius, origin[1], h).ceil() as i64).clamp(0, h as i64 - 1)
            as usize;
        if px_of(center[0] - radius, origin[0], w) >= w as f32
            || px_of(center[1] - radius, origin[1], h) >= h as f32
        {
            return;
        }
        for py in y0..=y1 {
            for px in x0..=x1 {
                let ax = origin[0] + (px as f32 + 0.5) / w as f32 * scale;
                let ay = origin[1] + (py as f32 + 0.5) / h as f32 * scale;
                let dx = ax - center[0];
                let dy = ay - center[1];
                if dx * dx + dy * dy <= radius * radius {
                    frame.put(px, py, rgb);
                }
            }
        }
    };

    for b in &state.blocks {
        disk(
            b.pos,
            cfg.block_radius,
            BLOCK_RGB[b.color as usize % BLOCK_RGB.len()],
            &mut frame,
        );
    }
    if state.grip > 0.5 {
        disk(
            state.agent_pos,
            cfg.agent_radius + GRIP_RING_WIDTH,
            GRIP_RING_RGB,
            &mut frame,
        );
    }
    disk(state.agent_pos, cfg.agent_radius, AGENT_RGB, &mut frame);
    frame
}

/// Rasterize the state under the given view configuration. Multiple views
/// are concatenated horizontally into one frame.
pub fn render(state: &EnvState, view: &ViewConfig, cfg: &EnvConfig) -> Frame {
    let views: Vec<Frame> = view
        .viewports()
        .iter()
        .map(|vp| render_view(state, vp, cfg))
        .collect();
    if views.len() == 1 {
        return views.into_iter().next().unwrap();
    }
    let h = cfg.img_h;
    let total_w: usize = views.iter().map(|f| f.width).sum();
    let mut out = Frame::filled(total_w, h, BACKGROUND_RGB);
    for y in 0..h {
        let mut x0 = 0;
        for f in &views {
            let src = &f.data[y * f.width * 3..(y + 1) * f.width * 3];
            let dst_o = (y * total_w + x0) * 3;
            out.data[dst_o..dst_o + src.len()].copy_from_slice(src);
            x0 += f.width;
        }
    }
    out
}
