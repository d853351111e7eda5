//! Per-dimension action normalization from dataset percentiles.

use serde::{Deserialize, Serialize};

use super::{DataError, TrajectoryRecord};

const ACTION_DIM: usize = 3;
const DEGENERATE_WIDEN: f32 = 1e-6;

/// 1st/99th percentile bounds per action dimension. Normalization maps
/// `[lo, hi]` onto `[-1, 1]` with clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub lo: Vec<f32>,
    pub hi: Vec<f32>,
}

fn percentile(sorted: &[f32], p: f64) -> f32 {
    debug_assert!(!sorted.is_empty());
    let idx = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = (idx - lo as f64) as f32;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Percentile bounds over every action in the dataset. Degenerate
/// dimensions (lo == hi) are widened symmetrically so the constant maps
/// to 0.
pub fn compute_norm_stats<'a>(
    trajectories: impl IntoIterator<Item = &'a TrajectoryRecord>,
) -> Result<NormStats, DataError> {
    let mut per_dim: Vec<Vec<f32>> = vec![Vec::new(); ACTION_DIM];
    for t in trajectories {
        for a in &t.actions {
            let arr = a.as_array();
            for d in 0..ACTION_DIM {
                per_dim[d].push(arr[d]);
            }
        }
    }
    if per_dim[0].is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let mut lo = Vec::with_capacity(ACTION_DIM);
    let mut hi = Vec::with_capacity(ACTION_DIM);
    for (d, vals) in per_dim.iter_mut().enumerate() {
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut l = percentile(vals, 1.0);
        let mut h = percentile(vals, 99.0);
        if h - l < DEGENERATE_WIDEN {
            let c = 0.5 * (l + h);
            log::warn!("action dim {d} is degenerate (lo == hi == {c}); widening");
            l = c - DEGENERATE_WIDEN;
            h = c + DEGENERATE_WIDEN;
        }
        lo.push(l);
        hi.push(h);
    }
    Ok(NormStats { lo, hi })
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Map a raw value into `[-1, 1]`, clipping outside the percentile band.
    pub fn normalize(&self, d: usize, x: f32) -> f32 {
        let z = 2.0 * (x - self.lo[d]) / (self.hi[d] - self.lo[d]) - 1.0;
        z.clamp(-1.0, 1.0)
    }

    /// Inverse of [`NormStats::normalize`] on `[-1, 1]`.
    pub fn denormalize(&self, d: usize, z: f32) -> f32 {
        self.lo[d] + (z.clamp(-1.0, 1.0) + 1.0) * 0.5 * (self.hi[d] - self.lo[d])
    }

    pub fn normalize_vec(&self, raw: &[f32]) -> Vec<f32> {
        raw.iter()
            .enumerate()
            .map(|(d, &x)| self.normalize(d, x))
            .collect()
    }

    pub fn denormalize_vec(&self, z: &[f32]) -> Vec<f32> {
        z.iter()
            .enumerate()
            .map(|(d, &x)| self.denormalize(d, x))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, EnvConfig, Frame, Instruction};
    use rand::{Rng as _, SeedableRng};

    fn record_with_actions(actions: Vec<Action>) -> TrajectoryRecord {
        let env = EnvConfig::default();
        let r = env.ticks_per_frame();
        let n_frames = actions.len() / r + 1;
        TrajectoryRecord {
            frames: vec![Frame::filled(32, 32, [0, 0, 0]); n_frames],
            states: vec![[0.5, 0.5, 0.0]; actions.len()],
            actions,
            instruction: Instruction::new(0, 0, 0),
            control_hz: env.control_hz,
            video_hz: env.video_hz,
            segments: vec![],
            env,
            seed: 0,
        }
    }

    #[test]
    fn constant_actions_widen_and_map_to_zero() {
        let t = record_with_actions(vec![Action::new(0.02, 0.02, 0.0); 40]);
        let s = compute_norm_stats([&t]).unwrap();
        assert!(s.hi[0] > s.lo[0]);
        assert!(s.normalize(0, 0.02).abs() < 1e-5);
    }

    #[test]
    fn symmetric_uniform_percentiles() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let actions: Vec<Action> = (0..20_000)
            .map(|_| {
                Action::new(
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                    0.0,
                )
            })
            .collect();
        let t = record_with_actions(actions.clone());
        let s = compute_norm_stats([&t]).unwrap();

        // Independent oracle: direct order statistics on the same sample.
        let mut xs: Vec<f32> = actions.iter().map(|a| a.vx).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo_oracle = xs[(0.01 * (xs.len() - 1) as f64) as usize];
        assert!((s.lo[0] - lo_oracle).abs() < 2e-4);
        assert!((s.lo[0] + 0.049).abs() < 1.5e-3, "lo = {}", s.lo[0]);
        assert!((s.hi[0] - 0.049).abs() < 1.5e-3, "hi = {}", s.hi[0]);
    }

    #[test]
    fn normalize_round_trips_in_range() {
        let t = record_with_actions(
            (0..200)
                .map(|i| Action::new((i as f32 / 100.0) - 1.0, 0.03, 1.0))
                .collect(),
        );
        let s = compute_norm_stats([&t]).unwrap();
        for x in [-0.6f32, -0.1, 0.0, 0.33, 0.7] {
            if x > s.lo[0] && x < s.hi[0] {
                let back = s.denormalize(0, s.normalize(0, x));
                assert!((back - x).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn at_most_two_percent_clipped_by_construction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let actions: Vec<Action> = (0..50_000)
            .map(|_| Action::new(rng.random_range(-0.05..0.05), 0.0, 0.0))
            .collect();
        let t = record_with_actions(actions.clone());
        let s = compute_norm_stats([&t]).unwrap();
        let clipped = actions
            .iter()
            .filter(|a| {
                let z = 2.0 * (a.vx - s.lo[0]) / (s.hi[0] - s.lo[0]) - 1.0;
                !(-1.0..=1.0).contains(&z)
            })
            .count();
        assert!((clipped as f64) <= 0.021 * actions.len() as f64);
    }
}
