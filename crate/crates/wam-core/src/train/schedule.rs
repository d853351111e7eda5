//! Noise schedules: shared (coupled) timesteps and the decoupled flash
//! schedule that biases video toward high noise while actions stay uniform.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// `t_video = t_action = u`, `u ~ U(0,1)` per chunk.
    Coupled,
    /// `t_video = 1 - eta`, `eta ~ Beta(alpha, beta)`; `t_action ~ U(0,1)`.
    Flash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFn {
    /// `w(t) = 1`.
    Uniform,
    /// Logit-normal density in `t`, a common mid-timestep emphasis.
    LogitNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSchedule {
    pub mode: ScheduleMode,
    pub alpha: f64,
    pub beta: f64,
    pub weight_fn: WeightFn,
    /// Probability of falling back to a coupled draw inside flash mode.
    pub coupling_mix_prob: f64,
    /// Test knob: run the flash draw pattern but force `t_video = t_action`.
    /// With the same RNG stream this reproduces coupled mode exactly.
    pub constrain_coupled: bool,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            mode: ScheduleMode::Coupled,
            alpha: 7.0,
            beta: 1.0,
            weight_fn: WeightFn::Uniform,
            coupling_mix_prob: 0.0,
            constrain_coupled: false,
        }
    }
}

impl NoiseSchedule {
    pub fn flash(alpha: f64, beta: f64) -> Self {
        Self {
            mode: ScheduleMode::Flash,
            alpha,
            beta,
            ..Self::default()
        }
    }

    /// Per-chunk `(t_video, t_action)` pairs, independent across chunks.
    ///
    /// Every mode consumes the same three draws per chunk (eta, u, mix) so
    /// that schedule variants are comparable on a shared RNG stream.
    pub fn sample_timesteps<T: Scalar, R: Rng + ?Sized>(
        &self,
        m_eff: usize,
        rng: &mut R,
    ) -> Vec<(T, T)> {
        assert!(self.alpha > 0.0 && self.beta > 0.0, "Beta shape parameters must be positive");
        let beta_dist = Beta::new(self.alpha, self.beta).expect("valid Beta parameters");
        (0..m_eff)
            .map(|_| {
                let eta: f64 = beta_dist.sample(rng);
                let u: f64 = rng.random();
                let mix: f64 = rng.random();
                match self.mode {
                    ScheduleMode::Coupled => (T::of(u), T::of(u)),
                    ScheduleMode::Flash => {
                        if self.constrain_coupled || mix < self.coupling_mix_prob {
                            (T::of(u), T::of(u))
                        } else {
                            (T::of(1.0 - eta), T::of(u))
                        }
                    }
                }
            })
            .collect()
    }

    /// Chunk weight `w(t)`; evaluated at the chunk's video timestep.
    pub fn weight<T: Scalar>(&self, t: T) -> T {
        match self.weight_fn {
            WeightFn::Uniform => T::one(),
            WeightFn::LogitNormal => {
                let t = t.cast_f64().clamp(1e-4, 1.0 - 1e-4);
                let logit = (t / (1.0 - t)).ln();
                let dens = (-0.5 * logit * logit).exp()
                    / ((2.0 * std::f64::consts::PI).sqrt() * t * (1.0 - t));
                T::of(dens)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn coupled_ties_the_pair() {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (tv, ta) in s.sample_timesteps::<f64, _>(64, &mut rng) {
            assert_eq!(tv, ta);
            assert!((0.0..1.0).contains(&tv));
        }
    }

    #[test]
    fn flash_beta_7_1_has_mean_video_timestep_one_eighth() {
        let s = NoiseSchedule::flash(7.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let ts = s.sample_timesteps::<f64, _>(n, &mut rng);
        let mean: f64 = ts.iter().map(|(tv, _)| tv).sum::<f64>() / n as f64;
        assert!(
            (mean - 0.125).abs() < 0.005,
            "mean video timestep {mean} outside 0.125 +- 0.005"
        );
    }

    #[test]
    fn flash_1_1_video_timesteps_are_uniform() {
        // Beta(1,1) = U(0,1); Kolmogorov-Smirnov against the uniform CDF.
        let s = NoiseSchedule::flash(1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut tv: Vec<f64> = s
            .sample_timesteps::<f64, _>(n, &mut rng)
            .into_iter()
            .map(|(tv, _)| tv)
            .collect();
        tv.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, &x) in tv.iter().enumerate() {
            let e_hi = (i + 1) as f64 / n as f64;
            let e_lo = i as f64 / n as f64;
            ks = ks.max((e_hi - x).abs()).max((x - e_lo).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks} too large");
    }

    #[test]
    fn beta_moments_match_theory() {
        for (a, b) in [(7.0, 1.0), (2.0, 5.0)] {
            let s = NoiseSchedule::flash(a, b);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let n = 200_000usize;
            let etas: Vec<f64> = s
                .sample_timesteps::<f64, _>(n, &mut rng)
                .into_iter()
                .map(|(tv, _)| 1.0 - tv)
                .collect();
            let mean: f64 = etas.iter().sum::<f64>() / n as f64;
            let var: f64 =
                etas.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64;
            let m_theory = a / (a + b);
            let v_theory = a * b / ((a + b) * (a + b) * (a + b + 1.0));
            let se_mean = (v_theory / n as f64).sqrt();
            assert!((mean - m_theory).abs() < 3.0 * se_mean, "mean off for ({a},{b})");
            // Rough three-sigma band for the sample variance.
            let se_var = v_theory * (2.0 / (n as f64 - 1.0)).sqrt() * 2.0;
            assert!((var - v_theory).abs() < 3.0 * se_var, "variance off for ({a},{b})");
        }
    }

    #[test]
    fn constrained_flash_equals_coupled_on_same_stream() {
        let coupled = NoiseSchedule::default();
        let constrained = NoiseSchedule {
            constrain_coupled: true,
            ..NoiseSchedule::flash(7.0, 1.0)
        };
        let a = coupled.sample_timesteps::<f64, _>(32, &mut ChaCha8Rng::seed_from_u64(9));
        let b = constrained.sample_timesteps::<f64, _>(32, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
