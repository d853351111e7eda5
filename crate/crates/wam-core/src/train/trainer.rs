//! Training loop: trajectory-level updates over chunked windows with
//! teacher forcing, one optimizer step per batch.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flow::{flow_matching_loss_grad, interpolate, velocity_target, ChunkLossTerm};
use super::optim::{clip_grad_norm, cosine_lr, AdamW};
use super::schedule::NoiseSchedule;
use crate::data::{chunk_trajectory, Dataset, NormStats};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::{
    backward_batch, build_layout, forward_batch, init_params, Cond, CleanChunkInput,
    ModelConfig, NoisyChunkInput, ParamStore, SequenceLayout, WamError, WamHandles, WamInput,
};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Joint video + action velocity regression.
    Joint,
    /// Video prediction objective only; action slots stay in the sequence
    /// but contribute neither loss nor decoder gradient.
    VideoOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    pub lr_min_frac: f64,
    pub grad_clip: f64,
    pub loss_mode: LossMode,
    pub schedule: NoiseSchedule,
    /// Probability of replacing the instruction with the learned null
    /// condition, which is what makes classifier-free guidance usable.
    pub cond_dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch: 16,
            lr: 3e-4,
            weight_decay: 0.01,
            warmup: 100,
            lr_min_frac: 0.05,
            grad_clip: 1.0,
            loss_mode: LossMode::Joint,
            schedule: NoiseSchedule::default(),
            cond_dropout: 0.1,
            seed: 0,
        }
    }
}

/// One step's scalar diagnostics, logged as newline-delimited JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub wall_s: f64,
}

pub struct Trainer<T: Scalar> {
    pub model_cfg: ModelConfig,
    pub cfg: TrainConfig,
    pub handles: WamHandles,
    pub params: ParamStore<T>,
    pub norm: NormStats,
    pub step: usize,
    opt: AdamW<T>,
    rng: ChaCha8Rng,
    layout: SequenceLayout,
    mask: Array2<bool>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig, norm: NormStats) -> Self {
        let (layout_p, handles) = build_layout(&model_cfg);
        let params = init_params(layout_p, &handles, cfg.seed);
        let opt = AdamW::new(&params, cfg.weight_decay);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
        let layout = model_cfg.training_layout(model_cfg.m);
        let mask = crate::model::build_attention_mask(&layout);
        Self {
            model_cfg,
            cfg,
            handles,
            params,
            norm,
            step: 0,
            opt,
            rng,
            layout,
            mask,
        }
    }

    /// Continue from a checkpoint (e.g. the flash fine-tuning stage).
    pub fn from_checkpoint(path: &Path, cfg: TrainConfig) -> Result<Self, WamError> {
        let ck = load_checkpoint(path)?;
        let mut t = Self::new(ck.config, cfg, ck.norm);
        t.params = ck.store.cast();
        t.opt = AdamW::new(&t.params, t.cfg.weight_decay);
        t.step = 0;
        Ok(t)
    }

    /// Draw one training sample: an episode window sliced into the full M
    /// chunks, noised per the schedule.
    fn draw_sample(
        &mut self,
        dataset: &Dataset,
    ) -> Result<(WamInput<T>, Vec<(Array2<T>, Array2<T>, T, bool)>), WamError> {
        let mc = &self.model_cfg;
        let window = mc.m * mc.k;
        // Episodes shorter than a full window are skipped.
        let (ep, l) = loop {
            let ep = self.rng.random_range(0..dataset.len());
            let t_v = dataset.records[ep].frames.len();
            if t_v >= window + 1 {
                let max_l = t_v - 1 - window;
                break (ep, self.rng.random_range(0..=max_l));
            }
        };
        let rec = &dataset.records[ep];
        let batch = chunk_trajectory::<T>(rec, mc.k, mc.m, &self.norm, l, mc.patch)
            .expect("window fits by construction");
        debug_assert_eq!(batch.m_eff(), mc.m);

        let video_only =
            self.cfg.loss_mode == LossMode::VideoOnly || dataset.is_video_only(ep);
        let cond = if self.rng.random::<f64>() < self.cfg.cond_dropout {
            Cond::Null
        } else {
            Cond::Instr(batch.instruction)
        };

        let mut ts = self
            .cfg
            .schedule
            .sample_timesteps::<T, _>(mc.m, &mut self.rng);
        if video_only {
            // Pure-noise action slots are consistent with t_action = 0.
            for t in &mut ts {
                t.1 = T::zero();
            }
        }

        let mut clean = Vec::with_capacity(mc.m - 1);
        let mut noisy = Vec::with_capacity(mc.m);
        let mut targets = Vec::with_capacity(mc.m);
        for (c, chunk) in batch.chunks.iter().enumerate() {
            let start_frame = l + c * mc.k;
            if c + 1 < mc.m {
                clean.push(CleanChunkInput {
                    video: chunk.video.clone(),
                    start_frame,
                });
            }
            let (tv, ta) = ts[c];
            let zv = Array2::from_shape_fn(chunk.video.raw_dim(), |_| {
                T::standard_normal(&mut self.rng)
            });
            let za = Array2::from_shape_fn(chunk.actions.raw_dim(), |_| {
                T::standard_normal(&mut self.rng)
            });
            let noisy_video = interpolate(&chunk.video, &zv, tv)?;
            let noisy_actions = if video_only {
                za.clone()
            } else {
                interpolate(&chunk.actions, &za, ta)?
            };
            let target_video = velocity_target(&chunk.video, &zv)?;
            let target_action = velocity_target(&chunk.actions, &za)?;
            let weight = self.cfg.schedule.weight::<T>(tv);
            targets.push((target_video, target_action, weight, video_only));
            noisy.push(NoisyChunkInput {
                video: noisy_video,
                state: chunk.state.clone(),
                actions: noisy_actions,
                t_video: tv,
                t_action: ta,
                start_frame,
            });
        }

        Ok((
            WamInput {
                cond,
                clean,
                noisy,
                noisy_offset: 0,
            },
            targets,
        ))
    }

    /// One optimizer update over a batch of trajectory windows.
    pub fn train_step(&mut self, dataset: &Dataset) -> Result<(f64, f64), WamError> {
        let (loss, mut grads) = self.batch_gradients(dataset)?;
        let grad_norm = clip_grad_norm(&mut grads, self.cfg.grad_clip);
        let lr = cosine_lr(
            self.step,
            self.cfg.steps,
            self.cfg.lr,
            self.cfg.warmup,
            self.cfg.lr_min_frac,
        );
        self.opt.step(&mut self.params, &grads, lr);
        self.step += 1;
        Ok((loss, grad_norm))
    }

    /// Loss and raw parameter gradients for one batch (no update applied).
    pub fn batch_gradients(
        &mut self,
        dataset: &Dataset,
    ) -> Result<(f64, ParamStore<T>), WamError> {
        let b = self.cfg.batch;
        let mut inputs = Vec::with_capacity(b);
        let mut targets = Vec::with_capacity(b);
        for _ in 0..b {
            let (inp, tgt) = self.draw_sample(dataset)?;
            inputs.push(inp);
            targets.push(tgt);
        }

        let (outputs, trace) = forward_batch(
            &self.params,
            &self.handles,
            &self.model_cfg,
            &inputs,
            &self.layout,
            &self.mask,
            true,
        )?;
        let trace = trace.expect("trace requested");

        let inv_b = T::of(1.0 / b as f64);
        let mut loss_total = 0.0;
        let mut d_vid = Vec::with_capacity(b);
        let mut d_act = Vec::with_capacity(b);
        for (bi, out) in outputs.iter().enumerate() {
            let terms: Vec<ChunkLossTerm<T>> = (0..self.model_cfg.m)
                .map(|c| {
                    let (tv, ta, w, vo) = &targets[bi][c];
                    ChunkLossTerm {
                        pred_video: out.video_velocity[c].clone(),
                        target_video: tv.clone(),
                        pred_action: out.action_velocity[c].clone(),
                        target_action: ta.clone(),
                        weight: *w,
                        video_only: *vo,
                    }
                })
                .collect();
            let (loss_s, grads_s) = flow_matching_loss_grad(&terms);
            loss_total += loss_s.cast_f64() / b as f64;
            let (mut dv, mut da): (Vec<_>, Vec<_>) = grads_s.into_iter().unzip();
            for m in dv.iter_mut().chain(da.iter_mut()) {
                m.mapv_inplace(|x| x * inv_b);
            }
            d_vid.push(dv);
            d_act.push(da);
        }

        if !loss_total.is_finite() {
            return Err(WamError::NonFiniteLoss { step: self.step });
        }

        let grads = backward_batch(
            &self.params,
            &self.handles,
            &self.model_cfg,
            &self.layout,
            &trace,
            &d_vid,
            &d_act,
        );
        Ok((loss_total, grads))
    }

    /// Run the configured number of steps, logging one JSON record per step.
    pub fn run(
        &mut self,
        dataset: &Dataset,
        metrics: Option<&mut dyn Write>,
        log_every: usize,
    ) -> Result<Vec<f64>, WamError> {
        let start = std::time::Instant::now();
        let mut losses = Vec::with_capacity(self.cfg.steps);
        let mut metrics = metrics;
        for _ in 0..self.cfg.steps {
            let (loss, grad_norm) = self.train_step(dataset)?;
            losses.push(loss);
            if let Some(w) = metrics.as_deref_mut() {
                if self.step % log_every == 0 || self.step == self.cfg.steps {
                    let rec = StepRecord {
                        step: self.step,
                        loss,
                        grad_norm,
                        lr: cosine_lr(
                            self.step - 1,
                            self.cfg.steps,
                            self.cfg.lr,
                            self.cfg.warmup,
                            self.cfg.lr_min_frac,
                        ),
                        wall_s: start.elapsed().as_secs_f64(),
                    };
                    let line = serde_json::to_string(&rec)
                        .map_err(|e| WamError::Checkpoint(e.to_string()))?;
                    writeln!(w, "{line}")?;
                }
            }
        }
        Ok(losses)
    }

    pub fn save(&self, path: &Path) -> Result<(), WamError> {
        save_checkpoint(
            path,
            &self.model_cfg,
            &self.norm,
            self.cfg.seed,
            self.step,
            &self.params,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_norm_stats, write_dataset};
    use crate::env::{generate_episode, EnvConfig, GenConfig, GenMode};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            width: 32,
            layers: 2,
            heads: 2,
            time_dim: 16,
            ..ModelConfig::default()
        }
    }

    fn tiny_dataset(n: usize) -> (tempfile::TempDir, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        let env = EnvConfig::default();
        let gen = GenConfig::default();
        let recs: Vec<_> = (0..n as u64)
            .map(|s| (generate_episode(&env, s, GenMode::Diverse, &gen).unwrap(), false))
            .collect();
        let norm = compute_norm_stats(recs.iter().map(|(r, _)| r)).unwrap();
        write_dataset(dir.path(), &recs, norm, env, "diverse").unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        (dir, ds)
    }

    #[test]
    fn same_seed_gives_identical_loss_sequence() {
        let (_dir, ds) = tiny_dataset(4);
        let cfg = TrainConfig {
            steps: 3,
            batch: 2,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut a = Trainer::<f32>::new(tiny_model(), cfg.clone(), ds.index.norm.clone());
        let mut b = Trainer::<f32>::new(tiny_model(), cfg, ds.index.norm.clone());
        for _ in 0..3 {
            let (la, _) = a.train_step(&ds).unwrap();
            let (lb, _) = b.train_step(&ds).unwrap();
            assert_eq!(la, lb);
        }
    }

    #[test]
    fn loss_starts_at_target_magnitude_and_decreases() {
        // Zero-initialized heads predict zero velocity, so the first loss is
        // exactly the mean squared velocity target; over 100 steps on a
        // 16-episode corpus the 10-step moving average must drop.
        let (_dir, ds) = tiny_dataset(16);
        let cfg = TrainConfig {
            steps: 100,
            batch: 4,
            seed: 1,
            warmup: 10,
            ..TrainConfig::default()
        };
        let mut t = Trainer::<f32>::new(tiny_model(), cfg, ds.index.norm.clone());
        let losses = t.run(&ds, None, 10).unwrap();
        // E||v||^2 = E||clean - noise||^2 = E[clean^2] + 1 for unit noise.
        assert!(
            losses[0] > 0.7 && losses[0] < 3.0,
            "initial loss {} far from target second moment",
            losses[0]
        );
        let ma = |r: std::ops::Range<usize>| {
            let n = r.len() as f64;
            losses[r].iter().sum::<f64>() / n
        };
        assert!(
            ma(90..100) < ma(0..10),
            "loss did not decrease: head {} tail {}",
            ma(0..10),
            ma(90..100)
        );
    }

    #[test]
    fn video_only_gradients_skip_the_action_decoder() {
        let (_dir, ds) = tiny_dataset(4);
        let cfg = TrainConfig {
            steps: 1,
            batch: 2,
            seed: 5,
            loss_mode: LossMode::VideoOnly,
            ..TrainConfig::default()
        };
        let mut t = Trainer::<f32>::new(tiny_model(), cfg, ds.index.norm.clone());
        let (_, grads) = t.batch_gradients(&ds).unwrap();
        for p in [
            t.handles.act_dec.w1,
            t.handles.act_dec.b1,
            t.handles.act_dec.w2,
            t.handles.act_dec.b2,
            t.handles.act_dec.wskip,
        ] {
            let spec = grads.layout.spec(p).clone();
            assert!(
                grads.data[spec.offset..spec.offset + spec.len]
                    .iter()
                    .all(|&g| g == 0.0),
                "nonzero gradient in {}",
                spec.name
            );
        }
        // The video pathway still learns.
        let vspec = grads.layout.spec(t.handles.vid_head_w).clone();
        assert!(grads.data[vspec.offset..vspec.offset + vspec.len]
            .iter()
            .any(|&g| g != 0.0));
    }
}
