//! Diagnostic: teacher-forced action prediction quality of a checkpoint.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wam_core::data::NormStats;
use wam_core::env::{generate_episode, EnvConfig, GenConfig, GenMode};
use wam_core::infer::{denoise_chunk, CachePolicy, DenoiseConfig, KvCacheState, SmoothConfig};
use wam_core::model::checkpoint::load_checkpoint;
use wam_core::model::{build_layout, patchify_frame, Cond, ParamStore};

fn main() {
    let path = std::env::args().nth(1).expect("usage: probe_actions <ckpt> [steps]");
    let steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let ck = load_checkpoint(std::path::Path::new(&path)).unwrap();
    let cfg = ck.config.clone();
    let (_, handles) = build_layout(&cfg);
    let store: ParamStore<f32> = ck.store.cast();
    let env = EnvConfig::default();
    let norm: NormStats = ck.norm.clone();
    let gen = GenConfig::default();

    let dn = DenoiseConfig {
        steps,
        cfg_enabled: false,
        cache_policy: CachePolicy { enabled: false, ..Default::default() },
        smoothing: SmoothConfig { enabled: false, ..Default::default() },
        ..DenoiseConfig::default()
    };

    let mut mse_model = 0.0f64;
    let mut mse_zero = 0.0f64;
    let mut mse_hold = 0.0f64; // repeat previous action
    let mut n = 0usize;
    let r = env.ticks_per_frame();

    for seed in 60_000..60_012u64 {
        let ep = generate_episode(&env, seed, GenMode::Diverse, &gen).unwrap();
        let ctx_chunks = cfg.max_cached_chunks();
        let span = (ctx_chunks + 1) * cfg.k;
        if ep.frames.len() < span + 2 {
            continue;
        }
        for l in [0usize, 3, 7] {
            if l + span + 1 > ep.frames.len() {
                continue;
            }
            let instr = ep.instruction_at_tick((l * r) as u64);
            let mut cache = KvCacheState::new(&store, &handles, &cfg, Cond::Instr(instr));
            for c in 0..ctx_chunks {
                let f0 = l + c * cfg.k;
                let mut rows = Vec::new();
                for f in f0..f0 + cfg.k {
                    rows.push(patchify_frame::<f32>(&ep.frames[f], cfg.patch));
                }
                let views: Vec<_> = rows.iter().map(|x| x.view()).collect();
                let lat = ndarray::concatenate(ndarray::Axis(0), &views).unwrap();
                cache.prefill(&store, &handles, &cfg, &lat, f0).unwrap();
            }
            let t0 = (l + ctx_chunks * cfg.k) * r;
            let q = ep.states[t0];
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + l as u64);
            let pred = denoise_chunk(&store, &handles, &cfg, &norm, &cache, None, &q, &dn, &mut rng).unwrap();
            // normalized ground truth actions
            let mut gt = Array2::<f32>::zeros((cfg.h, 3));
            for i in 0..cfg.h {
                let a = ep.actions[t0 + i].as_array();
                for d in 0..3 {
                    gt[[i, d]] = norm.normalize(d, a[d]);
                }
            }
            let prev = {
                let a = ep.actions[t0.saturating_sub(1)].as_array();
                [norm.normalize(0, a[0]), norm.normalize(1, a[1]), norm.normalize(2, a[2])]
            };
            for i in 0..cfg.h {
                let pa = pred.actions[i].as_array();
                for d in 0..3 {
                    let pn = norm.normalize(d, pa[d]);
                    mse_model += ((pn - gt[[i, d]]) as f64).powi(2);
                    mse_zero += (gt[[i, d]] as f64).powi(2);
                    mse_hold += ((prev[d] - gt[[i, d]]) as f64).powi(2);
                    n += 1;
                }
            }
            if seed == 60_000 && l == 0 {
                println!("instr: {}", instr.text());
                println!("q: {q:?}");
                for i in 0..cfg.h {
                    println!(
                        "  t{i}: pred {:?} gt {:?}",
                        pred.actions[i].as_array(),
                        ep.actions[t0 + i].as_array()
                    );
                }
            }
        }
    }
    println!(
        "normalized action MSE over {} values: model {:.4} | zero {:.4} | hold-prev {:.4}",
        n,
        mse_model / n as f64,
        mse_zero / n as f64,
        mse_hold / n as f64
    );
}
