// quick training-throughput probe
use wam_core::data::{compute_norm_stats, write_dataset, Dataset};
use wam_core::env::{generate_episode, EnvConfig, GenConfig, GenMode};
use wam_core::model::ModelConfig;
use wam_core::train::{TrainConfig, Trainer};

fn main() {
    let dir = std::env::temp_dir().join("wam_bench_ds");
    let env = EnvConfig::default();
    if !dir.join("index.json").exists() {
        let gen = GenConfig::default();
        let recs: Vec<_> = (0..24u64)
            .map(|s| (generate_episode(&env, s, GenMode::Diverse, &gen).unwrap(), false))
            .collect();
        let norm = compute_norm_stats(recs.iter().map(|(r, _)| r)).unwrap();
        write_dataset(&dir, &recs, norm, env.clone(), "diverse").unwrap();
    }
    let ds = Dataset::load(&dir).unwrap();

    for (w, l, b, m) in [(128usize, 4usize, 16usize, 4usize), (64, 4, 16, 4), (64, 3, 8, 4), (96, 4, 12, 4), (64, 4, 12, 3)] {
        let mc = ModelConfig { width: w, layers: l, m, ..ModelConfig::default() };
        let tc = TrainConfig { steps: 6, batch: b, seed: 0, ..TrainConfig::default() };
        let mut t = Trainer::<f32>::new(mc, tc, ds.index.norm.clone());
        let start = std::time::Instant::now();
        for _ in 0..6 { t.train_step(&ds).unwrap(); }
        let per = start.elapsed().as_secs_f64() / 6.0;
        println!("width={w} layers={l} batch={b} M={m}: {per:.3} s/step -> {:.1} min/1k steps", per * 1000.0 / 60.0);
    }
}
