//! Calibration probe; run with `cargo test --test calibration_probe -- --ignored --nocapture`.

use std::time::Instant;
use tilerefine::models::{ModelConfig, TileRefiner};
use tilerefine::pipeline::{
    eval_coarse_only, eval_model, noisy_pretrain, prepare_scenes, train_coarse, train_e2e,
    EvalConfig, Schedule,
};
use tilerefine::scenegen::{generate_scene, LoadedScene, SceneParams};
use tilerefine::substrate::ParamStore;

#[test]
#[ignore]
fn desk_scale_calibration() {
    let params = SceneParams::default(); // 256x512, 8 primitives, [1,20] m
    let train: Vec<LoadedScene> = (0..32)
        .map(|i| {
            let s = generate_scene(i, &params).unwrap();
            LoadedScene { seed: s.seed, rgb: s.rgb, depth: s.depth, clean_depth: None }
        })
        .collect();
    let test: Vec<LoadedScene> = (1000..1006)
        .map(|i| {
            let s = generate_scene(i, &params).unwrap();
            LoadedScene { seed: s.seed, rgb: s.rgb, depth: s.depth, clean_depth: None }
        })
        .collect();
    let train = prepare_scenes(&train, 64, 128).unwrap();
    let test = prepare_scenes(&test, 64, 128).unwrap();

    let cfg = ModelConfig::default().with_preset("s").unwrap();
    let mut store = ParamStore::<f32>::new(0);
    let model = TileRefiner::build(&mut store, &cfg).unwrap();
    println!("params: {}", store.total_elements());

    let schedule = Schedule {
        np_epochs: 8,
        coarse_epochs: 24,
        e2e_epochs: 24,
        transfer_epochs: 0,
        lr: 2e-3,
        patches_per_step: 3,
        seed: 0,
        freeze_coarse_e2e: false,
        coarse_lr_scale: 1.0,
    };

    let t0 = Instant::now();
    let clog = train_coarse(&model, &mut store, &train, &schedule).unwrap();
    println!("coarse {:?} losses={:?}", t0.elapsed(), clog.epoch_losses);

    let coarse_eval = eval_coarse_only(&model, &store, &test, &EvalConfig::default()).unwrap();
    println!("coarse-only: rmse={:.4} d1={:.2} see={:.3} f1={:.2}", coarse_eval.rms, coarse_eval.delta1, coarse_eval.see, coarse_eval.f1);

    let t0 = Instant::now();
    let nlog = noisy_pretrain(&model, &mut store, &train, &schedule).unwrap();
    println!("np {:?} losses={:?}", t0.elapsed(), nlog.epoch_losses);

    let t0 = Instant::now();
    let elog = train_e2e(&model, &mut store, &train, &schedule, false).unwrap();
    println!("e2e {:?} losses={:?}", t0.elapsed(), elog.epoch_losses);

    let t0 = Instant::now();
    let full_eval = eval_model(&model, &store, &test, 4, 4, &EvalConfig::default()).unwrap();
    println!("eval {:?}", t0.elapsed());
    println!("full: rmse={:.4} d1={:.2} see={:.3} f1={:.2}", full_eval.rms, full_eval.delta1, full_eval.see, full_eval.f1);
    let coarse_after = eval_coarse_only(&model, &store, &test, &EvalConfig::default()).unwrap();
    println!("coarse-after-e2e: rmse={:.4}", coarse_after.rms);
    println!("improvement vs coarse baseline: {:.1}%", 100.0 * (coarse_eval.rms - full_eval.rms) / coarse_eval.rms);
}
